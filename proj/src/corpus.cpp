#include "pdforge/corpus.hpp"

#include "pdforge/binary_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace pdforge {

namespace {

constexpr char kCorpusMagic[4] = {'P', 'D', 'C', 'O'};

std::uint64_t train_sequences(const CorpusSpec& spec) {
    return static_cast<std::uint64_t>(
        std::llround(spec.train_ratio * static_cast<double>(spec.sequence_count)));
}

}  // namespace

void CorpusSpec::validate() const {
    if (vocab_size < 2) throw ValidationError("corpus vocab_size must be >= 2");
    if (chunk_len < 2) throw ValidationError("corpus chunk_len must be >= 2");
    if (sequence_count < 2) throw ValidationError("corpus needs at least 2 sequences");
    if (!(train_ratio > 0.0 && train_ratio < 1.0))
        throw ValidationError("train_ratio must be in (0, 1)");
    if (!(skew >= 0.0) || !std::isfinite(skew))
        throw ValidationError("corpus skew must be non-negative");
    if (context_modes < 1) throw ValidationError("corpus context_modes must be >= 1");
    const std::uint64_t n_train = train_sequences(*this);
    if (n_train < 1 || n_train >= sequence_count)
        throw ValidationError("split ratios leave an empty train or held-out split");
}

MarkovChain::MarkovChain(std::uint32_t vocab_size, std::uint64_t seed, double skew,
                         std::uint32_t context_modes)
    : vocab_(vocab_size), modes_(context_modes) {
    if (vocab_ < 2) throw ValidationError("MarkovChain vocab_size must be >= 2");
    if (modes_ < 1) throw ValidationError("MarkovChain needs at least one context mode");

    // Mode distributions: exp(skew * N(0,1)) weights, normalized. skew = 0
    // gives exactly uniform rows.
    Rng rng(split_seed(seed, 0xC0));
    dists_.resize(static_cast<std::size_t>(modes_) * vocab_);
    cdfs_.resize(dists_.size());
    for (std::uint32_t m = 0; m < modes_; ++m) {
        double* row = dists_.data() + static_cast<std::size_t>(m) * vocab_;
        double sum = 0.0;
        for (std::uint32_t v = 0; v < vocab_; ++v) {
            row[v] = std::exp(skew * rng.normal());
            sum += row[v];
        }
        double acc = 0.0;
        double* cdf = cdfs_.data() + static_cast<std::size_t>(m) * vocab_;
        for (std::uint32_t v = 0; v < vocab_; ++v) {
            row[v] /= sum;
            acc += row[v];
            cdf[v] = acc;
        }
        cdf[vocab_ - 1] = 1.0;
    }

    // Stationary pair distribution by power iteration:
    //   pi'(b, c) = sum_a pi(a, b) * Q_{mode(a,b)}(c)
    const std::size_t pairs = static_cast<std::size_t>(vocab_) * vocab_;
    stationary_.assign(pairs, 1.0 / static_cast<double>(pairs));
    std::vector<double> next(pairs);
    std::vector<double> mode_mass(modes_);
    for (int iter = 0; iter < 4096; ++iter) {
        std::fill(next.begin(), next.end(), 0.0);
        for (std::uint32_t b = 0; b < vocab_; ++b) {
            std::fill(mode_mass.begin(), mode_mass.end(), 0.0);
            for (std::uint32_t a = 0; a < vocab_; ++a)
                mode_mass[mode_of(a, b)] += stationary_[static_cast<std::size_t>(a) * vocab_ + b];
            double* out = next.data() + static_cast<std::size_t>(b) * vocab_;
            for (std::uint32_t m = 0; m < modes_; ++m) {
                const double w = mode_mass[m];
                if (w == 0.0) continue;
                const double* row = dists_.data() + static_cast<std::size_t>(m) * vocab_;
                for (std::uint32_t cv = 0; cv < vocab_; ++cv) out[cv] += w * row[cv];
            }
        }
        double delta = 0.0;
        for (std::size_t i = 0; i < pairs; ++i) delta += std::abs(next[i] - stationary_[i]);
        stationary_.swap(next);
        if (delta < 1e-13) break;
    }

    // Entropy rate: expected conditional entropy under the stationary pair
    // distribution. Kahan sums keep the 65k-term accumulations tight enough
    // that the uniform chain lands on ln V at 1e-12.
    auto kahan = [](auto&& each) {
        double sum = 0.0, carry = 0.0;
        each([&](double term) {
            const double y = term - carry;
            const double t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        });
        return sum;
    };
    std::vector<double> mode_entropy(modes_);
    for (std::uint32_t m = 0; m < modes_; ++m) {
        const double* row = dists_.data() + static_cast<std::size_t>(m) * vocab_;
        mode_entropy[m] = kahan([&](auto&& add) {
            for (std::uint32_t v = 0; v < vocab_; ++v) add(-row[v] * std::log(row[v]));
        });
    }
    entropy_rate_ = kahan([&](auto&& add) {
        for (std::uint32_t a = 0; a < vocab_; ++a)
            for (std::uint32_t b = 0; b < vocab_; ++b)
                add(stationary_[static_cast<std::size_t>(a) * vocab_ + b] *
                    mode_entropy[mode_of(a, b)]);
    });

    stationary_cdf_.resize(pairs);
    double acc = 0.0;
    for (std::size_t i = 0; i < pairs; ++i) {
        acc += stationary_[i];
        stationary_cdf_[i] = acc;
    }
    stationary_cdf_[pairs - 1] = 1.0;
}

std::uint32_t MarkovChain::mode_of(std::uint32_t prev2, std::uint32_t prev1) const {
    // Coarse token buckets combined linearly: genuinely order-2 but smooth in
    // both tokens, so a small transformer can pick the structure up from
    // limited data. An avalanche hash here makes the chain unlearnable and
    // the corpus useless as a training stand-in.
    const std::uint32_t b1 = prev1 * modes_ / vocab_;
    const std::uint32_t b2 = prev2 * modes_ / vocab_;
    return (b1 * 2 + b2 * 5) % modes_;
}

double MarkovChain::next_prob(std::uint32_t prev2, std::uint32_t prev1,
                              std::uint32_t next) const {
    return dists_[static_cast<std::size_t>(mode_of(prev2, prev1)) * vocab_ + next];
}

std::vector<std::uint32_t> MarkovChain::sample(std::uint64_t count, Rng& rng) const {
    std::vector<std::uint32_t> out(count);
    if (count == 0) return out;
    auto draw = [&](const double* cdf, std::uint32_t n) {
        const double u = rng.uniform();
        const double* it = std::lower_bound(cdf, cdf + n, u);
        return static_cast<std::uint32_t>(std::min<std::ptrdiff_t>(it - cdf, n - 1));
    };
    const std::uint32_t pair = draw(stationary_cdf_.data(),
                                    static_cast<std::uint32_t>(stationary_cdf_.size()));
    std::uint32_t prev2 = pair / vocab_;
    std::uint32_t prev1 = pair % vocab_;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint32_t m = mode_of(prev2, prev1);
        const std::uint32_t tok =
            draw(cdfs_.data() + static_cast<std::size_t>(m) * vocab_, vocab_);
        out[i] = tok;
        prev2 = prev1;
        prev1 = tok;
    }
    return out;
}

std::uint64_t Corpus::sequence_count(std::uint32_t chunk_len) const {
    if (chunk_len == 0 || tokens.size() < static_cast<std::size_t>(chunk_len) + 1) return 0;
    return (tokens.size() - 1) / chunk_len;
}

std::span<const std::uint32_t> Corpus::inputs(std::uint32_t chunk_len,
                                              std::uint64_t index) const {
    if (index >= sequence_count(chunk_len))
        throw ValidationError("corpus sequence index out of range");
    return std::span<const std::uint32_t>(tokens).subspan(index * chunk_len, chunk_len);
}

std::span<const std::uint32_t> Corpus::targets(std::uint32_t chunk_len,
                                               std::uint64_t index) const {
    if (index >= sequence_count(chunk_len))
        throw ValidationError("corpus sequence index out of range");
    return std::span<const std::uint32_t>(tokens).subspan(index * chunk_len + 1, chunk_len);
}

CorpusPaths corpus_paths(const std::filesystem::path& stem) {
    CorpusPaths p;
    p.train = stem;
    p.train += ".train.pdco";
    p.heldout = stem;
    p.heldout += ".heldout.pdco";
    return p;
}

double gen_corpus(const CorpusSpec& spec, const std::filesystem::path& stem) {
    spec.validate();
    const MarkovChain chain(spec.vocab_size, spec.seed, spec.skew, spec.context_modes);
    Rng rng(split_seed(spec.seed, 0x5A11));

    const std::uint64_t n_train = train_sequences(spec);
    const std::uint64_t n_held = spec.sequence_count - n_train;
    const std::uint64_t train_tokens = n_train * spec.chunk_len + 1;
    const std::uint64_t held_tokens = n_held * spec.chunk_len + 1;

    // One continuous walk, split into the two streams.
    const std::vector<std::uint32_t> all = chain.sample(train_tokens + held_tokens, rng);

    Corpus corpus;
    corpus.vocab_size = spec.vocab_size;
    corpus.entropy_rate = chain.entropy_rate();

    const CorpusPaths paths = corpus_paths(stem);
    corpus.tokens.assign(all.begin(), all.begin() + train_tokens);
    save_corpus(corpus, paths.train);
    corpus.tokens.assign(all.begin() + train_tokens, all.end());
    save_corpus(corpus, paths.heldout);
    return chain.entropy_rate();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw StorageError("cannot open corpus for writing: " + path.string());
    ByteWriter w;
    w.put_bytes(kCorpusMagic, 4);
    w.put<std::uint32_t>(corpus.vocab_size);
    w.put<std::uint64_t>(corpus.tokens.size());
    w.put<double>(corpus.entropy_rate);
    out.write(reinterpret_cast<const char*>(w.bytes().data()),
              static_cast<std::streamsize>(w.size()));
    out.write(reinterpret_cast<const char*>(corpus.tokens.data()),
              static_cast<std::streamsize>(corpus.tokens.size() * sizeof(std::uint32_t)));
    out.flush();
    if (!out) throw StorageError("failed writing corpus: " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw StorageError("cannot open corpus: " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kCorpusMagic, 4) != 0)
        throw CorruptionError("bad corpus magic: " + path.string());
    Corpus corpus;
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&corpus.vocab_size), sizeof(corpus.vocab_size));
    in.read(reinterpret_cast<char*>(&count), sizeof(count));
    in.read(reinterpret_cast<char*>(&corpus.entropy_rate), sizeof(corpus.entropy_rate));
    if (!in) throw CorruptionError("truncated corpus header: " + path.string());
    if (corpus.vocab_size < 2) throw CorruptionError("corpus vocab_size invalid");
    corpus.tokens.resize(count);
    in.read(reinterpret_cast<char*>(corpus.tokens.data()),
            static_cast<std::streamsize>(count * sizeof(std::uint32_t)));
    if (!in || in.gcount() != static_cast<std::streamsize>(count * sizeof(std::uint32_t)))
        throw CorruptionError("truncated corpus payload: " + path.string());
    for (std::uint32_t tok : corpus.tokens) {
        if (tok >= corpus.vocab_size)
            throw CorruptionError("corpus token out of vocabulary range");
    }
    return corpus;
}

}  // namespace pdforge
