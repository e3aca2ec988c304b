#pragma once

#include "pdforge/common.hpp"
#include "pdforge/rng.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace pdforge {

// Synthetic pre-training data: a seeded order-2 Markov chain whose exact
// entropy rate is computable, giving a lower bound for held-out
// cross-entropy.
struct CorpusSpec {
    std::uint32_t vocab_size = 256;
    std::uint64_t seed = 1;
    std::uint64_t sequence_count = 512;
    std::uint32_t chunk_len = 32;
    double train_ratio = 0.9;  // held-out ratio is 1 - train_ratio
    double skew = 2.0;         // 0 = uniform transitions
    std::uint32_t context_modes = 64;

    void validate() const;
};

// Order-2 chain: the next-token distribution depends on the two previous
// tokens through a hash onto `context_modes` mode distributions. Full support
// everywhere, so the pair chain is ergodic and the stationary distribution is
// computable by power iteration.
class MarkovChain {
public:
    MarkovChain(std::uint32_t vocab_size, std::uint64_t seed, double skew,
                std::uint32_t context_modes);

    std::uint32_t vocab_size() const { return vocab_; }
    double entropy_rate() const { return entropy_rate_; }

    std::uint32_t mode_of(std::uint32_t prev2, std::uint32_t prev1) const;
    double next_prob(std::uint32_t prev2, std::uint32_t prev1, std::uint32_t next) const;

    // Draws the initial pair from the stationary distribution, then walks the
    // chain; the sampled stream is stationary from the first token.
    std::vector<std::uint32_t> sample(std::uint64_t count, Rng& rng) const;

private:
    std::uint32_t vocab_;
    std::uint32_t modes_;
    std::vector<double> dists_;       // modes x vocab
    std::vector<double> cdfs_;        // modes x vocab
    std::vector<double> stationary_;  // vocab x vocab pair distribution
    std::vector<double> stationary_cdf_;
    double entropy_rate_ = 0.0;
};

// Flat token stream with the chain's entropy rate recorded alongside.
// On disk: magic "PDCO" | u32 vocab | u64 count | f64 entropy_rate | u32
// tokens, little-endian.
struct Corpus {
    std::uint32_t vocab_size = 0;
    double entropy_rate = 0.0;
    std::vector<std::uint32_t> tokens;

    // Number of (input, target) sequences of chunk_len positions.
    std::uint64_t sequence_count(std::uint32_t chunk_len) const;
    std::span<const std::uint32_t> inputs(std::uint32_t chunk_len, std::uint64_t index) const;
    std::span<const std::uint32_t> targets(std::uint32_t chunk_len, std::uint64_t index) const;
};

struct CorpusPaths {
    std::filesystem::path train;
    std::filesystem::path heldout;
};

CorpusPaths corpus_paths(const std::filesystem::path& stem);

// Writes <stem>.train.pdco and <stem>.heldout.pdco; the held-out stream
// continues the same chain. Returns the chain entropy rate.
double gen_corpus(const CorpusSpec& spec, const std::filesystem::path& stem);

void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path);

}  // namespace pdforge
