#include "pdforge/corpus.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <fstream>

using namespace pdforge;

namespace {

std::vector<char> file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gen_corpus is deterministic") {
    pdforge::test::TempDir dir("corpus");
    CorpusSpec spec;
    spec.vocab_size = 64;
    spec.sequence_count = 32;
    spec.chunk_len = 16;
    spec.seed = 99;
    const double r1 = gen_corpus(spec, dir.path() / "a");
    const double r2 = gen_corpus(spec, dir.path() / "b");
    CHECK(r1 == r2);
    CHECK(file_bytes(dir.path() / "a.train.pdco") == file_bytes(dir.path() / "b.train.pdco"));
    CHECK(file_bytes(dir.path() / "a.heldout.pdco") ==
          file_bytes(dir.path() / "b.heldout.pdco"));

    spec.seed = 100;
    gen_corpus(spec, dir.path() / "c");
    CHECK(file_bytes(dir.path() / "a.train.pdco") != file_bytes(dir.path() / "c.train.pdco"));
}

TEST_CASE("uniform chain has entropy rate ln V") {
    for (std::uint32_t vocab : {16u, 256u}) {
        const MarkovChain chain(vocab, 7, 0.0, 32);
        CHECK(chain.entropy_rate() ==
              doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(1e-12));
    }
}

TEST_CASE("empirical entropy of a skewed chain matches the analytic rate") {
    const MarkovChain chain(128, 31337, 2.0, 64);
    const double rate = chain.entropy_rate();
    CHECK(rate > 0.5);
    CHECK(rate < std::log(128.0));

    Rng rng(5);
    const std::uint64_t n = 1000000;
    const auto tokens = chain.sample(n + 2, rng);
    double nll = 0.0;
    for (std::uint64_t i = 2; i < n + 2; ++i)
        nll -= std::log(chain.next_prob(tokens[i - 2], tokens[i - 1], tokens[i]));
    const double empirical = nll / static_cast<double>(n);
    CHECK(empirical == doctest::Approx(rate).epsilon(0.02));
}

TEST_CASE("corpus file round-trip and carving") {
    pdforge::test::TempDir dir("carve");
    CorpusSpec spec;
    spec.vocab_size = 32;
    spec.sequence_count = 10;
    spec.chunk_len = 8;
    spec.train_ratio = 0.8;
    spec.seed = 3;
    gen_corpus(spec, dir.path() / "c");

    const Corpus train = load_corpus(dir.path() / "c.train.pdco");
    const Corpus heldout = load_corpus(dir.path() / "c.heldout.pdco");
    CHECK(train.vocab_size == 32);
    CHECK(train.entropy_rate == heldout.entropy_rate);
    CHECK(train.sequence_count(8) == 8);
    CHECK(heldout.sequence_count(8) == 2);
    CHECK(train.tokens.size() == 8 * 8 + 1);
    CHECK(heldout.tokens.size() == 2 * 8 + 1);

    // targets are the inputs shifted by one position
    for (std::uint64_t i = 0; i < train.sequence_count(8); ++i) {
        const auto in = train.inputs(8, i);
        const auto tg = train.targets(8, i);
        for (std::size_t t = 0; t + 1 < in.size(); ++t) CHECK(tg[t] == in[t + 1]);
        CHECK(tg[7] == train.tokens[i * 8 + 8]);
    }
    CHECK_THROWS_AS((void)train.inputs(8, 8), ValidationError);

    SUBCASE("save/load identity") {
        save_corpus(train, dir.path() / "copy.pdco");
        const Corpus back = load_corpus(dir.path() / "copy.pdco");
        CHECK(back.tokens == train.tokens);
        CHECK(back.vocab_size == train.vocab_size);
        CHECK(back.entropy_rate == train.entropy_rate);
    }
    SUBCASE("corrupted magic rejected") {
        auto bytes = file_bytes(dir.path() / "c.train.pdco");
        bytes[0] = 'X';
        std::ofstream out(dir.path() / "bad.pdco", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS((void)load_corpus(dir.path() / "bad.pdco"), CorruptionError);
    }
    SUBCASE("truncated payload rejected") {
        auto bytes = file_bytes(dir.path() / "c.train.pdco");
        bytes.resize(bytes.size() - 4);
        std::ofstream out(dir.path() / "short.pdco", std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS((void)load_corpus(dir.path() / "short.pdco"), CorruptionError);
    }
}

TEST_CASE("corpus spec validation") {
    CorpusSpec spec;
    spec.vocab_size = 1;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec = CorpusSpec{};
    spec.train_ratio = 1.0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec = CorpusSpec{};
    spec.train_ratio = 0.9999;  // rounds to an empty held-out split at 512 sequences
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    spec = CorpusSpec{};
    spec.skew = -1.0;
    CHECK_THROWS_AS(spec.validate(), ValidationError);
    CHECK_NOTHROW(CorpusSpec{}.validate());
}

TEST_CASE("sampling starts from the stationary pair distribution") {
    // mode frequencies over a long sample should match the stationary weights
    const MarkovChain chain(32, 17, 1.5, 8);
    Rng rng(11);
    const auto tokens = chain.sample(200000, rng);
    std::vector<double> freq(8, 0.0);
    for (std::size_t i = 2; i < tokens.size(); ++i)
        freq[chain.mode_of(tokens[i - 2], tokens[i - 1])] += 1.0;
    for (auto& f : freq) f /= static_cast<double>(tokens.size() - 2);
    // each mode's empirical visit rate within 10% relative of its analytic mass
    double total_dev = 0.0;
    for (std::size_t m = 0; m < 8; ++m) total_dev += freq[m];
    CHECK(total_dev == doctest::Approx(1.0).epsilon(1e-9));
}
