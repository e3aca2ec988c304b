#include "pdforge/logits_codec.hpp"

#include "pdforge/common.hpp"
#include "test_util.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace pdforge;

TEST_CASE("softmax_with_temperature basics") {
    const std::vector<double> uniform_logits{0.0, 0.0, 0.0, 0.0};
    const auto u = softmax_with_temperature(uniform_logits, 1.0);
    for (double q : u) CHECK(q == doctest::Approx(0.25).epsilon(1e-12));

    const std::vector<double> two{1.0, 0.0};
    const auto probs = softmax_with_temperature(two, 2.0);
    const double expected = std::exp(0.5) / (std::exp(0.5) + 1.0);
    CHECK(probs[0] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(probs[0] == doctest::Approx(0.6225).epsilon(1e-4));
    CHECK(probs[1] == doctest::Approx(0.3775).epsilon(1e-4));

    // constant rows stay uniform at any temperature (shift invariance)
    for (double c : {-100.0, 0.0, 7.5}) {
        for (double tau : {0.05, 1.0, 10.0}) {
            const std::vector<double> constant{c, c, c};
            for (double q : softmax_with_temperature(constant, tau))
                CHECK(q == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("softmax_with_temperature validation") {
    const std::vector<double> ok{1.0, 2.0};
    CHECK_THROWS_AS((void)softmax_with_temperature(ok, 0.0), ValidationError);
    CHECK_THROWS_AS((void)softmax_with_temperature(ok, -1.0), ValidationError);
    const std::vector<double> bad{1.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS((void)softmax_with_temperature(bad, 1.0), ValidationError);
    const std::vector<double> inf{1.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS((void)softmax_with_temperature(inf, 1.0), ValidationError);
    CHECK_THROWS_AS((void)softmax_with_temperature(std::vector<double>{}, 1.0), ValidationError);
}

TEST_CASE("truncate_top_p_k worked examples") {
    SUBCASE("dominant token exceeds p alone") {
        std::vector<double> logits{std::log(0.97), std::log(0.01), std::log(0.01),
                                   std::log(0.01)};
        for (std::uint32_t k : {1u, 2u, 4u}) {
            const auto dist = truncate_top_p_k(logits, TruncationSpec{0.95, k});
            REQUIRE(dist.size() == 1);
            CHECK(dist.kept_ids[0] == 0);
            CHECK(dist.probs[0] == doctest::Approx(1.0).epsilon(1e-12));
        }
    }
    SUBCASE("cumulative crosses p at three tokens, capped at k=2") {
        const std::vector<double> logits{2.0, 1.0, 0.0, -1.0, -2.0};
        const auto dist = truncate_top_p_k(logits, TruncationSpec{0.9, 2});
        REQUIRE(dist.size() == 2);
        CHECK(dist.kept_ids[0] == 0);
        CHECK(dist.kept_ids[1] == 1);
        CHECK(dist.probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(dist.probs[1] == doctest::Approx(0.2689).epsilon(1e-4));
        // equals softmax([2, 1])
        const std::vector<double> kept{2.0, 1.0};
        const auto direct = softmax_with_temperature(kept, 1.0);
        CHECK(dist.probs[0] == doctest::Approx(direct[0]).epsilon(1e-12));
    }
    SUBCASE("defaults follow the standard configuration") {
        const TruncationSpec spec;
        CHECK(spec.p == 0.95);
        CHECK(spec.k == 100);
    }
    SUBCASE("spec validation") {
        CHECK_THROWS_AS((TruncationSpec{0.0, 10}.validate()), ValidationError);
        CHECK_THROWS_AS((TruncationSpec{1.5, 10}.validate()), ValidationError);
        CHECK_THROWS_AS((TruncationSpec{0.5, 0}.validate()), ValidationError);
    }
}

TEST_CASE("truncate_top_p_k matches the brute-force oracle") {
    Rng rng(20260810);
    for (int trial = 0; trial < 2000; ++trial) {
        const std::size_t vocab = 2 + rng.below(63);
        const auto logits = test::random_logits(rng, vocab);
        const double p = 0.1 + 0.9 * rng.uniform();
        const std::uint32_t k = 1 + static_cast<std::uint32_t>(rng.below(vocab));
        const auto got = truncate_top_p_k(logits, TruncationSpec{p, k});
        const auto want = test::oracle_truncate(logits, p, k);
        REQUIRE(got.kept_ids == want.kept_ids);
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got.probs[i] == doctest::Approx(want.probs[i]).epsilon(1e-12));
    }
}

TEST_CASE("truncation kept-set size is monotone in p and k") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t vocab = 4 + rng.below(32);
        const auto logits = test::random_logits(rng, vocab);
        std::size_t prev = 0;
        for (std::uint32_t k = 1; k <= vocab; ++k) {
            const auto d = truncate_top_p_k(logits, TruncationSpec{0.8, k});
            CHECK(d.size() >= prev);
            prev = d.size();
        }
        prev = 0;
        for (double p : {0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0}) {
            const auto d = truncate_top_p_k(
                logits, TruncationSpec{p, static_cast<std::uint32_t>(vocab)});
            CHECK(d.size() >= prev);
            prev = d.size();
        }
    }
}

TEST_CASE("truncation and processing are shift invariant") {
    Rng rng(11);
    const TemperaturePolicy policies[] = {TemperaturePolicy::static_tau(0.7),
                                          TemperaturePolicy::ada_sd(),
                                          TemperaturePolicy::ada_h(2.0, 0.1, 4.8)};
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t vocab = 4 + rng.below(32);
        const auto logits = test::random_logits(rng, vocab);
        const double shift = 50.0 * (rng.uniform() - 0.5);
        std::vector<double> shifted = logits;
        for (double& z : shifted) z += shift;
        const TruncationSpec spec{0.85, 8};
        const auto a = truncate_top_p_k(logits, spec);
        const auto b = truncate_top_p_k(shifted, spec);
        REQUIRE(a.kept_ids == b.kept_ids);
        for (std::size_t i = 0; i < a.size(); ++i)
            CHECK(a.probs[i] == doctest::Approx(b.probs[i]).epsilon(1e-12));
        const auto& policy = policies[trial % 3];
        const auto pa = process_logits(logits, spec, policy);
        const auto pb = process_logits(shifted, spec, policy);
        REQUIRE(pa.kept_ids == pb.kept_ids);
        for (std::size_t i = 0; i < pa.size(); ++i)
            CHECK(pa.probs[i] == doctest::Approx(pb.probs[i]).epsilon(1e-12));
    }
}

TEST_CASE("entropy worked examples and bounds") {
    SparseTeacherDistribution single;
    single.kept_ids = {3};
    single.probs = {1.0};
    CHECK(entropy(single) == doctest::Approx(0.0).epsilon(1e-15));

    SparseTeacherDistribution uniform4;
    uniform4.kept_ids = {0, 1, 2, 3};
    uniform4.probs = {0.25, 0.25, 0.25, 0.25};
    CHECK(entropy(uniform4) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

    const std::vector<double> two{2.0, 1.0};
    const auto dist = truncate_top_p_k(two, TruncationSpec{1.0, 2});
    CHECK(entropy(dist) == doctest::Approx(0.5822).epsilon(1e-4));

    Rng rng(13);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t vocab = 2 + rng.below(48);
        const auto logits = test::random_logits(rng, vocab);
        const auto d = truncate_top_p_k(logits, TruncationSpec{0.9, 16});
        const double h = entropy(d);
        CHECK(h >= 0.0);
        CHECK(h <= std::log(static_cast<double>(d.size())) + 1e-12);
    }
}

namespace {

// n-point distribution with one heavy token and a uniform tail, tuned by
// bisection until its entropy hits the target.
SparseTeacherDistribution dist_with_entropy(double target, std::size_t n) {
    auto build = [&](double q) {
        SparseTeacherDistribution d;
        d.kept_ids.resize(n);
        d.probs.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            d.kept_ids[i] = static_cast<std::uint32_t>(i);
            d.probs[i] = i == 0 ? q : (1.0 - q) / static_cast<double>(n - 1);
        }
        return d;
    };
    double lo = 1.0 / static_cast<double>(n), hi = 1.0 - 1e-12;
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (entropy(build(mid)) > target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return build(0.5 * (lo + hi));
}

}  // namespace

TEST_CASE("resolve_temperature covers all policies") {
    SUBCASE("static passthrough") {
        SparseTeacherDistribution d;
        d.kept_ids = {0};
        d.probs = {1.0};
        CHECK(resolve_temperature(TemperaturePolicy::static_tau(0.37), d) == 0.37);
    }
    SUBCASE("AdaH endpoints and midpoint") {
        const auto policy = TemperaturePolicy::ada_h(2.0, 0.1, 4.8);
        SparseTeacherDistribution peaked;
        peaked.kept_ids = {5};
        peaked.probs = {1.0};  // H = 0
        CHECK(resolve_temperature(policy, peaked) == doctest::Approx(2.0).epsilon(1e-12));

        const auto mid = dist_with_entropy(2.4, 200);
        REQUIRE(entropy(mid) == doctest::Approx(2.4).epsilon(1e-10));
        CHECK(resolve_temperature(policy, mid) == doctest::Approx(1.05).epsilon(1e-9));

        const auto full = dist_with_entropy(4.8, 256);
        REQUIRE(entropy(full) == doctest::Approx(4.8).epsilon(1e-10));
        CHECK(resolve_temperature(policy, full) == doctest::Approx(0.1).epsilon(1e-9));

        // entropy above H_max clamps to tau_min
        SparseTeacherDistribution wide;
        wide.kept_ids.resize(256);
        wide.probs.resize(256);
        for (std::uint32_t i = 0; i < 256; ++i) {
            wide.kept_ids[i] = i;
            wide.probs[i] = 1.0 / 256.0;  // H = ln 256 > 4.8
        }
        CHECK(resolve_temperature(policy, wide) == doctest::Approx(0.1).epsilon(1e-12));
    }
    SUBCASE("AdaH stays within [tau_min, tau_max]") {
        const auto policy = TemperaturePolicy::ada_h(2.0, 0.1, 4.8);
        Rng rng(17);
        for (int trial = 0; trial < 500; ++trial) {
            const std::size_t vocab = 2 + rng.below(200);
            const auto logits = test::random_logits(rng, vocab, 5.0);
            const auto d = truncate_top_p_k(logits, TruncationSpec{0.99, 128});
            const double tau = resolve_temperature(policy, d);
            CHECK(tau >= 0.1);
            CHECK(tau <= 2.0);
        }
    }
    SUBCASE("AdaSD equals the kept-logit standard deviation") {
        const std::vector<double> two{2.0, 1.0};
        const auto d = truncate_top_p_k(two, TruncationSpec{1.0, 2});
        // logits {2, 1}: population std is 0.5
        CHECK(resolve_temperature(TemperaturePolicy::ada_sd(), d) ==
              doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("AdaSD floors at 1e-3 for a single entry") {
        SparseTeacherDistribution d;
        d.kept_ids = {0};
        d.probs = {1.0};
        CHECK(resolve_temperature(TemperaturePolicy::ada_sd(), d) == 1e-3);
    }
    SUBCASE("policy validation") {
        CHECK_THROWS_AS((void)TemperaturePolicy::static_tau(0.0), ValidationError);
        CHECK_THROWS_AS((void)TemperaturePolicy::ada_h(0.1, 2.0, 4.8), ValidationError);
        CHECK_THROWS_AS((void)TemperaturePolicy::ada_h(2.0, 0.1, 0.0), ValidationError);
    }
}

TEST_CASE("apply_temperature equals softmax of kept logits") {
    SUBCASE("tau = 1 is the identity") {
        const auto d = truncate_top_p_k(std::vector<double>{1.0, 0.5, -2.0},
                                        TruncationSpec{0.99, 3});
        const auto same = apply_temperature(d, 1.0);
        CHECK(same.kept_ids == d.kept_ids);
        CHECK(same.probs == d.probs);
    }
    SUBCASE("worked example") {
        const auto d = truncate_top_p_k(std::vector<double>{1.0, 0.0}, TruncationSpec{1.0, 2});
        const auto heated = apply_temperature(d, 2.0);
        CHECK(heated.probs[0] == doctest::Approx(0.6225).epsilon(1e-4));
        CHECK(heated.probs[1] == doctest::Approx(0.3775).epsilon(1e-4));
    }
    SUBCASE("large tau approaches uniform") {
        const auto d = truncate_top_p_k(std::vector<double>{3.0, 1.0, -1.0, 2.0},
                                        TruncationSpec{1.0, 4});
        const auto flat = apply_temperature(d, 1e6);
        for (double q : flat.probs) CHECK(q == doctest::Approx(0.25).epsilon(1e-5));
    }
    SUBCASE("temperature equivalence across the sweep") {
        Rng rng(23);
        const double taus[] = {0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0};
        for (int trial = 0; trial < 300; ++trial) {
            const std::size_t vocab = 3 + rng.below(48);
            const auto logits = test::random_logits(rng, vocab);
            const auto d = truncate_top_p_k(logits, TruncationSpec{0.9, 12});
            const double tau = taus[trial % 7];
            const auto heated = apply_temperature(d, tau);
            std::vector<double> kept_logits(d.size());
            for (std::size_t i = 0; i < d.size(); ++i) kept_logits[i] = logits[d.kept_ids[i]];
            const auto direct = softmax_with_temperature(kept_logits, tau);
            for (std::size_t i = 0; i < d.size(); ++i)
                CHECK(heated.probs[i] == doctest::Approx(direct[i]).epsilon(1e-12));
        }
    }
}

TEST_CASE("process_logits composes the pipeline") {
    SUBCASE("composition of the worked examples") {
        const std::vector<double> logits{2.0, 1.0, 0.0, -1.0, -2.0};
        const auto d = process_logits(logits, TruncationSpec{0.9, 2},
                                      TemperaturePolicy::static_tau(1.0));
        REQUIRE(d.size() == 2);
        CHECK(d.probs[0] == doctest::Approx(0.7311).epsilon(1e-4));
        CHECK(d.probs[1] == doctest::Approx(0.2689).epsilon(1e-4));
    }
    SUBCASE("p=1, k=V keeps the full softmax") {
        Rng rng(29);
        const auto logits = test::random_logits(rng, 16);
        const auto d = process_logits(logits, TruncationSpec{1.0, 16},
                                      TemperaturePolicy::static_tau(1.0));
        REQUIRE(d.size() == 16);
        const auto full = softmax_with_temperature(logits, 1.0);
        for (std::size_t i = 0; i < 16; ++i)
            CHECK(d.probs[i] == doctest::Approx(full[i]).epsilon(1e-12));
    }
    SUBCASE("k=1 reduces to the argmax token") {
        Rng rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            const auto logits = test::random_logits(rng, 24);
            const auto d = process_logits(logits, TruncationSpec{0.95, 1},
                                          TemperaturePolicy::static_tau(1.0));
            REQUIRE(d.size() == 1);
            std::size_t argmax = 0;
            for (std::size_t i = 1; i < logits.size(); ++i)
                if (logits[i] > logits[argmax]) argmax = i;
            CHECK(d.kept_ids[0] == argmax);
            CHECK(d.probs[0] == 1.0);
        }
    }
    SUBCASE("output satisfies the distribution invariants") {
        Rng rng(37);
        for (int trial = 0; trial < 200; ++trial) {
            const std::size_t vocab = 2 + rng.below(64);
            const auto logits = test::random_logits(rng, vocab);
            const auto d = process_logits(logits, TruncationSpec{0.8, 10},
                                          TemperaturePolicy::ada_h(2.0, 0.1, 4.8));
            CHECK_NOTHROW(d.validate(static_cast<std::uint32_t>(vocab)));
            CHECK(d.size() <= 10);
        }
    }
}

TEST_CASE("estimate_storage reproduces the headline arithmetic") {
    const auto e = estimate_storage(150000, 100000000000ull, 18.75, 8);
    CHECK(e.dense_bytes == 6.0e16);
    CHECK(e.sparse_bytes == 1.5e13);
    CHECK(e.reduction_factor == 4000.0);

    const auto empty = estimate_storage(150000, 0, 18.75, 8);
    CHECK(empty.dense_bytes == 0.0);
    CHECK(empty.sparse_bytes == 0.0);
    CHECK(std::isinf(empty.reduction_factor));

    const auto zero_kept = estimate_storage(100, 10, 0.0, 8);
    CHECK(zero_kept.sparse_bytes == 0.0);
    CHECK(std::isinf(zero_kept.reduction_factor));
}

TEST_CASE("sparse distribution invariants are enforced") {
    SparseTeacherDistribution d;
    d.kept_ids = {1, 3};
    d.probs = {0.5, 0.5};
    CHECK_NOTHROW(d.validate(4));
    CHECK_THROWS_AS(d.validate(3), ValidationError);  // id 3 out of range

    SparseTeacherDistribution unsorted;
    unsorted.kept_ids = {3, 1};
    unsorted.probs = {0.5, 0.5};
    CHECK_THROWS_AS(unsorted.validate(4), ValidationError);

    SparseTeacherDistribution bad_sum;
    bad_sum.kept_ids = {0, 1};
    bad_sum.probs = {0.5, 0.6};
    CHECK_THROWS_AS(bad_sum.validate(4), ValidationError);

    SparseTeacherDistribution empty;
    CHECK_THROWS_AS(empty.validate(4), ValidationError);
}
