#include "support.hpp"

#include "mvil/rng.hpp"

using namespace mvil;

TEST_CASE("same seed gives the same stream") {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
        CHECK(a.uniform() == b.uniform());
        CHECK(a.normal() == b.normal());
        CHECK(a.below(17) == b.below(17));
    }
}

TEST_CASE("derived streams differ by stream id and are reproducible") {
    CHECK(Rng::derive(1, 0).next_u64() == Rng::derive(1, 0).next_u64());
    CHECK(Rng::derive(1, 0).next_u64() != Rng::derive(1, 1).next_u64());
    CHECK(Rng::derive(1, 0).next_u64() != Rng::derive(2, 0).next_u64());
}

TEST_CASE("uniform stays in [0, 1) and below stays in range") {
    Rng rng(3);
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(rng.below(5) < 5u);
    }
    CHECK(rng.below(1) == 0u);
}

TEST_CASE("normal has roughly unit moments") {
    Rng rng(11);
    const int n = 200000;
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        s += x;
        s2 += x * x;
    }
    // Standard error of the mean is 1/sqrt(n) ~ 0.0022; of the variance ~ sqrt(2/n) ~ 0.0032.
    CHECK(std::abs(s / n) < 0.012);
    CHECK(std::abs(s2 / n - 1.0) < 0.016);
}

TEST_CASE("below is unbiased over a small range") {
    Rng rng(5);
    std::vector<int> counts(3, 0);
    const int n = 30000;
    for (int i = 0; i < n; ++i) ++counts[rng.below(3)];
    // 99.9% band of Binomial(30000, 1/3): mean 10000, sd ~81.6, 3.29 sd ~ 269.
    for (int c : counts) CHECK(std::abs(c - 10000) < 270);
}

TEST_CASE("state round-trips") {
    Rng a(9);
    a.uniform();
    const auto saved = a.state();
    const double next = a.uniform();
    Rng b(0);
    b.set_state(saved);
    CHECK(b.uniform() == next);
}
