#include "trajlab/rng.hpp"

#include "trajlab/errors.hpp"

#include <doctest.h>

#include <cmath>
#include <set>

using namespace trajlab;

TEST_CASE("identical seeds give identical streams") {
    Rng a(42);
    Rng b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
}

TEST_CASE("different seeds diverge") {
    Rng a(1);
    Rng b(2);
    int differing = 0;
    for (int i = 0; i < 16; ++i) {
        differing += a.next_u64() != b.next_u64() ? 1 : 0;
    }
    CHECK(differing > 12);
}

TEST_CASE("substreams are independent and reproducible") {
    Rng base(7);
    Rng s1 = base.split(0);
    Rng s2 = base.split(1);
    Rng s1_again = Rng(7).split(0);
    CHECK(s1.next_u64() == s1_again.next_u64());
    CHECK(s1.next_u64() != s2.next_u64());
}

TEST_CASE("next_below stays in range and covers values") {
    Rng rng(3);
    std::set<uint64_t> seen;
    for (int i = 0; i < 600; ++i) {
        const uint64_t v = rng.next_below(7);
        CHECK(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
    CHECK_THROWS_AS(rng.next_below(0), ValueError);
}

TEST_CASE("next_unit lies in [0,1) and has a sane mean") {
    Rng rng(11);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.next_unit();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        sum += u;
    }
    CHECK(std::fabs(sum / n - 0.5) < 0.02);
}

TEST_CASE("normal draws have roughly unit variance") {
    Rng rng(13);
    double sum = 0.0;
    double sq = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::fabs(mean) < 0.05);
    CHECK(std::fabs(var - 1.0) < 0.1);
}

TEST_CASE("state round-trips") {
    Rng rng(21);
    rng.next_u64();
    uint64_t st[4];
    rng.state(st);
    Rng restored = Rng::from_state(st);
    for (int i = 0; i < 10; ++i) {
        CHECK(rng.next_u64() == restored.next_u64());
    }
}

TEST_CASE("shuffle is deterministic per seed") {
    std::vector<int> a{1, 2, 3, 4, 5, 6, 7, 8};
    std::vector<int> b = a;
    Rng r1(5);
    Rng r2(5);
    r1.shuffle(a);
    r2.shuffle(b);
    CHECK(a == b);
}
