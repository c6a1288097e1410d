#include "doctest.h"
#include "sfm/fold.hpp"
#include "test_util.hpp"

using namespace sfm;

TEST_CASE("fold index mapping, B=4 B1=2") {
    // rows r0..r3 of length 2 -> row0' = [r0 | r1], row1' = [r2 | r3]
    Tensor3 z(4, 1, 2);
    z.data = {0, 1, 10, 11, 20, 21, 30, 31};
    FoldPlan plan = FoldPlan::make(4, 2, 2);
    Tensor3 f = fold(z, plan);
    CHECK(f.b == 2);
    CHECK(f.t == 4);
    CHECK(f.data == std::vector<double>{0, 1, 10, 11, 20, 21, 30, 31});
}

TEST_CASE("fold with B1=B is the identity") {
    Rng rng(2);
    Tensor3 z = Tensor3::random_normal(6, 2, 3, rng);
    FoldPlan plan = FoldPlan::make(6, 6, 3);
    CHECK(testutil::bit_equal(fold(z, plan).data, z.data));
}

TEST_CASE("fold with B1=1 concatenates the whole batch in order") {
    Tensor3 z(3, 1, 2);
    z.data = {1, 2, 3, 4, 5, 6};
    FoldPlan plan = FoldPlan::make(3, 1, 2);
    Tensor3 f = fold(z, plan);
    CHECK(f.b == 1);
    CHECK(f.t == 6);
    CHECK(f.data == std::vector<double>{1, 2, 3, 4, 5, 6});
    Tensor3 back = unfold(f, plan);
    CHECK(testutil::bit_equal(back.data, z.data));
}

TEST_CASE("fold plan validation") {
    CHECK_THROWS_AS(FoldPlan::make(6, 4, 3), std::invalid_argument);  // 4 does not divide 6
    CHECK_THROWS_AS(FoldPlan::make(0, 1, 3), std::invalid_argument);
    Tensor3 z(4, 1, 2);
    CHECK_THROWS_AS(fold(z, FoldPlan::make(8, 2, 2)), std::invalid_argument);
    // unfold with a mismatched plan is rejected, never silently reshaped
    FoldPlan plan = FoldPlan::make(4, 2, 2);
    Tensor3 f = fold(z, plan);
    CHECK_THROWS_AS(unfold(f, FoldPlan::make(4, 4, 2)), std::invalid_argument);
    CHECK_THROWS_AS(unfold(z, plan), std::invalid_argument);
}

TEST_CASE("reset positions sit at every segment start") {
    FoldPlan plan = FoldPlan::make(8, 2, 5);
    auto mask = plan.reset_mask();
    REQUIRE(mask.size() == 20);
    for (size_t i = 0; i < mask.size(); ++i) {
        CHECK(static_cast<bool>(mask[i]) == (i % 5 == 0));
    }
}

TEST_CASE("round-trip is bit-exact on 100 random tensors") {
    Rng rng(7);
    for (int inst = 0; inst < 100; ++inst) {
        const int64_t B = rng.integer(1, 24), D = rng.integer(1, 4), L = rng.integer(1, 9);
        const auto divs = divisors(B);
        const int64_t b1 =
            divs[static_cast<size_t>(rng.integer(0, static_cast<int64_t>(divs.size()) - 1))];
        FoldPlan plan = FoldPlan::make(B, b1, L);
        Tensor3 z = Tensor3::random_normal(B, D, L, rng);
        CHECK(testutil::bit_equal(unfold(fold(z, plan), plan).data, z.data));
    }
}

TEST_CASE("fold writes every output index exactly once (sentinel fill)") {
    Rng rng(9);
    for (int inst = 0; inst < 20; ++inst) {
        const int64_t B = rng.integer(1, 12), D = rng.integer(1, 3), L = rng.integer(1, 6);
        const auto divs = divisors(B);
        const int64_t b1 =
            divs[static_cast<size_t>(rng.integer(0, static_cast<int64_t>(divs.size()) - 1))];
        std::vector<double> in(static_cast<size_t>(B * D * L));
        for (size_t i = 0; i < in.size(); ++i) in[i] = static_cast<double>(i);
        const double sentinel = -1e308;
        std::vector<double> out(in.size(), sentinel);
        fold_into(in.data(), B, D, L, b1, out.data());
        // no sentinel survives, and the output is a permutation of the input
        std::vector<double> sorted = out;
        std::sort(sorted.begin(), sorted.end());
        for (size_t i = 0; i < sorted.size(); ++i) {
            CHECK(sorted[i] == static_cast<double>(i));
        }
    }
}

// brute-force oracle: scan all divisors in order, strict improvement keeps
// the smaller divisor on ties
static int64_t oracle_closest_divisor(int64_t a, double b) {
    int64_t best = 1;
    double best_dist = std::abs(1.0 - b);
    for (int64_t d = 2; d <= a; ++d) {
        if (a % d != 0) continue;
        const double dist = std::abs(static_cast<double>(d) - b);
        if (dist < best_dist) {
            best = d;
            best_dist = dist;
        }
    }
    return best;
}

TEST_CASE("closest_divisor frozen examples") {
    CHECK(closest_divisor(8, 8.0) == 8);
    // divisors of 12: {1,2,3,4,6,12}; 4 and 6 tie at distance 1, smaller wins
    CHECK(oracle_closest_divisor(12, 5.0) == 4);
    CHECK(closest_divisor(12, 5.0) == 4);
    // divisors of 128: 16 and 32 tie at distance 8, smaller wins
    CHECK(oracle_closest_divisor(128, 24.0) == 16);
    CHECK(closest_divisor(128, 24.0) == 16);
}

TEST_CASE("closest_divisor always divides and minimizes the distance") {
    Rng rng(13);
    for (int inst = 0; inst < 400; ++inst) {
        const int64_t a = rng.integer(1, 3000);
        const double b = rng.uniform(-10.0, 2.0 * static_cast<double>(a));
        const int64_t got = closest_divisor(a, b);
        CHECK(a % got == 0);
        CHECK(got == oracle_closest_divisor(a, b));
        for (int64_t d : divisors(a)) {
            CHECK(std::abs(static_cast<double>(got) - b) <=
                  std::abs(static_cast<double>(d) - b));
        }
    }
    CHECK_THROWS_AS(closest_divisor(0, 1.0), std::invalid_argument);
}
