#include "doctest.h"
#include "sfm/tensor.hpp"
#include "test_util.hpp"

using namespace sfm;

TEST_CASE("index contract holds for random tensors and after elementwise ops") {
    Rng rng(11);
    for (int inst = 0; inst < 100; ++inst) {
        const int64_t B = rng.integer(1, 5), D = rng.integer(1, 6), T = rng.integer(1, 9);
        Tensor3 x(B, D, T);
        for (int64_t i = 0; i < x.size(); ++i) x.data[i] = static_cast<double>(i);
        Tensor3 y = scale(add(x, Tensor3(B, D, T)), 1.0);  // ops must preserve the layout
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t d = 0; d < D; ++d) {
                for (int64_t t = 0; t < T; ++t) {
                    CHECK(y.at(b, d, t) == static_cast<double>(b * D * T + d * T + t));
                }
            }
        }
    }
}

TEST_CASE("construction rejects empty dims") {
    CHECK_THROWS_AS(Tensor3(1, 1, 0), std::invalid_argument);
    CHECK_THROWS_AS(Tensor3(0, 1, 1), std::invalid_argument);
}

TEST_CASE("seq_mean examples") {
    Tensor3 x(1, 1, 3);
    x.data = {1, 2, 3};
    CHECK(seq_mean(x).data[0] == doctest::Approx(2.0));

    Tensor3 y(1, 2, 2);
    y.data = {1, 1, 4, 6};
    Tensor3 m = seq_mean(y);
    CHECK(m.at(0, 0, 0) == doctest::Approx(1.0));
    CHECK(m.at(0, 1, 0) == doctest::Approx(5.0));

    Tensor3 z(2, 1, 1);
    z.data = {7, -7};
    Tensor3 mz = seq_mean(z);
    CHECK(mz.at(0, 0, 0) == 7.0);
    CHECK(mz.at(1, 0, 0) == -7.0);
}

TEST_CASE("seq_mean of a constant tensor returns that constant") {
    Rng rng(3);
    for (int i = 0; i < 20; ++i) {
        const double c = rng.normal();
        Tensor3 x = Tensor3::full(2, 3, rng.integer(1, 17), c);
        Tensor3 m = seq_mean(x);
        for (double v : m.data) CHECK(v == doctest::Approx(c).epsilon(1e-14));
    }
}

TEST_CASE("concat_ends places head, body, tail") {
    Tensor3 head(1, 1, 1), tail(1, 1, 1), x(1, 1, 2);
    head.data = {9};
    tail.data = {8};
    x.data = {1, 2};
    Tensor3 out = concat_ends(head, x, tail);
    CHECK(out.data == std::vector<double>{9, 1, 2, 8});
}

TEST_CASE("concat_ends with seq_mean gives the aux initialization") {
    Tensor3 x(1, 1, 2);
    x.data = {2, 4};
    Tensor3 m = seq_mean(x);
    Tensor3 out = concat_ends(m, x, m);
    CHECK(out.data == std::vector<double>{3, 2, 4, 3});
}

TEST_CASE("concat_ends keeps batch rows independent") {
    Rng rng(5);
    Tensor3 x = Tensor3::random_normal(2, 2, 4, rng);
    Tensor3 m = seq_mean(x);
    Tensor3 both = concat_ends(m, x, m);

    // row 0 alone must produce the same values the two-row batch produced
    Tensor3 x0(1, 2, 4), m0(1, 2, 1);
    for (int64_t d = 0; d < 2; ++d) {
        for (int64_t t = 0; t < 4; ++t) x0.at(0, d, t) = x.at(0, d, t);
        m0.at(0, d, 0) = m.at(0, d, 0);
    }
    Tensor3 solo = concat_ends(m0, x0, m0);
    for (int64_t d = 0; d < 2; ++d) {
        for (int64_t t = 0; t < 6; ++t) CHECK(both.at(0, d, t) == solo.at(0, d, t));
    }
}

TEST_CASE("concat_ends rejects mismatched shapes") {
    Tensor3 head(1, 2, 1), tail(1, 1, 1), x(1, 1, 2);
    CHECK_THROWS_AS(concat_ends(head, x, tail), std::invalid_argument);
    Tensor3 good_head(1, 1, 1), long_head(1, 1, 2);
    CHECK_THROWS_AS(concat_ends(long_head, x, tail), std::invalid_argument);
}

TEST_CASE("swap_positions single segment") {
    Tensor3 x(1, 1, 4);
    x.data = {9, 1, 2, 8};
    Tensor3 out = swap_positions(x, 0, 3, 4);
    CHECK(out.data == std::vector<double>{8, 1, 2, 9});
}

TEST_CASE("swap_positions acts per segment in folded layouts") {
    Tensor3 x(1, 1, 6);
    x.data = {1, 2, 3, 4, 5, 6};
    Tensor3 out = swap_positions(x, 0, 2, 3);
    CHECK(out.data == std::vector<double>{3, 2, 1, 6, 5, 4});
}

TEST_CASE("swap_positions is a bit-exact involution") {
    Rng rng(17);
    for (int inst = 0; inst < 30; ++inst) {
        const int64_t stride = rng.integer(2, 6);
        const int64_t segs = rng.integer(1, 4);
        Tensor3 x = Tensor3::random_normal(rng.integer(1, 3), rng.integer(1, 3), stride * segs,
                                           rng);
        const int64_t i = rng.integer(0, stride - 1), j = rng.integer(0, stride - 1);
        Tensor3 twice = swap_positions(swap_positions(x, i, j, stride), i, j, stride);
        CHECK(testutil::bit_equal(twice.data, x.data));
    }
}

TEST_CASE("swap_positions offsets out of range are rejected, i == j is a no-op") {
    Tensor3 x(1, 1, 4);
    x.data = {1, 2, 3, 4};
    CHECK_THROWS_AS(swap_positions(x, 0, 4, 4), std::invalid_argument);
    CHECK_THROWS_AS(swap_positions(x, -1, 0, 4), std::invalid_argument);
    CHECK(testutil::bit_equal(swap_positions(x, 2, 2, 4).data, x.data));
}

TEST_CASE("finite checks fire in verify mode only") {
    Tensor3 x(1, 1, 2);
    x.data = {1.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(seq_mean(x), std::runtime_error);
    set_mode(Mode::benchmark);
    CHECK_NOTHROW(seq_mean(x));
    set_mode(Mode::verify);
}
