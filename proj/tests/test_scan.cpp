#include <cmath>

#include "doctest.h"
#include "sfm/fold.hpp"
#include "sfm/scan.hpp"
#include "test_util.hpp"

using namespace sfm;
using testutil::bit_equal;
using testutil::random_scan_inputs;
using testutil::scale_rel_err;

namespace {

// builds inputs with a constant discretized decay abar and unit gates:
// delta = 1, a_log = log(-log(abar)), b_gate*x = bx, c_gate = 1
ScanInputs constant_coeff_inputs(double abar, const std::vector<double>& bx,
                                 const std::vector<uint8_t>& reset) {
    const int64_t T = static_cast<int64_t>(bx.size());
    ScanInputs in;
    in.x = Tensor3(1, 1, T);
    in.x.data = bx;
    in.delta = Tensor3::full(1, 1, T, 1.0);
    in.a_log = Mat(1, 1);
    in.a_log.data[0] = std::log(-std::log(abar));
    in.b_gate = Tensor3::full(1, 1, T, 1.0);
    in.c_gate = Tensor3::full(1, 1, T, 1.0);
    in.reset_mask = reset;
    in.state_dim = 1;
    return in;
}

}  // namespace

TEST_CASE("discretize closed form: delta=1, a_log=0 gives exp(-1)") {
    Rng rng(1);
    ScanInputs in = random_scan_inputs(rng, 1, 1, 3, 1);
    for (auto& v : in.delta.data) v = 1.0;
    in.a_log.data[0] = 0.0;
    DiscretizedCoeffs co = discretize(in);
    CHECK(co.a_bar[co.index(0, 0, 0, 1)] == doctest::Approx(0.36787944117144233).epsilon(1e-14));
    CHECK(co.bx[co.index(0, 0, 0, 1)] ==
          doctest::Approx(in.b_gate.at(0, 0, 1) * in.x.at(0, 0, 1)).epsilon(1e-14));
}

TEST_CASE("discretize: reset positions force abar to exactly zero") {
    Rng rng(2);
    ScanInputs in = random_scan_inputs(rng, 2, 2, 6, 3);
    in.reset_mask[3] = 1;
    DiscretizedCoeffs co = discretize(in);
    for (int64_t b = 0; b < 2; ++b) {
        for (int64_t d = 0; d < 2; ++d) {
            for (int64_t s = 0; s < 3; ++s) {
                CHECK(co.a_bar[co.index(b, d, s, 0)] == 0.0);
                CHECK(co.a_bar[co.index(b, d, s, 3)] == 0.0);
                CHECK(co.a_bar[co.index(b, d, s, 1)] > 0.0);
                CHECK(co.a_bar[co.index(b, d, s, 1)] < 1.0);
            }
        }
    }
}

TEST_CASE("discretize limit: delta -> 0+ gives abar -> 1, bx -> 0") {
    Rng rng(3);
    ScanInputs in = random_scan_inputs(rng, 1, 1, 2, 1);
    for (auto& v : in.delta.data) v = 1e-12;
    DiscretizedCoeffs co = discretize(in);
    CHECK(co.a_bar[co.index(0, 0, 0, 1)] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(std::abs(co.bx[co.index(0, 0, 0, 1)]) < 1e-10);
}

TEST_CASE("discretize rejects non-positive delta") {
    Rng rng(4);
    ScanInputs in = random_scan_inputs(rng, 1, 1, 3, 1);
    in.delta.at(0, 0, 1) = 0.0;
    CHECK_THROWS_AS(discretize(in), std::invalid_argument);
    in.delta.at(0, 0, 1) = -0.5;
    CHECK_THROWS_AS(scan_sequential(in), std::invalid_argument);
}

TEST_CASE("reset_mask[0] must be set") {
    Rng rng(5);
    ScanInputs in = random_scan_inputs(rng, 1, 1, 3, 1);
    in.reset_mask[0] = 0;
    CHECK_THROWS_AS(scan_sequential(in), std::invalid_argument);
}

TEST_CASE("sequential scan: hand-evaluated geometric decay") {
    // abar = 0.5, bx = [1,0,0], c = 1 -> y = [1, 0.5, 0.25]
    ScanInputs in = constant_coeff_inputs(0.5, {1, 0, 0}, {1, 0, 0});
    ScanOutputs out = scan_sequential(in);
    CHECK(out.y.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.y.data[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(out.y.data[2] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("sequential scan: a mid-sequence reset equals two independent scans") {
    // abar = 0.5, bx = [1,1,1,1], reset at t=2 -> y = [1, 1.5, 1, 1.5]
    ScanInputs folded = constant_coeff_inputs(0.5, {1, 1, 1, 1}, {1, 0, 1, 0});
    ScanOutputs out = scan_sequential(folded);
    CHECK(out.y.data[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.y.data[1] == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(out.y.data[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.y.data[3] == doctest::Approx(1.5).epsilon(1e-12));

    ScanInputs half = constant_coeff_inputs(0.5, {1, 1}, {1, 0});
    ScanOutputs ref = scan_sequential(half);
    CHECK(out.y.data[0] == ref.y.data[0]);  // bit-equal to the independent scans
    CHECK(out.y.data[1] == ref.y.data[1]);
    CHECK(out.y.data[2] == ref.y.data[0]);
    CHECK(out.y.data[3] == ref.y.data[1]);
}

TEST_CASE("zero output gate silences y") {
    Rng rng(6);
    ScanInputs in = random_scan_inputs(rng, 2, 3, 7, 4);
    for (auto& v : in.c_gate.data) v = 0.0;
    ScanOutputs out = scan_sequential(in);
    for (double v : out.y.data) CHECK(v == 0.0);
}

TEST_CASE("scan_parallel with lanes=1 reproduces the oracle bit-exactly") {
    Rng rng(7);
    for (int inst = 0; inst < 25; ++inst) {
        ScanInputs in = random_scan_inputs(rng, rng.integer(1, 3), rng.integer(1, 4),
                                           rng.integer(1, 40), rng.integer(1, 8));
        ScanOutputs seq = scan_sequential(in);
        ScanOutputs par = scan_parallel(in, 1);
        CHECK(bit_equal(par.y.data, seq.y.data));
    }
}

TEST_CASE("scan_parallel matches the oracle for any (lanes, T) within 1e-12") {
    Rng rng(8);
    double worst = 0.0;
    for (int inst = 0; inst < 200; ++inst) {
        const int64_t T = rng.integer(1, 257);
        const int64_t S = std::vector<int64_t>{1, 4, 8}[static_cast<size_t>(rng.integer(0, 2))];
        ScanInputs in = random_scan_inputs(rng, rng.integer(1, 2), rng.integer(1, 3), T, S);
        ScanOutputs seq = scan_sequential(in);
        const int lanes = static_cast<int>(rng.integer(1, 64));
        ScanOutputs par = scan_parallel(in, lanes);
        worst = std::max(worst, scale_rel_err(par.y.data, seq.y.data));
    }
    CHECK(worst < 1e-12);
}

TEST_CASE("lanes > T degenerates gracefully") {
    Rng rng(9);
    ScanInputs in = random_scan_inputs(rng, 1, 2, 3, 4);
    ScanOutputs seq = scan_sequential(in);
    ScanOutputs par = scan_parallel(in, 64);
    CHECK(scale_rel_err(par.y.data, seq.y.data) < 1e-12);
}

TEST_CASE("the combine operator is associative") {
    Rng rng(10);
    double worst = 0.0;
    for (int i = 0; i < 1000; ++i) {
        ScanPair p{rng.uniform(-1, 1), rng.normal()};
        ScanPair q{rng.uniform(-1, 1), rng.normal()};
        ScanPair r{rng.uniform(-1, 1), rng.normal()};
        ScanPair left = scan_compose(scan_compose(p, q), r);
        ScanPair right = scan_compose(p, scan_compose(q, r));
        worst = std::max({worst, std::abs(left.a - right.a), std::abs(left.v - right.v)});
    }
    CHECK(worst < 1e-13);
}

TEST_CASE("the operator absorbs resets with no special casing") {
    // a = 0 composed after anything forgets the past exactly
    ScanPair anything{0.73, -2.5};
    ScanPair reset_step{0.0, 1.25};
    ScanPair combined = scan_compose(anything, reset_step);
    CHECK(combined.a == 0.0);
    CHECK(combined.v == 1.25);
}

TEST_CASE("training mode emits final hidden states, forward-only does not") {
    Rng rng(11);
    ScanInputs in = random_scan_inputs(rng, 2, 3, 5, 4);
    ScanOutputs infer = scan_parallel(in, 4, false);
    CHECK(infer.h_final.empty());
    CHECK_FALSE(infer.training);
    ScanOutputs train = scan_parallel(in, 4, true);
    CHECK(train.h_final.size() == 2 * 3 * 4);
    // h_final must agree with the sequential oracle's final states
    ScanOutputs seq = scan_sequential(in, true);
    CHECK(scale_rel_err(train.h_final, seq.h_final) < 1e-12);
}

TEST_CASE("scan_backward rejects forward-only saved outputs") {
    Rng rng(12);
    ScanInputs in = random_scan_inputs(rng, 1, 2, 4, 2);
    ScanOutputs infer = scan_sequential(in, false);
    Tensor3 dy = Tensor3::full(1, 2, 4, 1.0);
    CHECK_THROWS_AS(scan_backward(in, dy, infer), std::invalid_argument);
}

TEST_CASE("scan_backward matches central finite differences") {
    Rng rng(13);
    double worst = 0.0;
    for (int inst = 0; inst < 20; ++inst) {
        const int64_t B = rng.integer(1, 2), D = rng.integer(1, 4);
        const int64_t T = rng.integer(2, 9), S = rng.integer(1, 4);
        ScanInputs in = random_scan_inputs(rng, B, D, T, S);
        if (T > 3 && rng.uniform() < 0.5) in.reset_mask[static_cast<size_t>(T / 2)] = 1;
        Tensor3 w = Tensor3::random_normal(B, D, T, rng);
        ScanOutputs saved = scan_sequential(in, true);
        ScanGrads g = scan_backward(in, w, saved);
        auto loss_of = [&] {
            ScanOutputs o = scan_sequential(in);
            double acc = 0.0;
            for (int64_t i = 0; i < o.y.size(); ++i) acc += w.data[i] * o.y.data[i];
            return acc;
        };
        worst = std::max(worst, testutil::fd_max_rel_err(in.x.data, g.dx.data, loss_of));
        worst = std::max(worst, testutil::fd_max_rel_err(in.delta.data, g.ddelta.data, loss_of));
        worst = std::max(worst, testutil::fd_max_rel_err(in.a_log.data, g.da_log.data, loss_of));
        worst = std::max(worst,
                         testutil::fd_max_rel_err(in.b_gate.data, g.db_gate.data, loss_of));
        worst = std::max(worst,
                         testutil::fd_max_rel_err(in.c_gate.data, g.dc_gate.data, loss_of));
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("a reset severs gradient flow across the boundary exactly") {
    Rng rng(14);
    const int64_t L = 4;
    ScanInputs in = random_scan_inputs(rng, 1, 2, 2 * L, 3);
    in.reset_mask.assign(2 * L, 0);
    in.reset_mask[0] = 1;
    in.reset_mask[L] = 1;
    ScanOutputs saved = scan_sequential(in, true);
    // seed dy only in the second segment: the first segment's x must get zero
    Tensor3 dy(1, 2, 2 * L);
    for (int64_t d = 0; d < 2; ++d) {
        for (int64_t t = L; t < 2 * L; ++t) dy.at(0, d, t) = 1.0;
    }
    ScanGrads g = scan_backward(in, dy, saved);
    for (int64_t d = 0; d < 2; ++d) {
        for (int64_t t = 0; t < L; ++t) {
            CHECK(g.dx.at(0, d, t) == 0.0);
            CHECK(g.ddelta.at(0, d, t) == 0.0);
        }
    }
}

TEST_CASE("zero grad_y gives all-zero gradients") {
    Rng rng(15);
    ScanInputs in = random_scan_inputs(rng, 2, 2, 5, 3);
    ScanOutputs saved = scan_sequential(in, true);
    ScanGrads g = scan_backward(in, Tensor3(2, 2, 5), saved);
    for (double v : g.dx.data) CHECK(v == 0.0);
    for (double v : g.ddelta.data) CHECK(v == 0.0);
    for (double v : g.da_log.data) CHECK(v == 0.0);
    for (double v : g.db_gate.data) CHECK(v == 0.0);
    for (double v : g.dc_gate.data) CHECK(v == 0.0);
}

TEST_CASE("causality within a segment: y_t never depends on later inputs") {
    Rng rng(16);
    ScanInputs in = random_scan_inputs(rng, 1, 1, 6, 2);
    ScanOutputs saved = scan_sequential(in, true);
    Tensor3 dy(1, 1, 6);
    dy.at(0, 0, 2) = 1.0;  // probe y_2
    ScanGrads g = scan_backward(in, dy, saved);
    for (int64_t u = 3; u < 6; ++u) CHECK(g.dx.at(0, 0, u) == 0.0);

    // and by central finite differences: perturbing a later input leaves y_2
    // bit-identical
    const double eps = 1e-5;
    for (int64_t u = 3; u < 6; ++u) {
        ScanInputs up = in, dn = in;
        up.x.at(0, 0, u) += eps;
        dn.x.at(0, 0, u) -= eps;
        const double fd =
            (scan_sequential(up).y.at(0, 0, 2) - scan_sequential(dn).y.at(0, 0, 2)) /
            (2 * eps);
        CHECK(fd == 0.0);
    }
}

TEST_CASE("scan results are identical for any worker count") {
    Rng rng(17);
    ScanInputs in = random_scan_inputs(rng, 4, 4, 33, 4);
    ThreadPool p1(1), p2(2), p8(8);
    ScanOutputs y1 = scan_parallel(in, 8, true, &p1);
    ScanOutputs y2 = scan_parallel(in, 8, true, &p2);
    ScanOutputs y8 = scan_parallel(in, 8, true, &p8);
    CHECK(bit_equal(y1.y.data, y2.y.data));
    CHECK(bit_equal(y1.y.data, y8.y.data));
    CHECK(bit_equal(y1.h_final, y8.h_final));

    Tensor3 dy = Tensor3::random_normal(4, 4, 33, rng);
    ScanGrads g1 = scan_backward(in, dy, y1, &p1);
    ScanGrads g8 = scan_backward(in, dy, y8, &p8);
    CHECK(bit_equal(g1.dx.data, g8.dx.data));
    CHECK(bit_equal(g1.da_log.data, g8.da_log.data));
}

TEST_CASE("folded scan with resets equals independent per-segment scans") {
    Rng rng(18);
    for (int inst = 0; inst < 30; ++inst) {
        const int64_t B = 8, D = rng.integer(1, 3), L = rng.integer(1, 16), S = rng.integer(1, 6);
        ScanInputs rows = random_scan_inputs(rng, B, D, L, S);
        ScanOutputs ref = scan_sequential(rows);
        const auto divs = divisors(B);
        const int64_t b1 =
            divs[static_cast<size_t>(rng.integer(0, static_cast<int64_t>(divs.size()) - 1))];
        FoldPlan plan = FoldPlan::make(B, b1, L);
        ScanInputs folded;
        folded.x = fold(rows.x, plan);
        folded.delta = fold(rows.delta, plan);
        folded.a_log = rows.a_log;
        folded.b_gate = fold(rows.b_gate, plan);
        folded.c_gate = fold(rows.c_gate, plan);
        folded.reset_mask = plan.reset_mask();
        folded.state_dim = S;
        // same executor, same per-element arithmetic: bit-exact
        Tensor3 got = unfold(scan_sequential(folded).y, plan);
        CHECK(bit_equal(got.data, ref.y.data));
        // chunked executor on the folded layout: within 1e-12
        Tensor3 got_par = unfold(scan_parallel(folded, 32).y, plan);
        CHECK(scale_rel_err(got_par.data, ref.y.data) < 1e-12);
    }
}
