#include "sfm/verify.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sfm/blocks.hpp"
#include "sfm/fold.hpp"
#include "sfm/model.hpp"
#include "sfm/scan.hpp"

namespace sfm {

namespace {

double scale_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double scale = 1e-30, diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
        diff = std::max(diff, std::abs(a[i] - b[i]));
    }
    return diff / scale;
}

bool bit_equal(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

ScanInputs random_scan_inputs(Rng& rng, int64_t B, int64_t D, int64_t T, int64_t S,
                              const std::vector<uint8_t>* mask = nullptr) {
    ScanInputs in;
    in.x = Tensor3::random_normal(B, D, T, rng);
    in.delta = Tensor3::random_uniform(B, D, T, rng, 0.05, 1.2);
    in.a_log = Mat(D, S);
    for (auto& v : in.a_log.data) v = rng.uniform(-1.0, 1.5);
    in.b_gate = Tensor3::random_normal(B, S, T, rng);
    in.c_gate = Tensor3::random_normal(B, S, T, rng);
    if (mask) {
        in.reset_mask = *mask;
    } else {
        in.reset_mask.assign(static_cast<size_t>(T), 0);
        in.reset_mask[0] = 1;
    }
    in.state_dim = S;
    return in;
}

struct Reporter {
    std::vector<CheckResult> out;
    std::string suite;

    void add(const std::string& name, bool pass, double err, const std::string& detail = "") {
        out.push_back({suite, name, pass, err, detail});
    }
    void add_err(const std::string& name, double err, double tol) {
        std::ostringstream os;
        os.setf(std::ios::scientific);
        os.precision(0);
        os << "tol " << tol;
        add(name, err < tol, err, os.str());
    }
};

// ---- divisor suite --------------------------------------------------------

int64_t brute_force_closest_divisor(int64_t a, double b) {
    int64_t best = 1;
    double best_dist = std::abs(1.0 - b);
    for (int64_t d = 1; d <= a; ++d) {
        if (a % d != 0) continue;
        const double dist = std::abs(static_cast<double>(d) - b);
        if (dist < best_dist) {
            best = d;
            best_dist = dist;
        }
    }
    return best;
}

void suite_divisor(Reporter& rep, Rng& rng) {
    rep.suite = "divisor";
    bool pinned = closest_divisor(8, 8.0) == 8 && closest_divisor(12, 5.0) == 4 &&
                  closest_divisor(128, 24.0) == 16;
    rep.add("pinned-examples", pinned, pinned ? 0.0 : 1.0);

    int64_t mismatches = 0;
    for (int64_t a = 1; a <= 10000; ++a) {
        const double bs[] = {0.0, 1.0, static_cast<double>(a) / 3.0,
                             static_cast<double>(a) / 2.0, static_cast<double>(a) - 0.5,
                             static_cast<double>(a) * 1.5, rng.uniform(0.0, 2.0 * a)};
        for (double b : bs) {
            const int64_t got = closest_divisor(a, b);
            if (a % got != 0) ++mismatches;
            const int64_t want = brute_force_closest_divisor(a, b);
            if (got != want) ++mismatches;
        }
    }
    rep.add("exhaustive-vs-bruteforce-a<=10000", mismatches == 0,
            static_cast<double>(mismatches));
}

// ---- scan suite -----------------------------------------------------------

void suite_scan(Reporter& rep, Rng& rng, const VerifyOptions& opts) {
    rep.suite = "scan";

    // discretize closed form: delta=1, a_log=0 -> exp(-1)
    {
        ScanInputs in = random_scan_inputs(rng, 1, 1, 2, 1);
        for (auto& v : in.delta.data) v = 1.0;
        in.a_log.data[0] = 0.0;
        auto co = discretize(in);
        const double err = std::abs(co.a_bar[co.index(0, 0, 0, 1)] - std::exp(-1.0));
        rep.add_err("discretize-closed-form", err, 1e-15);
        rep.add("discretize-reset-zero", co.a_bar[co.index(0, 0, 0, 0)] == 0.0,
                co.a_bar[co.index(0, 0, 0, 0)]);
    }

    // oracle equivalence across lane counts
    double worst = 0.0;
    bool lanes1_exact = true;
    for (int inst = 0; inst < 40; ++inst) {
        const int64_t B = rng.integer(1, 4), D = rng.integer(1, 6);
        const int64_t T = rng.integer(1, 257);
        const int64_t S = std::vector<int64_t>{1, 4, 8}[static_cast<size_t>(rng.integer(0, 2))];
        ScanInputs in = random_scan_inputs(rng, B, D, T, S);
        ScanOutputs ref = scan_sequential(in);
        for (int lanes : {1, 2, 7, 32, 64}) {
            ScanOutputs got = scan_parallel(in, lanes, false, opts.pool);
            if (opts.inject_fault && inst == 0) got.y.data[0] += 1e-3;
            if (lanes == 1 && !bit_equal(got.y.data, ref.y.data)) lanes1_exact = false;
            worst = std::max(worst, scale_rel_err(got.y.data, ref.y.data));
        }
    }
    rep.add_err("parallel-vs-sequential lanes={1,2,7,32,64}", worst, 1e-12);
    rep.add("lanes1-bit-exact", lanes1_exact, lanes1_exact ? 0.0 : 1.0);

    // operator associativity on random triples
    double assoc_err = 0.0;
    for (int i = 0; i < 500; ++i) {
        ScanPair p{rng.uniform(-1, 1), rng.normal()};
        ScanPair q{rng.uniform(-1, 1), rng.normal()};
        ScanPair r{rng.uniform(-1, 1), rng.normal()};
        ScanPair left = scan_compose(scan_compose(p, q), r);
        ScanPair right = scan_compose(p, scan_compose(q, r));
        assoc_err = std::max({assoc_err, std::abs(left.a - right.a), std::abs(left.v - right.v)});
    }
    rep.add_err("compose-associativity", assoc_err, 1e-13);

    // reset equivalence: folded scan == independent per-segment scans
    {
        double err = 0.0;
        bool seq_exact = true;
        for (int inst = 0; inst < 20; ++inst) {
            const int64_t B = 8, D = rng.integer(1, 4), L = rng.integer(1, 24);
            const int64_t S = rng.integer(1, 6);
            ScanInputs rows = random_scan_inputs(rng, B, D, L, S);
            ScanOutputs ref = scan_sequential(rows);
            const int64_t b1 = divisors(B)[static_cast<size_t>(rng.integer(
                0, static_cast<int64_t>(divisors(B).size()) - 1))];
            FoldPlan plan = FoldPlan::make(B, b1, L);
            ScanInputs folded;
            folded.x = fold(rows.x, plan);
            folded.delta = fold(rows.delta, plan);
            folded.a_log = rows.a_log;
            folded.b_gate = fold(rows.b_gate, plan);
            folded.c_gate = fold(rows.c_gate, plan);
            folded.reset_mask = plan.reset_mask();
            folded.state_dim = S;
            Tensor3 got = unfold(scan_sequential(folded).y, plan);
            if (!bit_equal(got.data, ref.y.data)) seq_exact = false;
            Tensor3 got_par = unfold(scan_parallel(folded, opts.lanes, false, opts.pool).y, plan);
            err = std::max(err, scale_rel_err(got_par.data, ref.y.data));
        }
        rep.add("reset-equivalence-sequential-bit-exact", seq_exact, seq_exact ? 0.0 : 1.0);
        rep.add_err("reset-equivalence-parallel", err, 1e-12);
    }

    // forward-only mode keeps no hidden state
    {
        ScanInputs in = random_scan_inputs(rng, 2, 3, 9, 4);
        ScanOutputs infer = scan_parallel(in, opts.lanes, false, opts.pool);
        ScanOutputs train = scan_parallel(in, opts.lanes, true, opts.pool);
        const bool ok = infer.h_final.empty() && !infer.training &&
                        train.h_final.size() == static_cast<size_t>(2 * 3 * 4);
        rep.add("forward-only-no-hidden-state", ok, ok ? 0.0 : 1.0);
    }
}

// ---- fold suite -----------------------------------------------------------

void suite_fold(Reporter& rep, Rng& rng, const VerifyOptions& opts) {
    rep.suite = "fold";

    bool round_trip = true;
    bool permutation = true;
    for (int inst = 0; inst < 50; ++inst) {
        const int64_t B = rng.integer(1, 32), D = rng.integer(1, 5), L = rng.integer(1, 16);
        const auto divs = divisors(B);
        const int64_t b1 = divs[static_cast<size_t>(
            rng.integer(0, static_cast<int64_t>(divs.size()) - 1))];
        FoldPlan plan = FoldPlan::make(B, b1, L);
        Tensor3 z(B, D, L);
        for (int64_t i = 0; i < z.size(); ++i) z.data[i] = static_cast<double>(i);
        Tensor3 f = fold(z, plan);
        // unique values: sorted fold output must be exactly 0..N-1
        std::vector<double> sorted = f.data;
        std::sort(sorted.begin(), sorted.end());
        for (int64_t i = 0; i < static_cast<int64_t>(sorted.size()); ++i) {
            if (sorted[static_cast<size_t>(i)] != static_cast<double>(i)) permutation = false;
        }
        Tensor3 back = unfold(f, plan);
        if (!bit_equal(back.data, z.data)) round_trip = false;
    }
    rep.add("roundtrip-bit-exact", round_trip, round_trip ? 0.0 : 1.0);
    rep.add("bijective-permutation", permutation, permutation ? 0.0 : 1.0);

    // end-to-end: scan(fold(z)) then unfold equals per-row scan
    double err = 0.0;
    for (int inst = 0; inst < 10; ++inst) {
        const int64_t B = 16, D = 3, L = rng.integer(2, 20), S = 4;
        ScanInputs rows = random_scan_inputs(rng, B, D, L, S);
        ScanOutputs ref = scan_parallel(rows, opts.lanes, false, opts.pool);
        FoldPlan plan = FoldPlan::make(B, 4, L);
        ScanInputs folded;
        folded.x = fold(rows.x, plan);
        folded.delta = fold(rows.delta, plan);
        folded.a_log = rows.a_log;
        folded.b_gate = fold(rows.b_gate, plan);
        folded.c_gate = fold(rows.c_gate, plan);
        folded.reset_mask = plan.reset_mask();
        folded.state_dim = S;
        Tensor3 got = unfold(scan_parallel(folded, opts.lanes, false, opts.pool).y, plan);
        err = std::max(err, scale_rel_err(got.data, ref.y.data));
    }
    rep.add_err("scan-fold-unfold-equivalence", err, 1e-12);
}

// ---- conv suite -----------------------------------------------------------

// test-side oracle: plain per-row causal conv with left zero padding
Tensor3 per_row_causal_conv(const Mat& kernel, const Tensor3& x) {
    const int64_t K = kernel.cols;
    Tensor3 out(x.b, x.d, x.t);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            for (int64_t ti = 0; ti < x.t; ++ti) {
                double acc = 0.0;
                const int64_t k0 = ti >= K - 1 ? 0 : K - 1 - ti;
                for (int64_t k = k0; k < K; ++k) {
                    acc += kernel.at(di, k) * x.at(bi, di, ti - (K - 1) + k);
                }
                out.at(bi, di, ti) = acc;
            }
        }
    }
    return out;
}

void suite_conv(Reporter& rep, Rng& rng) {
    rep.suite = "conv";
    bool exact = true;
    for (int inst = 0; inst < 100; ++inst) {
        const int64_t B = rng.integer(1, 12), D = rng.integer(1, 5), L = rng.integer(1, 10);
        const int64_t Ks[] = {1, 2, 3, 5, L + 2};  // includes K >= L_seg
        const int64_t K = Ks[static_cast<size_t>(rng.integer(0, 4))];
        const auto divs = divisors(B);
        const int64_t b1 = divs[static_cast<size_t>(
            rng.integer(0, static_cast<int64_t>(divs.size()) - 1))];
        FoldPlan plan = FoldPlan::make(B, b1, L);
        Tensor3 z = Tensor3::random_normal(B, D, L, rng);
        DwConvParams p = DwConvParams::init(D, K, rng);
        Tensor3 via_fold = dwconv1d_folded_fwd(p, fold(z, plan), plan);
        // oracle route: per-row conv then fold
        FoldPlan row_plan = FoldPlan::none(B, L);
        Tensor3 per_row = dwconv1d_folded_fwd(p, z, row_plan);
        Tensor3 expect = fold(per_row, plan);
        if (!bit_equal(via_fold.data, expect.data)) exact = false;
        // and against the independent test-side conv (bias-free kernels)
        DwConvParams nz = p;
        std::fill(nz.bias.begin(), nz.bias.end(), 0.0);
        Tensor3 oracle = per_row_causal_conv(nz.kernel, z);
        Tensor3 via_fold_nb = dwconv1d_folded_fwd(nz, fold(z, plan), plan);
        if (!bit_equal(via_fold_nb.data, fold(oracle, plan).data)) exact = false;
    }
    rep.add("folded-conv-boundary-bit-exact", exact, exact ? 0.0 : 1.0);
}

// ---- grad suite -----------------------------------------------------------

// Central finite difference over a scalar loss produced by `loss_of`.
// Large components are compared relatively; components near zero (where the
// FD quotient is pure roundoff) against 1e-3 of the gradient's own scale.
template <typename F>
double fd_check(std::vector<double>& values, const std::vector<double>& analytic, F&& loss_of,
                double eps = 1e-5) {
    std::vector<double> fd(values.size());
    for (size_t i = 0; i < values.size(); ++i) {
        const double keep = values[i];
        values[i] = keep + eps;
        const double up = loss_of();
        values[i] = keep - eps;
        const double dn = loss_of();
        values[i] = keep;
        fd[i] = (up - dn) / (2.0 * eps);
    }
    double scale = 1e-12;
    for (size_t i = 0; i < values.size(); ++i) {
        scale = std::max({scale, std::abs(fd[i]), std::abs(analytic[i])});
    }
    double worst = 0.0;
    for (size_t i = 0; i < values.size(); ++i) {
        const double denom = std::max({std::abs(fd[i]), std::abs(analytic[i]), 1e-3 * scale});
        worst = std::max(worst, std::abs(fd[i] - analytic[i]) / denom);
    }
    return worst;
}

// weighted-sum loss over a tensor, fixed random weights
struct WeightedLoss {
    std::vector<double> w;
    explicit WeightedLoss(int64_t n, Rng& rng) : w(static_cast<size_t>(n)) {
        for (auto& v : w) v = rng.normal();
    }
    double operator()(const std::vector<double>& data) const {
        double acc = 0.0;
        for (size_t i = 0; i < data.size(); ++i) acc += w[i] * data[i];
        return acc;
    }
    Tensor3 grad(int64_t B, int64_t D, int64_t T) const {
        Tensor3 g(B, D, T);
        g.data = w;
        return g;
    }
};

void suite_grad(Reporter& rep, Rng& rng, const VerifyOptions& opts) {
    rep.suite = "grad";
    const int instances = 8;

    // scan backward vs finite differences, all five input groups
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t B = rng.integer(1, 2), D = rng.integer(1, 4);
            const int64_t T = rng.integer(2, 9), S = rng.integer(1, 4);
            ScanInputs in = random_scan_inputs(rng, B, D, T, S);
            if (T > 3) in.reset_mask[static_cast<size_t>(T / 2)] = 1;
            WeightedLoss loss(B * D * T, rng);
            ScanOutputs saved = scan_sequential(in, true);
            ScanGrads g = scan_backward(in, loss.grad(B, D, T), saved, opts.pool);
            auto loss_of = [&] { return loss(scan_sequential(in).y.data); };
            worst = std::max(worst, fd_check(in.x.data, g.dx.data, loss_of));
            worst = std::max(worst, fd_check(in.delta.data, g.ddelta.data, loss_of));
            worst = std::max(worst, fd_check(in.a_log.data, g.da_log.data, loss_of));
            worst = std::max(worst, fd_check(in.b_gate.data, g.db_gate.data, loss_of));
            worst = std::max(worst, fd_check(in.c_gate.data, g.dc_gate.data, loss_of));
        }
        rep.add_err("scan-backward-fd", worst, 1e-4);
    }

    // primitive layers
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t B = 2, Din = rng.integer(2, 5), Dout = rng.integer(2, 5),
                          T = rng.integer(1, 6);
            LinearParams p = LinearParams::init(Dout, Din, rng);
            Tensor3 x = Tensor3::random_normal(B, Din, T, rng);
            WeightedLoss loss(B * Dout * T, rng);
            p.gw = Mat(Dout, Din);
            p.gb.assign(static_cast<size_t>(Dout), 0.0);
            Tensor3 dx = linear_bwd(p, x, loss.grad(B, Dout, T));
            auto loss_of = [&] { return loss(linear_fwd(p, x).data); };
            worst = std::max(worst, fd_check(x.data, dx.data, loss_of));
            worst = std::max(worst, fd_check(p.w.data, p.gw.data, loss_of));
            worst = std::max(worst, fd_check(p.b, p.gb, loss_of));
        }
        rep.add_err("linear-backward-fd", worst, 1e-4);
    }
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t B = 2, D = rng.integer(2, 6), T = rng.integer(1, 5);
            LayerNormParams p = LayerNormParams::init(D);
            for (auto& v : p.gamma) v = rng.uniform(0.5, 1.5);
            for (auto& v : p.beta) v = rng.normal();
            Tensor3 x = Tensor3::random_normal(B, D, T, rng);
            WeightedLoss loss(B * D * T, rng);
            Tensor3 dx = layernorm_bwd(p, x, loss.grad(B, D, T));
            auto loss_of = [&] { return loss(layernorm_fwd(p, x).data); };
            worst = std::max(worst, fd_check(x.data, dx.data, loss_of));
            worst = std::max(worst, fd_check(p.gamma, p.ggamma, loss_of));
            worst = std::max(worst, fd_check(p.beta, p.gbeta, loss_of));
        }
        rep.add_err("layernorm-backward-fd", worst, 1e-4);
    }
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            Tensor3 x = Tensor3::random_normal(2, 3, 5, rng, 0.0, 2.0);
            WeightedLoss loss(x.size(), rng);
            Tensor3 dx = silu_bwd(x, loss.grad(2, 3, 5));
            auto loss_of = [&] { return loss(silu_fwd(x).data); };
            worst = std::max(worst, fd_check(x.data, dx.data, loss_of));
        }
        rep.add_err("silu-backward-fd", worst, 1e-4);
    }
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t B = 4, D = rng.integer(1, 4), L = rng.integer(2, 6);
            const int64_t K = rng.integer(1, 4);
            FoldPlan plan = FoldPlan::make(B, 2, L);
            DwConvParams p = DwConvParams::init(D, K, rng);
            Tensor3 x = Tensor3::random_normal(2, D, plan.folded_t(), rng);
            WeightedLoss loss(x.size(), rng);
            Tensor3 dx = dwconv1d_folded_bwd(p, x, plan, loss.grad(2, D, plan.folded_t()));
            auto loss_of = [&] { return loss(dwconv1d_folded_fwd(p, x, plan).data); };
            worst = std::max(worst, fd_check(x.data, dx.data, loss_of));
            worst = std::max(worst, fd_check(p.kernel.data, p.gkernel.data, loss_of));
            worst = std::max(worst, fd_check(p.bias, p.gbias, loss_of));
        }
        rep.add_err("dwconv-backward-fd", worst, 1e-4);
    }
    {
        double worst = 0.0;
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t B = 2, H = rng.integer(1, 2) * 2, D = H * rng.integer(1, 3),
                          T = rng.integer(1, 5);
            MhaParams p = MhaParams::init(D, H, rng);
            Tensor3 x = Tensor3::random_normal(B, D, T, rng);
            WeightedLoss loss(B * D * T, rng);
            MhaCtx ctx;
            mha_fwd(p, x, &ctx);
            Tensor3 dx = mha_bwd(p, ctx, loss.grad(B, D, T));
            auto loss_of = [&] { return loss(mha_fwd(p, x).data); };
            worst = std::max(worst, fd_check(x.data, dx.data, loss_of));
            worst = std::max(worst, fd_check(p.wq.w.data, p.wq.gw.data, loss_of));
            worst = std::max(worst, fd_check(p.wo.w.data, p.wo.gw.data, loss_of));
        }
        rep.add_err("attention-backward-fd", worst, 1e-4);
    }

    // whole toy model, directional derivative over all parameters at once
    {
        double worst = 0.0;
        for (int inst = 0; inst < 5; ++inst) {
            ToyTask task;
            task.grid = 2;
            task.patch_dim = 3;
            task.seed = rng.next_u64();
            ToyConfig tc;
            tc.dim = 6;
            tc.depth = 2;
            tc.state_dim = 2;
            tc.lanes = 2;
            tc.seed = rng.next_u64();
            ToyModel model = ToyModel::build(tc, task);
            Rng drng(rng.next_u64());
            ToyBatch batch = sample_toy(task, 3, drng);
            auto params = model.params();
            auto loss_of = [&] {
                Mat logits = toy_forward(model, batch.tokens, false, nullptr, opts.pool);
                return cross_entropy(logits, batch.labels, nullptr);
            };
            ToyCtx ctx;
            Mat logits = toy_forward(model, batch.tokens, true, &ctx, opts.pool);
            Mat dlogits;
            cross_entropy(logits, batch.labels, &dlogits);
            zero_grads(params);
            toy_backward(model, ctx, dlogits, opts.pool);
            // random direction v: compare <grad, v> with the central difference
            std::vector<std::vector<double>> dir;
            double dot = 0.0;
            for (auto& r : params) {
                dir.emplace_back(r.w->size());
                for (size_t i = 0; i < r.w->size(); ++i) {
                    dir.back()[i] = drng.normal();
                    dot += dir.back()[i] * (*r.g)[i];
                }
            }
            const double eps = 1e-5;
            auto shift = [&](double sgn) {
                for (size_t pi = 0; pi < params.size(); ++pi) {
                    for (size_t i = 0; i < params[pi].w->size(); ++i) {
                        (*params[pi].w)[i] += sgn * eps * dir[pi][i];
                    }
                }
            };
            shift(+1.0);
            const double up = loss_of();
            shift(-2.0);
            const double dn = loss_of();
            shift(+1.0);
            const double fd = (up - dn) / (2.0 * eps);
            const double scale = std::max({1e-8, std::abs(fd), std::abs(dot)});
            worst = std::max(worst, std::abs(fd - dot) / scale);
        }
        rep.add_err("toy-model-directional-fd", worst, 1e-4);
    }
}

// ---- erf suite ------------------------------------------------------------

void suite_erf(Reporter& rep, Rng& rng) {
    rep.suite = "erf";
    ModelConfig cfg;
    cfg.image_size = 64;
    cfg.in_channels = 1;
    cfg.base_dim = 2;
    cfg.depths = {0, 0, 4, 2};
    cfg.state_dim = 2;
    cfg.heads = 2;
    cfg.lanes = 4;
    cfg.classes = 2;

    Grid probes(2, 1, 64, 64);
    for (auto& v : probes.data) v = rng.normal();

    // token blocks are 16x16 input pixels; with depths {0,0,...} there is no
    // conv halo, so "beyond conv reach" is every later token's block
    const int64_t g3 = cfg.stage_grid(2);  // 4
    const int64_t block = cfg.image_size / g3;
    const int64_t cy = g3 / 2, cx = g3 / 2;
    auto future_heat = [&](const Mat& heat) {
        double total = 0.0;
        for (int64_t ty = 0; ty < g3; ++ty) {
            for (int64_t tx = 0; tx < g3; ++tx) {
                if (ty * g3 + tx <= cy * g3 + cx) continue;  // not after center in scan order
                for (int64_t y = ty * block; y < (ty + 1) * block; ++y) {
                    for (int64_t x = tx * block; x < (tx + 1) * block; ++x) {
                        total += std::abs(heat.at(y, x));
                    }
                }
            }
        }
        return total;
    };

    cfg.swap_aux = false;
    cfg.seed = 7;
    Model uni = Model::build(cfg);
    Mat heat_uni = erf_map(uni, probes, ErfCut::stage3_mamba);
    rep.add("uniscan-future-heat-exactly-zero", future_heat(heat_uni) == 0.0,
            future_heat(heat_uni));

    cfg.swap_aux = true;
    Model swp = Model::build(cfg);
    Mat heat_swap = erf_map(swp, probes, ErfCut::stage3_mamba);
    rep.add("swap-future-heat-positive", future_heat(heat_swap) > 0.0, future_heat(heat_swap));
}

}  // namespace

std::vector<CheckResult> run_verify(const VerifyOptions& opts) {
    Reporter rep;
    Rng rng(opts.seed);
    const std::string& s = opts.scope;
    const bool all = s == "all";
    require(all || s == "scan" || s == "fold" || s == "conv" || s == "grad" || s == "erf" ||
                s == "divisor",
            "verify: unknown scope: " + s);
    if (all || s == "divisor") suite_divisor(rep, rng);
    if (all || s == "scan") suite_scan(rep, rng, opts);
    if (all || s == "fold") suite_fold(rep, rng, opts);
    if (all || s == "conv") suite_conv(rep, rng);
    if (all || s == "grad") suite_grad(rep, rng, opts);
    if (all || s == "erf") suite_erf(rep, rng);
    return rep.out;
}

bool all_passed(const std::vector<CheckResult>& results) {
    for (const auto& r : results) {
        if (!r.pass) return false;
    }
    return true;
}

std::string format_check(const CheckResult& r) {
    std::ostringstream os;
    os << "[" << r.suite << "] " << r.name << ": " << (r.pass ? "PASS" : "FAIL");
    os.setf(std::ios::scientific);
    os.precision(3);
    os << " (max_err=" << r.max_err << ")";
    if (!r.detail.empty()) os << " " << r.detail;
    return os.str();
}

}  // namespace sfm
