#include "sfm/scan.hpp"

#include <cmath>
#include <cstring>

namespace sfm {

void ScanInputs::validate() const {
    require(state_dim >= 1, "ScanInputs: state_dim must be >= 1");
    require(a_log.rows == x.d && a_log.cols == state_dim, "ScanInputs: a_log must be [D, S]");
    require(delta.same_shape(x), "ScanInputs: delta must match x");
    require(b_gate.b == x.b && b_gate.d == state_dim && b_gate.t == x.t,
            "ScanInputs: b_gate must be [B, S, T]");
    require(c_gate.b == x.b && c_gate.d == state_dim && c_gate.t == x.t,
            "ScanInputs: c_gate must be [B, S, T]");
    require(static_cast<int64_t>(reset_mask.size()) == x.t,
            "ScanInputs: reset_mask must have length T");
    require(!reset_mask.empty() && reset_mask[0] != 0,
            "ScanInputs: reset_mask[0] must be set (every row starts fresh)");
    for (double v : delta.data) {
        require(v > 0.0, "ScanInputs: delta must be strictly positive");
    }
}

namespace {

// continuous decay A = -exp(a_log), [D, S]
std::vector<double> neg_decay(const Mat& a_log) {
    std::vector<double> a(a_log.data.size());
    for (size_t i = 0; i < a.size(); ++i) a[i] = -std::exp(a_log.data[i]);
    return a;
}

}  // namespace

DiscretizedCoeffs discretize(const ScanInputs& in) {
    in.validate();
    const int64_t B = in.batch(), D = in.channels(), T = in.seq_len(), S = in.state_dim;
    DiscretizedCoeffs out;
    out.b = B;
    out.d = D;
    out.s = S;
    out.t = T;
    out.a_bar.assign(static_cast<size_t>(B * D * S * T), 0.0);
    out.bx.assign(static_cast<size_t>(B * D * S * T), 0.0);
    const std::vector<double> A = neg_decay(in.a_log);
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t di = 0; di < D; ++di) {
            const double* xr = in.x.row(bi, di);
            const double* dtr = in.delta.row(bi, di);
            for (int64_t si = 0; si < S; ++si) {
                const double a = A[di * S + si];
                const double* bgr = in.b_gate.row(bi, si);
                double* ar = &out.a_bar[out.index(bi, di, si, 0)];
                double* bxr = &out.bx[out.index(bi, di, si, 0)];
                for (int64_t ti = 0; ti < T; ++ti) {
                    ar[ti] = in.reset_mask[ti] ? 0.0 : std::exp(dtr[ti] * a);
                    bxr[ti] = dtr[ti] * bgr[ti] * xr[ti];
                }
            }
        }
    }
    check_finite(out.a_bar.data(), static_cast<int64_t>(out.a_bar.size()), "discretize");
    check_finite(out.bx.data(), static_cast<int64_t>(out.bx.size()), "discretize");
    return out;
}

ScanOutputs scan_sequential(const ScanInputs& in, bool training) {
    in.validate();
    const int64_t B = in.batch(), D = in.channels(), T = in.seq_len(), S = in.state_dim;
    const std::vector<double> A = neg_decay(in.a_log);

    ScanOutputs out;
    out.y = Tensor3(B, D, T);
    out.training = training;
    if (training) out.h_final.assign(static_cast<size_t>(B * D * S), 0.0);

    std::vector<double> h(static_cast<size_t>(S));
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t di = 0; di < D; ++di) {
            const double* xr = in.x.row(bi, di);
            const double* dtr = in.delta.row(bi, di);
            double* yr = out.y.row(bi, di);
            std::fill(h.begin(), h.end(), 0.0);
            for (int64_t ti = 0; ti < T; ++ti) {
                const double dt = dtr[ti];
                const double xv = xr[ti];
                double acc = 0.0;
                for (int64_t si = 0; si < S; ++si) {
                    const double ar = in.reset_mask[ti] ? 0.0 : std::exp(dt * A[di * S + si]);
                    const double bxv = dt * in.b_gate.at(bi, si, ti) * xv;
                    h[si] = ar * h[si] + bxv;
                    acc += in.c_gate.at(bi, si, ti) * h[si];
                }
                yr[ti] = acc;
            }
            if (training) {
                std::memcpy(&out.h_final[(bi * D + di) * S], h.data(),
                            static_cast<size_t>(S) * sizeof(double));
            }
        }
    }
    check_finite(out.y.data.data(), out.y.size(), "scan_sequential");
    return out;
}

namespace {

// One (b, d) row of the chunked executor.
// scratch must hold 2*S*T + 2*lanes*S values.
template <typename R>
void scan_row_chunked(const R* x, const R* delta, const R* a_neg_col /* [S], stride 1 */,
                      const R* bg /* [S*T], row-major s,t */, const R* cg,
                      const uint8_t* reset, int64_t T, int64_t S, int lanes, R* y,
                      R* h_final, R* scratch) {
    const int64_t chunk_len = ceil_div(T, lanes);
    R* a_bar = scratch;          // [T*S], t-major
    R* bx = scratch + T * S;     // [T*S]
    R* sum_a = bx + T * S;       // [lanes*S] chunk summaries
    R* sum_v = sum_a + static_cast<int64_t>(lanes) * S;

    // pass 1: per-chunk local scans, recording the chunk's affine summary
    // (sum_a, sum_v): h_out = sum_a * h_in + sum_v
    for (int c = 0; c < lanes; ++c) {
        const int64_t lo = static_cast<int64_t>(c) * chunk_len;
        const int64_t hi = std::min<int64_t>(lo + chunk_len, T);
        R* ca = sum_a + static_cast<int64_t>(c) * S;
        R* cv = sum_v + static_cast<int64_t>(c) * S;
        for (int64_t si = 0; si < S; ++si) {
            ca[si] = R(1);
            cv[si] = R(0);
        }
        for (int64_t ti = lo; ti < hi; ++ti) {
            const R dt = delta[ti];
            const R xv = x[ti];
            R* at = a_bar + ti * S;
            R* bt = bx + ti * S;
            for (int64_t si = 0; si < S; ++si) {
                const R ar = reset[ti] ? R(0) : std::exp(dt * a_neg_col[si]);
                const R bxv = dt * bg[si * T + ti] * xv;
                at[si] = ar;
                bt[si] = bxv;
                ca[si] = ar * ca[si];
                cv[si] = ar * cv[si] + bxv;
            }
        }
    }

    // pass 2 + 3: inclusive ⊗-prefix over the chunk summaries gives each
    // chunk its corrected initial state (the row starts from h = 0, so only
    // the v component needs carrying); each chunk is then rescanned from it.
    R boundary[64];  // S <= 64 enforced at entry
    R local[64];
    for (int64_t si = 0; si < S; ++si) boundary[si] = R(0);
    for (int c = 0; c < lanes; ++c) {
        const int64_t lo = static_cast<int64_t>(c) * chunk_len;
        const int64_t hi = std::min<int64_t>(lo + chunk_len, T);
        for (int64_t si = 0; si < S; ++si) local[si] = boundary[si];
        for (int64_t ti = lo; ti < hi; ++ti) {
            const R* at = a_bar + ti * S;
            const R* bt = bx + ti * S;
            R acc = R(0);
            for (int64_t si = 0; si < S; ++si) {
                local[si] = at[si] * local[si] + bt[si];
                acc += cg[si * T + ti] * local[si];
            }
            y[ti] = acc;
        }
        // advance the boundary state through the summary operator, not the
        // rescan, so the prefix pass stays the single source of chunk inits
        const R* ca = sum_a + static_cast<int64_t>(c) * S;
        const R* cv = sum_v + static_cast<int64_t>(c) * S;
        for (int64_t si = 0; si < S; ++si) {
            boundary[si] = ca[si] * boundary[si] + cv[si];
        }
    }
    if (h_final) {
        for (int64_t si = 0; si < S; ++si) h_final[si] = boundary[si];
    }
}

template <typename R>
struct RowScratch {
    std::vector<R> buf;
    R* get(int64_t n) {
        if (static_cast<int64_t>(buf.size()) < n) buf.resize(static_cast<size_t>(n));
        return buf.data();
    }
};

}  // namespace

template <typename R>
void scan_parallel_raw(const RawScanProblem<R>& p, int lanes, R* y, R* h_final,
                       ThreadPool* pool) {
    require(lanes >= 1, "scan_parallel: lanes must be >= 1");
    require(p.S <= 64, "scan_parallel: state_dim > 64 unsupported");
    const int64_t rows = p.B * p.D;
    const int64_t scratch_len = 2 * p.T * p.S + 2 * static_cast<int64_t>(lanes) * p.S;
    static thread_local RowScratch<R> scratch;
    auto run_row = [&](int64_t r) {
        const int64_t bi = r / p.D;
        const int64_t di = r % p.D;
        scan_row_chunked<R>(p.x + r * p.T, p.delta + r * p.T, p.a_neg + di * p.S,
                            p.b_gate + bi * p.S * p.T, p.c_gate + bi * p.S * p.T, p.reset,
                            p.T, p.S, lanes, y + r * p.T,
                            h_final ? h_final + r * p.S : nullptr, scratch.get(scratch_len));
    };
    if (pool) {
        pool->parallel_for(rows, run_row);
    } else {
        for (int64_t r = 0; r < rows; ++r) run_row(r);
    }
}

template void scan_parallel_raw<float>(const RawScanProblem<float>&, int, float*, float*,
                                       ThreadPool*);
template void scan_parallel_raw<double>(const RawScanProblem<double>&, int, double*, double*,
                                        ThreadPool*);

ScanOutputs scan_parallel(const ScanInputs& in, int lanes, bool training, ThreadPool* pool) {
    in.validate();
    const int64_t B = in.batch(), D = in.channels(), T = in.seq_len(), S = in.state_dim;
    const std::vector<double> A = neg_decay(in.a_log);

    ScanOutputs out;
    out.y = Tensor3(B, D, T);
    out.training = training;
    if (training) out.h_final.assign(static_cast<size_t>(B * D * S), 0.0);

    RawScanProblem<double> p;
    p.x = in.x.data.data();
    p.delta = in.delta.data.data();
    p.a_neg = A.data();
    p.b_gate = in.b_gate.data.data();
    p.c_gate = in.c_gate.data.data();
    p.reset = in.reset_mask.data();
    p.B = B;
    p.D = D;
    p.T = T;
    p.S = S;
    scan_parallel_raw<double>(p, lanes, out.y.data.data(),
                              training ? out.h_final.data() : nullptr,
                              pool ? pool : &global_pool());
    check_finite(out.y.data.data(), out.y.size(), "scan_parallel");
    return out;
}

ScanGrads scan_backward(const ScanInputs& in, const Tensor3& grad_y, const ScanOutputs& saved,
                        ThreadPool* pool) {
    in.validate();
    require(saved.training, "scan_backward: forward pass was run in forward-only mode");
    require(grad_y.same_shape(in.x), "scan_backward: grad_y must match x");
    const int64_t B = in.batch(), D = in.channels(), T = in.seq_len(), S = in.state_dim;
    const std::vector<double> A = neg_decay(in.a_log);

    ScanGrads g;
    g.dx = Tensor3(B, D, T);
    g.ddelta = Tensor3(B, D, T);
    g.da_log = Mat(D, S);
    g.db_gate = Tensor3(B, S, T);
    g.dc_gate = Tensor3(B, S, T);

    // dA accumulates over the whole batch; give each batch task its own slice
    // and reduce in fixed order afterwards so results do not depend on the
    // worker count.
    std::vector<double> dA_partial(static_cast<size_t>(B * D * S), 0.0);

    auto run_batch = [&](int64_t bi) {
        std::vector<double> h_hist(static_cast<size_t>(T * S));
        std::vector<double> dh(static_cast<size_t>(S));
        for (int64_t di = 0; di < D; ++di) {
            const double* xr = in.x.row(bi, di);
            const double* dtr = in.delta.row(bi, di);
            const double* dyr = grad_y.row(bi, di);
            // forward recompute, keeping the full state history
            for (int64_t ti = 0; ti < T; ++ti) {
                for (int64_t si = 0; si < S; ++si) {
                    const double ar =
                        in.reset_mask[ti] ? 0.0 : std::exp(dtr[ti] * A[di * S + si]);
                    const double bxv = dtr[ti] * in.b_gate.at(bi, si, ti) * xr[ti];
                    const double prev = ti == 0 ? 0.0 : h_hist[(ti - 1) * S + si];
                    h_hist[ti * S + si] = ar * prev + bxv;
                }
            }
            // adjoint sweep
            std::fill(dh.begin(), dh.end(), 0.0);
            for (int64_t ti = T - 1; ti >= 0; --ti) {
                const double dt = dtr[ti];
                const double xv = xr[ti];
                const double dyv = dyr[ti];
                double ddt = 0.0;
                double dxv = 0.0;
                for (int64_t si = 0; si < S; ++si) {
                    const double hv = h_hist[ti * S + si];
                    // y_t = sum_s c * h_t
                    dh[si] += in.c_gate.at(bi, si, ti) * dyv;
                    g.dc_gate.at(bi, si, ti) += dyv * hv;
                    const double d_bx = dh[si];
                    const double bgv = in.b_gate.at(bi, si, ti);
                    // bx = delta * b_gate * x
                    ddt += d_bx * bgv * xv;
                    g.db_gate.at(bi, si, ti) += d_bx * dt * xv;
                    dxv += d_bx * dt * bgv;
                    double ar = 0.0;
                    if (!in.reset_mask[ti]) {
                        const double a = A[di * S + si];
                        ar = std::exp(dt * a);
                        const double prev = ti == 0 ? 0.0 : h_hist[(ti - 1) * S + si];
                        const double d_ar = dh[si] * prev;
                        // ar = exp(dt * A); at reset positions ar is the
                        // constant 0 and contributes nothing
                        ddt += d_ar * ar * a;
                        dA_partial[(bi * D + di) * S + si] += d_ar * ar * dt;
                    }
                    dh[si] = ar * dh[si];
                }
                g.ddelta.at(bi, di, ti) = ddt;
                g.dx.at(bi, di, ti) = dxv;
            }
        }
    };

    ThreadPool& tp = pool ? *pool : global_pool();
    tp.parallel_for(B, run_batch);

    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t di = 0; di < D; ++di) {
            for (int64_t si = 0; si < S; ++si) {
                // dA -> da_log through A = -exp(a_log): da_log = dA * A
                g.da_log.at(di, si) += dA_partial[(bi * D + di) * S + si] * A[di * S + si];
            }
        }
    }
    return g;
}

}  // namespace sfm
