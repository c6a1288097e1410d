#include "sfm/layers.hpp"

#include <cmath>

namespace sfm {

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

LinearParams LinearParams::init(int64_t out, int64_t in, Rng& rng, double scale) {
    LinearParams p;
    p.w = Mat(out, in);
    p.b.assign(static_cast<size_t>(out), 0.0);
    p.gw = Mat(out, in);
    p.gb.assign(static_cast<size_t>(out), 0.0);
    const double s = scale > 0.0 ? scale : 1.0 / std::sqrt(static_cast<double>(in));
    for (auto& v : p.w.data) v = rng.normal(0.0, s);
    return p;
}

void LinearParams::collect(std::vector<ParamRef>& refs) {
    refs.push_back({&w.data, &gw.data});
    refs.push_back({&b, &gb});
}

Tensor3 linear_fwd(const LinearParams& p, const Tensor3& x) {
    require(x.d == p.in_dim(), "linear_fwd: channel mismatch");
    Tensor3 out(x.b, p.out_dim(), x.t);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t oi = 0; oi < p.out_dim(); ++oi) {
            double* orow = out.row(bi, oi);
            for (int64_t ti = 0; ti < x.t; ++ti) orow[ti] = p.b[oi];
            for (int64_t ii = 0; ii < p.in_dim(); ++ii) {
                const double wv = p.w.at(oi, ii);
                if (wv == 0.0) continue;
                const double* xrow = x.row(bi, ii);
                for (int64_t ti = 0; ti < x.t; ++ti) orow[ti] += wv * xrow[ti];
            }
        }
    }
    check_finite(out.data.data(), out.size(), "linear_fwd");
    return out;
}

Tensor3 linear_bwd(LinearParams& p, const Tensor3& x_saved, const Tensor3& dy) {
    require(dy.d == p.out_dim() && x_saved.d == p.in_dim(), "linear_bwd: channel mismatch");
    require(dy.b == x_saved.b && dy.t == x_saved.t, "linear_bwd: shape mismatch");
    Tensor3 dx(x_saved.b, p.in_dim(), x_saved.t);
    for (int64_t bi = 0; bi < dy.b; ++bi) {
        for (int64_t oi = 0; oi < p.out_dim(); ++oi) {
            const double* dyrow = dy.row(bi, oi);
            double gb_acc = 0.0;
            for (int64_t ti = 0; ti < dy.t; ++ti) gb_acc += dyrow[ti];
            p.gb[oi] += gb_acc;
            for (int64_t ii = 0; ii < p.in_dim(); ++ii) {
                const double* xrow = x_saved.row(bi, ii);
                double* dxrow = dx.row(bi, ii);
                const double wv = p.w.at(oi, ii);
                double gw_acc = 0.0;
                for (int64_t ti = 0; ti < dy.t; ++ti) {
                    gw_acc += dyrow[ti] * xrow[ti];
                    dxrow[ti] += wv * dyrow[ti];
                }
                p.gw.at(oi, ii) += gw_acc;
            }
        }
    }
    return dx;
}

LayerNormParams LayerNormParams::init(int64_t dim) {
    LayerNormParams p;
    p.gamma.assign(static_cast<size_t>(dim), 1.0);
    p.beta.assign(static_cast<size_t>(dim), 0.0);
    p.ggamma.assign(static_cast<size_t>(dim), 0.0);
    p.gbeta.assign(static_cast<size_t>(dim), 0.0);
    return p;
}

void LayerNormParams::collect(std::vector<ParamRef>& refs) {
    refs.push_back({&gamma, &ggamma});
    refs.push_back({&beta, &gbeta});
}

Tensor3 layernorm_fwd(const LayerNormParams& p, const Tensor3& x) {
    require(static_cast<int64_t>(p.gamma.size()) == x.d, "layernorm_fwd: channel mismatch");
    Tensor3 out(x.b, x.d, x.t);
    const double inv_d = 1.0 / static_cast<double>(x.d);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t ti = 0; ti < x.t; ++ti) {
            double mean = 0.0;
            for (int64_t di = 0; di < x.d; ++di) mean += x.at(bi, di, ti);
            mean *= inv_d;
            double var = 0.0;
            for (int64_t di = 0; di < x.d; ++di) {
                const double c = x.at(bi, di, ti) - mean;
                var += c * c;
            }
            var *= inv_d;
            const double inv_std = 1.0 / std::sqrt(var + p.eps);
            for (int64_t di = 0; di < x.d; ++di) {
                out.at(bi, di, ti) =
                    (x.at(bi, di, ti) - mean) * inv_std * p.gamma[di] + p.beta[di];
            }
        }
    }
    check_finite(out.data.data(), out.size(), "layernorm_fwd");
    return out;
}

Tensor3 layernorm_bwd(LayerNormParams& p, const Tensor3& x_saved, const Tensor3& dy) {
    require(dy.same_shape(x_saved), "layernorm_bwd: shape mismatch");
    const int64_t D = x_saved.d;
    const double inv_d = 1.0 / static_cast<double>(D);
    Tensor3 dx(x_saved.b, D, x_saved.t);
    for (int64_t bi = 0; bi < x_saved.b; ++bi) {
        for (int64_t ti = 0; ti < x_saved.t; ++ti) {
            double mean = 0.0;
            for (int64_t di = 0; di < D; ++di) mean += x_saved.at(bi, di, ti);
            mean *= inv_d;
            double var = 0.0;
            for (int64_t di = 0; di < D; ++di) {
                const double c = x_saved.at(bi, di, ti) - mean;
                var += c * c;
            }
            var *= inv_d;
            const double inv_std = 1.0 / std::sqrt(var + p.eps);
            // xhat = (x - mean) * inv_std; dl/dxhat = dy * gamma
            double sum_dxhat = 0.0;
            double sum_dxhat_xhat = 0.0;
            for (int64_t di = 0; di < D; ++di) {
                const double xhat = (x_saved.at(bi, di, ti) - mean) * inv_std;
                const double dxhat = dy.at(bi, di, ti) * p.gamma[di];
                p.ggamma[di] += dy.at(bi, di, ti) * xhat;
                p.gbeta[di] += dy.at(bi, di, ti);
                sum_dxhat += dxhat;
                sum_dxhat_xhat += dxhat * xhat;
            }
            for (int64_t di = 0; di < D; ++di) {
                const double xhat = (x_saved.at(bi, di, ti) - mean) * inv_std;
                const double dxhat = dy.at(bi, di, ti) * p.gamma[di];
                dx.at(bi, di, ti) =
                    inv_std * (dxhat - inv_d * sum_dxhat - xhat * inv_d * sum_dxhat_xhat);
            }
        }
    }
    return dx;
}

Tensor3 silu_fwd(const Tensor3& x) {
    Tensor3 out = x;
    for (auto& v : out.data) v = v * sigmoid(v);
    check_finite(out.data.data(), out.size(), "silu_fwd");
    return out;
}

Tensor3 silu_bwd(const Tensor3& x_saved, const Tensor3& dy) {
    require(dy.same_shape(x_saved), "silu_bwd: shape mismatch");
    Tensor3 dx = dy;
    for (int64_t i = 0; i < dx.size(); ++i) {
        const double s = sigmoid(x_saved.data[i]);
        dx.data[i] *= s * (1.0 + x_saved.data[i] * (1.0 - s));
    }
    return dx;
}

Tensor3 softplus_fwd(const Tensor3& x) {
    Tensor3 out = x;
    for (auto& v : out.data) {
        // 1e-30 keeps the result strictly positive even when exp underflows
        v = v > 30.0 ? v : std::log1p(std::exp(v)) + 1e-30;
    }
    return out;
}

Tensor3 softplus_bwd(const Tensor3& x_saved, const Tensor3& dy) {
    require(dy.same_shape(x_saved), "softplus_bwd: shape mismatch");
    Tensor3 dx = dy;
    for (int64_t i = 0; i < dx.size(); ++i) dx.data[i] *= sigmoid(x_saved.data[i]);
    return dx;
}

DwConvParams DwConvParams::init(int64_t channels, int64_t k, Rng& rng) {
    require(k >= 1, "dwconv: kernel width must be >= 1");
    DwConvParams p;
    p.kernel = Mat(channels, k);
    p.bias.assign(static_cast<size_t>(channels), 0.0);
    p.gkernel = Mat(channels, k);
    p.gbias.assign(static_cast<size_t>(channels), 0.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(k));
    for (auto& v : p.kernel.data) v = rng.normal(0.0, s);
    return p;
}

void DwConvParams::collect(std::vector<ParamRef>& refs) {
    refs.push_back({&kernel.data, &gkernel.data});
    refs.push_back({&bias, &gbias});
}

Tensor3 dwconv1d_folded_fwd(const DwConvParams& p, const Tensor3& x, const FoldPlan& plan) {
    require(p.kernel.rows == x.d, "dwconv1d_folded: channel mismatch");
    require(x.b == plan.b1 && x.t == plan.folded_t(), "dwconv1d_folded: layout does not match plan");
    const int64_t K = p.width();
    const int64_t L = plan.l_seg;
    Tensor3 out(x.b, x.d, x.t);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            const double* xr = x.row(bi, di);
            double* orow = out.row(bi, di);
            const double* kd = &p.kernel.data[di * K];
            const double bias = p.bias[di];
            for (int64_t seg = 0; seg < plan.b2; ++seg) {
                const int64_t base = seg * L;
                for (int64_t pos = 0; pos < L; ++pos) {
                    double acc = bias;
                    // taps before the segment start read implicit zeros
                    const int64_t k0 = pos >= K - 1 ? 0 : K - 1 - pos;
                    for (int64_t k = k0; k < K; ++k) {
                        acc += kd[k] * xr[base + pos - (K - 1) + k];
                    }
                    orow[base + pos] = acc;
                }
            }
        }
    }
    check_finite(out.data.data(), out.size(), "dwconv1d_folded");
    return out;
}

Tensor3 dwconv1d_folded_bwd(DwConvParams& p, const Tensor3& x_saved, const FoldPlan& plan,
                            const Tensor3& dy) {
    require(dy.same_shape(x_saved), "dwconv1d_folded_bwd: shape mismatch");
    const int64_t K = p.width();
    const int64_t L = plan.l_seg;
    Tensor3 dx(x_saved.b, x_saved.d, x_saved.t);
    for (int64_t bi = 0; bi < x_saved.b; ++bi) {
        for (int64_t di = 0; di < x_saved.d; ++di) {
            const double* xr = x_saved.row(bi, di);
            const double* dyr = dy.row(bi, di);
            double* dxr = dx.row(bi, di);
            double* gk = &p.gkernel.data[di * K];
            const double* kd = &p.kernel.data[di * K];
            double gb = 0.0;
            for (int64_t seg = 0; seg < plan.b2; ++seg) {
                const int64_t base = seg * L;
                for (int64_t pos = 0; pos < L; ++pos) {
                    const double g = dyr[base + pos];
                    gb += g;
                    const int64_t k0 = pos >= K - 1 ? 0 : K - 1 - pos;
                    for (int64_t k = k0; k < K; ++k) {
                        const int64_t src = base + pos - (K - 1) + k;
                        gk[k] += g * xr[src];
                        dxr[src] += g * kd[k];
                    }
                }
            }
            p.gbias[di] += gb;
        }
    }
    return dx;
}

MhaParams MhaParams::init(int64_t dim, int64_t heads, Rng& rng) {
    require(heads >= 1, "mha: heads must be >= 1");
    require(dim % heads == 0, "mha: channel dim must be divisible by head count");
    MhaParams p;
    p.heads = heads;
    p.wq = LinearParams::init(dim, dim, rng);
    p.wk = LinearParams::init(dim, dim, rng);
    p.wv = LinearParams::init(dim, dim, rng);
    p.wo = LinearParams::init(dim, dim, rng);
    return p;
}

void MhaParams::collect(std::vector<ParamRef>& refs) {
    wq.collect(refs);
    wk.collect(refs);
    wv.collect(refs);
    wo.collect(refs);
}

Tensor3 mha_fwd(const MhaParams& p, const Tensor3& x, MhaCtx* ctx) {
    require(x.d % p.heads == 0, "mha_fwd: channel dim not divisible by heads");
    const int64_t B = x.b, D = x.d, T = x.t;
    const int64_t H = p.heads, dh = D / H;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor3 q = linear_fwd(p.wq, x);
    Tensor3 k = linear_fwd(p.wk, x);
    Tensor3 v = linear_fwd(p.wv, x);
    Tensor3 attn(B, D, T);
    std::vector<double> probs(static_cast<size_t>(B * H * T * T));

    std::vector<double> scores(static_cast<size_t>(T));
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t hi = 0; hi < H; ++hi) {
            const int64_t c0 = hi * dh;
            for (int64_t tq = 0; tq < T; ++tq) {
                double maxv = -1e300;
                for (int64_t tk = 0; tk < T; ++tk) {
                    double s = 0.0;
                    for (int64_t ci = c0; ci < c0 + dh; ++ci) {
                        s += q.at(bi, ci, tq) * k.at(bi, ci, tk);
                    }
                    s *= inv_sqrt;
                    scores[tk] = s;
                    if (s > maxv) maxv = s;
                }
                double denom = 0.0;
                for (int64_t tk = 0; tk < T; ++tk) {
                    scores[tk] = std::exp(scores[tk] - maxv);
                    denom += scores[tk];
                }
                const double inv_denom = 1.0 / denom;
                double* prow = &probs[((bi * H + hi) * T + tq) * T];
                for (int64_t tk = 0; tk < T; ++tk) prow[tk] = scores[tk] * inv_denom;
                for (int64_t ci = c0; ci < c0 + dh; ++ci) {
                    double acc = 0.0;
                    for (int64_t tk = 0; tk < T; ++tk) acc += prow[tk] * v.at(bi, ci, tk);
                    attn.at(bi, ci, tq) = acc;
                }
            }
        }
    }
    Tensor3 out = linear_fwd(p.wo, attn);
    if (ctx) {
        ctx->x = x;
        ctx->q = std::move(q);
        ctx->k = std::move(k);
        ctx->v = std::move(v);
        ctx->attn = std::move(attn);
        ctx->probs = std::move(probs);
    }
    check_finite(out.data.data(), out.size(), "mha_fwd");
    return out;
}

Tensor3 mha_bwd(MhaParams& p, const MhaCtx& ctx, const Tensor3& dy) {
    const int64_t B = ctx.x.b, D = ctx.x.d, T = ctx.x.t;
    const int64_t H = p.heads, dh = D / H;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor3 dattn = linear_bwd(p.wo, ctx.attn, dy);
    Tensor3 dq(B, D, T), dk(B, D, T), dv(B, D, T);

    std::vector<double> dprobs(static_cast<size_t>(T));
    for (int64_t bi = 0; bi < B; ++bi) {
        for (int64_t hi = 0; hi < H; ++hi) {
            const int64_t c0 = hi * dh;
            for (int64_t tq = 0; tq < T; ++tq) {
                const double* prow = &ctx.probs[((bi * H + hi) * T + tq) * T];
                // dattn -> dprobs and dv
                for (int64_t tk = 0; tk < T; ++tk) {
                    double acc = 0.0;
                    for (int64_t ci = c0; ci < c0 + dh; ++ci) {
                        acc += dattn.at(bi, ci, tq) * ctx.v.at(bi, ci, tk);
                        dv.at(bi, ci, tk) += prow[tk] * dattn.at(bi, ci, tq);
                    }
                    dprobs[tk] = acc;
                }
                // softmax backward: dscore = p .* (dprobs - sum(dprobs .* p))
                double dot = 0.0;
                for (int64_t tk = 0; tk < T; ++tk) dot += dprobs[tk] * prow[tk];
                for (int64_t tk = 0; tk < T; ++tk) {
                    const double dscore = prow[tk] * (dprobs[tk] - dot) * inv_sqrt;
                    for (int64_t ci = c0; ci < c0 + dh; ++ci) {
                        dq.at(bi, ci, tq) += dscore * ctx.k.at(bi, ci, tk);
                        dk.at(bi, ci, tk) += dscore * ctx.q.at(bi, ci, tq);
                    }
                }
            }
        }
    }
    Tensor3 dx = linear_bwd(p.wq, ctx.x, dq);
    dx = add(dx, linear_bwd(p.wk, ctx.x, dk));
    dx = add(dx, linear_bwd(p.wv, ctx.x, dv));
    return dx;
}

Tensor3 grid_to_tokens(const Grid& g) {
    Tensor3 out(g.n, g.c, g.h * g.w);
    for (int64_t ni = 0; ni < g.n; ++ni) {
        for (int64_t ci = 0; ci < g.c; ++ci) {
            double* row = out.row(ni, ci);
            const double* src = &g.data[(ni * g.c + ci) * g.h * g.w];
            for (int64_t i = 0; i < g.h * g.w; ++i) row[i] = src[i];
        }
    }
    return out;
}

Grid tokens_to_grid(const Tensor3& t, int64_t h, int64_t w) {
    require(t.t == h * w, "tokens_to_grid: token count does not match grid");
    Grid g(t.b, t.d, h, w);
    for (int64_t ni = 0; ni < t.b; ++ni) {
        for (int64_t ci = 0; ci < t.d; ++ci) {
            const double* row = t.row(ni, ci);
            double* dst = &g.data[(ni * g.c + ci) * h * w];
            for (int64_t i = 0; i < h * w; ++i) dst[i] = row[i];
        }
    }
    return g;
}

Conv2dParams Conv2dParams::init(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                                int64_t pad, Rng& rng) {
    Conv2dParams p;
    p.in_ch = in_ch;
    p.out_ch = out_ch;
    p.k = k;
    p.stride = stride;
    p.pad = pad;
    p.w = Mat(out_ch, in_ch * k * k);
    p.b.assign(static_cast<size_t>(out_ch), 0.0);
    p.gw = Mat(out_ch, in_ch * k * k);
    p.gb.assign(static_cast<size_t>(out_ch), 0.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(in_ch * k * k));
    for (auto& v : p.w.data) v = rng.normal(0.0, s);
    return p;
}

void Conv2dParams::collect(std::vector<ParamRef>& refs) {
    refs.push_back({&w.data, &gw.data});
    refs.push_back({&b, &gb});
}

Grid conv2d_fwd(const Conv2dParams& p, const Grid& x) {
    require(x.c == p.in_ch, "conv2d_fwd: channel mismatch");
    const int64_t oh = (x.h + 2 * p.pad - p.k) / p.stride + 1;
    const int64_t ow = (x.w + 2 * p.pad - p.k) / p.stride + 1;
    require(oh >= 1 && ow >= 1, "conv2d_fwd: output would be empty");
    Grid out(x.n, p.out_ch, oh, ow);
    for (int64_t ni = 0; ni < x.n; ++ni) {
        for (int64_t oc = 0; oc < p.out_ch; ++oc) {
            for (int64_t oy = 0; oy < oh; ++oy) {
                for (int64_t ox = 0; ox < ow; ++ox) {
                    double acc = p.b[oc];
                    for (int64_t ic = 0; ic < p.in_ch; ++ic) {
                        for (int64_t ky = 0; ky < p.k; ++ky) {
                            const int64_t iy = oy * p.stride + ky - p.pad;
                            if (iy < 0 || iy >= x.h) continue;
                            for (int64_t kx = 0; kx < p.k; ++kx) {
                                const int64_t ix = ox * p.stride + kx - p.pad;
                                if (ix < 0 || ix >= x.w) continue;
                                acc += p.w.at(oc, (ic * p.k + ky) * p.k + kx) *
                                       x.at(ni, ic, iy, ix);
                            }
                        }
                    }
                    out.at(ni, oc, oy, ox) = acc;
                }
            }
        }
    }
    check_finite(out.data.data(), out.size(), "conv2d_fwd");
    return out;
}

Grid conv2d_bwd(Conv2dParams& p, const Grid& x_saved, const Grid& dy) {
    Grid dx(x_saved.n, x_saved.c, x_saved.h, x_saved.w);
    for (int64_t ni = 0; ni < x_saved.n; ++ni) {
        for (int64_t oc = 0; oc < p.out_ch; ++oc) {
            for (int64_t oy = 0; oy < dy.h; ++oy) {
                for (int64_t ox = 0; ox < dy.w; ++ox) {
                    const double g = dy.at(ni, oc, oy, ox);
                    p.gb[oc] += g;
                    for (int64_t ic = 0; ic < p.in_ch; ++ic) {
                        for (int64_t ky = 0; ky < p.k; ++ky) {
                            const int64_t iy = oy * p.stride + ky - p.pad;
                            if (iy < 0 || iy >= x_saved.h) continue;
                            for (int64_t kx = 0; kx < p.k; ++kx) {
                                const int64_t ix = ox * p.stride + kx - p.pad;
                                if (ix < 0 || ix >= x_saved.w) continue;
                                const int64_t wi = (ic * p.k + ky) * p.k + kx;
                                p.gw.at(oc, wi) += g * x_saved.at(ni, ic, iy, ix);
                                dx.at(ni, ic, iy, ix) += g * p.w.at(oc, wi);
                            }
                        }
                    }
                }
            }
        }
    }
    return dx;
}

double cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits) {
    require(static_cast<int64_t>(labels.size()) == logits.rows, "cross_entropy: label count");
    const int64_t N = logits.rows, C = logits.cols;
    if (dlogits) *dlogits = Mat(N, C);
    double loss = 0.0;
    std::vector<double> prob(static_cast<size_t>(C));
    for (int64_t i = 0; i < N; ++i) {
        double maxv = logits.at(i, 0);
        for (int64_t c = 1; c < C; ++c) maxv = std::max(maxv, logits.at(i, c));
        double denom = 0.0;
        for (int64_t c = 0; c < C; ++c) {
            prob[c] = std::exp(logits.at(i, c) - maxv);
            denom += prob[c];
        }
        for (int64_t c = 0; c < C; ++c) prob[c] /= denom;
        loss -= std::log(std::max(prob[labels[i]], 1e-300));
        if (dlogits) {
            for (int64_t c = 0; c < C; ++c) {
                dlogits->at(i, c) = (prob[c] - (c == labels[i] ? 1.0 : 0.0)) / N;
            }
        }
    }
    return loss / N;
}

void zero_grads(std::vector<ParamRef>& refs) {
    for (auto& r : refs) {
        for (auto& v : *r.g) v = 0.0;
    }
}

void sgd_step(std::vector<ParamRef>& refs, double lr) {
    for (auto& r : refs) {
        for (size_t i = 0; i < r.w->size(); ++i) (*r.w)[i] -= lr * (*r.g)[i];
    }
}

}  // namespace sfm
