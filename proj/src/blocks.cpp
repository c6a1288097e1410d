#include "sfm/blocks.hpp"

#include <cmath>

namespace sfm {

DiscardPolicy discard_policy_from_string(const std::string& s) {
    if (s == "before_attn") return DiscardPolicy::before_attn;
    if (s == "after_first_attn") return DiscardPolicy::after_first_attn;
    if (s == "after_attn") return DiscardPolicy::after_attn;
    throw std::invalid_argument("unknown discard policy: " + s);
}

std::string to_string(DiscardPolicy p) {
    switch (p) {
        case DiscardPolicy::before_attn: return "before_attn";
        case DiscardPolicy::after_first_attn: return "after_first_attn";
        case DiscardPolicy::after_attn: return "after_attn";
    }
    return "?";
}

Tensor3 aux_init(const Tensor3& x, AuxState& state) {
    require(!state.present, "aux_init: aux tokens already present");
    Tensor3 mean = seq_mean(x);
    state.present = true;
    return concat_ends(mean, x, mean);
}

Tensor3 aux_init_bwd(const Tensor3& dxp, int64_t orig_t) {
    require(dxp.t == orig_t + 2, "aux_init_bwd: shape mismatch");
    Tensor3 dx(dxp.b, dxp.d, orig_t);
    const double inv_t = 1.0 / static_cast<double>(orig_t);
    for (int64_t bi = 0; bi < dxp.b; ++bi) {
        for (int64_t di = 0; di < dxp.d; ++di) {
            const double* gp = dxp.row(bi, di);
            double* g = dx.row(bi, di);
            const double mean_g = (gp[0] + gp[orig_t + 1]) * inv_t;
            for (int64_t ti = 0; ti < orig_t; ++ti) g[ti] = gp[ti + 1] + mean_g;
        }
    }
    return dx;
}

Tensor3 aux_swap(const Tensor3& y, const AuxState& state, const FoldPlan& plan) {
    require(state.present, "aux_swap: no aux tokens present");
    require(y.t == plan.folded_t(), "aux_swap: layout does not match plan");
    return swap_positions(y, state.head_offset(), state.tail_offset(plan), plan.l_seg);
}

std::pair<Tensor3, FoldPlan> aux_discard(const Tensor3& x, AuxState& state,
                                         const FoldPlan& plan) {
    require(state.present, "aux_discard: no aux tokens present");
    require(plan.l_seg >= 3, "aux_discard: segments too short to hold aux tokens");
    require(x.t == plan.folded_t(), "aux_discard: layout does not match plan");
    const int64_t L = plan.l_seg;
    FoldPlan out_plan = FoldPlan::make(plan.batch, plan.b1, L - 2);
    Tensor3 out(x.b, x.d, out_plan.folded_t());
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            const double* src = x.row(bi, di);
            double* dst = out.row(bi, di);
            for (int64_t seg = 0; seg < plan.b2; ++seg) {
                for (int64_t pos = 1; pos < L - 1; ++pos) {
                    dst[seg * (L - 2) + (pos - 1)] = src[seg * L + pos];
                }
            }
        }
    }
    state.present = false;
    return {std::move(out), out_plan};
}

Tensor3 aux_discard_bwd(const Tensor3& dy, const FoldPlan& plan_before) {
    const int64_t L = plan_before.l_seg;
    require(dy.t == plan_before.b2 * (L - 2), "aux_discard_bwd: shape mismatch");
    Tensor3 dx(dy.b, dy.d, plan_before.folded_t());
    for (int64_t bi = 0; bi < dy.b; ++bi) {
        for (int64_t di = 0; di < dy.d; ++di) {
            const double* src = dy.row(bi, di);
            double* dst = dx.row(bi, di);
            for (int64_t seg = 0; seg < plan_before.b2; ++seg) {
                for (int64_t pos = 1; pos < L - 1; ++pos) {
                    dst[seg * L + pos] = src[seg * (L - 2) + (pos - 1)];
                }
            }
        }
    }
    return dx;
}

MixerParams MixerParams::init(int64_t dim, int64_t state_dim, int64_t conv_k, int lanes,
                              Rng& rng) {
    MixerParams p;
    p.in_ssm = LinearParams::init(dim, dim, rng);
    p.in_conv = LinearParams::init(dim, dim, rng);
    p.conv_ssm = DwConvParams::init(dim, conv_k, rng);
    p.conv_gate = DwConvParams::init(dim, conv_k, rng);
    p.delta_proj = LinearParams::init(dim, dim, rng);
    // softplus(0.5) ~ 0.97: step sizes start near 1
    for (auto& v : p.delta_proj.b) v = 0.5;
    p.b_proj = LinearParams::init(state_dim, dim, rng);
    p.c_proj = LinearParams::init(state_dim, dim, rng);
    p.a_log = Mat(dim, state_dim);
    p.ga_log = Mat(dim, state_dim);
    for (int64_t di = 0; di < dim; ++di) {
        for (int64_t si = 0; si < state_dim; ++si) {
            p.a_log.at(di, si) = std::log(static_cast<double>(si + 1));
        }
    }
    p.out = LinearParams::init(dim, 2 * dim, rng);
    p.state_dim = state_dim;
    p.lanes = lanes;
    return p;
}

void MixerParams::collect(std::vector<ParamRef>& refs) {
    in_ssm.collect(refs);
    in_conv.collect(refs);
    conv_ssm.collect(refs);
    conv_gate.collect(refs);
    delta_proj.collect(refs);
    b_proj.collect(refs);
    c_proj.collect(refs);
    refs.push_back({&a_log.data, &ga_log.data});
    out.collect(refs);
}

namespace {

Tensor3 concat_channels(const Tensor3& a, const Tensor3& b) {
    require(a.b == b.b && a.t == b.t, "concat_channels: shape mismatch");
    Tensor3 out(a.b, a.d + b.d, a.t);
    for (int64_t bi = 0; bi < a.b; ++bi) {
        for (int64_t di = 0; di < a.d; ++di) {
            const double* src = a.row(bi, di);
            double* dst = out.row(bi, di);
            for (int64_t ti = 0; ti < a.t; ++ti) dst[ti] = src[ti];
        }
        for (int64_t di = 0; di < b.d; ++di) {
            const double* src = b.row(bi, di);
            double* dst = out.row(bi, a.d + di);
            for (int64_t ti = 0; ti < b.t; ++ti) dst[ti] = src[ti];
        }
    }
    return out;
}

void split_channels(const Tensor3& cat, int64_t d1, Tensor3* a, Tensor3* b) {
    *a = Tensor3(cat.b, d1, cat.t);
    *b = Tensor3(cat.b, cat.d - d1, cat.t);
    for (int64_t bi = 0; bi < cat.b; ++bi) {
        for (int64_t di = 0; di < d1; ++di) {
            const double* src = cat.row(bi, di);
            double* dst = a->row(bi, di);
            for (int64_t ti = 0; ti < cat.t; ++ti) dst[ti] = src[ti];
        }
        for (int64_t di = d1; di < cat.d; ++di) {
            const double* src = cat.row(bi, di);
            double* dst = b->row(bi, di - d1);
            for (int64_t ti = 0; ti < cat.t; ++ti) dst[ti] = src[ti];
        }
    }
}

}  // namespace

Tensor3 mixer_fwd(const MixerParams& p, const Tensor3& x, const FoldPlan& plan,
                  bool training, MixerCtx* ctx, ThreadPool* pool) {
    require(x.b == plan.b1 && x.t == plan.folded_t(), "mixer_fwd: layout does not match plan");
    require(x.d == p.in_ssm.in_dim(), "mixer_fwd: channel mismatch");

    // SSM branch: X1 = SSM(silu(Conv(Linear(x))))
    Tensor3 u = linear_fwd(p.in_ssm, x);
    Tensor3 c1 = dwconv1d_folded_fwd(p.conv_ssm, u, plan);
    Tensor3 a1 = silu_fwd(c1);

    Tensor3 dpre = linear_fwd(p.delta_proj, a1);
    ScanInputs si;
    si.x = a1;
    si.delta = softplus_fwd(dpre);
    si.a_log = p.a_log;
    si.b_gate = linear_fwd(p.b_proj, a1);
    si.c_gate = linear_fwd(p.c_proj, a1);
    si.reset_mask = plan.reset_mask();
    si.state_dim = p.state_dim;
    ScanOutputs so = scan_parallel(si, p.lanes, training, pool);
    const Tensor3& x1 = so.y;

    // gate branch: X2 = silu(Conv(Linear(x)))
    Tensor3 v = linear_fwd(p.in_conv, x);
    Tensor3 c2 = dwconv1d_folded_fwd(p.conv_gate, v, plan);
    Tensor3 x2 = silu_fwd(c2);

    Tensor3 cat = concat_channels(x1, x2);
    Tensor3 y = linear_fwd(p.out, cat);

    if (ctx) {
        ctx->x = x;
        ctx->u = std::move(u);
        ctx->c1 = std::move(c1);
        ctx->a1 = std::move(a1);
        ctx->dpre = std::move(dpre);
        ctx->scan_in = std::move(si);
        ctx->scan_out = std::move(so);
        ctx->v = std::move(v);
        ctx->c2 = std::move(c2);
        ctx->x2 = std::move(x2);
        ctx->cat = std::move(cat);
    }
    return y;
}

Tensor3 mixer_bwd(MixerParams& p, const MixerCtx& ctx, const FoldPlan& plan,
                  const Tensor3& dy, ThreadPool* pool) {
    Tensor3 dcat = linear_bwd(p.out, ctx.cat, dy);
    Tensor3 dx1, dx2;
    split_channels(dcat, ctx.x.d, &dx1, &dx2);

    // gate branch
    Tensor3 dc2 = silu_bwd(ctx.c2, dx2);
    Tensor3 dv = dwconv1d_folded_bwd(p.conv_gate, ctx.v, plan, dc2);
    Tensor3 dx = linear_bwd(p.in_conv, ctx.x, dv);

    // SSM branch
    ScanGrads sg = scan_backward(ctx.scan_in, dx1, ctx.scan_out, pool);
    for (size_t i = 0; i < p.ga_log.data.size(); ++i) p.ga_log.data[i] += sg.da_log.data[i];
    Tensor3 da1 = std::move(sg.dx);
    Tensor3 ddpre = softplus_bwd(ctx.dpre, sg.ddelta);
    da1 = add(da1, linear_bwd(p.delta_proj, ctx.a1, ddpre));
    da1 = add(da1, linear_bwd(p.b_proj, ctx.a1, sg.db_gate));
    da1 = add(da1, linear_bwd(p.c_proj, ctx.a1, sg.dc_gate));
    Tensor3 dc1 = silu_bwd(ctx.c1, da1);
    Tensor3 du = dwconv1d_folded_bwd(p.conv_ssm, ctx.u, plan, dc1);
    dx = add(dx, linear_bwd(p.in_ssm, ctx.x, du));
    return dx;
}

MambaBlockParams MambaBlockParams::init(int64_t dim, int64_t state_dim, int64_t conv_k,
                                        int lanes, Rng& rng) {
    MambaBlockParams p;
    p.ln1 = LayerNormParams::init(dim);
    p.ln2 = LayerNormParams::init(dim);
    p.mixer = MixerParams::init(dim, state_dim, conv_k, lanes, rng);
    p.mlp_in = LinearParams::init(4 * dim, dim, rng);
    p.mlp_out = LinearParams::init(dim, 4 * dim, rng);
    return p;
}

void MambaBlockParams::collect(std::vector<ParamRef>& refs) {
    ln1.collect(refs);
    ln2.collect(refs);
    mixer.collect(refs);
    mlp_in.collect(refs);
    mlp_out.collect(refs);
}

Tensor3 mamba_block_fwd(const MambaBlockParams& p, const Tensor3& x, const FoldPlan& plan,
                        bool training, MambaBlockCtx* ctx, ThreadPool* pool) {
    Tensor3 n1 = layernorm_fwd(p.ln1, x);
    Tensor3 mix = mixer_fwd(p.mixer, n1, plan, training, ctx ? &ctx->mixer : nullptr, pool);
    Tensor3 r1 = add(x, mix);
    Tensor3 n2 = layernorm_fwd(p.ln2, r1);
    Tensor3 m1 = linear_fwd(p.mlp_in, n2);
    Tensor3 s1 = silu_fwd(m1);
    Tensor3 out = add(r1, linear_fwd(p.mlp_out, s1));
    if (ctx) {
        ctx->x = x;
        ctx->n1 = std::move(n1);
        ctx->r1 = std::move(r1);
        ctx->n2 = std::move(n2);
        ctx->m1 = std::move(m1);
        ctx->s1 = std::move(s1);
    }
    return out;
}

Tensor3 mamba_block_bwd(MambaBlockParams& p, const MambaBlockCtx& ctx, const FoldPlan& plan,
                        const Tensor3& dy, ThreadPool* pool) {
    Tensor3 ds1 = linear_bwd(p.mlp_out, ctx.s1, dy);
    Tensor3 dm1 = silu_bwd(ctx.m1, ds1);
    Tensor3 dn2 = linear_bwd(p.mlp_in, ctx.n2, dm1);
    Tensor3 dr1 = add(dy, layernorm_bwd(p.ln2, ctx.r1, dn2));
    Tensor3 dn1 = mixer_bwd(p.mixer, ctx.mixer, plan, dr1, pool);
    return add(dr1, layernorm_bwd(p.ln1, ctx.x, dn1));
}

AttnBlockParams AttnBlockParams::init(int64_t dim, int64_t heads, Rng& rng) {
    AttnBlockParams p;
    p.ln1 = LayerNormParams::init(dim);
    p.ln2 = LayerNormParams::init(dim);
    p.mha = MhaParams::init(dim, heads, rng);
    p.mlp_in = LinearParams::init(4 * dim, dim, rng);
    p.mlp_out = LinearParams::init(dim, 4 * dim, rng);
    return p;
}

void AttnBlockParams::collect(std::vector<ParamRef>& refs) {
    ln1.collect(refs);
    ln2.collect(refs);
    mha.collect(refs);
    mlp_in.collect(refs);
    mlp_out.collect(refs);
}

Tensor3 attn_block_fwd(const AttnBlockParams& p, const Tensor3& x, bool training,
                       AttnBlockCtx* ctx) {
    (void)training;
    Tensor3 n1 = layernorm_fwd(p.ln1, x);
    Tensor3 att = mha_fwd(p.mha, n1, ctx ? &ctx->mha : nullptr);
    Tensor3 r1 = add(x, att);
    Tensor3 n2 = layernorm_fwd(p.ln2, r1);
    Tensor3 m1 = linear_fwd(p.mlp_in, n2);
    Tensor3 s1 = silu_fwd(m1);
    Tensor3 out = add(r1, linear_fwd(p.mlp_out, s1));
    if (ctx) {
        ctx->x = x;
        ctx->n1 = std::move(n1);
        ctx->r1 = std::move(r1);
        ctx->n2 = std::move(n2);
        ctx->m1 = std::move(m1);
        ctx->s1 = std::move(s1);
    }
    return out;
}

Tensor3 attn_block_bwd(AttnBlockParams& p, const AttnBlockCtx& ctx, const Tensor3& dy) {
    Tensor3 ds1 = linear_bwd(p.mlp_out, ctx.s1, dy);
    Tensor3 dm1 = silu_bwd(ctx.m1, ds1);
    Tensor3 dn2 = linear_bwd(p.mlp_in, ctx.n2, dm1);
    Tensor3 dr1 = add(dy, layernorm_bwd(p.ln2, ctx.r1, dn2));
    Tensor3 dn1 = mha_bwd(p.mha, ctx.mha, dr1);
    return add(dr1, layernorm_bwd(p.ln1, ctx.x, dn1));
}

}  // namespace sfm
