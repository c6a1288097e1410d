#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "sfm/fold.hpp"
#include "sfm/layers.hpp"
#include "sfm/scan.hpp"

namespace sfm {

enum class DiscardPolicy { before_attn, after_first_attn, after_attn };

DiscardPolicy discard_policy_from_string(const std::string& s);
std::string to_string(DiscardPolicy p);

// Lifecycle of the two auxiliary tokens: one init per stage, a swap between
// consecutive Mamba blocks, one discard at the policy point.
struct AuxState {
    bool present = false;
    DiscardPolicy policy = DiscardPolicy::after_first_attn;

    int64_t head_offset() const { return 0; }
    int64_t tail_offset(const FoldPlan& plan) const { return plan.l_seg - 1; }
};

// Prepends/appends aux tokens initialized to the per-row sequence mean.
// x is per-segment (unfolded) [B, D, T]; output is [B, D, T+2].
Tensor3 aux_init(const Tensor3& x, AuxState& state);
// gradient of aux_init: folds the aux-position grads back through the mean
Tensor3 aux_init_bwd(const Tensor3& dxp, int64_t orig_t);

// Exchanges head and tail inside every folded segment; patch tokens untouched.
Tensor3 aux_swap(const Tensor3& y, const AuxState& state, const FoldPlan& plan);

// Removes the aux positions from every segment; returns the shrunk tensor and
// the plan with l_seg reduced by 2.
std::pair<Tensor3, FoldPlan> aux_discard(const Tensor3& x, AuxState& state,
                                         const FoldPlan& plan);
// scatter of the discard: re-inserts zero grads at the aux positions
Tensor3 aux_discard_bwd(const Tensor3& dy, const FoldPlan& plan_before);

// MambaVision mixer: an SSM branch and a gated local-convolution branch,
// concatenated along channels and projected back to D. Operates natively on
// folded layouts; the reset mask comes from the plan.
struct MixerParams {
    LinearParams in_ssm, in_conv;    // D -> D per branch
    DwConvParams conv_ssm, conv_gate;
    LinearParams delta_proj;         // D -> D, softplus'd into step sizes
    LinearParams b_proj, c_proj;     // D -> S
    Mat a_log;                       // [D, S]
    Mat ga_log;
    LinearParams out;                // 2D -> D
    int64_t state_dim = 0;
    int lanes = 32;

    static MixerParams init(int64_t dim, int64_t state_dim, int64_t conv_k, int lanes,
                            Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct MixerCtx {
    Tensor3 x;
    Tensor3 u, c1, a1;       // ssm branch pre-activations
    Tensor3 dpre;            // delta pre-softplus
    ScanInputs scan_in;
    ScanOutputs scan_out;
    Tensor3 v, c2, x2;       // gate branch
    Tensor3 cat;
};

Tensor3 mixer_fwd(const MixerParams& p, const Tensor3& x, const FoldPlan& plan,
                  bool training, MixerCtx* ctx, ThreadPool* pool = nullptr);
Tensor3 mixer_bwd(MixerParams& p, const MixerCtx& ctx, const FoldPlan& plan,
                  const Tensor3& dy, ThreadPool* pool = nullptr);

// Pre-norm residual Mamba block: x + Mixer(LN(x)), then + MLP(LN(.)).
struct MambaBlockParams {
    LayerNormParams ln1, ln2;
    MixerParams mixer;
    LinearParams mlp_in, mlp_out;  // D -> 4D -> D

    static MambaBlockParams init(int64_t dim, int64_t state_dim, int64_t conv_k, int lanes,
                                 Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct MambaBlockCtx {
    Tensor3 x, n1;
    MixerCtx mixer;
    Tensor3 r1, n2, m1, s1;
};

Tensor3 mamba_block_fwd(const MambaBlockParams& p, const Tensor3& x, const FoldPlan& plan,
                        bool training, MambaBlockCtx* ctx, ThreadPool* pool = nullptr);
Tensor3 mamba_block_bwd(MambaBlockParams& p, const MambaBlockCtx& ctx, const FoldPlan& plan,
                        const Tensor3& dy, ThreadPool* pool = nullptr);

// Pre-norm residual attention block: x + MHA(LN(x)), then + MLP(LN(.)).
struct AttnBlockParams {
    LayerNormParams ln1, ln2;
    MhaParams mha;
    LinearParams mlp_in, mlp_out;

    static AttnBlockParams init(int64_t dim, int64_t heads, Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct AttnBlockCtx {
    Tensor3 x, n1;
    MhaCtx mha;
    Tensor3 r1, n2, m1, s1;
};

Tensor3 attn_block_fwd(const AttnBlockParams& p, const Tensor3& x, bool training,
                       AttnBlockCtx* ctx);
Tensor3 attn_block_bwd(AttnBlockParams& p, const AttnBlockCtx& ctx, const Tensor3& dy);

}  // namespace sfm
