#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "sfm/blocks.hpp"
#include "sfm/lut.hpp"

namespace sfm {

enum class FoldPolicyKind { off, fixed, adaptive };
enum class ErfCut { stage3_mamba, full };

ErfCut erf_cut_from_string(const std::string& s);

// Desk-scale four-stage hybrid: stem + conv stages at D and 2D, then
// Mamba-and-attention token stages at 4D and 8D, global pool, classifier.
struct ModelConfig {
    int64_t image_size = 32;
    int64_t in_channels = 3;
    int64_t base_dim = 16;                // stage widths D, 2D, 4D, 8D
    std::array<int64_t, 4> depths{1, 1, 2, 2};
    int64_t state_dim = 4;
    int64_t heads = 2;
    int64_t conv_kernel = 3;              // depthwise conv width in the mixer
    int lanes = 32;
    FoldPolicyKind fold = FoldPolicyKind::off;
    int64_t fold_b1 = 1;                  // used when fold == fixed
    std::string lut_path;                 // used when fold == adaptive
    bool swap_aux = true;                 // aux-token lifecycle on/off
    DiscardPolicy discard = DiscardPolicy::after_first_attn;
    int64_t classes = 10;
    uint64_t seed = 1;

    void validate() const;
    std::vector<std::string> warnings() const;

    std::string to_kv_text() const;
    static ModelConfig from_kv_text(const std::string& text);
    static ModelConfig from_file(const std::string& path);

    int64_t stage_dim(int stage) const { return base_dim << stage; }  // stage 0..3
    int64_t stage_grid(int stage) const { return image_size >> (2 + stage); }
};

// conv3x3 + layernorm + silu, twice, with a residual
struct ConvBlockParams {
    Conv2dParams conv_a, conv_b;
    LayerNormParams ln_a, ln_b;

    static ConvBlockParams init(int64_t dim, Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct ConvBlockCtx {
    Grid x;
    Tensor3 ca, na, cb, nb;  // token views of the intermediate activations
    Grid sa;
};

Grid conv_block_fwd(const ConvBlockParams& p, const Grid& x, ConvBlockCtx* ctx);
Grid conv_block_bwd(ConvBlockParams& p, const ConvBlockCtx& ctx, const Grid& dy);

// One Mamba+attention token stage run natively in folded layout.
struct TokenStageParams {
    std::vector<MambaBlockParams> mamba;
    std::vector<AttnBlockParams> attn;

    static TokenStageParams init(int64_t dim, int64_t n_mamba, int64_t n_attn,
                                 int64_t state_dim, int64_t heads, int64_t conv_k, int lanes,
                                 Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct TokenStageCtx {
    int64_t orig_t = 0;
    bool aux_used = false;
    FoldPlan plan;                 // plan while the mamba blocks run
    std::vector<MambaBlockCtx> mamba;
    Tensor3 post_mamba_unfolded;   // features at the stage-3 ERF cut
    FoldPlan unfolded_plan;        // B rows, one segment (aux still present)
    int64_t discard_after_attn = -1;  // attn index after which discard ran; -1 = at unfold
    std::vector<AttnBlockCtx> attn;
    Tensor3 out;                   // final stage tokens [B, D, orig_t]
};

struct Model {
    ModelConfig cfg;
    Conv2dParams stem;                       // in_ch -> D, k4 s4
    std::vector<ConvBlockParams> stage1;     // at D
    Conv2dParams down2;                      // D -> 2D, k2 s2
    std::vector<ConvBlockParams> stage2;     // at 2D
    Conv2dParams down3;                      // 2D -> 4D
    TokenStageParams stage3;                 // at 4D
    Conv2dParams down4;                      // 4D -> 8D
    TokenStageParams stage4;                 // at 8D
    LinearParams head;                       // 8D -> classes
    std::optional<TuneLut> lut;

    std::vector<std::string> run_warnings;   // filled during forward

    static Model build(const ModelConfig& cfg);
    std::vector<ParamRef> params();
    int64_t param_count();
};

struct ModelCtx {
    bool training = false;
    Grid images;
    Grid stem_out;
    std::vector<ConvBlockCtx> s1, s2;
    Grid down2_in, down3_in, down4_in;       // saved conv inputs
    TokenStageCtx st3, st4;
    Tensor3 pool_in;                         // stage-4 tokens entering the pool
    Tensor3 head_in;                         // pooled features [N, 8D, 1]
};

// logits [N, classes]; infer mode retains no scan hidden states
Mat model_forward(Model& m, const Grid& images, bool training, ModelCtx* ctx);

// full backward from the classifier; returns d(images)
Grid model_backward(Model& m, ModelCtx& ctx, const Mat& dlogits);

// backward from the ERF cut features; dfeat must match the cut's token shape
Grid model_backward_from_cut(Model& m, ModelCtx& ctx, ErfCut cut, const Tensor3& dfeat);

// features at the cut, for shaping the seed gradient:
// stage3_mamba -> post-mamba unfolded tokens; full -> final stage-4 tokens
const Tensor3& cut_features(const ModelCtx& ctx, ErfCut cut);
// token-grid geometry at the cut (h, w, aux offset of the first patch token)
struct CutGeometry {
    int64_t h = 0, w = 0, aux_offset = 0;
};
CutGeometry cut_geometry(const Model& m, const ModelCtx& ctx, ErfCut cut);

// Mean over probes of the squared input gradient of the center output
// feature (summed over channels); result is [H, W].
Mat erf_map(Model& m, const Grid& probes, ErfCut cut);

// ---- toy task and trainer ------------------------------------------------

// Synthetic probe task: the class is determined solely by the cue patch (the
// last token in scan order by default) and the loss is read from the first
// patch token, so only future-to-past information flow can solve it.
struct ToyTask {
    int64_t grid = 3;
    int64_t patch_dim = 4;
    int64_t classes = 2;
    int64_t cue_pos = -1;  // -1 = last patch
    double cue_strength = 2.0;
    double noise = 0.5;
    uint64_t seed = 7;

    int64_t tokens() const { return grid * grid; }
    static ToyTask parse(const std::string& spec);  // "grid=3,classes=2,seed=7"
    std::string describe() const;
};

struct ToyBatch {
    Tensor3 tokens;  // [N, patch_dim, grid^2]
    std::vector<int> labels;
};

ToyBatch sample_toy(const ToyTask& task, int64_t n, Rng& rng);

// Mamba-only stack with first-patch-token readout. The fold factor is
// resolved per forward batch: fixed B1 must divide the batch, adaptive B1
// comes from the LUT and the closest-divisor rule.
struct ToyConfig {
    int64_t dim = 16;
    int64_t depth = 2;
    int64_t state_dim = 4;
    int64_t conv_kernel = 3;
    int lanes = 4;
    bool swap_aux = true;
    FoldPolicyKind fold = FoldPolicyKind::off;
    int64_t fold_b1 = 1;  // used when fold == fixed
    uint64_t seed = 1;
};

struct ToyModel {
    ToyConfig cfg;
    ToyTask task;
    LinearParams embed;  // patch_dim -> dim
    std::vector<MambaBlockParams> blocks;
    LayerNormParams ln_f;
    LinearParams head;   // dim -> classes
    std::optional<TuneLut> lut;

    static ToyModel build(const ToyConfig& cfg, const ToyTask& task);
    std::vector<ParamRef> params();
};

struct ToyCtx {
    Tensor3 tokens, emb;
    bool aux_used = false;
    FoldPlan plan;           // plan the blocks run under (folded when fold_b1 > 0)
    FoldPlan unfolded_plan;  // one segment per row, aux still present
    std::vector<MambaBlockCtx> blocks;
    Tensor3 final_tokens;  // post blocks, aux discarded
    Tensor3 readout;       // [N, dim, 1], first patch token
    Tensor3 normed;
};

Mat toy_forward(ToyModel& m, const Tensor3& tokens, bool training, ToyCtx* ctx,
                ThreadPool* pool = nullptr);
Tensor3 toy_backward(ToyModel& m, ToyCtx& ctx, const Mat& dlogits,
                     ThreadPool* pool = nullptr);

struct TrainOptions {
    int64_t steps = 2000;
    int64_t batch = 32;
    double lr = 0.2;
    uint64_t seed = 1;
    int64_t eval_every = 100;
    int64_t eval_n = 1000;
    double stop_at_eval_acc = -1.0;  // early stop once an eval reaches this
};

struct TrainRow {
    int64_t step = 0;
    double loss = 0.0;
    double acc = 0.0;
    double eval_acc = -1.0;  // < 0 when this step had no eval
};

struct TrainResult {
    std::vector<TrainRow> trace;
    double final_eval_acc = 0.0;
    double best_eval_acc = 0.0;
};

// Plain SGD on cross-entropy; deterministic given seeds. Throws on NaN loss.
TrainResult train_toy(ToyModel& m, const ToyTask& task, const TrainOptions& opts,
                      ThreadPool* pool = nullptr);

}  // namespace sfm
