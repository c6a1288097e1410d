#pragma once

#include <cstdint>
#include <vector>

#include "sfm/fold.hpp"
#include "sfm/tensor.hpp"

namespace sfm {

// Mutable parameter/gradient pair registry used by the optimizer, the
// directional gradient checks, and zero_grad sweeps.
struct ParamRef {
    std::vector<double>* w = nullptr;
    std::vector<double>* g = nullptr;
};

struct LinearParams {
    Mat w;   // [out, in]
    Vec b;   // [out]
    Mat gw;
    Vec gb;

    static LinearParams init(int64_t out, int64_t in, Rng& rng, double scale = -1.0);
    void collect(std::vector<ParamRef>& refs);
    int64_t out_dim() const { return w.rows; }
    int64_t in_dim() const { return w.cols; }
};

// x: [B, Din, T] -> [B, Dout, T], applied per token
Tensor3 linear_fwd(const LinearParams& p, const Tensor3& x);
// accumulates gw/gb, returns dx
Tensor3 linear_bwd(LinearParams& p, const Tensor3& x_saved, const Tensor3& dy);

struct LayerNormParams {
    Vec gamma, beta;
    Vec ggamma, gbeta;
    double eps = 1e-6;

    static LayerNormParams init(int64_t dim);
    void collect(std::vector<ParamRef>& refs);
};

// normalizes over the channel axis per (b, t) token
Tensor3 layernorm_fwd(const LayerNormParams& p, const Tensor3& x);
Tensor3 layernorm_bwd(LayerNormParams& p, const Tensor3& x_saved, const Tensor3& dy);

Tensor3 silu_fwd(const Tensor3& x);
Tensor3 silu_bwd(const Tensor3& x_saved, const Tensor3& dy);

// log(1 + exp(x)) with an underflow guard keeping the output strictly positive
Tensor3 softplus_fwd(const Tensor3& x);
Tensor3 softplus_bwd(const Tensor3& x_saved, const Tensor3& dy);

struct DwConvParams {
    Mat kernel;  // [D, K]; kernel[d, K-1] is the current-position tap
    Vec bias;    // [D]
    Mat gkernel;
    Vec gbias;

    static DwConvParams init(int64_t channels, int64_t k, Rng& rng);
    void collect(std::vector<ParamRef>& refs);
    int64_t width() const { return kernel.cols; }
};

// Causal depthwise 1-D convolution on batch-folded data. Each length-l_seg
// segment is convolved independently: taps reaching before the segment start
// read implicit zeros, so nothing crosses a fold boundary. Equals
// unfold -> per-row causal conv -> fold, bit-exactly.
Tensor3 dwconv1d_folded_fwd(const DwConvParams& p, const Tensor3& x, const FoldPlan& plan);
Tensor3 dwconv1d_folded_bwd(DwConvParams& p, const Tensor3& x_saved, const FoldPlan& plan,
                            const Tensor3& dy);

struct MhaParams {
    int64_t heads = 1;
    LinearParams wq, wk, wv, wo;  // all [D, D]

    static MhaParams init(int64_t dim, int64_t heads, Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

struct MhaCtx {
    Tensor3 x, q, k, v;
    Tensor3 attn;               // heads re-concatenated, pre-wo
    std::vector<double> probs;  // [B, H, Tq, Tk]
};

// Full (non-windowed, non-causal) scaled dot-product self-attention over the
// sequence axis. No positional encoding.
Tensor3 mha_fwd(const MhaParams& p, const Tensor3& x, MhaCtx* ctx = nullptr);
Tensor3 mha_bwd(MhaParams& p, const MhaCtx& ctx, const Tensor3& dy);

// Rank-4 image/feature container for the convolutional stages, [N, C, H, W].
struct Grid {
    int64_t n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Grid() = default;
    Grid(int64_t N, int64_t C, int64_t H, int64_t W)
        : n(N), c(C), h(H), w(W), data(static_cast<size_t>(N * C * H * W), 0.0) {}

    int64_t index(int64_t ni, int64_t ci, int64_t yi, int64_t xi) const {
        return ((ni * c + ci) * h + yi) * w + xi;
    }
    double& at(int64_t ni, int64_t ci, int64_t yi, int64_t xi) { return data[index(ni, ci, yi, xi)]; }
    double at(int64_t ni, int64_t ci, int64_t yi, int64_t xi) const { return data[index(ni, ci, yi, xi)]; }
    int64_t size() const { return n * c * h * w; }
};

// row-major spatial scan order: token t = y*w + x
Tensor3 grid_to_tokens(const Grid& g);
Grid tokens_to_grid(const Tensor3& t, int64_t h, int64_t w);

struct Conv2dParams {
    int64_t in_ch = 0, out_ch = 0, k = 1, stride = 1, pad = 0;
    Mat w;  // [out_ch, in_ch*k*k]
    Vec b;  // [out_ch]
    Mat gw;
    Vec gb;

    static Conv2dParams init(int64_t in_ch, int64_t out_ch, int64_t k, int64_t stride,
                             int64_t pad, Rng& rng);
    void collect(std::vector<ParamRef>& refs);
};

Grid conv2d_fwd(const Conv2dParams& p, const Grid& x);
Grid conv2d_bwd(Conv2dParams& p, const Grid& x_saved, const Grid& dy);

// softmax cross-entropy over logits [N, classes]; returns mean loss and
// writes dlogits (already divided by N) when requested
double cross_entropy(const Mat& logits, const std::vector<int>& labels, Mat* dlogits);

void zero_grads(std::vector<ParamRef>& refs);
void sgd_step(std::vector<ParamRef>& refs, double lr);

}  // namespace sfm
