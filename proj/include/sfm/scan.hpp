#pragma once

#include <cstdint>
#include <vector>

#include "sfm/parallel.hpp"
#include "sfm/tensor.hpp"

namespace sfm {

// Inputs of the selective recurrence h_t = a_t h_{t-1} + b_t x_t, y_t = c_t h_t
// with input-dependent coefficients. Shapes follow the Mamba lineage: the
// decay logits are shared over batch and time ([D, S]), the input/output
// gates are shared over channels ([B, S, T]), delta is per channel.
struct ScanInputs {
    Tensor3 x;                        // [B, D, T]
    Tensor3 delta;                    // [B, D, T], strictly positive
    Mat a_log;                        // [D, S]; continuous A = -exp(a_log)
    Tensor3 b_gate;                   // [B, S, T]
    Tensor3 c_gate;                   // [B, S, T]
    std::vector<uint8_t> reset_mask;  // length T; [0] must be set
    int64_t state_dim = 0;            // S

    int64_t batch() const { return x.b; }
    int64_t channels() const { return x.d; }
    int64_t seq_len() const { return x.t; }

    // throws std::invalid_argument on any violated precondition
    void validate() const;
};

struct ScanOutputs {
    Tensor3 y;                   // [B, D, T]
    std::vector<double> h_final; // [B, D, S] flattened; empty unless training
    bool training = false;
};

// Discretized coefficient streams, [B, D, S, T] flattened as
// ((b*D + d)*S + s)*T + t. a_bar is exactly 0 at reset positions.
struct DiscretizedCoeffs {
    int64_t b = 0, d = 0, s = 0, t = 0;
    std::vector<double> a_bar;  // exp(delta * A), masked
    std::vector<double> bx;     // delta * b_gate * x

    int64_t index(int64_t bi, int64_t di, int64_t si, int64_t ti) const {
        return ((bi * d + di) * s + si) * t + ti;
    }
};

DiscretizedCoeffs discretize(const ScanInputs& in);

// Plain sequential evaluation of the recurrence. This is the oracle every
// other executor is checked against; keep it boring.
ScanOutputs scan_sequential(const ScanInputs& in, bool training = false);

// Chunked executor: one task per (b, d) row; each row is split into `lanes`
// contiguous chunks, chunk summaries are combined with the associative
// operator below, then chunks are rescanned with corrected initial states.
// Numerically equivalent to scan_sequential; bit-equal when lanes == 1.
ScanOutputs scan_parallel(const ScanInputs& in, int lanes = 32, bool training = false,
                          ThreadPool* pool = nullptr);

// The affine-map composition (a1,v1) ⊗ (a2,v2) = (a2*a1, a2*v1 + v2):
// applying step 1 then step 2 to a hidden state. Associative; reset steps
// have a = 0 and need no special casing.
struct ScanPair {
    double a = 1.0;
    double v = 0.0;
};

inline ScanPair scan_compose(const ScanPair& p, const ScanPair& q) {
    return {q.a * p.a, q.a * p.v + q.v};
}

struct ScanGrads {
    Tensor3 dx;       // [B, D, T]
    Tensor3 ddelta;   // [B, D, T]
    Mat da_log;       // [D, S]
    Tensor3 db_gate;  // [B, S, T]
    Tensor3 dc_gate;  // [B, S, T]
};

// Reverse-mode gradients of the scan. `saved` must come from a training-mode
// forward; a forward-only result is rejected. Coefficients are recomputed
// from the inputs rather than stored.
ScanGrads scan_backward(const ScanInputs& in, const Tensor3& grad_y,
                        const ScanOutputs& saved, ThreadPool* pool = nullptr);

// Raw-buffer form used by the benchmark path (and the C API). a_neg holds
// the already-negated continuous decay A = -exp(a_log), shape [D, S].
template <typename R>
struct RawScanProblem {
    const R* x = nullptr;        // [B, D, T]
    const R* delta = nullptr;    // [B, D, T]
    const R* a_neg = nullptr;    // [D, S]
    const R* b_gate = nullptr;   // [B, S, T]
    const R* c_gate = nullptr;   // [B, S, T]
    const uint8_t* reset = nullptr;  // [T]
    int64_t B = 0, D = 0, T = 0, S = 0;
};

template <typename R>
void scan_parallel_raw(const RawScanProblem<R>& p, int lanes, R* y, R* h_final,
                       ThreadPool* pool);

}  // namespace sfm
