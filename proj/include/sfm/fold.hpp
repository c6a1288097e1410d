#pragma once

#include <cstdint>
#include <vector>

#include "sfm/tensor.hpp"

namespace sfm {

// Bijective batch fold: [B, D, L_seg] -> [B1, D, B2*L_seg] with B = B1*B2.
// Row b1 of the folded tensor carries segments b1*B2 .. b1*B2+B2-1 in batch
// order. Hidden-state independence across the concatenated segments is
// restored by resetting the scan at every segment start (see reset_mask).
struct FoldPlan {
    int64_t batch = 0;   // B
    int64_t b1 = 0;      // rows after folding
    int64_t b2 = 0;      // segments per folded row
    int64_t l_seg = 0;   // per-segment sequence length

    int64_t folded_t() const { return b2 * l_seg; }

    // true at k*l_seg for 0 <= k < b2 (the first step of each segment)
    std::vector<uint8_t> reset_mask() const;

    static FoldPlan make(int64_t B, int64_t B1, int64_t L_seg);

    // identity plan (B1 = B, one segment per row)
    static FoldPlan none(int64_t B, int64_t L_seg) { return make(B, B, L_seg); }
};

Tensor3 fold(const Tensor3& z, const FoldPlan& plan);
Tensor3 unfold(const Tensor3& zf, const FoldPlan& plan);

// raw-buffer forms used by the tensor ops above and by the C API;
// out must hold B*D*L values and is fully overwritten
void fold_into(const double* z, int64_t B, int64_t D, int64_t L, int64_t B1, double* out);
void unfold_into(const double* zf, int64_t B, int64_t D, int64_t L, int64_t B1, double* out);

// Returns the divisor of a closest to b; ties break toward the smaller
// divisor. a >= 1.
int64_t closest_divisor(int64_t a, double b);

std::vector<int64_t> divisors(int64_t a);

}  // namespace sfm
