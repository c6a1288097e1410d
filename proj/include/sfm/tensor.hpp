#pragma once

#include <cstdint>
#include <vector>

#include "sfm/common.hpp"

namespace sfm {

// Dense rank-3 tensor with fixed [B, D, T] axis order.
// Element (b, d, t) lives at data[(b*D + d)*T + t]; every module relies on
// this layout (the sequence axis is contiguous, which is what the fold and
// the scan want). Tensors are treated as immutable once built: operations
// return new tensors.
struct Tensor3 {
    int64_t b = 0, d = 0, t = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int64_t B, int64_t D, int64_t T);

    static Tensor3 full(int64_t B, int64_t D, int64_t T, double value);
    static Tensor3 random_normal(int64_t B, int64_t D, int64_t T, Rng& rng,
                                 double mean = 0.0, double stddev = 1.0);
    static Tensor3 random_uniform(int64_t B, int64_t D, int64_t T, Rng& rng,
                                  double lo, double hi);

    int64_t size() const { return b * d * t; }

    int64_t index(int64_t bi, int64_t di, int64_t ti) const {
        return (bi * d + di) * t + ti;
    }

    double& at(int64_t bi, int64_t di, int64_t ti) { return data[index(bi, di, ti)]; }
    double at(int64_t bi, int64_t di, int64_t ti) const { return data[index(bi, di, ti)]; }

    // contiguous sequence row for a fixed (b, d)
    double* row(int64_t bi, int64_t di) { return data.data() + (bi * d + di) * t; }
    const double* row(int64_t bi, int64_t di) const { return data.data() + (bi * d + di) * t; }

    bool same_shape(const Tensor3& o) const { return b == o.b && d == o.d && t == o.t; }
};

// per-channel mean over the sequence axis; output has T = 1
Tensor3 seq_mean(const Tensor3& x);

// [head | x | tail] along the sequence axis; head and tail must have T = 1
Tensor3 concat_ends(const Tensor3& head, const Tensor3& x, const Tensor3& tail);

// Exchanges the tokens at offsets i and j inside every segment of length
// segment_stride along the sequence axis. Involution; i == j is a no-op.
Tensor3 swap_positions(const Tensor3& x, int64_t i, int64_t j, int64_t segment_stride);

// elementwise helpers
Tensor3 add(const Tensor3& a, const Tensor3& b);
Tensor3 sub(const Tensor3& a, const Tensor3& b);
Tensor3 hadamard(const Tensor3& a, const Tensor3& b);
Tensor3 scale(const Tensor3& a, double s);

// Dense row-major matrix for layer weights ([rows, cols]).
struct Mat {
    int64_t rows = 0, cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int64_t r, int64_t c) : rows(r), cols(c), data(static_cast<size_t>(r * c), 0.0) {
        require(r >= 0 && c >= 0, "Mat: negative dims");
    }

    double& at(int64_t r, int64_t c) { return data[r * cols + c]; }
    double at(int64_t r, int64_t c) const { return data[r * cols + c]; }
    int64_t size() const { return rows * cols; }
};

using Vec = std::vector<double>;

}  // namespace sfm
