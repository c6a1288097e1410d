#include "sfm/tensor.hpp"

#include <atomic>
#include <cmath>

namespace sfm {

namespace {
std::atomic<int> g_mode{static_cast<int>(Mode::verify)};
}

Mode mode() { return static_cast<Mode>(g_mode.load(std::memory_order_relaxed)); }
void set_mode(Mode m) { g_mode.store(static_cast<int>(m), std::memory_order_relaxed); }
bool finite_checks_enabled() { return mode() == Mode::verify; }

void check_finite(const double* data, int64_t n, const char* what) {
    if (!finite_checks_enabled()) return;
    for (int64_t i = 0; i < n; ++i) {
        if (!std::isfinite(data[i])) {
            throw std::runtime_error(std::string("non-finite value produced by ") + what);
        }
    }
}

Tensor3::Tensor3(int64_t B, int64_t D, int64_t T) : b(B), d(D), t(T) {
    require(B >= 1 && D >= 1 && T >= 1, "Tensor3: all dims must be >= 1");
    data.assign(static_cast<size_t>(B * D * T), 0.0);
}

Tensor3 Tensor3::full(int64_t B, int64_t D, int64_t T, double value) {
    Tensor3 out(B, D, T);
    for (auto& v : out.data) v = value;
    return out;
}

Tensor3 Tensor3::random_normal(int64_t B, int64_t D, int64_t T, Rng& rng,
                               double mean, double stddev) {
    Tensor3 out(B, D, T);
    for (auto& v : out.data) v = rng.normal(mean, stddev);
    return out;
}

Tensor3 Tensor3::random_uniform(int64_t B, int64_t D, int64_t T, Rng& rng,
                                double lo, double hi) {
    Tensor3 out(B, D, T);
    for (auto& v : out.data) v = rng.uniform(lo, hi);
    return out;
}

Tensor3 seq_mean(const Tensor3& x) {
    Tensor3 out(x.b, x.d, 1);
    const double inv = 1.0 / static_cast<double>(x.t);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            const double* r = x.row(bi, di);
            double acc = 0.0;
            for (int64_t ti = 0; ti < x.t; ++ti) acc += r[ti];
            out.at(bi, di, 0) = acc * inv;
        }
    }
    check_finite(out.data.data(), out.size(), "seq_mean");
    return out;
}

Tensor3 concat_ends(const Tensor3& head, const Tensor3& x, const Tensor3& tail) {
    require(head.t == 1 && tail.t == 1, "concat_ends: head/tail must have T=1");
    require(head.b == x.b && head.d == x.d, "concat_ends: head shape mismatch");
    require(tail.b == x.b && tail.d == x.d, "concat_ends: tail shape mismatch");
    Tensor3 out(x.b, x.d, x.t + 2);
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            double* o = out.row(bi, di);
            const double* r = x.row(bi, di);
            o[0] = head.at(bi, di, 0);
            for (int64_t ti = 0; ti < x.t; ++ti) o[ti + 1] = r[ti];
            o[x.t + 1] = tail.at(bi, di, 0);
        }
    }
    return out;
}

Tensor3 swap_positions(const Tensor3& x, int64_t i, int64_t j, int64_t segment_stride) {
    require(segment_stride >= 1, "swap_positions: stride must be >= 1");
    require(x.t % segment_stride == 0, "swap_positions: T not a multiple of stride");
    require(i >= 0 && i < segment_stride, "swap_positions: offset i out of range");
    require(j >= 0 && j < segment_stride, "swap_positions: offset j out of range");
    Tensor3 out = x;
    if (i == j) return out;
    const int64_t segments = x.t / segment_stride;
    for (int64_t bi = 0; bi < x.b; ++bi) {
        for (int64_t di = 0; di < x.d; ++di) {
            double* r = out.row(bi, di);
            for (int64_t s = 0; s < segments; ++s) {
                std::swap(r[s * segment_stride + i], r[s * segment_stride + j]);
            }
        }
    }
    return out;
}

Tensor3 add(const Tensor3& a, const Tensor3& b) {
    require(a.same_shape(b), "add: shape mismatch");
    Tensor3 out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor3 sub(const Tensor3& a, const Tensor3& b) {
    require(a.same_shape(b), "sub: shape mismatch");
    Tensor3 out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor3 hadamard(const Tensor3& a, const Tensor3& b) {
    require(a.same_shape(b), "hadamard: shape mismatch");
    Tensor3 out = a;
    for (int64_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor3 scale(const Tensor3& a, double s) {
    Tensor3 out = a;
    for (auto& v : out.data) v *= s;
    return out;
}

}  // namespace sfm
