#include "sfm/fold.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace sfm {

FoldPlan FoldPlan::make(int64_t B, int64_t B1, int64_t L_seg) {
    require(B >= 1 && B1 >= 1 && L_seg >= 1, "FoldPlan: dims must be >= 1");
    require(B % B1 == 0, "FoldPlan: B1 must divide B");
    FoldPlan p;
    p.batch = B;
    p.b1 = B1;
    p.b2 = B / B1;
    p.l_seg = L_seg;
    return p;
}

std::vector<uint8_t> FoldPlan::reset_mask() const {
    std::vector<uint8_t> mask(static_cast<size_t>(folded_t()), 0);
    for (int64_t k = 0; k < b2; ++k) mask[static_cast<size_t>(k * l_seg)] = 1;
    return mask;
}

void fold_into(const double* z, int64_t B, int64_t D, int64_t L, int64_t B1, double* out) {
    const int64_t B2 = B / B1;
    // out[b1, d, b2*L + t] = z[b1*B2 + b2, d, t]; rows are contiguous in t,
    // so each segment is one memcpy
    for (int64_t r = 0; r < B1; ++r) {
        for (int64_t di = 0; di < D; ++di) {
            double* dst = out + (r * D + di) * (B2 * L);
            for (int64_t seg = 0; seg < B2; ++seg) {
                const double* src = z + ((r * B2 + seg) * D + di) * L;
                std::memcpy(dst + seg * L, src, static_cast<size_t>(L) * sizeof(double));
            }
        }
    }
}

void unfold_into(const double* zf, int64_t B, int64_t D, int64_t L, int64_t B1, double* out) {
    const int64_t B2 = B / B1;
    for (int64_t r = 0; r < B1; ++r) {
        for (int64_t di = 0; di < D; ++di) {
            const double* src = zf + (r * D + di) * (B2 * L);
            for (int64_t seg = 0; seg < B2; ++seg) {
                double* dst = out + ((r * B2 + seg) * D + di) * L;
                std::memcpy(dst, src + seg * L, static_cast<size_t>(L) * sizeof(double));
            }
        }
    }
}

Tensor3 fold(const Tensor3& z, const FoldPlan& plan) {
    require(plan.batch == z.b, "fold: plan batch does not match tensor");
    require(plan.l_seg == z.t, "fold: plan segment length does not match tensor");
    Tensor3 out(plan.b1, z.d, plan.folded_t());
    fold_into(z.data.data(), z.b, z.d, z.t, plan.b1, out.data.data());
    return out;
}

Tensor3 unfold(const Tensor3& zf, const FoldPlan& plan) {
    require(plan.b1 == zf.b, "unfold: plan b1 does not match tensor");
    require(plan.folded_t() == zf.t, "unfold: plan folded length does not match tensor");
    Tensor3 out(plan.batch, zf.d, plan.l_seg);
    unfold_into(zf.data.data(), plan.batch, zf.d, plan.l_seg, plan.b1, out.data.data());
    return out;
}

std::vector<int64_t> divisors(int64_t a) {
    std::vector<int64_t> divs;
    for (int64_t i = 1; i * i <= a; ++i) {
        if (a % i == 0) {
            divs.push_back(i);
            if (i != a / i) divs.push_back(a / i);
        }
    }
    std::sort(divs.begin(), divs.end());
    return divs;
}

int64_t closest_divisor(int64_t a, double b) {
    require(a >= 1, "closest_divisor: a must be >= 1");
    int64_t best = 1;
    double best_dist = std::abs(1.0 - b);
    for (int64_t i = 1; i * i <= a; ++i) {
        if (a % i != 0) continue;
        for (int64_t cand : {i, a / i}) {
            double dist = std::abs(static_cast<double>(cand) - b);
            // ties break toward the smaller divisor
            if (dist < best_dist || (dist == best_dist && cand < best)) {
                best = cand;
                best_dist = dist;
            }
        }
    }
    return best;
}

}  // namespace sfm
