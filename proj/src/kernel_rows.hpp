#pragma once

// Per-output-row bodies shared by the serial and OpenMP kernels.

#include "swav/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace swav::kernels::detail {

inline void gemm_row(const double* a, const double* b, double* c, GemmShape s, std::size_t i, bool accumulate) {
    double* out = c + i * s.n;
    if (!accumulate) std::fill(out, out + s.n, 0.0);
    const double* ar = a + i * s.k;
    for (std::size_t p = 0; p < s.k; ++p) {
        const double av = ar[p];
        const double* br = b + p * s.n;
        for (std::size_t j = 0; j < s.n; ++j) out[j] += av * br[j];
    }
}

// Row i of A^T * B: sum over p of A[p, i] * B[p, :].
inline void gemm_at_b_row(const double* a, const double* b, double* c, GemmShape s, std::size_t i,
                          bool accumulate) {
    double* out = c + i * s.n;
    if (!accumulate) std::fill(out, out + s.n, 0.0);
    for (std::size_t p = 0; p < s.k; ++p) {
        const double av = a[p * s.m + i];
        const double* br = b + p * s.n;
        for (std::size_t j = 0; j < s.n; ++j) out[j] += av * br[j];
    }
}

inline void gemm_a_bt_row(const double* a, const double* b, double* c, GemmShape s, std::size_t i,
                          bool accumulate) {
    double* out = c + i * s.n;
    const double* ar = a + i * s.k;
    for (std::size_t j = 0; j < s.n; ++j) {
        const double* br = b + j * s.k;
        double acc = 0.0;
        for (std::size_t p = 0; p < s.k; ++p) acc += ar[p] * br[p];
        out[j] = accumulate ? out[j] + acc : acc;
    }
}

inline void column_range(const float* f, std::size_t rows, std::size_t dim, std::size_t d, double& lo,
                         double& hi) {
    lo = f[d];
    hi = f[d];
    for (std::size_t r = 1; r < rows; ++r) {
        const double v = f[r * dim + d];
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
}

inline double frame_distance_row(const float* f, std::size_t dim, const std::vector<double>& lo,
                                 const std::vector<double>& inv_range, std::size_t r) {
    const float* cur = f + r * dim;
    const float* prev = cur - dim;
    double acc = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        const double a = (static_cast<double>(cur[d]) - lo[d]) * inv_range[d];
        const double b = (static_cast<double>(prev[d]) - lo[d]) * inv_range[d];
        acc += std::abs(a - b);
    }
    return acc / static_cast<double>(dim);
}

inline double cosine_row(const double* q, double q_norm, const double* row, std::size_t dim) {
    double dot = 0.0;
    double nn = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
        dot += q[d] * row[d];
        nn += row[d] * row[d];
    }
    if (q_norm == 0.0 || nn == 0.0) return 0.0;
    return dot / (q_norm * std::sqrt(nn));
}

inline double bootstrap_one(const BootstrapInput& in, std::uint64_t seed, std::size_t b,
                            std::vector<std::size_t>& idx) {
    const std::size_t n = in.truth.size();
    std::mt19937_64 rng(mix_seed(seed, b));
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    idx.resize(n);
    for (auto& i : idx) i = pick(rng);
    return balanced_accuracy_indexed(in.pred_a, in.truth, in.group, idx) -
           balanced_accuracy_indexed(in.pred_b, in.truth, in.group, idx);
}

}  // namespace swav::kernels::detail
