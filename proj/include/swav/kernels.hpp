#pragma once

// Data-parallel inner loops. Every kernel has a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp` with the same
// per-output operation order, so both produce bit-identical results. The
// unqualified entry points dispatch to the OpenMP version above a work
// threshold.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace swav::kernels {

struct GemmShape {
    std::size_t m = 0;  // rows of the output
    std::size_t k = 0;  // contracted dimension
    std::size_t n = 0;  // columns of the output
};

/// Inputs of the paired-bootstrap resampler. `pred_*` and `truth` are class
/// indices (0 = ego, 1 = exo); `group` is the subset id (0 same-view, 1 switch).
struct BootstrapInput {
    std::span<const std::uint8_t> pred_a;
    std::span<const std::uint8_t> pred_b;
    std::span<const std::uint8_t> truth;
    std::span<const std::uint8_t> group;
};

/// Subset-balanced, class-balanced accuracy of `pred` over the instances
/// listed in `idx` (with multiplicity).
double balanced_accuracy_indexed(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 std::span<const std::uint8_t> group, std::span<const std::size_t> idx);

namespace serial {
// C (+)= A * B with A m x k and B k x n.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate);
// C (+)= A^T * B with A k x m and B k x n.
void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// C (+)= A * B^T with A m x k and B n x k.
void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// out[i] = mean |x'_i - x'_{i-1}| over min-max normalized dims, out[0] = 0.
void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim,
                     std::span<double> out);
// out[r] = cos(query, index row r); zero-norm rows score 0.
void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out);
// diffs[b] = bacc(pred_a) - bacc(pred_b) on bootstrap resample b.
void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs);
}  // namespace serial

namespace omp {
// C (+)= A * B with A m x k and B k x n.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate);
// C (+)= A^T * B with A k x m and B k x n.
void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// C (+)= A * B^T with A m x k and B n x k.
void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// out[i] = mean |x'_i - x'_{i-1}| over min-max normalized dims, out[0] = 0.
void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim,
                     std::span<double> out);
// out[r] = cos(query, index row r); zero-norm rows score 0.
void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out);
// diffs[b] = bacc(pred_a) - bacc(pred_b) on bootstrap resample b.
void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs);
}  // namespace omp

// C (+)= A * B with A m x k and B k x n.
void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate);
// C (+)= A^T * B with A k x m and B k x n.
void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// C (+)= A * B^T with A m x k and B n x k.
void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate);
// out[i] = mean |x'_i - x'_{i-1}| over min-max normalized dims, out[0] = 0.
void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim,
                     std::span<double> out);
// out[r] = cos(query, index row r); zero-norm rows score 0.
void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out);
// diffs[b] = bacc(pred_a) - bacc(pred_b) on bootstrap resample b.
void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs);

/// True when the library was built with OpenMP.
bool openmp_enabled();
int max_threads();

/// SplitMix64 step; used to derive independent per-item seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace swav::kernels
