#include "kernel_rows.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace swav::kernels {

namespace {

// Below this many multiply-adds the fork/join cost dominates.
constexpr std::size_t kParallelWork = 1u << 16;

bool worth_parallel(std::size_t work) {
#ifdef _OPENMP
    return work >= kParallelWork && omp_get_max_threads() > 1;
#else
    (void)work;
    return false;
#endif
}

}  // namespace

bool openmp_enabled() {
#ifdef _OPENMP
    return true;
#else
    return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace omp {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate) {
    const auto m = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        detail::gemm_row(a.data(), b.data(), c.data(), s, static_cast<std::size_t>(i), accumulate);
    }
}

void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    const auto m = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        detail::gemm_at_b_row(a.data(), b.data(), c.data(), s, static_cast<std::size_t>(i), accumulate);
    }
}

void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    const auto m = static_cast<std::ptrdiff_t>(s.m);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < m; ++i) {
        detail::gemm_a_bt_row(a.data(), b.data(), c.data(), s, static_cast<std::size_t>(i), accumulate);
    }
}

void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim, std::span<double> out) {
    if (rows == 0) return;
    std::vector<double> lo(dim), inv(dim);
    const auto nd = static_cast<std::ptrdiff_t>(dim);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t d = 0; d < nd; ++d) {
        double hi;
        detail::column_range(features.data(), rows, dim, static_cast<std::size_t>(d), lo[d], hi);
        inv[d] = hi > lo[d] ? 1.0 / (hi - lo[d]) : 0.0;
    }
    out[0] = 0.0;
    const auto nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 1; r < nr; ++r) {
        out[r] = detail::frame_distance_row(features.data(), dim, lo, inv, static_cast<std::size_t>(r));
    }
}

void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out) {
    const std::size_t dim = query.size();
    double qn = 0.0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn);
    const auto nr = static_cast<std::ptrdiff_t>(rows);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < nr; ++r) {
        out[r] = detail::cosine_row(query.data(), qn, index.data() + static_cast<std::size_t>(r) * dim, dim);
    }
}

void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs) {
    const auto nb = static_cast<std::ptrdiff_t>(diffs.size());
#pragma omp parallel
    {
        std::vector<std::size_t> idx;
#pragma omp for schedule(static)
        for (std::ptrdiff_t b = 0; b < nb; ++b) {
            diffs[b] = detail::bootstrap_one(in, seed, static_cast<std::size_t>(b), idx);
        }
    }
}

}  // namespace omp

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate) {
    if (worth_parallel(s.m * s.k * s.n)) return omp::gemm(a, b, c, s, accumulate);
    serial::gemm(a, b, c, s, accumulate);
}

void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    if (worth_parallel(s.m * s.k * s.n)) return omp::gemm_at_b(a, b, c, s, accumulate);
    serial::gemm_at_b(a, b, c, s, accumulate);
}

void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    if (worth_parallel(s.m * s.k * s.n)) return omp::gemm_a_bt(a, b, c, s, accumulate);
    serial::gemm_a_bt(a, b, c, s, accumulate);
}

void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim, std::span<double> out) {
    if (worth_parallel(rows * dim)) return omp::frame_distances(features, rows, dim, out);
    serial::frame_distances(features, rows, dim, out);
}

void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out) {
    if (worth_parallel(rows * query.size())) return omp::cosine_scores(query, index, rows, out);
    serial::cosine_scores(query, index, rows, out);
}

void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs) {
    if (worth_parallel(diffs.size() * in.truth.size())) return omp::bootstrap_diffs(in, seed, diffs);
    serial::bootstrap_diffs(in, seed, diffs);
}

}  // namespace swav::kernels
