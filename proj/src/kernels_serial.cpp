#include "kernel_rows.hpp"

namespace swav::kernels {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double balanced_accuracy_indexed(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 std::span<const std::uint8_t> group, std::span<const std::size_t> idx) {
    std::size_t total[2][2] = {{0, 0}, {0, 0}};
    std::size_t hit[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i : idx) {
        const auto g = group[i] & 1;
        const auto c = truth[i] & 1;
        ++total[g][c];
        if (pred[i] == truth[i]) ++hit[g][c];
    }
    double sum = 0.0;
    int groups = 0;
    for (int g = 0; g < 2; ++g) {
        double acc = 0.0;
        int classes = 0;
        for (int c = 0; c < 2; ++c) {
            if (total[g][c] == 0) continue;
            acc += static_cast<double>(hit[g][c]) / static_cast<double>(total[g][c]);
            ++classes;
        }
        if (classes == 0) continue;
        sum += acc / classes;
        ++groups;
    }
    return groups == 0 ? 0.0 : sum / groups;
}

namespace serial {

void gemm(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
          bool accumulate) {
    for (std::size_t i = 0; i < s.m; ++i) detail::gemm_row(a.data(), b.data(), c.data(), s, i, accumulate);
}

void gemm_at_b(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    for (std::size_t i = 0; i < s.m; ++i) detail::gemm_at_b_row(a.data(), b.data(), c.data(), s, i, accumulate);
}

void gemm_a_bt(std::span<const double> a, std::span<const double> b, std::span<double> c, GemmShape s,
               bool accumulate) {
    for (std::size_t i = 0; i < s.m; ++i) detail::gemm_a_bt_row(a.data(), b.data(), c.data(), s, i, accumulate);
}

void frame_distances(std::span<const float> features, std::size_t rows, std::size_t dim, std::span<double> out) {
    if (rows == 0) return;
    std::vector<double> lo(dim), inv(dim);
    for (std::size_t d = 0; d < dim; ++d) {
        double hi;
        detail::column_range(features.data(), rows, dim, d, lo[d], hi);
        inv[d] = hi > lo[d] ? 1.0 / (hi - lo[d]) : 0.0;
    }
    out[0] = 0.0;
    for (std::size_t r = 1; r < rows; ++r) out[r] = detail::frame_distance_row(features.data(), dim, lo, inv, r);
}

void cosine_scores(std::span<const double> query, std::span<const double> index, std::size_t rows,
                   std::span<double> out) {
    const std::size_t dim = query.size();
    double qn = 0.0;
    for (double v : query) qn += v * v;
    qn = std::sqrt(qn);
    for (std::size_t r = 0; r < rows; ++r) out[r] = detail::cosine_row(query.data(), qn, index.data() + r * dim, dim);
}

void bootstrap_diffs(const BootstrapInput& in, std::uint64_t seed, std::span<double> diffs) {
    std::vector<std::size_t> idx;
    for (std::size_t b = 0; b < diffs.size(); ++b) diffs[b] = detail::bootstrap_one(in, seed, b, idx);
}

}  // namespace serial
}  // namespace swav::kernels
