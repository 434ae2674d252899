#pragma once

// Evaluation metrics and an exhaustive normalized-cut solver used as a test
// oracle for the relaxed objective.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seghgnn/error.hpp"
#include "seghgnn/grid.hpp"
#include "seghgnn/manifold.hpp"

namespace seghgnn {
namespace metrics {

inline double bbox_iou(const BoundingBox& a, const BoundingBox& b) {
    const long ix = std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min) + 1;
    const long iy = std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min) + 1;
    const double inter = (ix > 0 && iy > 0) ? static_cast<double>(ix) * static_cast<double>(iy) : 0.0;
    const double uni = static_cast<double>(a.area()) + static_cast<double>(b.area()) - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

inline constexpr double kCorLocThreshold = 0.5;

/// Percentage of images where some predicted box has IoU > 0.5 with some
/// ground-truth box.
inline double corloc(const std::vector<std::vector<BoundingBox>>& predictions,
                     const std::vector<std::vector<BoundingBox>>& ground_truth) {
    if (predictions.empty()) throw Error(ErrorCode::empty_input, "corloc over zero images");
    if (predictions.size() != ground_truth.size()) {
        throw Error(ErrorCode::shape_mismatch, std::to_string(predictions.size()) + " predictions for " +
                                                   std::to_string(ground_truth.size()) + " images");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        bool hit = false;
        for (const auto& p : predictions[i]) {
            for (const auto& g : ground_truth[i]) hit = hit || bbox_iou(p, g) > kCorLocThreshold;
        }
        hits += hit ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

/// Mean IoU over the foreground and background classes of two binary masks
/// (nonzero = foreground). A class absent from both masks is skipped.
inline double miou(const LabelGrid& pred, const LabelGrid& gt) {
    if (pred.rows != gt.rows || pred.cols != gt.cols) {
        throw Error(ErrorCode::shape_mismatch, "mask shapes " + std::to_string(pred.rows) + "x" +
                                                   std::to_string(pred.cols) + " and " + std::to_string(gt.rows) +
                                                   "x" + std::to_string(gt.cols));
    }
    std::size_t inter[2] = {0, 0};
    std::size_t uni[2] = {0, 0};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = pred.labels[i] != 0 ? 1 : 0;
        const int g = gt.labels[i] != 0 ? 1 : 0;
        for (int c = 0; c < 2; ++c) {
            if (p == c && g == c) ++inter[c];
            if (p == c || g == c) ++uni[c];
        }
    }
    double sum = 0.0;
    int classes = 0;
    for (int c = 0; c < 2; ++c) {
        if (uni[c] == 0) continue;
        sum += static_cast<double>(inter[c]) / static_cast<double>(uni[c]);
        ++classes;
    }
    if (classes == 0) throw Error(ErrorCode::empty_input, "empty masks");
    return sum / classes;
}

/// Nearest-neighbour expansion of a patch grid to pixel resolution.
inline LabelGrid upsample(const LabelGrid& grid, std::size_t factor) {
    if (factor < 1) throw Error(ErrorCode::invalid_argument, "upsampling factor must be >= 1");
    LabelGrid out(grid.rows * factor, grid.cols * factor, std::vector<int>(grid.size() * factor * factor));
    for (std::size_t r = 0; r < out.rows; ++r) {
        for (std::size_t c = 0; c < out.cols; ++c) out.at(r, c) = grid.at(r / factor, c / factor);
    }
    return out;
}

namespace detail {

struct Contingency {
    std::map<std::pair<int, int>, double> joint;
    std::map<int, double> a;
    std::map<int, double> b;
    double n = 0.0;
};

inline Contingency contingency(std::span<const int> a, std::span<const int> b) {
    if (a.empty() || b.empty()) throw Error(ErrorCode::empty_input, "empty labeling");
    if (a.size() != b.size()) throw Error(ErrorCode::shape_mismatch, "labelings differ in length");
    Contingency t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        t.joint[{a[i], b[i]}] += 1.0;
        t.a[a[i]] += 1.0;
        t.b[b[i]] += 1.0;
    }
    t.n = static_cast<double>(a.size());
    return t;
}

inline double entropy(const std::map<int, double>& counts, double n) {
    double h = 0.0;
    for (const auto& [label, c] : counts) h -= (c / n) * std::log(c / n);
    return h;
}

inline double comb2(double x) { return x * (x - 1.0) / 2.0; }

} // namespace detail

/// Normalized mutual information, arithmetic-mean normalization.
inline double nmi(std::span<const int> a, std::span<const int> b) {
    const auto t = detail::contingency(a, b);
    if (t.a.size() == 1 && t.b.size() == 1) return 1.0;
    double mi = 0.0;
    for (const auto& [key, c] : t.joint) {
        const double pa = t.a.at(key.first) / t.n;
        const double pb = t.b.at(key.second) / t.n;
        const double pj = c / t.n;
        mi += pj * std::log(pj / (pa * pb));
    }
    const double norm = 0.5 * (detail::entropy(t.a, t.n) + detail::entropy(t.b, t.n));
    if (norm <= 0.0) return 0.0;
    return std::clamp(mi / norm, 0.0, 1.0);
}

/// Adjusted Rand index (pair counting, adjusted for chance).
inline double ari(std::span<const int> a, std::span<const int> b) {
    const auto t = detail::contingency(a, b);
    double sum_joint = 0.0;
    for (const auto& [key, c] : t.joint) sum_joint += detail::comb2(c);
    double sum_a = 0.0;
    for (const auto& [l, c] : t.a) sum_a += detail::comb2(c);
    double sum_b = 0.0;
    for (const auto& [l, c] : t.b) sum_b += detail::comb2(c);
    const double total = detail::comb2(t.n);
    const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
    const double max_index = 0.5 * (sum_a + sum_b);
    if (max_index == expected) return 1.0;
    return (sum_joint - expected) / (max_index - expected);
}

// ---------------------------------------------------------------------------
// Exact normalized cut
// ---------------------------------------------------------------------------

struct ExactCutResult {
    std::vector<int> side; ///< 0/1 per vertex; vertex N-1 is always on side 1
    double ncut_value = 0.0;
};

/// Ncut(P) = cut(P)/assoc(P,V) + cut(P)/assoc(P',V), with assoc(A,V) the
/// summed degree of A (Shi-Malik convention). `side` holds 0/1 per vertex.
inline double ncut_value(const Matrix& w, std::span<const int> side) {
    const auto n = static_cast<Eigen::Index>(side.size());
    if (w.rows() != n || w.cols() != n) throw Error(ErrorCode::dimension, "ncut_value: W must be N x N");
    double cut = 0.0;
    double assoc[2] = {0.0, 0.0};
    for (Eigen::Index i = 0; i < n; ++i) {
        const int si = side[static_cast<std::size_t>(i)];
        if (si != 0 && si != 1) throw Error(ErrorCode::invalid_argument, "bipartition labels must be 0 or 1");
        for (Eigen::Index j = 0; j < n; ++j) {
            assoc[si] += w(i, j);
            if (si != side[static_cast<std::size_t>(j)]) cut += w(i, j);
        }
    }
    cut *= 0.5;
    if (!(assoc[0] > 0.0) || !(assoc[1] > 0.0)) {
        throw Error(ErrorCode::degenerate_graph, "a side of the bipartition has zero association");
    }
    return cut / assoc[0] + cut / assoc[1];
}

inline constexpr Eigen::Index kDefaultMaxExactNodes = 14;

/// Enumerates all 2^(N-1) - 1 proper bipartitions. Ties keep the first
/// minimizer in enumeration order.
inline ExactCutResult exact_ncut(const Matrix& w, Eigen::Index max_n = kDefaultMaxExactNodes) {
    const Eigen::Index n = w.rows();
    if (w.cols() != n) throw Error(ErrorCode::dimension, "exact_ncut: W must be square");
    if (n < 2) throw Error(ErrorCode::dimension, "exact_ncut: need at least 2 vertices");
    if (n > max_n) throw Error(ErrorCode::too_large, std::to_string(n) + " vertices exceed limit " + std::to_string(max_n));
    if (!w.allFinite() || (w.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "weights must be finite and >= 0");
    const Vector deg = w.rowwise().sum();
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(deg[i] > 0.0)) throw Error(ErrorCode::degenerate_graph, "vertex " + std::to_string(i) + " is isolated");
    }

    ExactCutResult best{{}, std::numeric_limits<double>::infinity()};
    std::vector<int> side(static_cast<std::size_t>(n));
    const std::uint64_t count = std::uint64_t{1} << (n - 1);
    // Vertex n-1 is pinned to side 1; mask bit i puts vertex i on side 1.
    for (std::uint64_t mask = 0; mask + 1 < count; ++mask) {
        for (Eigen::Index i = 0; i + 1 < n; ++i) side[static_cast<std::size_t>(i)] = static_cast<int>((mask >> i) & 1U);
        side[static_cast<std::size_t>(n - 1)] = 1;
        const double v = ncut_value(w, side);
        if (v < best.ncut_value) {
            best.ncut_value = v;
            best.side = side;
        }
    }
    return best;
}

} // namespace metrics
} // namespace seghgnn
