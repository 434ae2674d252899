#pragma once

// Per-image test-time training and the three tasks built on it: object
// localization, object segmentation and recursive part segmentation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "seghgnn/error.hpp"
#include "seghgnn/grid.hpp"
#include "seghgnn/hgnn.hpp"
#include "seghgnn/manifold.hpp"
#include "seghgnn/stiefel.hpp"

namespace seghgnn {
namespace pipeline {

using hgnn::ClusterAssignment;
using hgnn::ModelParams;
using hgnn::PatchGraph;

enum class EuclidOptimizer { adam, sgd };

struct TttConfig {
    Eigen::Index dim = 16;
    Eigen::Index hidden = 32;
    Eigen::Index k = 2;
    int epochs = 10;
    double lr_euclid = 0.01;
    double lr_stiefel = 0.1;
    double feature_scale = 3.0;
    std::uint64_t seed = 0;
    manifold::Aggregation aggregation = manifold::Aggregation::literal;
    EuclidOptimizer euclid_optimizer = EuclidOptimizer::adam;

    void validate() const {
        if (epochs < 1) throw Error(ErrorCode::invalid_argument, "epochs must be >= 1");
        if (!(lr_euclid > 0.0) || !(lr_stiefel > 0.0)) {
            throw Error(ErrorCode::invalid_argument, "learning rates must be positive");
        }
        if (k < 2) throw Error(ErrorCode::invalid_argument, "k must be >= 2");
        if (dim < 1 || hidden < 1) throw Error(ErrorCode::invalid_argument, "dim and hidden must be positive");
        if (!(feature_scale > 0.0)) throw Error(ErrorCode::invalid_argument, "feature scale must be positive");
    }
};

/// Bias-corrected Adam moments for one parameter tensor.
template <typename T>
class AdamSlot {
public:
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    void step(T& param, const T& grad, double lr, int t) {
        if (m_.size() == 0) {
            m_ = T::Zero(param.rows(), param.cols());
            v_ = T::Zero(param.rows(), param.cols());
        }
        m_ = beta1 * m_ + (1.0 - beta1) * grad;
        v_ = beta2 * v_ + (1.0 - beta2) * grad.cwiseProduct(grad);
        const double c1 = 1.0 - std::pow(beta1, t);
        const double c2 = 1.0 - std::pow(beta2, t);
        param.array() -= lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps);
    }

private:
    T m_;
    T v_;
};

struct TttResult {
    ModelParams params;
    ClusterAssignment assignment;
    std::vector<double> losses; ///< loss evaluated at the start of each epoch
    std::size_t clamped = 0;    ///< midpoint clamps in the final forward pass
};

inline Matrix prepare_input(const Matrix& features, const TttConfig& cfg) {
    return manifold::lift_features_matrix(hgnn::project_features(features, cfg.dim), cfg.feature_scale);
}

/// Fits a fresh model to one graph: `epochs` full-batch steps, Adam (or SGD)
/// on the readout head and Riemannian SGD on W~.
inline TttResult ttt_fit(const PatchGraph& graph, const TttConfig& cfg) {
    cfg.validate();
    graph.validate();
    if (graph.size() < cfg.k) {
        throw Error(ErrorCode::invalid_argument, std::to_string(graph.size()) + " nodes cannot form " +
                                                     std::to_string(cfg.k) + " clusters");
    }
    const Matrix lifted = prepare_input(graph.features, cfg);
    ModelParams params = ModelParams::init(cfg.dim, cfg.hidden, cfg.k, cfg.seed);

    AdamSlot<Matrix> fc1_w, fc2_w;
    AdamSlot<Vector> fc1_b, fc2_b;
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(cfg.epochs));

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto lg = hgnn::loss_gradients(params, lifted, graph.weights, cfg.aggregation);
        if (!std::isfinite(lg.loss)) throw Error(ErrorCode::diverged, "non-finite loss at epoch " + std::to_string(epoch));
        losses.push_back(lg.loss);
        const auto& g = lg.grads;
        if (cfg.euclid_optimizer == EuclidOptimizer::adam) {
            fc1_w.step(params.fc1_w, g.fc1_w, cfg.lr_euclid, epoch);
            fc1_b.step(params.fc1_b, g.fc1_b, cfg.lr_euclid, epoch);
            fc2_w.step(params.fc2_w, g.fc2_w, cfg.lr_euclid, epoch);
            fc2_b.step(params.fc2_b, g.fc2_b, cfg.lr_euclid, epoch);
        } else {
            params.fc1_w -= cfg.lr_euclid * g.fc1_w;
            params.fc1_b -= cfg.lr_euclid * g.fc1_b;
            params.fc2_w -= cfg.lr_euclid * g.fc2_w;
            params.fc2_b -= cfg.lr_euclid * g.fc2_b;
        }
        params.lorentz.set_stiefel(stiefel::rsgd_step(params.lorentz.stiefel(), g.stiefel, cfg.lr_stiefel));
    }

    const auto fin = hgnn::forward(params, lifted, graph.weights, cfg.aggregation);
    auto assignment = ClusterAssignment::from_matrix(fin.s);
    return TttResult{std::move(params), std::move(assignment), std::move(losses), fin.clamped_count};
}

/// Row-wise argmax, ties to the lower cluster index.
inline std::vector<int> harden(const ClusterAssignment& s) {
    std::vector<int> out(static_cast<std::size_t>(s.nodes()));
    const Matrix& m = s.matrix();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < m.cols(); ++c) {
            if (m(i, c) > m(i, best)) best = c;
        }
        out[static_cast<std::size_t>(i)] = static_cast<int>(best);
    }
    return out;
}

inline LabelGrid harden(const ClusterAssignment& s, std::size_t grid_h, std::size_t grid_w) {
    return LabelGrid(grid_h, grid_w, harden(s));
}

/// The cluster touching the most image borders (top, bottom, left, right);
/// ties go to the larger area, then the lower label.
inline int identify_background(const LabelGrid& labels) {
    if (labels.empty()) throw Error(ErrorCode::empty_input, "empty label grid");
    const int max_label = *std::max_element(labels.labels.begin(), labels.labels.end());
    if (*std::min_element(labels.labels.begin(), labels.labels.end()) < 0) {
        throw Error(ErrorCode::invalid_argument, "negative label");
    }
    const auto n = static_cast<std::size_t>(max_label) + 1;
    std::vector<std::array<bool, 4>> touches(n, {false, false, false, false});
    std::vector<std::size_t> area(n, 0);
    for (std::size_t r = 0; r < labels.rows; ++r) {
        for (std::size_t c = 0; c < labels.cols; ++c) {
            const auto l = static_cast<std::size_t>(labels.at(r, c));
            ++area[l];
            if (r == 0) touches[l][0] = true;
            if (r + 1 == labels.rows) touches[l][1] = true;
            if (c == 0) touches[l][2] = true;
            if (c + 1 == labels.cols) touches[l][3] = true;
        }
    }
    int best = -1;
    int best_borders = -1;
    for (std::size_t l = 0; l < n; ++l) {
        if (area[l] == 0) continue;
        const int borders = static_cast<int>(std::count(touches[l].begin(), touches[l].end(), true));
        if (best < 0 || borders > best_borders ||
            (borders == best_borders && area[l] > area[static_cast<std::size_t>(best)])) {
            best = static_cast<int>(l);
            best_borders = borders;
        }
    }
    return best;
}

/// 4-connected components of `cluster`, each a sorted list of row-major
/// cell indices; components are ordered by their first cell.
inline std::vector<std::vector<std::size_t>> connected_components(const LabelGrid& labels, int cluster) {
    std::vector<std::vector<std::size_t>> comps;
    std::vector<char> seen(labels.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < labels.size(); ++start) {
        if (seen[start] || labels.labels[start] != cluster) continue;
        std::vector<std::size_t> comp;
        stack.push_back(start);
        seen[start] = 1;
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            comp.push_back(cur);
            const std::size_t r = cur / labels.cols;
            const std::size_t c = cur % labels.cols;
            auto visit = [&](std::size_t idx) {
                if (!seen[idx] && labels.labels[idx] == cluster) {
                    seen[idx] = 1;
                    stack.push_back(idx);
                }
            };
            if (r > 0) visit(cur - labels.cols);
            if (r + 1 < labels.rows) visit(cur + labels.cols);
            if (c > 0) visit(cur - 1);
            if (c + 1 < labels.cols) visit(cur + 1);
        }
        std::sort(comp.begin(), comp.end());
        comps.push_back(std::move(comp));
    }
    return comps;
}

inline constexpr std::size_t kMinBoxPatches = 4;

/// Tight pixel boxes around every foreground component larger than
/// kMinBoxPatches patches.
inline std::vector<BoundingBox> extract_boxes(const LabelGrid& labels, int background, long patch_size) {
    if (patch_size < 1) throw Error(ErrorCode::invalid_argument, "patch size must be positive");
    std::vector<int> clusters(labels.labels);
    std::sort(clusters.begin(), clusters.end());
    clusters.erase(std::unique(clusters.begin(), clusters.end()), clusters.end());

    std::vector<std::pair<std::size_t, BoundingBox>> found;
    for (int cl : clusters) {
        if (cl == background) continue;
        for (const auto& comp : connected_components(labels, cl)) {
            if (comp.size() <= kMinBoxPatches) continue;
            long r0 = static_cast<long>(labels.rows), c0 = static_cast<long>(labels.cols), r1 = -1, c1 = -1;
            for (std::size_t idx : comp) {
                const auto r = static_cast<long>(idx / labels.cols);
                const auto c = static_cast<long>(idx % labels.cols);
                r0 = std::min(r0, r);
                r1 = std::max(r1, r);
                c0 = std::min(c0, c);
                c1 = std::max(c1, c);
            }
            found.emplace_back(comp.front(), BoundingBox{c0 * patch_size, r0 * patch_size,
                                                         (c1 + 1) * patch_size - 1, (r1 + 1) * patch_size - 1});
        }
    }
    std::sort(found.begin(), found.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<BoundingBox> boxes;
    boxes.reserve(found.size());
    for (auto& f : found) boxes.push_back(f.second);
    return boxes;
}

struct SegmentationResult {
    LabelGrid labels;               ///< cluster index per patch
    std::optional<int> background;
    ClusterAssignment soft;
    std::size_t clamped = 0;
};

/// Binary view: 1 for foreground patches, 0 for background.
inline LabelGrid foreground_mask(const SegmentationResult& seg) {
    LabelGrid out = seg.labels;
    for (auto& l : out.labels) l = (seg.background && l == *seg.background) ? 0 : 1;
    return out;
}

/// Relabels so the background cluster becomes 0 and the remaining clusters
/// keep their relative order as 1..k-1. For k = 2 this is foreground_mask.
inline LabelGrid background_first(const SegmentationResult& seg) {
    LabelGrid out = seg.labels;
    if (!seg.background) return out;
    const int bg = *seg.background;
    for (auto& l : out.labels) l = l == bg ? 0 : (l < bg ? l + 1 : l);
    return out;
}

/// Clusters the patches (k = 2 for the object tasks) and picks the
/// background cluster.
inline SegmentationResult segment_object(const PatchGraph& graph, const TttConfig& cfg) {
    auto fit = ttt_fit(graph, cfg);
    auto labels = harden(fit.assignment, static_cast<std::size_t>(graph.grid_h), static_cast<std::size_t>(graph.grid_w));
    const int bg = identify_background(labels);
    return SegmentationResult{std::move(labels), bg, std::move(fit.assignment), fit.clamped};
}

struct LocalizationResult {
    SegmentationResult segmentation;
    std::vector<BoundingBox> boxes; ///< empty means a miss
};

inline LocalizationResult localize(const PatchGraph& graph, const TttConfig& cfg, long patch_size) {
    auto seg = segment_object(graph, cfg);
    auto boxes = extract_boxes(seg.labels, *seg.background, patch_size);
    return LocalizationResult{std::move(seg), std::move(boxes)};
}

struct PartConfig {
    TttConfig base;        ///< shared hyperparameters; k and epochs are set per stage
    int stage1_epochs = 10;
    int stage2_epochs = 100;
    Eigen::Index parts = 4;
};

inline constexpr int kBackgroundPart = 0;

struct PartResult {
    LabelGrid parts; ///< kBackgroundPart for background, 1..parts for the parts
    SegmentationResult stage1;
    std::size_t clamped = 0;
};

inline TttConfig stage1_config(const PartConfig& pc) {
    TttConfig cfg = pc.base;
    cfg.k = 2;
    cfg.epochs = pc.stage1_epochs;
    return cfg;
}

/// Second stage: clusters the foreground rows only, on a sub-graph whose
/// edge weights are rebuilt from those rows. Background rows are never read.
inline PartResult part_stage2(const PatchGraph& graph, SegmentationResult stage1, const PartConfig& pc) {
    const int bg = stage1.background.value_or(-1);
    std::vector<Eigen::Index> fg;
    for (std::size_t i = 0; i < stage1.labels.size(); ++i) {
        if (stage1.labels.labels[i] != bg) fg.push_back(static_cast<Eigen::Index>(i));
    }
    if (static_cast<Eigen::Index>(fg.size()) < std::max<Eigen::Index>(pc.parts, 2)) {
        throw Error(ErrorCode::insufficient_foreground, std::to_string(fg.size()) + " foreground patches for " +
                                                            std::to_string(pc.parts) + " parts");
    }
    Matrix sub(static_cast<Eigen::Index>(fg.size()), graph.features.cols());
    for (std::size_t r = 0; r < fg.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = graph.features.row(fg[r]);
    const auto n = static_cast<Eigen::Index>(fg.size());
    const PatchGraph subgraph = PatchGraph::from_features(std::move(sub), 1, n);

    TttConfig cfg = pc.base;
    cfg.k = pc.parts;
    cfg.epochs = pc.stage2_epochs;
    auto fit = ttt_fit(subgraph, cfg);
    const auto part_labels = harden(fit.assignment);

    LabelGrid parts(stage1.labels.rows, stage1.labels.cols, std::vector<int>(stage1.labels.size(), kBackgroundPart));
    for (std::size_t r = 0; r < fg.size(); ++r) parts.labels[static_cast<std::size_t>(fg[r])] = part_labels[r] + 1;
    return PartResult{std::move(parts), std::move(stage1), fit.clamped};
}

inline PartResult part_segmentation(const PatchGraph& graph, const PartConfig& pc) {
    auto stage1 = segment_object(graph, stage1_config(pc));
    const std::size_t c1 = stage1.clamped;
    auto out = part_stage2(graph, std::move(stage1), pc);
    out.clamped += c1;
    return out;
}

} // namespace pipeline
} // namespace seghgnn
