#pragma once

// One-layer Lorentz graph convolution followed by a Euclidean readout head,
// trained against the relaxed normalized-cut loss. The backward pass is
// derived by hand; tests check it against finite differences of an
// independent per-node forward.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seghgnn/error.hpp"
#include "seghgnn/manifold.hpp"
#include "seghgnn/stiefel.hpp"

namespace seghgnn {
namespace hgnn {

using manifold::Aggregation;
using manifold::LorentzPoint;

/// Edge weights from the Gram matrix of the features: max(0, f f^T) / N.
/// The graph is fully connected with self-loops, so the degree normalizer
/// sqrt(|N_i||N_j|) is N for every pair.
inline Matrix build_edge_weights(const Matrix& features) {
    if (features.rows() < 2) throw Error(ErrorCode::dimension, "edge weights need at least 2 nodes");
    if (!features.allFinite()) throw Error(ErrorCode::invalid_feature, "features contain non-finite values");
    Matrix w = (features * features.transpose()).cwiseMax(0.0);
    w /= static_cast<double>(features.rows());
    // f f^T is symmetric in exact arithmetic; make it symmetric bitwise.
    w = (0.5 * (w + w.transpose())).eval();
    return w;
}

struct PatchGraph {
    Matrix features; ///< N x d, row-major patch order
    Matrix weights;  ///< N x N, symmetric, nonnegative
    Eigen::Index grid_h = 0;
    Eigen::Index grid_w = 0;

    Eigen::Index size() const noexcept { return features.rows(); }

    static PatchGraph from_features(Matrix features, Eigen::Index grid_h, Eigen::Index grid_w) {
        Matrix w = build_edge_weights(features);
        return with_weights(std::move(features), std::move(w), grid_h, grid_w);
    }

    static PatchGraph with_weights(Matrix features, Matrix weights, Eigen::Index grid_h, Eigen::Index grid_w) {
        PatchGraph g{std::move(features), std::move(weights), grid_h, grid_w};
        g.validate();
        return g;
    }

    void validate() const {
        const Eigen::Index n = features.rows();
        if (grid_h < 1 || grid_w < 1 || grid_h * grid_w != n) {
            throw Error(ErrorCode::dimension, "grid " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                                                  " does not match " + std::to_string(n) + " patches");
        }
        if (weights.rows() != n || weights.cols() != n) {
            throw Error(ErrorCode::dimension, "weight matrix must be N x N");
        }
        if (!features.allFinite()) throw Error(ErrorCode::invalid_feature, "features contain non-finite values");
        if (!weights.allFinite()) throw Error(ErrorCode::non_finite, "weights contain non-finite values");
        if ((weights.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "negative edge weight");
        if ((weights - weights.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
            throw Error(ErrorCode::invalid_argument, "weight matrix is not symmetric");
        }
    }
};

/// Reduces features to `dim` columns by projecting onto the top right
/// singular vectors of the (uncentered) feature matrix. Each basis vector is
/// signed so its largest-magnitude entry is positive. Narrower inputs are
/// zero-padded; equal widths pass through.
inline Matrix project_features(const Matrix& features, Eigen::Index dim) {
    if (dim < 1) throw Error(ErrorCode::dimension, "target dimension must be >= 1");
    if (!features.allFinite()) throw Error(ErrorCode::invalid_feature, "features contain non-finite values");
    const Eigen::Index raw = features.cols();
    if (raw == dim) return features;
    if (raw < dim) {
        Matrix out = Matrix::Zero(features.rows(), dim);
        out.leftCols(raw) = features;
        return out;
    }
    Eigen::SelfAdjointEigenSolver<Matrix> eig(features.transpose() * features);
    if (eig.info() != Eigen::Success) throw Error(ErrorCode::non_finite, "feature projection failed");
    Matrix basis(raw, dim);
    for (Eigen::Index c = 0; c < dim; ++c) {
        Vector v = eig.eigenvectors().col(raw - 1 - c);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v[arg] < 0.0) v = -v;
        basis.col(c) = v;
    }
    return features * basis;
}

class ClusterAssignment {
public:
    static ClusterAssignment from_matrix(Matrix s) {
        if (s.rows() < 1 || s.cols() < 1) throw Error(ErrorCode::dimension, "empty assignment matrix");
        if (!s.allFinite()) throw Error(ErrorCode::non_finite, "assignment has non-finite entries");
        if ((s.array() < 0.0).any()) throw Error(ErrorCode::invalid_argument, "negative assignment probability");
        const double worst = (s.rowwise().sum().array() - 1.0).abs().maxCoeff();
        if (worst > 1e-9) throw Error(ErrorCode::invalid_argument, "assignment rows do not sum to 1");
        return ClusterAssignment(std::move(s));
    }

    /// Row-wise softmax of a logit matrix.
    static ClusterAssignment softmax(const Matrix& logits) {
        if (!logits.allFinite()) throw Error(ErrorCode::non_finite, "non-finite logits");
        Matrix s = logits.colwise() - logits.rowwise().maxCoeff();
        s = s.array().exp().matrix();
        const Vector sums = s.rowwise().sum();
        for (Eigen::Index i = 0; i < s.rows(); ++i) s.row(i) /= sums[i];
        return ClusterAssignment(std::move(s));
    }

    const Matrix& matrix() const noexcept { return s_; }
    Eigen::Index nodes() const noexcept { return s_.rows(); }
    Eigen::Index clusters() const noexcept { return s_.cols(); }

private:
    explicit ClusterAssignment(Matrix s) : s_(std::move(s)) {}
    Matrix s_;
};

struct ModelParams {
    stiefel::LorentzTransform lorentz;
    Matrix fc1_w; ///< d x hidden
    Vector fc1_b;
    Matrix fc2_w; ///< hidden x k
    Vector fc2_b;

    /// W~ from a QR draw; linear layers uniform in +-1/sqrt(fan_in).
    static ModelParams init(Eigen::Index dim, Eigen::Index hidden, Eigen::Index k, std::uint64_t seed) {
        if (dim < 1 || hidden < 1 || k < 1) throw Error(ErrorCode::dimension, "model sizes must be positive");
        std::mt19937_64 rng(seed ^ 0x5eed5eed5eed5eedULL);
        auto uniform = [&rng](Eigen::Index rows, Eigen::Index cols, Eigen::Index fan_in) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            std::uniform_real_distribution<double> dist(-bound, bound);
            Matrix m(rows, cols);
            for (Eigen::Index j = 0; j < cols; ++j) {
                for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = dist(rng);
            }
            return m;
        };
        ModelParams p{stiefel::LorentzTransform(stiefel::init_stiefel(dim, seed)), Matrix(), Vector(), Matrix(),
                      Vector()};
        p.fc1_w = uniform(dim, hidden, dim);
        p.fc1_b = uniform(hidden, 1, dim).col(0);
        p.fc2_w = uniform(hidden, k, hidden);
        p.fc2_b = uniform(k, 1, hidden).col(0);
        return p;
    }

    Eigen::Index dim() const noexcept { return lorentz.in_dim(); }
    Eigen::Index hidden() const noexcept { return fc1_w.cols(); }
    Eigen::Index clusters() const noexcept { return fc2_w.cols(); }

    std::size_t stiefel_parameter_count() const noexcept {
        return static_cast<std::size_t>(lorentz.stiefel().rows() * lorentz.stiefel().cols());
    }
    std::size_t euclidean_parameter_count() const noexcept {
        return static_cast<std::size_t>(fc1_w.size() + fc1_b.size() + fc2_w.size() + fc2_b.size());
    }
    std::size_t parameter_count() const noexcept { return stiefel_parameter_count() + euclidean_parameter_count(); }
};

struct Gradients {
    Matrix stiefel; ///< ambient Euclidean gradient w.r.t. W~
    Matrix fc1_w;
    Vector fc1_b;
    Matrix fc2_w;
    Vector fc2_b;
};

// ---------------------------------------------------------------------------
// Relaxed normalized cut
// ---------------------------------------------------------------------------

struct NcutTerms {
    double cut = 0.0;   ///< -tr(S^T W S) / tr(S^T D S)
    double ortho = 0.0; ///< || S^T S / ||S^T S||_F - I_k / sqrt(k) ||_F
    double total() const noexcept { return cut + ortho; }
};

namespace detail {

inline Vector checked_degrees(const Matrix& w) {
    Vector deg = w.rowwise().sum();
    for (Eigen::Index i = 0; i < deg.size(); ++i) {
        if (!(deg[i] > 0.0)) throw Error(ErrorCode::degenerate_graph, "node " + std::to_string(i) + " has zero degree");
    }
    return deg;
}

struct NcutEval {
    NcutTerms terms;
    Matrix grad_s; ///< dLoss/dS, filled when requested
};

inline NcutEval ncut_eval(const Matrix& s, const Matrix& w, bool want_grad) {
    if (w.rows() != s.rows() || w.cols() != s.rows()) {
        throw Error(ErrorCode::dimension, "ncut_loss: S has " + std::to_string(s.rows()) + " rows, W is " +
                                              std::to_string(w.rows()) + "x" + std::to_string(w.cols()));
    }
    const Vector deg = checked_degrees(w);
    const Eigen::Index k = s.cols();

    const Matrix ws = w * s;
    const double num = (s.array() * ws.array()).sum();
    const double den = (deg.asDiagonal() * s).cwiseProduct(s).sum();

    const Matrix p = s.transpose() * s;
    const double pn = p.norm();
    const Matrix q = p / pn;
    const Matrix e = q - Matrix::Identity(k, k) / std::sqrt(static_cast<double>(k));
    const double ortho = e.norm();

    NcutEval out{NcutTerms{-num / den, ortho}, Matrix()};
    if (!want_grad) return out;

    out.grad_s = (-2.0 / den) * ws + (2.0 * num / (den * den)) * (deg.asDiagonal() * s);
    if (ortho > 0.0) {
        const Matrix gq = e / ortho;
        const Matrix gp = (gq - (gq.cwiseProduct(q).sum()) * q) / pn;
        out.grad_s += s * (gp + gp.transpose());
    }
    return out;
}

} // namespace detail

inline NcutTerms ncut_terms(const ClusterAssignment& s, const Matrix& w) {
    return detail::ncut_eval(s.matrix(), w, false).terms;
}

inline double ncut_loss(const ClusterAssignment& s, const Matrix& w) { return ncut_terms(s, w).total(); }

/// Loss and its gradient with respect to the entries of S.
inline std::pair<double, Matrix> ncut_loss_with_grad(const ClusterAssignment& s, const Matrix& w) {
    auto ev = detail::ncut_eval(s.matrix(), w, true);
    return {ev.terms.total(), std::move(ev.grad_s)};
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Intermediate values of one forward pass, kept for the backward pass.
struct ForwardCache {
    Matrix xs;      ///< lifted spatial coordinates (N x d)
    Matrix ys;      ///< W~ x_s (N x d)
    Vector y0;      ///< time coordinates after the transform
    Matrix klein;   ///< Klein coordinates of the transformed points
    Vector gamma;   ///< Lorentz factors
    Vector den;     ///< midpoint denominators (one per node)
    Matrix m_raw;   ///< aggregated Klein points before clamping
    std::vector<char> clamped;
    std::size_t clamped_count = 0;
    Matrix m;       ///< aggregated Klein points after clamping
    Matrix ball;    ///< Poincare coordinates before activation
    Matrix ball_act;
    Matrix hidden;  ///< output Lorentz points (N x (d+1))
    Matrix tangent; ///< log at origin, spatial part (N x d)
    Matrix z1;
    Matrix a1;
    Matrix logits;
    Matrix s;
};

namespace detail {

inline void guard(const Matrix& m, const char* stage) {
    if (!m.allFinite()) throw Error(ErrorCode::non_finite, std::string("non-finite values after stage '") + stage + "'");
}

inline void graph_layer_forward(const stiefel::LorentzTransform& transform, const Matrix& lifted, const Matrix& w,
                                Aggregation mode, ForwardCache& c) {
    const Eigen::Index n = lifted.rows();
    const Eigen::Index d = transform.out_dim();
    if (lifted.cols() != transform.in_dim() + 1) {
        throw Error(ErrorCode::dimension, "graph layer: points have " + std::to_string(lifted.cols() - 1) +
                                              " spatial coordinates, transform expects " +
                                              std::to_string(transform.in_dim()));
    }
    if (w.rows() != n || w.cols() != n) throw Error(ErrorCode::dimension, "graph layer: weights must be N x N");

    c.xs = lifted.rightCols(lifted.cols() - 1);
    c.ys.resize(n, d);
    c.y0.resize(n);
    c.klein.resize(n, d);
    c.gamma.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto x = LorentzPoint::reproject(lifted.row(j).transpose());
        const auto y = stiefel::apply_lorentz_linear(transform, x);
        const auto k = manifold::to_klein(y);
        c.ys.row(j) = y.spatial().transpose();
        c.y0[j] = y.time();
        c.klein.row(j) = k.coords().transpose();
        c.gamma[j] = manifold::lorentz_factor(k);
    }
    guard(c.klein, "transform");

    // sum_j w_ij g_j k_j over all j (fully connected graph with self-loops)
    const Matrix weighted = c.gamma.asDiagonal() * c.klein;
    const Matrix num = w * weighted;
    if (mode == Aggregation::literal) {
        c.den = Vector::Constant(n, c.gamma.sum());
    } else {
        c.den = w * c.gamma;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (!(c.den[i] > 0.0)) throw Error(ErrorCode::empty_aggregation, "node " + std::to_string(i) + " has no weight");
        }
    }
    c.m_raw = c.den.cwiseInverse().asDiagonal() * num;
    guard(c.m_raw, "aggregation");

    c.m = c.m_raw;
    c.clamped.assign(static_cast<std::size_t>(n), 0);
    c.clamped_count = 0;
    c.ball.resize(n, d);
    c.ball_act.resize(n, d);
    c.hidden.resize(n, d + 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector row = c.m.row(i).transpose();
        if (manifold::clamp_to_ball(row)) {
            c.clamped[static_cast<std::size_t>(i)] = 1;
            ++c.clamped_count;
            c.m.row(i) = row.transpose();
        }
        const auto mid = manifold::from_klein(manifold::KleinPoint(std::move(row)));
        const auto b = manifold::to_poincare(mid);
        Vector act = b.coords().cwiseMax(0.0);
        c.ball.row(i) = b.coords().transpose();
        c.ball_act.row(i) = act.transpose();
        c.hidden.row(i) = manifold::from_poincare(manifold::PoincarePoint(std::move(act))).coords().transpose();
    }
    guard(c.hidden, "activation");
}

inline void readout_forward(const ModelParams& p, ForwardCache& c) {
    const Eigen::Index n = c.hidden.rows();
    const Eigen::Index d = c.hidden.cols() - 1;
    if (d != p.fc1_w.rows()) throw Error(ErrorCode::dimension, "readout: hidden state width does not match fc1");
    const auto o = LorentzPoint::origin(d);
    c.tangent.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto h = LorentzPoint::reproject(c.hidden.row(i).transpose());
        c.tangent.row(i) = manifold::log_map(o, h).vec().tail(d).transpose();
    }
    guard(c.tangent, "log map");
    c.z1 = (c.tangent * p.fc1_w).rowwise() + p.fc1_b.transpose();
    c.a1 = c.z1.cwiseMax(0.0);
    c.logits = (c.a1 * p.fc2_w).rowwise() + p.fc2_b.transpose();
    guard(c.logits, "readout");
    c.s = ClusterAssignment::softmax(c.logits).matrix();
}

} // namespace detail

inline ForwardCache forward(const ModelParams& p, const Matrix& lifted, const Matrix& w,
                            Aggregation mode = Aggregation::literal) {
    ForwardCache c;
    detail::graph_layer_forward(p.lorentz, lifted, w, mode, c);
    detail::readout_forward(p, c);
    return c;
}

namespace detail {

inline Matrix to_matrix(const std::vector<LorentzPoint>& pts) {
    if (pts.empty()) throw Error(ErrorCode::empty_input, "no points");
    Matrix m(static_cast<Eigen::Index>(pts.size()), pts.front().coords().size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (pts[i].coords().size() != m.cols()) throw Error(ErrorCode::dimension, "points of mixed dimension");
        m.row(static_cast<Eigen::Index>(i)) = pts[i].coords().transpose();
    }
    return m;
}

} // namespace detail

struct LayerOutput {
    std::vector<LorentzPoint> points;
    std::size_t clamped = 0; ///< nodes whose midpoint had to be pulled back into the ball
};

inline LayerOutput hgcn_layer(const ModelParams& p, const PatchGraph& g, const std::vector<LorentzPoint>& h,
                              Aggregation mode = Aggregation::literal) {
    if (static_cast<Eigen::Index>(h.size()) != g.weights.rows()) {
        throw Error(ErrorCode::dimension, "hgcn_layer: one point per graph node required");
    }
    ForwardCache c;
    detail::graph_layer_forward(p.lorentz, detail::to_matrix(h), g.weights, mode, c);
    LayerOutput out;
    out.clamped = c.clamped_count;
    out.points.reserve(h.size());
    for (Eigen::Index i = 0; i < c.hidden.rows(); ++i) {
        out.points.push_back(LorentzPoint::reproject(c.hidden.row(i).transpose()));
    }
    return out;
}

inline ClusterAssignment readout(const ModelParams& p, const std::vector<LorentzPoint>& h) {
    ForwardCache c;
    c.hidden = detail::to_matrix(h);
    detail::readout_forward(p, c);
    return ClusterAssignment::from_matrix(std::move(c.s));
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

struct LossGradients {
    double loss = 0.0;
    NcutTerms terms;
    Gradients grads;
    std::size_t clamped = 0;
};

namespace detail {

/// d/db of 2 atanh(|b|) b / |b|, applied to g (the Jacobian is symmetric).
inline Vector poincare_log_vjp(const Vector& b, const Vector& g) {
    const double r = b.norm();
    if (r < 1e-4) {
        // c(r) = 2 + 2r^2/3 + ..., c'(r)/r = 4/3 + ...
        const double c = 2.0 + 2.0 * r * r / 3.0;
        return c * g + (4.0 / 3.0) * b.dot(g) * b;
    }
    const double at = std::atanh(r);
    const double c = 2.0 * at / r;
    const double dc = 2.0 / (r * (1.0 - r * r)) - 2.0 * at / (r * r);
    return c * g + (dc / r) * b.dot(g) * b;
}

/// d/dM of M / (1 + sqrt(1 - |M|^2)) (Klein -> Poincare), applied to g.
inline Vector klein_to_poincare_vjp(const Vector& m, const Vector& g) {
    const double s = std::sqrt(1.0 - m.squaredNorm());
    const double a = 1.0 + s;
    return g / a + m * (m.dot(g) / (s * a * a));
}

} // namespace detail

/// Loss and ambient gradients for every trainable parameter, given lifted
/// input points (N x (d+1)) and edge weights.
inline LossGradients loss_gradients(const ModelParams& p, const Matrix& lifted, const Matrix& w,
                                    Aggregation mode = Aggregation::literal) {
    detail::guard(lifted, "lift");
    const ForwardCache c = forward(p, lifted, w, mode);
    auto ev = detail::ncut_eval(c.s, w, true);
    if (!std::isfinite(ev.terms.total())) throw Error(ErrorCode::non_finite, "non-finite values after stage 'loss'");

    LossGradients out;
    out.loss = ev.terms.total();
    out.terms = ev.terms;
    out.clamped = c.clamped_count;
    Gradients& gr = out.grads;

    // softmax
    const Matrix& s = c.s;
    const Matrix& gs = ev.grad_s;
    const Vector inner = s.cwiseProduct(gs).rowwise().sum();
    const Matrix gz2 = s.cwiseProduct(gs.colwise() - inner);

    // fc2, relu, fc1
    gr.fc2_w = c.a1.transpose() * gz2;
    gr.fc2_b = gz2.colwise().sum().transpose();
    const Matrix ga1 = gz2 * p.fc2_w.transpose();
    const Matrix gz1 = ga1.cwiseProduct((c.z1.array() > 0.0).cast<double>().matrix());
    gr.fc1_w = c.tangent.transpose() * gz1;
    gr.fc1_b = gz1.colwise().sum().transpose();
    const Matrix gtan = gz1 * p.fc1_w.transpose();

    // log at origin of from_poincare(relu(b)), then relu, then Klein -> Poincare, then clamp
    const Eigen::Index n = c.m.rows();
    const Eigen::Index d = c.m.cols();
    Matrix gm_raw(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        Vector gb = detail::poincare_log_vjp(c.ball_act.row(i).transpose(), gtan.row(i).transpose());
        gb = gb.cwiseProduct((c.ball.row(i).array() > 0.0).cast<double>().matrix().transpose());
        Vector gm = detail::klein_to_poincare_vjp(c.m.row(i).transpose(), gb);
        if (c.clamped[static_cast<std::size_t>(i)]) {
            const Vector raw = c.m_raw.row(i).transpose();
            const double r = raw.norm();
            const Vector u = raw / r;
            gm = (manifold::kClampRadius / r) * (gm - u.dot(gm) * u);
        }
        gm_raw.row(i) = gm.transpose();
    }
    detail::guard(gm_raw, "aggregation backward");

    // m_raw_i = (W (g o K))_i / den_i
    const Matrix gnum = c.den.cwiseInverse().asDiagonal() * gm_raw;
    const Vector gden = -(gm_raw.cwiseProduct(c.m_raw).rowwise().sum()).cwiseQuotient(c.den);
    const Matrix gweighted = w.transpose() * gnum;
    Vector ggamma = gweighted.cwiseProduct(c.klein).rowwise().sum();
    if (mode == Aggregation::literal) {
        ggamma.array() += gden.sum();
    } else {
        ggamma += w.transpose() * gden;
    }
    Matrix gk = c.gamma.asDiagonal() * gweighted;
    // gamma = (1 - |k|^2)^(-1/2)
    const Vector g3 = c.gamma.array().cube();
    gk += (ggamma.cwiseProduct(g3)).asDiagonal() * c.klein;

    // k = y_s / sqrt(1 + |y_s|^2)
    Matrix gys(n, d);
    for (Eigen::Index j = 0; j < n; ++j) {
        const double y0 = c.y0[j];
        const auto ysj = c.ys.row(j);
        const auto gkj = gk.row(j);
        gys.row(j) = gkj / y0 - (gkj.dot(ysj) / (y0 * y0 * y0)) * ysj;
    }
    gr.stiefel = gys.transpose() * c.xs;
    detail::guard(gr.stiefel, "transform backward");
    return out;
}

} // namespace hgnn
} // namespace seghgnn
