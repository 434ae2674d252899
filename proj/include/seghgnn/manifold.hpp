#pragma once

// Lorentz (hyperboloid) model of hyperbolic space with curvature -1, plus the
// Poincare-ball and Klein-model charts used by the graph layer.
//
// A point x in R^{n+1} lies on the hyperboloid when <x,x>_L = -1 and x0 > 0,
// where <x,y>_L = -x0*y0 + sum_{i>=1} x_i*y_i. Every function that produces a
// point recomputes x0 from the spatial coordinates before returning it.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "seghgnn/error.hpp"

namespace seghgnn {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

namespace manifold {

inline constexpr double kManifoldTol = 1e-9;
inline constexpr double kZeroNorm = 1e-12;
inline constexpr double kBallMargin = 1e-12;
inline constexpr double kMaxTangentNorm = 350.0;
inline constexpr double kClampRadius = 1.0 - 1e-7;

namespace detail {

inline bool all_finite(const Eigen::Ref<const Vector>& v) { return v.allFinite(); }

inline double spatial_sq(const Eigen::Ref<const Vector>& x) { return x.tail(x.size() - 1).squaredNorm(); }

} // namespace detail

inline double lorentz_inner(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& y) {
    if (x.size() != y.size()) {
        throw Error(ErrorCode::dimension, "lorentz_inner: lengths " + std::to_string(x.size()) + " and " +
                                              std::to_string(y.size()));
    }
    if (x.size() < 2) {
        throw Error(ErrorCode::dimension, "lorentz_inner: need at least 2 coordinates");
    }
    const Eigen::Index n = x.size() - 1;
    return -x[0] * y[0] + x.tail(n).dot(y.tail(n));
}

class LorentzPoint {
public:
    /// o_L = [1, 0, ..., 0] in n+1 coordinates.
    static LorentzPoint origin(Eigen::Index n) {
        if (n < 1) throw Error(ErrorCode::dimension, "origin: dimension must be >= 1");
        Vector c = Vector::Zero(n + 1);
        c[0] = 1.0;
        return LorentzPoint(std::move(c));
    }

    /// Validating constructor; the constraint is checked relative to x0^2 so
    /// that points far from the origin are not rejected for rounding alone.
    static LorentzPoint from_coords(Vector coords) {
        if (coords.size() < 2) throw Error(ErrorCode::dimension, "LorentzPoint needs at least 2 coordinates");
        if (!coords.allFinite()) throw Error(ErrorCode::not_on_manifold, "non-finite coordinates");
        if (!(coords[0] > 0.0)) throw Error(ErrorCode::not_on_manifold, "x0 must be positive");
        const double self = -coords[0] * coords[0] + detail::spatial_sq(coords);
        if (std::abs(self + 1.0) > kManifoldTol * std::max(1.0, coords[0] * coords[0])) {
            throw Error(ErrorCode::not_on_manifold, "<x,x>_L = " + std::to_string(self));
        }
        return LorentzPoint(std::move(coords));
    }

    /// Drift repair: keeps the spatial part and recomputes x0.
    static LorentzPoint reproject(Vector coords) {
        if (coords.size() < 2) throw Error(ErrorCode::dimension, "reproject: need at least 2 coordinates");
        coords[0] = std::sqrt(1.0 + detail::spatial_sq(coords));
        return LorentzPoint(std::move(coords));
    }

    const Vector& coords() const noexcept { return coords_; }
    Eigen::Index dim() const noexcept { return coords_.size() - 1; }
    double time() const noexcept { return coords_[0]; }
    auto spatial() const { return coords_.tail(coords_.size() - 1); }

private:
    explicit LorentzPoint(Vector c) : coords_(std::move(c)) {}
    Vector coords_;
};

inline double lorentz_inner(const LorentzPoint& x, const LorentzPoint& y) {
    return lorentz_inner(x.coords(), y.coords());
}

inline LorentzPoint reproject(Vector x) { return LorentzPoint::reproject(std::move(x)); }

class TangentVector {
public:
    /// Checks <base, vec>_L = 0 within tolerance (scaled by the magnitudes).
    static TangentVector at(LorentzPoint base, Vector vec) {
        if (vec.size() != base.coords().size()) {
            throw Error(ErrorCode::dimension, "tangent vector length does not match base point");
        }
        if (!vec.allFinite()) throw Error(ErrorCode::invalid_tangent, "non-finite tangent vector");
        const double ip = lorentz_inner(base.coords(), vec);
        const double scale = std::max(1.0, base.coords().cwiseAbs().maxCoeff() * vec.cwiseAbs().maxCoeff());
        if (std::abs(ip) > kManifoldTol * scale) {
            throw Error(ErrorCode::invalid_tangent, "<base, v>_L = " + std::to_string(ip));
        }
        return TangentVector(std::move(base), std::move(vec));
    }

    /// Orthogonal projection of an ambient vector onto T_base: u + <base,u>_L base.
    static TangentVector project(LorentzPoint base, const Vector& ambient) {
        if (ambient.size() != base.coords().size()) {
            throw Error(ErrorCode::dimension, "tangent projection: length mismatch");
        }
        Vector v = ambient + lorentz_inner(base.coords(), ambient) * base.coords();
        return TangentVector(std::move(base), std::move(v));
    }

    static TangentVector zero(LorentzPoint base) {
        Vector v = Vector::Zero(base.coords().size());
        return TangentVector(std::move(base), std::move(v));
    }

    const LorentzPoint& base() const noexcept { return base_; }
    const Vector& vec() const noexcept { return vec_; }

private:
    TangentVector(LorentzPoint b, Vector v) : base_(std::move(b)), vec_(std::move(v)) {}
    LorentzPoint base_;
    Vector vec_;
};

namespace detail {

template <ErrorCode Code>
class UnitBallPoint {
public:
    explicit UnitBallPoint(Vector coords) : coords_(std::move(coords)) {
        if (coords_.size() < 1) throw Error(ErrorCode::dimension, "ball point needs at least 1 coordinate");
        if (!coords_.allFinite()) throw Error(Code, "non-finite coordinates");
        const double r = coords_.norm();
        if (!(r < 1.0 - kBallMargin)) throw Error(Code, "norm " + std::to_string(r) + " >= 1");
    }

    const Vector& coords() const noexcept { return coords_; }
    Eigen::Index dim() const noexcept { return coords_.size(); }

private:
    Vector coords_;
};

} // namespace detail

using PoincarePoint = detail::UnitBallPoint<ErrorCode::out_of_ball>;
using KleinPoint = detail::UnitBallPoint<ErrorCode::out_of_model>;

inline double lorentz_norm(const TangentVector& v) {
    const double sq = lorentz_inner(v.vec(), v.vec());
    if (sq < -kManifoldTol) throw Error(ErrorCode::invalid_tangent, "<v,v>_L = " + std::to_string(sq));
    return std::sqrt(std::max(0.0, sq));
}

inline LorentzPoint exp_map(const LorentzPoint& x, const TangentVector& v) {
    if (v.base().coords().size() != x.coords().size()) {
        throw Error(ErrorCode::dimension, "exp_map: tangent vector dimension mismatch");
    }
    const double n = lorentz_norm(v);
    if (n < kZeroNorm) return x;
    if (n > kMaxTangentNorm) throw Error(ErrorCode::overflow, "exp_map: tangent norm " + std::to_string(n));
    Vector y = std::cosh(n) * x.coords() + (std::sinh(n) / n) * v.vec();
    return LorentzPoint::reproject(std::move(y));
}

inline TangentVector log_map(const LorentzPoint& x, const LorentzPoint& y) {
    const double ip = lorentz_inner(x, y);
    const double alpha = -ip;
    if (alpha < 1.0 - kManifoldTol) {
        throw Error(ErrorCode::not_on_manifold, "log_map: -<x,y>_L = " + std::to_string(alpha) + " < 1");
    }
    if (alpha <= 1.0 + kZeroNorm) return TangentVector::zero(x);
    const double coef = std::acosh(alpha) / std::sqrt(alpha * alpha - 1.0);
    Vector v = coef * (y.coords() + ip * x.coords());
    // Remove the component along x that rounding leaves behind.
    return TangentVector::project(x, v);
}

inline PoincarePoint to_poincare(const LorentzPoint& x) {
    return PoincarePoint(Vector(x.spatial() / (x.time() + 1.0)));
}

inline LorentzPoint from_poincare(const PoincarePoint& b) {
    const double sq = b.coords().squaredNorm();
    Vector x(b.dim() + 1);
    x[0] = (1.0 + sq) / (1.0 - sq);
    x.tail(b.dim()) = (2.0 / (1.0 - sq)) * b.coords();
    return LorentzPoint::reproject(std::move(x));
}

inline KleinPoint to_klein(const LorentzPoint& x) { return KleinPoint(Vector(x.spatial() / x.time())); }

inline LorentzPoint from_klein(const KleinPoint& k) {
    const double inv = 1.0 / std::sqrt(1.0 - k.coords().squaredNorm());
    Vector x(k.dim() + 1);
    x[0] = inv;
    x.tail(k.dim()) = inv * k.coords();
    return LorentzPoint::reproject(std::move(x));
}

inline double lorentz_factor(const KleinPoint& k) { return 1.0 / std::sqrt(1.0 - k.coords().squaredNorm()); }

/// How the Einstein-midpoint sum is normalized.
enum class Aggregation {
    literal,  ///< sum_j w_j g_j k_j / sum_j g_j  (weights in the numerator only)
    weighted, ///< sum_j w_j g_j k_j / sum_j w_j g_j (textbook weighted midpoint)
};

struct MidpointResult {
    KleinPoint point;
    bool clamped = false;
};

/// Rescales a Klein-coordinate vector to the clamp radius if it lies beyond
/// it. Returns true when the vector was modified.
inline bool clamp_to_ball(Eigen::Ref<Vector> k) {
    const double r = k.norm();
    if (!std::isfinite(r)) throw Error(ErrorCode::non_finite, "aggregated point is not finite");
    if (r <= kClampRadius) return false;
    k *= kClampRadius / r;
    return true;
}

inline MidpointResult einstein_midpoint(std::span<const KleinPoint> points, std::span<const double> weights,
                                        Aggregation mode = Aggregation::literal) {
    if (points.empty()) throw Error(ErrorCode::empty_aggregation, "no points to aggregate");
    if (points.size() != weights.size()) {
        throw Error(ErrorCode::dimension, "einstein_midpoint: " + std::to_string(points.size()) + " points, " +
                                              std::to_string(weights.size()) + " weights");
    }
    const Eigen::Index n = points.front().dim();
    Vector num = Vector::Zero(n);
    double den = 0.0;
    for (std::size_t j = 0; j < points.size(); ++j) {
        if (points[j].dim() != n) throw Error(ErrorCode::dimension, "einstein_midpoint: mixed dimensions");
        if (!(weights[j] >= 0.0)) throw Error(ErrorCode::invalid_argument, "negative or NaN aggregation weight");
        const double g = lorentz_factor(points[j]);
        num += (weights[j] * g) * points[j].coords();
        den += mode == Aggregation::literal ? g : weights[j] * g;
    }
    if (!(den > 0.0)) throw Error(ErrorCode::empty_aggregation, "all aggregation weights are zero");
    num /= den;
    const bool clamped = clamp_to_ball(num);
    return MidpointResult{KleinPoint(std::move(num)), clamped};
}

/// Lifts Euclidean rows onto the hyperboloid through exp at the origin.
/// Rows are first rescaled by scale / max_row_norm when that max exceeds
/// `scale`, which bounds every lifted point's distance from the origin.
/// Returns an N x (d+1) matrix of Lorentz coordinates.
inline Matrix lift_features_matrix(const Matrix& f, double scale) {
    if (!(scale > 0.0)) throw Error(ErrorCode::invalid_argument, "feature scale must be positive");
    if (!f.allFinite()) throw Error(ErrorCode::invalid_feature, "features contain non-finite values");
    const Eigen::Index d = f.cols();
    if (d < 1) throw Error(ErrorCode::dimension, "features need at least one column");
    const double max_norm = f.rows() > 0 ? f.rowwise().norm().maxCoeff() : 0.0;
    const double factor = max_norm > scale ? scale / max_norm : 1.0;

    const LorentzPoint o = LorentzPoint::origin(d);
    Matrix out(f.rows(), d + 1);
    Vector v(d + 1);
    for (Eigen::Index i = 0; i < f.rows(); ++i) {
        v[0] = 0.0;
        v.tail(d) = factor * f.row(i).transpose();
        out.row(i) = exp_map(o, TangentVector::at(o, v)).coords().transpose();
    }
    return out;
}

inline std::vector<LorentzPoint> lift_features(const Matrix& f, double scale) {
    const Matrix lifted = lift_features_matrix(f, scale);
    std::vector<LorentzPoint> out;
    out.reserve(static_cast<std::size_t>(lifted.rows()));
    for (Eigen::Index i = 0; i < lifted.rows(); ++i) {
        out.push_back(LorentzPoint::reproject(lifted.row(i).transpose()));
    }
    return out;
}

} // namespace manifold
} // namespace seghgnn
