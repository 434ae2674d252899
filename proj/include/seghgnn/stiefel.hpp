#pragma once

// Orthonormal-column matrices (Stiefel manifold) and plain Riemannian SGD
// with a QR retraction. The spatial block of the Lorentz linear transform
// lives here.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "seghgnn/error.hpp"
#include "seghgnn/manifold.hpp"

namespace seghgnn {
namespace stiefel {

inline constexpr double kOrthonormalTol = 1e-6;

inline double orthonormality_error(const Matrix& w) {
    return (w.transpose() * w - Matrix::Identity(w.cols(), w.cols())).norm();
}

namespace detail {

/// Q factor of a thin QR with the sign convention diag(R) > 0.
inline Matrix qr_q_positive(const Matrix& a) {
    const Eigen::Index n = a.rows();
    const Eigen::Index m = a.cols();
    Eigen::HouseholderQR<Matrix> qr(a);
    Matrix q = qr.householderQ() * Matrix::Identity(n, m);
    const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < m; ++j) {
        const double r = qr.matrixQR()(j, j);
        if (!(std::abs(r) > 1e-10 * scale)) {
            throw Error(ErrorCode::retraction_failure, "rank-deficient matrix in QR (column " + std::to_string(j) + ")");
        }
        if (r < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

} // namespace detail

class StiefelMatrix {
public:
    /// Validates orthonormal columns (rows >= cols) within kOrthonormalTol.
    static StiefelMatrix from_matrix(Matrix m) {
        if (m.rows() < 1 || m.cols() < 1 || m.rows() < m.cols()) {
            throw Error(ErrorCode::dimension, "Stiefel matrix must be n x m with n >= m >= 1");
        }
        if (!m.allFinite()) throw Error(ErrorCode::non_finite, "Stiefel matrix has non-finite entries");
        const double err = orthonormality_error(m);
        if (!(err < kOrthonormalTol)) {
            throw Error(ErrorCode::invalid_argument, "columns not orthonormal, |W^T W - I|_F = " + std::to_string(err));
        }
        return StiefelMatrix(std::move(m));
    }

    const Matrix& mat() const noexcept { return mat_; }
    Eigen::Index rows() const noexcept { return mat_.rows(); }
    Eigen::Index cols() const noexcept { return mat_.cols(); }

private:
    friend StiefelMatrix init_stiefel(Eigen::Index, Eigen::Index, std::uint64_t);
    friend StiefelMatrix retract(const StiefelMatrix&, const Matrix&, double);
    explicit StiefelMatrix(Matrix m) : mat_(std::move(m)) {}
    Matrix mat_;
};

/// Q factor of the QR decomposition of an n x m standard Gaussian draw.
inline StiefelMatrix init_stiefel(Eigen::Index n, Eigen::Index m, std::uint64_t seed) {
    if (n < 1 || m < 1 || n < m) throw Error(ErrorCode::dimension, "init_stiefel needs n >= m >= 1");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Matrix g(n, m);
    for (Eigen::Index j = 0; j < m; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) g(i, j) = normal(rng);
    }
    return StiefelMatrix(detail::qr_q_positive(g));
}

inline StiefelMatrix init_stiefel(Eigen::Index n, std::uint64_t seed) { return init_stiefel(n, n, seed); }

/// Projection of an ambient gradient onto the tangent space at w:
/// G - W sym(W^T G).
inline Matrix tangent_project(const StiefelMatrix& w, const Matrix& g) {
    if (g.rows() != w.rows() || g.cols() != w.cols()) {
        throw Error(ErrorCode::shape_mismatch, "tangent_project: gradient shape does not match W");
    }
    const Matrix wtg = w.mat().transpose() * g;
    return g - w.mat() * (0.5 * (wtg + wtg.transpose()));
}

/// QR retraction of W - step * xi.
inline StiefelMatrix retract(const StiefelMatrix& w, const Matrix& xi, double step) {
    if (xi.rows() != w.rows() || xi.cols() != w.cols()) {
        throw Error(ErrorCode::shape_mismatch, "retract: tangent shape does not match W");
    }
    const Matrix moved = w.mat() - step * xi;
    if (!moved.allFinite()) throw Error(ErrorCode::non_finite, "retract: non-finite step");
    return StiefelMatrix(detail::qr_q_positive(moved));
}

inline StiefelMatrix rsgd_step(const StiefelMatrix& w, const Matrix& g, double lr) {
    return retract(w, tangent_project(w, g), lr);
}

/// W = [[1, 0^T], [0, W~]]; the block structure is applied, never stored.
class LorentzTransform {
public:
    explicit LorentzTransform(StiefelMatrix s) : stiefel_(std::move(s)) {}

    const StiefelMatrix& stiefel() const noexcept { return stiefel_; }
    void set_stiefel(StiefelMatrix s) { stiefel_ = std::move(s); }

    Eigen::Index in_dim() const noexcept { return stiefel_.cols(); }
    Eigen::Index out_dim() const noexcept { return stiefel_.rows(); }

private:
    StiefelMatrix stiefel_;
};

/// y0 = x0, y_{1:} = W~ x_{1:}, re-projected onto the hyperboloid.
inline manifold::LorentzPoint apply_lorentz_linear(const LorentzTransform& w, const manifold::LorentzPoint& x) {
    if (x.dim() != w.in_dim()) {
        throw Error(ErrorCode::dimension, "apply_lorentz_linear: point has " + std::to_string(x.dim()) +
                                              " spatial coordinates, transform expects " + std::to_string(w.in_dim()));
    }
    Vector y(w.out_dim() + 1);
    y[0] = x.time();
    y.tail(w.out_dim()) = w.stiefel().mat() * x.spatial();
    return manifold::LorentzPoint::reproject(std::move(y));
}

} // namespace stiefel
} // namespace seghgnn
