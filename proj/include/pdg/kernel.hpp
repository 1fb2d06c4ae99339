#pragma once

#include <cmath>
#include <string>
#include <type_traits>

#include <Eigen/Core>

#include "pdg/autodiff.hpp"
#include "pdg/errors.hpp"
#include "pdg/scalar_ops.hpp"

namespace pdg {

enum class MmdEstimator { biased_v_statistic, unbiased_u_statistic };

// Bandwidths of the level-1 and level-2 Gaussian RBF kernels. Both kernels
// use the exp(-lambda/2 * d^2) convention, with the bandwidth exposed as
// lambda rather than sigma.
struct KernelConfig {
    double lambda1 = 1.0;
    double lambda2 = 1.0;
    MmdEstimator estimator = MmdEstimator::biased_v_statistic;

    void validate() const {
        if (!(lambda1 > 0.0) || !std::isfinite(lambda1))
            throw ValidationError("KernelConfig: lambda1 must be positive and finite");
        if (!(lambda2 > 0.0) || !std::isfinite(lambda2))
            throw ValidationError("KernelConfig: lambda2 must be positive and finite");
    }
};

namespace detail {

template <class Derived>
void require_all_finite(const Eigen::MatrixBase<Derived>& m, const char* what) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(value_of(m(i, j))))
                throw ValidationError(std::string(what) + ": non-finite input value");
}

// Accumulated squared distances can dip a hair below zero through the
// norm-expansion route; values in [-1e-12, 0) are treated as exact zeros.
template <class Scalar>
Scalar clamp_tiny_negative(const Scalar& x) {
    const double v = value_of(x);
    if (v < 0.0 && v >= -1e-12) return Scalar(0.0);
    return x;
}

// mean_{i,j} k(A_i, B_j) over the rows of A and B, with squared distances
// expanded as ||a||^2 + ||b||^2 - 2<a,b> and tiny negatives clamped to zero.
// This is both the block unit of MMD^2 and the empirical kernel mean
// embedding inner product.
//
// For plain scalars it is a straightforward loop. On the autodiff scalar the
// whole block is fused: the value and the partial derivatives with respect
// to every sample entry are computed in double arithmetic (same expressions,
// same accumulation order) and attached to the tape through LinearPullback,
// which keeps the recorded graph small on the training hot path.
template <class Scalar>
Scalar mean_kernel_block(const MatrixX<Scalar>& A, const MatrixX<Scalar>& B, double lambda) {
    const Eigen::Index n = A.rows(), m = B.rows(), d = A.cols();

    if constexpr (std::is_same_v<Scalar, ad::Var>) {
        Eigen::MatrixXd av(n, d), bv(m, d);
        for (Eigen::Index k = 0; k < av.size(); ++k) av.data()[k] = A.data()[k].v;
        for (Eigen::Index k = 0; k < bv.size(); ++k) bv.data()[k] = B.data()[k].v;

        Eigen::VectorXd sa(n), sb(m);
        for (Eigen::Index i = 0; i < n; ++i) sa(i) = av.row(i).dot(av.row(i));
        for (Eigen::Index j = 0; j < m; ++j) sb(j) = bv.row(j).dot(bv.row(j));

        const double inv_count = 1.0 / static_cast<double>(n * m);
        Eigen::MatrixXd grad_a = Eigen::MatrixXd::Zero(n, d);
        Eigen::MatrixXd grad_b = Eigen::MatrixXd::Zero(m, d);
        double sum = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                const double d2_raw = sa(i) + sb(j) - 2.0 * av.row(i).dot(bv.row(j));
                const double kv = std::exp(-0.5 * lambda * relu(d2_raw));
                sum += kv;
                if (d2_raw > 0.0) {
                    const double scale = -lambda * kv * inv_count;
                    grad_a.row(i) += scale * (av.row(i) - bv.row(j));
                    grad_b.row(j) += scale * (bv.row(j) - av.row(i));
                }
            }
        }

        ad::LinearPullback pullback;
        for (Eigen::Index k = 0; k < A.size(); ++k) pullback.add(A.data()[k], grad_a.data()[k]);
        for (Eigen::Index k = 0; k < B.size(); ++k) pullback.add(B.data()[k], grad_b.data()[k]);
        return pullback.finish(sum * inv_count);
    } else {
        VectorX<Scalar> sa(n), sb(m);
        for (Eigen::Index i = 0; i < n; ++i) sa(i) = A.row(i).dot(A.row(i));
        for (Eigen::Index j = 0; j < m; ++j) sb(j) = B.row(j).dot(B.row(j));
        Scalar sum(0.0);
        for (Eigen::Index i = 0; i < n; ++i) {
            for (Eigen::Index j = 0; j < m; ++j) {
                const Scalar d2 = relu(sa(i) + sb(j) - 2.0 * A.row(i).dot(B.row(j)));
                sum += exp(-0.5 * lambda * d2);
            }
        }
        return sum / static_cast<double>(n * m);
    }
}

}  // namespace detail

// Level-1 Gaussian RBF kernel: k(x, y) = exp(-lambda1/2 * ||x - y||^2).
template <class Scalar>
Scalar rbf_kernel(const KernelConfig& cfg, const VectorX<Scalar>& x, const VectorX<Scalar>& y) {
    cfg.validate();
    if (x.size() != y.size())
        throw ShapeError("rbf_kernel: vectors have dimensions " + std::to_string(x.size()) +
                         " and " + std::to_string(y.size()));
    detail::require_all_finite(x, "rbf_kernel");
    detail::require_all_finite(y, "rbf_kernel");
    const Scalar dist_sq = (x - y).squaredNorm();
    return exp(-0.5 * cfg.lambda1 * dist_sq);
}

// Pairwise kernel matrix between the rows of X and the rows of Y.
// Squared distances come from ||x||^2 + ||y||^2 - 2<x,y> with the row norms
// computed by the same dot-product reduction as the cross terms, so
// distances between equal rows are exactly zero.
template <class Scalar>
MatrixX<Scalar> gram_matrix(const KernelConfig& cfg, const MatrixX<Scalar>& X,
                            const MatrixX<Scalar>& Y) {
    cfg.validate();
    if (X.cols() != Y.cols())
        throw ShapeError("gram_matrix: point sets have dimensions " + std::to_string(X.cols()) +
                         " and " + std::to_string(Y.cols()));
    if (X.rows() < 1 || Y.rows() < 1)
        throw ValidationError("gram_matrix: point sets must be nonempty");
    detail::require_all_finite(X, "gram_matrix");
    detail::require_all_finite(Y, "gram_matrix");

    const Eigen::Index n = X.rows(), m = Y.rows();
    VectorX<Scalar> sx(n), sy(m);
    for (Eigen::Index i = 0; i < n; ++i) sx(i) = X.row(i).dot(X.row(i));
    for (Eigen::Index j = 0; j < m; ++j) sy(j) = Y.row(j).dot(Y.row(j));

    MatrixX<Scalar> K(n, m);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < m; ++j) {
            const Scalar d2 = relu(sx(i) + sy(j) - 2.0 * X.row(i).dot(Y.row(j)));
            K(i, j) = exp(-0.5 * cfg.lambda1 * d2);
        }
    }
    return K;
}

// Empirical squared MMD between two point sets:
//   MMD^2 = mean k(x,x') + mean k(y,y') - 2 mean k(x,y).
// The biased V-statistic keeps the diagonal terms and is clamped to be
// non-negative; the unbiased U-statistic drops them and may be negative.
template <class Scalar>
Scalar mmd2(const KernelConfig& cfg, const MatrixX<Scalar>& X, const MatrixX<Scalar>& Y) {
    cfg.validate();
    if (X.rows() < 1 || Y.rows() < 1) throw ValidationError("mmd2: point sets must be nonempty");
    if (X.cols() != Y.cols())
        throw ShapeError("mmd2: point sets have dimensions " + std::to_string(X.cols()) + " and " +
                         std::to_string(Y.cols()));
    if (cfg.estimator == MmdEstimator::unbiased_u_statistic && (X.rows() < 2 || Y.rows() < 2))
        throw ValidationError("mmd2: unbiased estimator needs at least 2 points per set");

    if (cfg.estimator == MmdEstimator::biased_v_statistic) {
        detail::require_all_finite(X, "mmd2");
        detail::require_all_finite(Y, "mmd2");
        const Scalar result = detail::mean_kernel_block(X, X, cfg.lambda1) +
                              detail::mean_kernel_block(Y, Y, cfg.lambda1) -
                              2.0 * detail::mean_kernel_block(X, Y, cfg.lambda1);
        return detail::clamp_tiny_negative(result);
    }

    const MatrixX<Scalar> Kxx = gram_matrix(cfg, X, X);
    const MatrixX<Scalar> Kyy = gram_matrix(cfg, Y, Y);
    const MatrixX<Scalar> Kxy = gram_matrix(cfg, X, Y);
    const double n = static_cast<double>(X.rows());
    const double m = static_cast<double>(Y.rows());

    Scalar sum_xx(0.0), sum_yy(0.0);
    for (Eigen::Index i = 0; i < Kxx.rows(); ++i)
        for (Eigen::Index j = 0; j < Kxx.cols(); ++j)
            if (i != j) sum_xx += Kxx(i, j);
    for (Eigen::Index i = 0; i < Kyy.rows(); ++i)
        for (Eigen::Index j = 0; j < Kyy.cols(); ++j)
            if (i != j) sum_yy += Kyy(i, j);
    return sum_xx / (n * (n - 1.0)) + sum_yy / (m * (m - 1.0)) - 2.0 * (Kxy.sum() / (n * m));
}

}  // namespace pdg
