#pragma once

#include <cmath>

#include <Eigen/Core>

namespace pdg {

template <class Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <class Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// double counterparts of the autodiff math functions, so that code templated
// on the scalar type picks the right overload by argument-dependent lookup.
using std::abs;
using std::exp;
using std::log;
using std::sqrt;

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

inline double pow_const(double x, double c) { return std::pow(x, c); }

inline double softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

// Inverse of softplus: the rho with softplus(rho) == y (up to rounding).
inline double softplus_inverse(double y) {
    return y > 30.0 ? y : std::log(std::expm1(y));
}

inline double detach(double x) { return x; }

inline double value_of(double x) { return x; }

template <class V>
inline auto value_of(const V& x) -> decltype(x.v) {
    return x.v;
}

}  // namespace pdg
