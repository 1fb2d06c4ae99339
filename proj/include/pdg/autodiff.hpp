#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "pdg/errors.hpp"

namespace pdg::ad {

class Tape;

// A scalar on a recorded computation graph. A Var with a null tape is a
// plain constant; arithmetic between constants folds immediately and never
// touches a tape.
struct Var {
    double v = 0.0;
    std::int32_t idx = -1;
    Tape* tape = nullptr;

    Var() = default;
    Var(double value) : v(value) {}  // NOLINT: implicit, constants everywhere
};

// Reverse-mode tape. Each node stores the local partials with respect to
// its (at most two) parents, so the backward pass is a single linear sweep
// that never re-reads values.
class Tape {
public:
    Var leaf(double value) {
        return push(value, 0.0, -1, 0.0, -1);
    }

    Var unary(double value, double dw, const Var& a) {
        return push(value, dw, a.idx, 0.0, -1);
    }

    Var binary(double value, double dwa, const Var& a, double dwb, const Var& b) {
        return push(value, dwa, a.idx, dwb, b.idx);
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() { nodes_.clear(); }

    void reserve(std::size_t n) { nodes_.reserve(n); }

    // Fills `adjoint` (indexed by node) with d(output)/d(node). Nodes
    // recorded after `output` are ignored.
    void backward(const Var& output, std::vector<double>& adjoint) const;

    std::vector<double> gradient(const Var& output) const {
        std::vector<double> adjoint;
        backward(output, adjoint);
        return adjoint;
    }

private:
    struct Node {
        double wa, wb;
        std::int32_t pa, pb;
    };

    Var push(double value, double wa, std::int32_t pa, double wb, std::int32_t pb) {
        if (nodes_.size() >= static_cast<std::size_t>(INT32_MAX))
            throw NumericError("autodiff tape exceeded 2^31 nodes");
        nodes_.push_back(Node{wa, wb, pa, pb});
        Var out;
        out.v = value;
        out.idx = static_cast<std::int32_t>(nodes_.size() - 1);
        out.tape = this;
        return out;
    }

    std::vector<Node> nodes_;
};

namespace detail {

// Routes an operation result through whichever operands are on a tape.
inline Var combine(double value, const Var& a, double da, const Var& b, double db) {
    if (a.tape && b.tape) {
        assert(a.tape == b.tape && "operands recorded on different tapes");
        return a.tape->binary(value, da, a, db, b);
    }
    if (a.tape) return a.tape->unary(value, da, a);
    if (b.tape) return b.tape->unary(value, db, b);
    return Var(value);
}

inline Var apply(double value, double dw, const Var& a) {
    return a.tape ? a.tape->unary(value, dw, a) : Var(value);
}

}  // namespace detail

inline Var operator+(const Var& a, const Var& b) { return detail::combine(a.v + b.v, a, 1.0, b, 1.0); }
inline Var operator-(const Var& a, const Var& b) { return detail::combine(a.v - b.v, a, 1.0, b, -1.0); }
inline Var operator*(const Var& a, const Var& b) { return detail::combine(a.v * b.v, a, b.v, b, a.v); }
inline Var operator/(const Var& a, const Var& b) {
    const double inv = 1.0 / b.v;
    return detail::combine(a.v * inv, a, inv, b, -a.v * inv * inv);
}
inline Var operator-(const Var& a) { return detail::apply(-a.v, -1.0, a); }
inline Var operator+(const Var& a) { return a; }

inline Var& operator+=(Var& a, const Var& b) { return a = a + b; }
inline Var& operator-=(Var& a, const Var& b) { return a = a - b; }
inline Var& operator*=(Var& a, const Var& b) { return a = a * b; }
inline Var& operator/=(Var& a, const Var& b) { return a = a / b; }

inline bool operator<(const Var& a, const Var& b) { return a.v < b.v; }
inline bool operator>(const Var& a, const Var& b) { return a.v > b.v; }
inline bool operator<=(const Var& a, const Var& b) { return a.v <= b.v; }
inline bool operator>=(const Var& a, const Var& b) { return a.v >= b.v; }
inline bool operator==(const Var& a, const Var& b) { return a.v == b.v; }
inline bool operator!=(const Var& a, const Var& b) { return a.v != b.v; }

inline Var exp(const Var& a) {
    const double e = std::exp(a.v);
    return detail::apply(e, e, a);
}

inline Var log(const Var& a) { return detail::apply(std::log(a.v), 1.0 / a.v, a); }

inline Var sqrt(const Var& a) {
    const double s = std::sqrt(a.v);
    return detail::apply(s, 0.5 / s, a);
}

inline Var abs(const Var& a) {
    return detail::apply(std::abs(a.v), a.v < 0.0 ? -1.0 : 1.0, a);
}

// x^c for a constant exponent c.
inline Var pow_const(const Var& a, double c) {
    return detail::apply(std::pow(a.v, c), c * std::pow(a.v, c - 1.0), a);
}

// max(x, 0) with subgradient 0 at the kink.
inline Var relu(const Var& a) {
    return a.v > 0.0 ? detail::apply(a.v, 1.0, a) : detail::apply(0.0, 0.0, a);
}

// ln(1 + e^x), computed on whichever side avoids overflow.
inline Var softplus(const Var& a) {
    const double x = a.v;
    const double value = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    const double sig = x > 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    return detail::apply(value, sig, a);
}

// Cuts the tape: the result carries the same value but no history.
inline Var detach(const Var& a) { return Var(a.v); }

// Support for fused operations: forward values computed in plain double
// arithmetic, with hand-coded partial derivatives attached afterwards. Each
// add() chains one node carrying the weight d(result)/d(parent); finish()
// stamps the true value on the head of the chain. Intermediate node values
// are never read by the backward sweep (it uses the stored partials only).
class LinearPullback {
public:
    void add(const Var& parent, double weight) {
        if (parent.tape == nullptr || weight == 0.0) return;
        if (acc_.tape == nullptr) acc_ = parent.tape->unary(0.0, weight, parent);
        else acc_ = acc_.tape->binary(0.0, 1.0, acc_, weight, parent);
    }

    Var finish(double value) {
        if (acc_.tape == nullptr) return Var(value);
        return acc_.tape->unary(value, 1.0, acc_);
    }

private:
    Var acc_;
};

// Eigen NumTraits support.
inline Var conj(const Var& a) { return a; }
inline Var real(const Var& a) { return a; }
inline Var imag(const Var&) { return Var(0.0); }
inline Var abs2(const Var& a) { return a * a; }

std::ostream& operator<<(std::ostream& os, const Var& a);

}  // namespace pdg::ad

namespace Eigen {

template <>
struct NumTraits<pdg::ad::Var> : NumTraits<double> {
    typedef pdg::ad::Var Real;
    typedef pdg::ad::Var NonInteger;
    typedef pdg::ad::Var Nested;
    typedef double Literal;
    enum {
        IsComplex = 0,
        IsInteger = 0,
        IsSigned = 1,
        RequireInitialization = 1,
        ReadCost = 1,
        AddCost = 3,
        MulCost = 3
    };
    static inline Real epsilon() { return Real(NumTraits<double>::epsilon()); }
    static inline Real dummy_precision() { return Real(NumTraits<double>::dummy_precision()); }
    static inline Real highest() { return Real(NumTraits<double>::highest()); }
    static inline Real lowest() { return Real(NumTraits<double>::lowest()); }
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<pdg::ad::Var, double, BinaryOp> {
    typedef pdg::ad::Var ReturnType;
};

template <typename BinaryOp>
struct ScalarBinaryOpTraits<double, pdg::ad::Var, BinaryOp> {
    typedef pdg::ad::Var ReturnType;
};

}  // namespace Eigen
