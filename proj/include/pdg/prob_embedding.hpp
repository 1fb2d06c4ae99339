#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pdg/errors.hpp"
#include "pdg/kernel.hpp"
#include "pdg/rng.hpp"
#include "pdg/scalar_ops.hpp"

namespace pdg {

// A data point's latent distribution, materialized as T Monte Carlo sample
// vectors (one per stochastic forward pass). Row order carries no meaning.
template <class Scalar>
struct ProbEmbeddingT {
    MatrixX<Scalar> samples;  // T x d

    Eigen::Index draws() const { return samples.rows(); }
    Eigen::Index dim() const { return samples.cols(); }
};

using ProbEmbedding = ProbEmbeddingT<double>;

// One domain's labeled collection of probabilistic embeddings.
template <class Scalar>
struct DomainEmbeddingsT {
    std::vector<ProbEmbeddingT<Scalar>> members;
    std::vector<int> labels;
};

using DomainEmbeddings = DomainEmbeddingsT<double>;

enum class GlobalMode { quadratic, linear };
enum class PmmdWeighting { plug_in, unbiased_u_statistic };

namespace detail {

// Per-cloud scratch shared by all pairwise level-2 evaluations: the
// kernel-mean self inner product is needed once per member, not per pair.
template <class Scalar>
struct CloudCache {
    const MatrixX<Scalar>* samples = nullptr;
    Scalar self_inner{};
};

// <mu_A, mu_B> = mean_{i,j} k(a_i, b_j).
template <class Scalar>
Scalar cross_inner(const CloudCache<Scalar>& a, const CloudCache<Scalar>& b, double lambda1) {
    return detail::mean_kernel_block(*a.samples, *b.samples, lambda1);
}

template <class Scalar>
CloudCache<Scalar> make_cloud_cache(const MatrixX<Scalar>& samples, double lambda1) {
    CloudCache<Scalar> cache;
    cache.samples = &samples;
    cache.self_inner = detail::mean_kernel_block(samples, samples, lambda1);
    return cache;
}

// Level-2 Gaussian RBF kernel on kernel mean embeddings:
//   K(A, B) = exp(-lambda2/2 * (<mu_A,mu_A> - 2<mu_A,mu_B> + <mu_B,mu_B>)).
template <class Scalar>
Scalar level2_from_caches(const KernelConfig& cfg, const CloudCache<Scalar>& a,
                          const CloudCache<Scalar>& b) {
    if (&a == &b) return Scalar(1.0);
    const Scalar cross = cross_inner(a, b, cfg.lambda1);
    const Scalar h = a.self_inner - 2.0 * cross + b.self_inner;
    return exp(-0.5 * cfg.lambda2 * h);
}

template <class Scalar>
std::vector<CloudCache<Scalar>> make_caches(const std::vector<ProbEmbeddingT<Scalar>>& domain,
                                            double lambda1) {
    std::vector<CloudCache<Scalar>> caches;
    caches.reserve(domain.size());
    for (const auto& member : domain) caches.push_back(make_cloud_cache(member.samples, lambda1));
    return caches;
}

template <class Scalar>
void check_domain(const std::vector<ProbEmbeddingT<Scalar>>& domain, Eigen::Index& dim,
                  const char* what) {
    if (domain.empty()) throw ValidationError(std::string(what) + ": empty embedding list");
    for (const auto& member : domain) {
        if (member.samples.rows() < 1)
            throw ValidationError(std::string(what) + ": embedding with no samples");
        if (dim < 0) dim = member.samples.cols();
        if (member.samples.cols() != dim)
            throw ShapeError(std::string(what) + ": embeddings mix dimensions " +
                             std::to_string(dim) + " and " + std::to_string(member.samples.cols()));
    }
}

// Mean of level2 over all ordered (i, j) pairs of two cache lists,
// including i == j when the lists coincide.
template <class Scalar>
Scalar level2_block_mean(const KernelConfig& cfg, const std::vector<CloudCache<Scalar>>& a,
                         const std::vector<CloudCache<Scalar>>& b) {
    Scalar sum(0.0);
    for (const auto& ca : a)
        for (const auto& cb : b) sum += level2_from_caches(cfg, ca, cb);
    return sum / static_cast<double>(a.size() * b.size());
}

template <class Scalar>
Scalar pmmd2_from_caches(const KernelConfig& cfg, const std::vector<CloudCache<Scalar>>& dl,
                         const std::vector<CloudCache<Scalar>>& dt, PmmdWeighting weighting) {
    const double nl = static_cast<double>(dl.size());
    const double nt = static_cast<double>(dt.size());
    const Scalar cross_mean = level2_block_mean(cfg, dl, dt);

    if (weighting == PmmdWeighting::plug_in) {
        const Scalar result = level2_block_mean(cfg, dl, dl) + level2_block_mean(cfg, dt, dt) -
                              2.0 * cross_mean;
        return clamp_tiny_negative(result);
    }

    if (dl.size() < 2 || dt.size() < 2)
        throw ValidationError("pmmd2: unbiased weighting needs at least 2 members per domain");
    Scalar sum_ll(0.0), sum_tt(0.0);
    for (std::size_t i = 0; i < dl.size(); ++i)
        for (std::size_t j = 0; j < dl.size(); ++j)
            if (i != j) sum_ll += level2_from_caches(cfg, dl[i], dl[j]);
    for (std::size_t i = 0; i < dt.size(); ++i)
        for (std::size_t j = 0; j < dt.size(); ++j)
            if (i != j) sum_tt += level2_from_caches(cfg, dt[i], dt[j]);
    return sum_ll / (nl * (nl - 1.0)) + sum_tt / (nt * (nt - 1.0)) - 2.0 * cross_mean;
}

}  // namespace detail

// Empirical kernel mean embedding inner product between two sample clouds.
template <class Scalar>
Scalar kme_inner(const KernelConfig& cfg, const ProbEmbeddingT<Scalar>& A,
                 const ProbEmbeddingT<Scalar>& B) {
    cfg.validate();
    if (A.samples.rows() < 1 || B.samples.rows() < 1)
        throw ValidationError("kme_inner: embeddings must be nonempty");
    if (A.samples.cols() != B.samples.cols())
        throw ShapeError("kme_inner: embeddings have dimensions " +
                         std::to_string(A.samples.cols()) + " and " +
                         std::to_string(B.samples.cols()));
    const auto ca = detail::make_cloud_cache(A.samples, cfg.lambda1);
    const auto cb = detail::make_cloud_cache(B.samples, cfg.lambda1);
    return detail::cross_inner(ca, cb, cfg.lambda1);
}

template <class Scalar>
Scalar level2_kernel(const KernelConfig& cfg, const ProbEmbeddingT<Scalar>& A,
                     const ProbEmbeddingT<Scalar>& B) {
    cfg.validate();
    if (A.samples.rows() < 1 || B.samples.rows() < 1)
        throw ValidationError("level2_kernel: embeddings must be nonempty");
    if (A.samples.cols() != B.samples.cols())
        throw ShapeError("level2_kernel: embeddings have dimensions " +
                         std::to_string(A.samples.cols()) + " and " +
                         std::to_string(B.samples.cols()));
    const auto ca = detail::make_cloud_cache(A.samples, cfg.lambda1);
    const auto cb = detail::make_cloud_cache(B.samples, cfg.lambda1);
    return detail::level2_from_caches(cfg, ca, cb);
}

// Probabilistic MMD between two domains of embeddings: the empirical MMD
// with the level-2 kernel in place of the point kernel,
//   P-MMD^2 = mean K(l,l') + mean K(t,t') - 2 mean K(l,t).
template <class Scalar>
Scalar pmmd2(const KernelConfig& cfg, const std::vector<ProbEmbeddingT<Scalar>>& Dl,
             const std::vector<ProbEmbeddingT<Scalar>>& Dt,
             PmmdWeighting weighting = PmmdWeighting::plug_in) {
    cfg.validate();
    Eigen::Index dim = -1;
    detail::check_domain(Dl, dim, "pmmd2");
    detail::check_domain(Dt, dim, "pmmd2");
    const auto dl = detail::make_caches(Dl, cfg.lambda1);
    const auto dt = detail::make_caches(Dt, cfg.lambda1);
    return detail::pmmd2_from_caches(cfg, dl, dt, weighting);
}

// Linear-statistic estimate of P-MMD^2 with O(n) level-2 evaluations.
// Draws floor(min(nl, nt)/2) index quadruples with replacement (indices
// within a pair kept distinct) and averages
//   h = K(l_a, l_a') + K(t_b, t_b') - K(l_a, t_b') - K(l_a', t_b),
// which is unbiased for the U-statistic P-MMD^2 of the given lists.
template <class Scalar>
Scalar pmmd2_linear(const KernelConfig& cfg, const std::vector<ProbEmbeddingT<Scalar>>& Dl,
                    const std::vector<ProbEmbeddingT<Scalar>>& Dt, Rng& rng) {
    cfg.validate();
    Eigen::Index dim = -1;
    detail::check_domain(Dl, dim, "pmmd2_linear");
    detail::check_domain(Dt, dim, "pmmd2_linear");
    if (Dl.size() < 2 || Dt.size() < 2)
        throw ValidationError("pmmd2_linear: needs at least 2 members per domain");

    const auto dl = detail::make_caches(Dl, cfg.lambda1);
    const auto dt = detail::make_caches(Dt, cfg.lambda1);
    const int nl = static_cast<int>(Dl.size());
    const int nt = static_cast<int>(Dt.size());
    const int terms = std::min(nl, nt) / 2;

    auto draw_distinct = [&rng](int n, int& first, int& second) {
        first = rng.uniform_int(n);
        second = rng.uniform_int(n - 1);
        if (second >= first) ++second;
    };

    Scalar sum(0.0);
    for (int t = 0; t < terms; ++t) {
        int a, a2, b, b2;
        draw_distinct(nl, a, a2);
        draw_distinct(nt, b, b2);
        sum += detail::level2_from_caches(cfg, dl[a], dl[a2]) +
               detail::level2_from_caches(cfg, dt[b], dt[b2]) -
               detail::level2_from_caches(cfg, dl[a], dt[b2]) -
               detail::level2_from_caches(cfg, dl[a2], dt[b]);
    }
    return sum / static_cast<double>(terms);
}

// Cross-domain alignment loss over K domains:
//   L_global = (1/K^2) * sum_{i,j} P-MMD(P_i, P_j)^2,
// where the ordered sum includes i == j (those terms vanish). Within- and
// cross-domain kernel blocks are shared across domain pairs.
template <class Scalar>
Scalar global_alignment_loss(const KernelConfig& cfg,
                             const std::vector<std::vector<ProbEmbeddingT<Scalar>>>& domains,
                             GlobalMode mode, Rng& rng) {
    cfg.validate();
    const std::size_t k = domains.size();
    if (k < 2) throw ValidationError("global_alignment_loss: needs at least 2 domains");
    Eigen::Index dim = -1;
    for (const auto& domain : domains) detail::check_domain(domain, dim, "global_alignment_loss");

    Scalar pair_sum(0.0);
    if (mode == GlobalMode::quadratic) {
        std::vector<std::vector<detail::CloudCache<Scalar>>> caches;
        caches.reserve(k);
        for (const auto& domain : domains)
            caches.push_back(detail::make_caches(domain, cfg.lambda1));
        std::vector<Scalar> within(k);
        for (std::size_t i = 0; i < k; ++i)
            within[i] = detail::level2_block_mean(cfg, caches[i], caches[i]);
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t j = i + 1; j < k; ++j) {
                const Scalar cross = detail::level2_block_mean(cfg, caches[i], caches[j]);
                pair_sum += detail::clamp_tiny_negative(within[i] + within[j] - 2.0 * cross);
            }
        }
    } else {
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = i + 1; j < k; ++j)
                pair_sum += pmmd2_linear(cfg, domains[i], domains[j], rng);
    }
    return (2.0 * pair_sum) / static_cast<double>(k * k);
}

// Ablation baseline: collapse each cloud to its Monte Carlo mean vector and
// compare domains with the vanilla level-1 MMD.
template <class Scalar>
Scalar mean_embedding_mmd2(const KernelConfig& cfg, const std::vector<ProbEmbeddingT<Scalar>>& Dl,
                           const std::vector<ProbEmbeddingT<Scalar>>& Dt) {
    cfg.validate();
    Eigen::Index dim = -1;
    detail::check_domain(Dl, dim, "mean_embedding_mmd2");
    detail::check_domain(Dt, dim, "mean_embedding_mmd2");

    auto collapse = [dim](const std::vector<ProbEmbeddingT<Scalar>>& domain) {
        MatrixX<Scalar> means(static_cast<Eigen::Index>(domain.size()), dim);
        for (std::size_t i = 0; i < domain.size(); ++i)
            means.row(static_cast<Eigen::Index>(i)) = domain[i].samples.colwise().mean();
        return means;
    };
    const MatrixX<Scalar> ml = collapse(Dl);
    const MatrixX<Scalar> mt = collapse(Dt);
    KernelConfig biased = cfg;
    biased.estimator = MmdEstimator::biased_v_statistic;
    return mmd2(biased, ml, mt);
}

}  // namespace pdg
