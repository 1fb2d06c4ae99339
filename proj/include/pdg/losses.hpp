#pragma once

#include <string>
#include <vector>

#include "pdg/errors.hpp"
#include "pdg/kernel.hpp"
#include "pdg/prob_embedding.hpp"
#include "pdg/rng.hpp"

namespace pdg {

enum class ClassLoss { cross_entropy, focal };

// Weights of the total objective: local (contrastive) weight beta1, global
// (cross-domain discrepancy) weight beta2, the contrastive distance margin
// xi, and the Monte Carlo pass count T. kl_scale multiplies both KL terms
// identically and defaults to the plain unweighted form.
struct LossWeights {
    double beta1 = 0.1;
    double beta2 = 0.7;
    double margin_xi = 1.0;
    int t_passes = 10;
    double kl_scale = 1.0;

    void validate() const {
        if (beta1 < 0.0 || beta2 < 0.0)
            throw ValidationError("LossWeights: beta1 and beta2 must be non-negative");
        if (!(margin_xi > 0.0)) throw ValidationError("LossWeights: margin_xi must be positive");
        if (t_passes < 1) throw ValidationError("LossWeights: t_passes must be at least 1");
        if (kl_scale < 0.0) throw ValidationError("LossWeights: kl_scale must be non-negative");
    }
};

// A cross-domain pair of (metric-mapped) probabilistic embeddings.
template <class Scalar>
struct PairSampleT {
    ProbEmbeddingT<Scalar> a, b;
    bool same_label = false;
    int domain_a = -1, domain_b = -1;
};

using PairSample = PairSampleT<double>;

template <class Scalar>
struct SampledPairsT {
    std::vector<PairSampleT<Scalar>> pairs;
    // Set when a category admits no cross-domain pair at all (and is
    // therefore returned empty), not when the draw budget merely ran short.
    bool positives_missing = false;
    bool negatives_missing = false;
    // Raw candidate statistics, kept for diagnostics and distribution tests.
    long candidates_drawn = 0;
    long positives_seen = 0;
};

using SampledPairs = SampledPairsT<double>;

inline constexpr double kLogEps = 1e-12;

// Cross-entropy -ln(p[label] + eps), or the focal variant
// -(1 - p_t)^gamma * ln(p_t + eps) for class imbalance.
template <class Scalar>
Scalar classification_loss(const VectorX<Scalar>& probs, int label, ClassLoss kind,
                           double gamma = 2.0) {
    if (label < 0 || label >= probs.size())
        throw ValidationError("classification_loss: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(probs.size()) + ")");
    const Scalar p = probs(label);
    const Scalar nll = -log(p + kLogEps);
    if (kind == ClassLoss::cross_entropy || gamma == 0.0) return nll;
    return pow_const(1.0 - p, gamma) * nll;
}

// Probabilistic contrastive semantic alignment for one pair. The distance is
// the plug-in level-1 MMD^2 between the two T-row clouds; same-label pairs
// are pulled together, different-label pairs repelled up to the margin:
//   positive: 1/2 * MMD^2,   negative: 1/2 * max(0, xi - MMD^2).
template <class Scalar>
Scalar pcsa_loss(const KernelConfig& cfg, const PairSampleT<Scalar>& pair,
                 const LossWeights& weights) {
    weights.validate();
    if (pair.a.samples.rows() < 1 || pair.b.samples.rows() < 1)
        throw ValidationError("pcsa_loss: empty embedding in pair");
    KernelConfig plug_in = cfg;
    plug_in.estimator = MmdEstimator::biased_v_statistic;
    const Scalar distance = mmd2(plug_in, pair.a.samples, pair.b.samples);
    if (pair.same_label) return 0.5 * distance;
    return 0.5 * relu(weights.margin_xi - distance);
}

// Ablation baseline: squared Euclidean distance between the Monte Carlo mean
// vectors instead of the cloud MMD.
template <class Scalar>
Scalar mean_csa_loss(const PairSampleT<Scalar>& pair, const LossWeights& weights) {
    weights.validate();
    if (pair.a.samples.rows() < 1 || pair.b.samples.rows() < 1)
        throw ValidationError("mean_csa_loss: empty embedding in pair");
    if (pair.a.samples.cols() != pair.b.samples.cols())
        throw ShapeError("mean_csa_loss: embedding dimensions differ");
    const MatrixX<Scalar> diff = pair.a.samples.colwise().mean() - pair.b.samples.colwise().mean();
    const Scalar distance = diff.row(0).dot(diff.row(0));
    if (pair.same_label) return 0.5 * distance;
    return 0.5 * relu(weights.margin_xi - distance);
}

// Uniformly draws cross-domain index pairs, routing them into a positive
// (equal labels) and a negative (different labels) bucket until each holds
// n_pairs entries. A category that no cross-domain pair can ever satisfy is
// returned empty and flagged.
template <class Scalar>
SampledPairsT<Scalar> sample_pairs(const std::vector<DomainEmbeddingsT<Scalar>>& batches,
                                   int n_pairs, Rng& rng) {
    if (batches.size() < 2) throw ValidationError("sample_pairs: needs at least 2 domains");
    if (n_pairs < 1) throw ValidationError("sample_pairs: n_pairs must be positive");
    for (const auto& batch : batches) {
        if (batch.members.empty()) throw ValidationError("sample_pairs: empty domain batch");
        if (batch.members.size() != batch.labels.size())
            throw ShapeError("sample_pairs: members and labels differ in length");
    }

    const int k = static_cast<int>(batches.size());
    bool pos_realizable = false, neg_realizable = false;
    for (int a = 0; a < k && !(pos_realizable && neg_realizable); ++a)
        for (int b = a + 1; b < k; ++b)
            for (int la : batches[a].labels)
                for (int lb : batches[b].labels) {
                    if (la == lb) pos_realizable = true;
                    else neg_realizable = true;
                }

    SampledPairsT<Scalar> out;
    out.positives_missing = !pos_realizable;
    out.negatives_missing = !neg_realizable;

    int pos_needed = pos_realizable ? n_pairs : 0;
    int neg_needed = neg_realizable ? n_pairs : 0;
    const long budget = 1000 + 400L * n_pairs;
    while ((pos_needed > 0 || neg_needed > 0) && out.candidates_drawn < budget) {
        int da = rng.uniform_int(k);
        int db = rng.uniform_int(k - 1);
        if (db >= da) ++db;
        const int ia = rng.uniform_int(static_cast<int>(batches[da].members.size()));
        const int ib = rng.uniform_int(static_cast<int>(batches[db].members.size()));
        const bool same = batches[da].labels[ia] == batches[db].labels[ib];
        ++out.candidates_drawn;
        if (same) ++out.positives_seen;

        int& needed = same ? pos_needed : neg_needed;
        if (needed == 0) continue;
        --needed;
        PairSampleT<Scalar> pair;
        pair.a = batches[da].members[ia];
        pair.b = batches[db].members[ib];
        pair.same_label = same;
        pair.domain_a = da;
        pair.domain_b = db;
        out.pairs.push_back(std::move(pair));
    }
    return out;
}

// Eq-style weighted sum of the loss components:
//   L = sum L_c + kl_scale*(KL_Q + KL_C) + beta1*L_local + beta2*L_global.
template <class Scalar>
Scalar total_objective(const Scalar& class_loss_sum, const Scalar& kl_extractor,
                       const Scalar& kl_classifier, const Scalar& local_loss,
                       const Scalar& global_loss, const LossWeights& weights) {
    weights.validate();
    const struct {
        const char* name;
        const Scalar* value;
    } components[] = {{"classification", &class_loss_sum},
                      {"kl_extractor", &kl_extractor},
                      {"kl_classifier", &kl_classifier},
                      {"local", &local_loss},
                      {"global", &global_loss}};
    for (const auto& c : components)
        if (!std::isfinite(value_of(*c.value)))
            throw NumericError(std::string("total_objective: non-finite component ") + c.name);
    return class_loss_sum + weights.kl_scale * kl_extractor + weights.kl_scale * kl_classifier +
           weights.beta1 * local_loss + weights.beta2 * global_loss;
}

}  // namespace pdg
