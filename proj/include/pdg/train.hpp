#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pdg/autodiff.hpp"
#include "pdg/bayes_net.hpp"
#include "pdg/errors.hpp"
#include "pdg/losses.hpp"
#include "pdg/prob_embedding.hpp"
#include "pdg/rng.hpp"

namespace pdg {

// One domain's labeled data (a whole dataset or a minibatch).
struct DomainBatch {
    Eigen::MatrixXd x;        // n x d
    std::vector<int> labels;  // n entries in [0, m)
};

struct TrainConfig {
    double learning_rate = 5e-5;
    int batch_per_domain = 16;
    int iterations = 400;
    std::uint64_t seed = 0;
    LossWeights weights;
    GlobalMode global_mode = GlobalMode::quadratic;
    int n_pairs = 32;
    ClassLoss class_loss = ClassLoss::cross_entropy;
    double focal_gamma = 2.0;
    // Per-domain stream seeds; derived from `seed` by position when empty.
    std::vector<std::uint64_t> domain_seeds;

    void validate() const {
        if (!(learning_rate >= 0.0)) throw ValidationError("TrainConfig: learning_rate < 0");
        if (batch_per_domain < 1) throw ValidationError("TrainConfig: batch_per_domain < 1");
        if (iterations < 0) throw ValidationError("TrainConfig: iterations < 0");
        if (n_pairs < 1) throw ValidationError("TrainConfig: n_pairs < 1");
        weights.validate();
    }
};

struct AblationFlags {
    bool mean_embedding_global = false;  // collapse clouds to means in L_global
    bool mean_csa_local = false;         // Euclidean mean-distance contrastive loss
    bool disable_local = false;
    bool disable_global = false;
    bool deterministic = false;          // sigma frozen at 0, no KL terms
    bool detach_metric_input = false;    // stop gradients at the metric net input
};

// Everything evaluate_objective needs besides the model and the data.
struct ObjectiveOptions {
    KernelConfig kernel;
    LossWeights weights;
    GlobalMode global_mode = GlobalMode::quadratic;
    ClassLoss class_loss = ClassLoss::cross_entropy;
    double focal_gamma = 2.0;
    int n_pairs = 32;
    AblationFlags ablation;
};

// The random context of one objective evaluation. Holding it fixed makes the
// evaluation a deterministic function of the parameters, which is what both
// the optimizer step and the finite-difference checks differentiate.
struct IterationPlan {
    std::vector<DrawRecord> draws;  // one per stochastic pass
    std::uint64_t pair_seed = 0;
    std::uint64_t linear_seed = 0;
};

template <class Scalar>
struct LossBreakdownT {
    Scalar classification{0.0};
    Scalar kl_extractor{0.0};
    Scalar kl_classifier{0.0};
    Scalar local{0.0};
    Scalar global{0.0};
    Scalar total{0.0};
};

using LossBreakdown = LossBreakdownT<double>;

enum class LossComponent { classification, kl_extractor, kl_classifier, local, global_loss, total };

template <class Scalar>
const Scalar& pick_component(const LossBreakdownT<Scalar>& b, LossComponent which) {
    switch (which) {
        case LossComponent::classification: return b.classification;
        case LossComponent::kl_extractor: return b.kl_extractor;
        case LossComponent::kl_classifier: return b.kl_classifier;
        case LossComponent::local: return b.local;
        case LossComponent::global_loss: return b.global;
        case LossComponent::total: return b.total;
    }
    throw ValidationError("pick_component: unknown component");
}

// Deep-copies a stack into another scalar type; every entry is a constant.
template <class Scalar>
NetworkStackT<Scalar> stack_cast(const NetworkStack& stack) {
    NetworkStackT<Scalar> out;
    auto cast_variational = [](const GaussianVariational& v) {
        GaussianVariationalT<Scalar> r;
        r.mu = v.mu.template cast<Scalar>();
        r.rho = v.rho.template cast<Scalar>();
        r.prior_mu = v.prior_mu;
        r.prior_sigma = v.prior_sigma;
        return r;
    };
    for (const auto& layer : stack.backbone)
        out.backbone.push_back(
            {layer.weight.template cast<Scalar>(), layer.bias.template cast<Scalar>()});
    out.extractor.weights = cast_variational(stack.extractor.weights);
    out.extractor.biases = cast_variational(stack.extractor.biases);
    out.classifier.weights = cast_variational(stack.classifier.weights);
    out.classifier.biases = cast_variational(stack.classifier.biases);
    for (const auto& layer : stack.metric)
        out.metric.push_back(
            {layer.weight.template cast<Scalar>(), layer.bias.template cast<Scalar>()});
    return out;
}

// Registers every trainable parameter as a tape leaf. Leaves are created in
// canonical parameter order on a fresh tape, so leaf k is tape node k and the
// gradient vector is the first parameter_count() adjoints.
NetworkStackT<ad::Var> lift_stack(ad::Tape& tape, const NetworkStack& stack);

namespace detail {

template <class Scalar>
ProbEmbeddingT<Scalar> detach_cloud(const ProbEmbeddingT<Scalar>& e) {
    ProbEmbeddingT<Scalar> out;
    out.samples = e.samples.unaryExpr([](const Scalar& x) { return detach(x); });
    return out;
}

}  // namespace detail

// Evaluates the full training objective for one iteration plan:
// classification of the expected predictions, the two KL terms, the P-CSA
// local loss over sampled cross-domain pairs, and the global alignment loss
// over the per-domain embedding clouds.
template <class Scalar>
LossBreakdownT<Scalar> evaluate_objective(const NetworkStackT<Scalar>& stack,
                                          const std::vector<DomainBatch>& batches,
                                          const IterationPlan& plan,
                                          const ObjectiveOptions& opt) {
    opt.kernel.validate();
    opt.weights.validate();
    if (batches.empty()) throw ValidationError("evaluate_objective: no domain batches");
    for (const auto& batch : batches) {
        if (batch.x.rows() < 1) throw ValidationError("evaluate_objective: empty domain batch");
        if (batch.x.rows() != static_cast<Eigen::Index>(batch.labels.size()))
            throw ShapeError("evaluate_objective: rows and labels differ in length");
    }
    const bool needs_pairs = !opt.ablation.disable_local;
    const bool needs_global = !opt.ablation.disable_global;
    if ((needs_pairs || needs_global) && batches.size() < 2)
        throw ValidationError("evaluate_objective: alignment losses need at least 2 domains");
    if (plan.draws.empty()) throw ValidationError("evaluate_objective: plan has no passes");

    const std::size_t n_domains = batches.size();
    const std::size_t n_passes = plan.draws.size();

    // Stochastic passes. Every domain in a pass shares the pass's draw.
    std::vector<std::vector<ForwardResult<Scalar>>> passes(n_passes);
    for (std::size_t t = 0; t < n_passes; ++t) {
        passes[t].reserve(n_domains);
        for (std::size_t l = 0; l < n_domains; ++l)
            passes[t].push_back(forward_batch(stack, batches[l].x, plan.draws[t]));
    }

    // Per-item clouds: member (l, i) collects its latent row from every pass.
    std::vector<std::vector<ProbEmbeddingT<Scalar>>> clouds(n_domains);
    for (std::size_t l = 0; l < n_domains; ++l) {
        const Eigen::Index n_items = batches[l].x.rows();
        clouds[l].resize(static_cast<std::size_t>(n_items));
        for (Eigen::Index i = 0; i < n_items; ++i) {
            MatrixX<Scalar>& samples = clouds[l][static_cast<std::size_t>(i)].samples;
            samples.resize(static_cast<Eigen::Index>(n_passes), stack.latent_dim());
            for (std::size_t t = 0; t < n_passes; ++t)
                samples.row(static_cast<Eigen::Index>(t)) = passes[t][l].latent.row(i);
        }
    }

    LossBreakdownT<Scalar> out;

    // Classification of the expected (pass-averaged) class probabilities.
    for (std::size_t l = 0; l < n_domains; ++l) {
        for (Eigen::Index i = 0; i < batches[l].x.rows(); ++i) {
            VectorX<Scalar> expected = VectorX<Scalar>::Zero(stack.num_classes());
            for (std::size_t t = 0; t < n_passes; ++t)
                expected += softmax<Scalar>(passes[t][l].logits.row(i).transpose());
            expected /= static_cast<double>(n_passes);
            out.classification += classification_loss(expected, batches[l].labels[i],
                                                      opt.class_loss, opt.focal_gamma);
        }
    }

    if (!opt.ablation.deterministic) {
        out.kl_extractor = kl_to_prior(stack.extractor);
        out.kl_classifier = kl_to_prior(stack.classifier);
    }

    if (needs_pairs) {
        std::vector<DomainEmbeddingsT<Scalar>> mapped(n_domains);
        for (std::size_t l = 0; l < n_domains; ++l) {
            mapped[l].labels = batches[l].labels;
            mapped[l].members.reserve(clouds[l].size());
            for (const auto& cloud : clouds[l]) {
                const auto input =
                    opt.ablation.detach_metric_input ? detail::detach_cloud(cloud) : cloud;
                mapped[l].members.push_back(metric_forward(stack.metric, input));
            }
        }
        Rng pair_rng(plan.pair_seed);
        const auto sampled = sample_pairs(mapped, opt.n_pairs, pair_rng);
        Scalar pos_sum(0.0), neg_sum(0.0);
        long pos_count = 0, neg_count = 0;
        for (const auto& pair : sampled.pairs) {
            const Scalar value = opt.ablation.mean_csa_local
                                     ? mean_csa_loss(pair, opt.weights)
                                     : pcsa_loss(opt.kernel, pair, opt.weights);
            if (pair.same_label) {
                pos_sum += value;
                ++pos_count;
            } else {
                neg_sum += value;
                ++neg_count;
            }
        }
        if (pos_count > 0) out.local += pos_sum / static_cast<double>(pos_count);
        if (neg_count > 0) out.local += neg_sum / static_cast<double>(neg_count);
    }

    if (needs_global) {
        if (opt.ablation.mean_embedding_global) {
            Scalar pair_sum(0.0);
            for (std::size_t i = 0; i < n_domains; ++i)
                for (std::size_t j = i + 1; j < n_domains; ++j)
                    pair_sum += mean_embedding_mmd2(opt.kernel, clouds[i], clouds[j]);
            out.global = (2.0 * pair_sum) / static_cast<double>(n_domains * n_domains);
        } else {
            Rng linear_rng(plan.linear_seed);
            out.global = global_alignment_loss(opt.kernel, clouds, opt.global_mode, linear_rng);
        }
    }

    out.total = total_objective(out.classification, out.kl_extractor, out.kl_classifier,
                                out.local, out.global, opt.weights);
    return out;
}

struct GradientResult {
    LossBreakdown components;
    Eigen::VectorXd gradient;  // canonical parameter order
};

// Gradient of the total objective with respect to every trainable parameter,
// under the fixed noise and pair draws of `plan`.
GradientResult compute_gradients(const NetworkStack& model, const std::vector<DomainBatch>& batches,
                                 const IterationPlan& plan, const ObjectiveOptions& opt);

// Gradients of each loss component separately (shared forward, one backward
// sweep per component). Used by the gradient-fidelity checks.
struct ComponentGradients {
    LossBreakdown values;
    std::map<LossComponent, Eigen::VectorXd> gradients;
};
ComponentGradients compute_component_gradients(const NetworkStack& model,
                                               const std::vector<DomainBatch>& batches,
                                               const IterationPlan& plan,
                                               const ObjectiveOptions& opt);

// Central finite differences of one loss component through the double-valued
// evaluation path, with the plan (noise, pairs, pairings) held fixed.
Eigen::VectorXd finite_difference_gradient(const NetworkStack& model,
                                           const std::vector<DomainBatch>& batches,
                                           const IterationPlan& plan, const ObjectiveOptions& opt,
                                           LossComponent component, double step);

// Names of the parameter tensors in canonical order, e.g. "extractor.weights.mu".
std::vector<std::string> parameter_block_names(const NetworkStack& stack);

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

struct AdamState {
    Eigen::VectorXd m, v;
    long step = 0;
};

// One bias-corrected Adam update. A zero gradient leaves the parameters
// bit-identical while still advancing the step count.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, double lr,
               const AdamConfig& cfg = {});

struct TrainLogEntry {
    int iteration = 0;
    LossBreakdown losses;
};

using TrainLog = std::vector<TrainLogEntry>;

struct FitOptions {
    TrainConfig train;
    KernelConfig kernel;
    AblationFlags ablation;
    bool per_item_draws = false;
    bool decouple_draws = false;
};

// The main training loop: per iteration draw one minibatch per source
// domain, run T stochastic passes, evaluate the total objective, and take
// one Adam step. Deterministic given the config seed.
TrainLog fit(const FitOptions& options, const std::vector<DomainBatch>& sources,
             NetworkStack& model);

// Plain pointwise pretraining (w = mu, classification only) on pooled source
// data; supplies the deterministic weights for the MOPED priors.
void pretrain_pointwise(NetworkStack& model, const std::vector<DomainBatch>& sources,
                        int iterations, double lr, int batch_size, ClassLoss kind, double gamma,
                        std::uint64_t seed);

struct EvalMetrics {
    double accuracy = 0.0;
    std::map<int, double> per_class_accuracy;  // classes present in the target only
    double mean_predictive_entropy = 0.0;
    int samples = 0;
};

// Leave-one-domain-out evaluation: predictions are the argmax of the
// pass-averaged class probabilities on every held-out sample.
EvalMetrics evaluate_lodo(const NetworkStack& model, const std::vector<DomainBatch>& all_domains,
                          int held_out_index, int t_passes, std::uint64_t seed,
                          bool deterministic = false);

}  // namespace pdg
