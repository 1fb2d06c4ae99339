#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pdg/errors.hpp"
#include "pdg/prob_embedding.hpp"
#include "pdg/rng.hpp"
#include "pdg/scalar_ops.hpp"

namespace pdg {

// Fully factorized Gaussian variational posterior over one parameter tensor,
// q(w) = N(mu, sigma^2) with sigma = softplus(rho), plus its fixed Gaussian
// prior. Priors are never differentiated and stay in double precision.
template <class Scalar>
struct GaussianVariationalT {
    MatrixX<Scalar> mu;
    MatrixX<Scalar> rho;
    Eigen::MatrixXd prior_mu;
    Eigen::MatrixXd prior_sigma;

    void validate() const {
        const auto rows = mu.rows(), cols = mu.cols();
        if (rho.rows() != rows || rho.cols() != cols || prior_mu.rows() != rows ||
            prior_mu.cols() != cols || prior_sigma.rows() != rows || prior_sigma.cols() != cols)
            throw ShapeError("GaussianVariational: tensors must share one shape");
        for (Eigen::Index k = 0; k < prior_sigma.size(); ++k)
            if (!(prior_sigma.data()[k] > 0.0))
                throw ValidationError("GaussianVariational: prior_sigma must be positive");
    }
};

using GaussianVariational = GaussianVariationalT<double>;

template <class Scalar>
struct BayesAffineT {
    GaussianVariationalT<Scalar> weights;  // fan_in x fan_out
    GaussianVariationalT<Scalar> biases;   // 1 x fan_out
};

using BayesAffineLayer = BayesAffineT<double>;

template <class Scalar>
struct AffineT {
    MatrixX<Scalar> weight;  // fan_in x fan_out
    VectorX<Scalar> bias;    // fan_out
};

using AffineLayer = AffineT<double>;

// Probabilistic extractor (deterministic affines, then one Bayesian affine,
// each followed by a rectifier), Bayesian classifier head, and the
// deterministic metric network used by the contrastive loss.
template <class Scalar>
struct NetworkStackT {
    std::vector<AffineT<Scalar>> backbone;
    BayesAffineT<Scalar> extractor;
    BayesAffineT<Scalar> classifier;
    std::vector<AffineT<Scalar>> metric;

    Eigen::Index input_dim() const {
        return backbone.empty() ? extractor.weights.mu.rows() : backbone.front().weight.rows();
    }
    Eigen::Index latent_dim() const { return extractor.weights.mu.cols(); }
    Eigen::Index num_classes() const { return classifier.weights.mu.cols(); }
};

using NetworkStack = NetworkStackT<double>;

struct StackConfig {
    std::vector<int> backbone_widths{32};
    int latent_dim = 16;
    std::vector<int> metric_widths{16, 8};
    double sigma_floor = 1e-3;
    double init_sigma = 0.05;  // variational sigma at random (non-MOPED) init
    bool per_item_draws = false;
    bool decouple_draws = false;
};

// One iteration-pass worth of reparameterization noise. Each list holds a
// single eps tensor when the whole pass shares one weight draw, or one per
// batch item when per-item draws are enabled. An empty record means a
// deterministic forward with w = mu.
struct DrawRecord {
    std::vector<Eigen::MatrixXd> extractor_w, extractor_b, classifier_w, classifier_b;

    bool deterministic() const { return extractor_w.empty(); }
};

NetworkStack build_stack(const StackConfig& cfg, int input_dim, int num_classes, Rng& rng);

void validate_stack(const NetworkStack& stack);

// Sets the prior of one Bayesian layer to N(w_dnn, delta*|w_dnn|) and starts
// the variational posterior exactly on it. prior_sigma is stored as
// softplus(rho) so that q == p holds bitwise and the initial KL is zero.
void moped_init(BayesAffineLayer& layer, const Eigen::MatrixXd& w_dnn,
                const Eigen::VectorXd& b_dnn, double delta, double sigma_floor = 1e-3);

// Draws reparameterization noise for every Bayesian tensor. Pass the same
// generator twice for a shared draw context, or distinct generators to
// decouple the extractor and classifier streams.
DrawRecord draw_noise(const NetworkStack& stack, Rng& extractor_rng, Rng& classifier_rng,
                      bool per_item = false, int n_items = 1);

namespace detail {

template <class Derived>
void require_finite_activations(const Eigen::MatrixBase<Derived>& m, const std::string& layer) {
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            if (!std::isfinite(value_of(m(i, j))))
                throw NumericError("non-finite activation in layer " + layer);
}

template <class Scalar>
MatrixX<Scalar> relu_all(MatrixX<Scalar> m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = relu(m.data()[k]);
    return m;
}

// w = mu + softplus(rho) .* eps (reparameterization trick); w = mu without noise.
template <class Scalar>
MatrixX<Scalar> realize(const GaussianVariationalT<Scalar>& v, const Eigen::MatrixXd* eps) {
    if (eps == nullptr) return v.mu;
    MatrixX<Scalar> w = v.mu;
    for (Eigen::Index k = 0; k < w.size(); ++k)
        w.data()[k] = w.data()[k] + softplus(v.rho.data()[k]) * eps->data()[k];
    return w;
}

template <class Scalar>
MatrixX<Scalar> bayes_affine(const MatrixX<Scalar>& input, const BayesAffineT<Scalar>& layer,
                             const std::vector<Eigen::MatrixXd>& eps_w,
                             const std::vector<Eigen::MatrixXd>& eps_b) {
    if (eps_w.size() <= 1) {
        const MatrixX<Scalar> w = realize(layer.weights, eps_w.empty() ? nullptr : &eps_w[0]);
        const MatrixX<Scalar> b = realize(layer.biases, eps_b.empty() ? nullptr : &eps_b[0]);
        MatrixX<Scalar> out = input * w;
        out.rowwise() += b.row(0);
        return out;
    }
    // Per-item draws: every batch row sees its own weight realization.
    MatrixX<Scalar> out(input.rows(), layer.weights.mu.cols());
    for (Eigen::Index i = 0; i < input.rows(); ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const MatrixX<Scalar> w = realize(layer.weights, &eps_w[k]);
        const MatrixX<Scalar> b = realize(layer.biases, &eps_b[k]);
        out.row(i) = input.row(i) * w + b.row(0);
    }
    return out;
}

}  // namespace detail

template <class Scalar>
struct ForwardResult {
    MatrixX<Scalar> latent;  // n x latent_dim
    MatrixX<Scalar> logits;  // n x num_classes
};

// One stochastic pass of a whole batch (rows of X) through extractor and
// classifier under the given noise record.
template <class Scalar>
ForwardResult<Scalar> forward_batch(const NetworkStackT<Scalar>& stack, const Eigen::MatrixXd& X,
                                    const DrawRecord& noise) {
    if (X.cols() != stack.input_dim())
        throw ShapeError("forward_batch: input has dimension " + std::to_string(X.cols()) +
                         ", stack expects " + std::to_string(stack.input_dim()));
    detail::require_all_finite(X, "forward_batch");

    MatrixX<Scalar> h = X.template cast<Scalar>();
    for (std::size_t i = 0; i < stack.backbone.size(); ++i) {
        MatrixX<Scalar> pre = h * stack.backbone[i].weight;
        pre.rowwise() += stack.backbone[i].bias.transpose();
        h = detail::relu_all(std::move(pre));
        detail::require_finite_activations(h, "backbone[" + std::to_string(i) + "]");
    }

    ForwardResult<Scalar> result;
    h = detail::relu_all(detail::bayes_affine(h, stack.extractor, noise.extractor_w, noise.extractor_b));
    detail::require_finite_activations(h, "extractor");
    result.latent = std::move(h);

    result.logits =
        detail::bayes_affine(result.latent, stack.classifier, noise.classifier_w, noise.classifier_b);
    detail::require_finite_activations(result.logits, "classifier");
    return result;
}

// One stochastic draw of (latent embedding, logits) for a single input.
std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_forward(const NetworkStack& stack,
                                                           const Eigen::VectorXd& x, Rng& rng);

template <class Scalar>
VectorX<Scalar> softmax(const VectorX<Scalar>& logits) {
    // The max shift is an additive constant, so it is detached from the graph.
    double shift = value_of(logits(0));
    for (Eigen::Index i = 1; i < logits.size(); ++i)
        shift = std::max(shift, value_of(logits(i)));
    VectorX<Scalar> probs(logits.size());
    Scalar total(0.0);
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
        probs(i) = exp(logits(i) - shift);
        total += probs(i);
    }
    for (Eigen::Index i = 0; i < logits.size(); ++i) probs(i) = probs(i) / total;
    return probs;
}

// T stochastic forward passes of one input: the resulting T-row sample cloud
// and the per-pass class probabilities.
std::pair<ProbEmbedding, std::vector<Eigen::VectorXd>> forward_prob(const NetworkStack& stack,
                                                                    const Eigen::VectorXd& x,
                                                                    int t_passes, Rng& rng);

// Predictive distribution: the mean of the per-pass probability vectors.
Eigen::VectorXd predict_expected(const std::vector<Eigen::VectorXd>& per_pass_probs);

// Closed-form KL(q || p) between factorized Gaussians, summed over entries:
//   sum [ ln(sigma_p/sigma_q) + (sigma_q^2 + (mu_q - mu_p)^2) / (2 sigma_p^2) - 1/2 ].
template <class Scalar>
Scalar kl_to_prior(const GaussianVariationalT<Scalar>& v) {
    Scalar total(0.0);
    for (Eigen::Index k = 0; k < v.mu.size(); ++k) {
        const Scalar sigma_q = softplus(v.rho.data()[k]);
        const double sigma_p = v.prior_sigma.data()[k];
        const Scalar dmu = v.mu.data()[k] - v.prior_mu.data()[k];
        total += log(sigma_p / sigma_q) +
                 (sigma_q * sigma_q + dmu * dmu) / (2.0 * sigma_p * sigma_p) - 0.5;
    }
    return total;
}

template <class Scalar>
Scalar kl_to_prior(const BayesAffineT<Scalar>& layer) {
    return kl_to_prior(layer.weights) + kl_to_prior(layer.biases);
}

// Applies the metric network row-wise to a sample cloud. Rectifiers sit
// between layers; the final layer stays linear.
template <class Scalar>
ProbEmbeddingT<Scalar> metric_forward(const std::vector<AffineT<Scalar>>& metric,
                                      const ProbEmbeddingT<Scalar>& e) {
    if (metric.empty()) return e;
    if (e.samples.cols() != metric.front().weight.rows())
        throw ShapeError("metric_forward: embedding dimension " + std::to_string(e.samples.cols()) +
                         " does not match metric input " +
                         std::to_string(metric.front().weight.rows()));
    ProbEmbeddingT<Scalar> out;
    out.samples = e.samples;
    for (std::size_t i = 0; i < metric.size(); ++i) {
        MatrixX<Scalar> pre = out.samples * metric[i].weight;
        pre.rowwise() += metric[i].bias.transpose();
        out.samples = (i + 1 < metric.size()) ? detail::relu_all(std::move(pre)) : std::move(pre);
        detail::require_finite_activations(out.samples, "metric[" + std::to_string(i) + "]");
    }
    return out;
}

// Canonical parameter order: extractor (mu, rho) then classifier (mu, rho),
// then backbone and metric point weights. Flattening, gradient layout and
// checkpointing all go through this visitor.
template <class Scalar, class F>
void for_each_parameter(NetworkStackT<Scalar>& stack, F&& f) {
    f(stack.extractor.weights.mu);
    f(stack.extractor.weights.rho);
    f(stack.extractor.biases.mu);
    f(stack.extractor.biases.rho);
    f(stack.classifier.weights.mu);
    f(stack.classifier.weights.rho);
    f(stack.classifier.biases.mu);
    f(stack.classifier.biases.rho);
    for (auto& layer : stack.backbone) {
        f(layer.weight);
        f(layer.bias);
    }
    for (auto& layer : stack.metric) {
        f(layer.weight);
        f(layer.bias);
    }
}

template <class Scalar, class F>
void for_each_parameter(const NetworkStackT<Scalar>& stack, F&& f) {
    for_each_parameter(const_cast<NetworkStackT<Scalar>&>(stack),
                       [&f](auto& tensor) { f(std::as_const(tensor)); });
}

Eigen::Index parameter_count(const NetworkStack& stack);
Eigen::VectorXd flatten_parameters(const NetworkStack& stack);
void set_parameters(NetworkStack& stack, const Eigen::VectorXd& flat);

}  // namespace pdg
