#include "pdg/bayes_net.hpp"

#include <cmath>

namespace pdg {

namespace {

Eigen::MatrixXd he_init(int rows, int cols, Rng& rng) {
    const double scale = std::sqrt(2.0 / static_cast<double>(rows));
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * rng.normal();
    return m;
}

GaussianVariational standard_variational(int rows, int cols, double init_sigma, Rng& rng) {
    GaussianVariational v;
    v.mu = he_init(rows, cols, rng);
    const double rho = softplus_inverse(init_sigma);
    v.rho = Eigen::MatrixXd::Constant(rows, cols, rho);
    v.prior_mu = Eigen::MatrixXd::Zero(rows, cols);
    v.prior_sigma = Eigen::MatrixXd::Ones(rows, cols);
    return v;
}

}  // namespace

NetworkStack build_stack(const StackConfig& cfg, int input_dim, int num_classes, Rng& rng) {
    if (input_dim < 1 || num_classes < 2)
        throw ValidationError("build_stack: need input_dim >= 1 and num_classes >= 2");
    if (cfg.latent_dim < 1) throw ValidationError("build_stack: latent_dim must be positive");
    for (int w : cfg.backbone_widths)
        if (w < 1) throw ValidationError("build_stack: backbone widths must be positive");
    for (int w : cfg.metric_widths)
        if (w < 1) throw ValidationError("build_stack: metric widths must be positive");

    NetworkStack stack;
    int width = input_dim;
    for (int next : cfg.backbone_widths) {
        AffineLayer layer;
        layer.weight = he_init(width, next, rng);
        layer.bias = Eigen::VectorXd::Zero(next);
        stack.backbone.push_back(std::move(layer));
        width = next;
    }

    stack.extractor.weights = standard_variational(width, cfg.latent_dim, cfg.init_sigma, rng);
    stack.extractor.biases = standard_variational(1, cfg.latent_dim, cfg.init_sigma, rng);
    stack.extractor.biases.mu.setZero();

    stack.classifier.weights =
        standard_variational(cfg.latent_dim, num_classes, cfg.init_sigma, rng);
    stack.classifier.biases = standard_variational(1, num_classes, cfg.init_sigma, rng);
    stack.classifier.biases.mu.setZero();

    width = cfg.latent_dim;
    for (int next : cfg.metric_widths) {
        AffineLayer layer;
        layer.weight = he_init(width, next, rng);
        layer.bias = Eigen::VectorXd::Zero(next);
        stack.metric.push_back(std::move(layer));
        width = next;
    }

    validate_stack(stack);
    return stack;
}

void validate_stack(const NetworkStack& stack) {
    stack.extractor.weights.validate();
    stack.extractor.biases.validate();
    stack.classifier.weights.validate();
    stack.classifier.biases.validate();

    Eigen::Index width = stack.input_dim();
    for (std::size_t i = 0; i < stack.backbone.size(); ++i) {
        if (stack.backbone[i].weight.rows() != width ||
            stack.backbone[i].bias.size() != stack.backbone[i].weight.cols())
            throw ShapeError("validate_stack: backbone[" + std::to_string(i) + "] shape mismatch");
        width = stack.backbone[i].weight.cols();
    }
    if (stack.extractor.weights.mu.rows() != width)
        throw ShapeError("validate_stack: extractor input does not match backbone output");
    const Eigen::Index latent = stack.extractor.weights.mu.cols();
    if (stack.extractor.biases.mu.cols() != latent)
        throw ShapeError("validate_stack: extractor bias width mismatch");
    if (stack.classifier.weights.mu.rows() != latent)
        throw ShapeError("validate_stack: classifier input does not match latent dimension");
    if (stack.classifier.biases.mu.cols() != stack.classifier.weights.mu.cols())
        throw ShapeError("validate_stack: classifier bias width mismatch");

    width = latent;
    for (std::size_t i = 0; i < stack.metric.size(); ++i) {
        if (stack.metric[i].weight.rows() != width ||
            stack.metric[i].bias.size() != stack.metric[i].weight.cols())
            throw ShapeError("validate_stack: metric[" + std::to_string(i) + "] shape mismatch");
        width = stack.metric[i].weight.cols();
    }
}

namespace {

void moped_init_tensor(GaussianVariational& v, const Eigen::MatrixXd& w_dnn, double delta,
                       double sigma_floor) {
    v.prior_mu = w_dnn;
    v.mu = w_dnn;
    v.rho.resize(w_dnn.rows(), w_dnn.cols());
    v.prior_sigma.resize(w_dnn.rows(), w_dnn.cols());
    for (Eigen::Index k = 0; k < w_dnn.size(); ++k) {
        const double target = std::max(delta * std::abs(w_dnn.data()[k]), sigma_floor);
        const double rho = softplus_inverse(target);
        v.rho.data()[k] = rho;
        // Stored as softplus(rho), not the raw target, so q == p bitwise.
        v.prior_sigma.data()[k] = softplus(rho);
    }
}

}  // namespace

void moped_init(BayesAffineLayer& layer, const Eigen::MatrixXd& w_dnn,
                const Eigen::VectorXd& b_dnn, double delta, double sigma_floor) {
    if (!(delta > 0.0)) throw ValidationError("moped_init: delta must be positive");
    if (!(sigma_floor > 0.0)) throw ValidationError("moped_init: sigma_floor must be positive");
    if (w_dnn.rows() != layer.weights.mu.rows() || w_dnn.cols() != layer.weights.mu.cols())
        throw ShapeError("moped_init: weight shape mismatch");
    if (b_dnn.size() != layer.biases.mu.cols())
        throw ShapeError("moped_init: bias shape mismatch");
    moped_init_tensor(layer.weights, w_dnn, delta, sigma_floor);
    moped_init_tensor(layer.biases, b_dnn.transpose(), delta, sigma_floor);
}

namespace {

Eigen::MatrixXd gaussian_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
    return m;
}

}  // namespace

DrawRecord draw_noise(const NetworkStack& stack, Rng& extractor_rng, Rng& classifier_rng,
                      bool per_item, int n_items) {
    DrawRecord record;
    const int draws = per_item ? n_items : 1;
    for (int i = 0; i < draws; ++i) {
        record.extractor_w.push_back(gaussian_matrix(stack.extractor.weights.mu.rows(),
                                                     stack.extractor.weights.mu.cols(),
                                                     extractor_rng));
        record.extractor_b.push_back(
            gaussian_matrix(1, stack.extractor.biases.mu.cols(), extractor_rng));
        record.classifier_w.push_back(gaussian_matrix(stack.classifier.weights.mu.rows(),
                                                      stack.classifier.weights.mu.cols(),
                                                      classifier_rng));
        record.classifier_b.push_back(
            gaussian_matrix(1, stack.classifier.biases.mu.cols(), classifier_rng));
    }
    return record;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> sample_forward(const NetworkStack& stack,
                                                           const Eigen::VectorXd& x, Rng& rng) {
    const DrawRecord noise = draw_noise(stack, rng, rng);
    const ForwardResult<double> out = forward_batch(stack, x.transpose(), noise);
    return {out.latent.row(0).transpose(), out.logits.row(0).transpose()};
}

std::pair<ProbEmbedding, std::vector<Eigen::VectorXd>> forward_prob(const NetworkStack& stack,
                                                                    const Eigen::VectorXd& x,
                                                                    int t_passes, Rng& rng) {
    if (t_passes < 1) throw ValidationError("forward_prob: T must be at least 1");
    ProbEmbedding embedding;
    embedding.samples.resize(t_passes, stack.latent_dim());
    std::vector<Eigen::VectorXd> probs;
    probs.reserve(static_cast<std::size_t>(t_passes));
    for (int t = 0; t < t_passes; ++t) {
        const auto [z, logits] = sample_forward(stack, x, rng);
        embedding.samples.row(t) = z.transpose();
        probs.push_back(softmax<double>(logits));
    }
    return {std::move(embedding), std::move(probs)};
}

Eigen::VectorXd predict_expected(const std::vector<Eigen::VectorXd>& per_pass_probs) {
    if (per_pass_probs.empty()) throw ValidationError("predict_expected: empty probability list");
    const Eigen::Index m = per_pass_probs.front().size();
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(m);
    for (const auto& p : per_pass_probs) {
        if (p.size() != m) throw ShapeError("predict_expected: inconsistent class counts");
        if (p.minCoeff() < 0.0)
            throw ValidationError("predict_expected: negative probability entry");
        if (std::abs(p.sum() - 1.0) > 1e-6)
            throw ValidationError("predict_expected: probabilities must sum to 1");
        mean += p;
    }
    return mean / static_cast<double>(per_pass_probs.size());
}

Eigen::Index parameter_count(const NetworkStack& stack) {
    Eigen::Index count = 0;
    for_each_parameter(stack, [&count](const auto& tensor) { count += tensor.size(); });
    return count;
}

Eigen::VectorXd flatten_parameters(const NetworkStack& stack) {
    Eigen::VectorXd flat(parameter_count(stack));
    Eigen::Index offset = 0;
    for_each_parameter(stack, [&](const auto& tensor) {
        for (Eigen::Index k = 0; k < tensor.size(); ++k) flat(offset++) = tensor.data()[k];
    });
    return flat;
}

void set_parameters(NetworkStack& stack, const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count(stack))
        throw ShapeError("set_parameters: vector length does not match parameter count");
    Eigen::Index offset = 0;
    for_each_parameter(stack, [&](auto& tensor) {
        for (Eigen::Index k = 0; k < tensor.size(); ++k) tensor.data()[k] = flat(offset++);
    });
}

}  // namespace pdg
