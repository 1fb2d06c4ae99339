#include "pdg/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace pdg {

namespace {

// Stream ids hung off the root seed; see Rng::derive.
constexpr std::uint64_t kDomainTag = 1;
constexpr std::uint64_t kBatchTag = 2;
constexpr std::uint64_t kNoiseExtractorTag = 3;
constexpr std::uint64_t kNoiseClassifierTag = 4;
constexpr std::uint64_t kPairTag = 5;
constexpr std::uint64_t kLinearTag = 6;
constexpr std::uint64_t kEvalTag = 7;
constexpr std::uint64_t kPretrainTag = 8;

std::vector<int> sample_without_replacement(int n, int k, Rng& rng) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
        const int j = i + rng.uniform_int(n - i);
        std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

DomainBatch take_rows(const DomainBatch& source, const std::vector<int>& rows) {
    DomainBatch batch;
    batch.x.resize(static_cast<Eigen::Index>(rows.size()), source.x.cols());
    batch.labels.reserve(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        batch.x.row(static_cast<Eigen::Index>(i)) = source.x.row(rows[i]);
        batch.labels.push_back(source.labels[static_cast<std::size_t>(rows[i])]);
    }
    return batch;
}

IterationPlan make_plan(const NetworkStack& model, const FitOptions& options, int iteration,
                        int n_items) {
    const TrainConfig& cfg = options.train;
    IterationPlan plan;
    if (options.ablation.deterministic) {
        plan.draws.emplace_back();  // one pass with w = mu
    } else {
        const auto it = static_cast<std::uint64_t>(iteration);
        for (int t = 0; t < cfg.weights.t_passes; ++t) {
            Rng ext(Rng::derive(cfg.seed, {kNoiseExtractorTag, it, static_cast<std::uint64_t>(t)}));
            if (options.decouple_draws) {
                Rng cls(Rng::derive(cfg.seed,
                                    {kNoiseClassifierTag, it, static_cast<std::uint64_t>(t)}));
                plan.draws.push_back(draw_noise(model, ext, cls, options.per_item_draws, n_items));
            } else {
                plan.draws.push_back(draw_noise(model, ext, ext, options.per_item_draws, n_items));
            }
        }
    }
    plan.pair_seed = Rng::derive(cfg.seed, {kPairTag, static_cast<std::uint64_t>(iteration)});
    plan.linear_seed = Rng::derive(cfg.seed, {kLinearTag, static_cast<std::uint64_t>(iteration)});
    return plan;
}

ObjectiveOptions make_objective_options(const FitOptions& options) {
    ObjectiveOptions opt;
    opt.kernel = options.kernel;
    opt.weights = options.train.weights;
    opt.global_mode = options.train.global_mode;
    opt.class_loss = options.train.class_loss;
    opt.focal_gamma = options.train.focal_gamma;
    opt.n_pairs = options.train.n_pairs;
    opt.ablation = options.ablation;
    return opt;
}

GradientResult compute_gradients_ws(const NetworkStack& model,
                                    const std::vector<DomainBatch>& batches,
                                    const IterationPlan& plan, const ObjectiveOptions& opt,
                                    ad::Tape& tape, std::vector<double>& adjoint) {
    tape.clear();
    const Eigen::Index n_params = parameter_count(model);
    const NetworkStackT<ad::Var> lifted = lift_stack(tape, model);
    const LossBreakdownT<ad::Var> breakdown = evaluate_objective(lifted, batches, plan, opt);

    GradientResult result;
    result.components = {value_of(breakdown.classification), value_of(breakdown.kl_extractor),
                         value_of(breakdown.kl_classifier),  value_of(breakdown.local),
                         value_of(breakdown.global),         value_of(breakdown.total)};
    result.gradient = Eigen::VectorXd::Zero(n_params);
    if (breakdown.total.tape != nullptr) {
        tape.backward(breakdown.total, adjoint);
        for (Eigen::Index k = 0; k < n_params; ++k)
            result.gradient(k) = adjoint[static_cast<std::size_t>(k)];
    }

    if (!result.gradient.allFinite()) {
        const auto names = parameter_block_names(model);
        Eigen::Index offset = 0;
        std::size_t block = 0;
        std::vector<Eigen::Index> sizes;
        for_each_parameter(model, [&sizes](const auto& t) { sizes.push_back(t.size()); });
        for (Eigen::Index k = 0; k < n_params; ++k) {
            while (k >= offset + sizes[block]) offset += sizes[block++];
            if (!std::isfinite(result.gradient(k)))
                throw NumericError("compute_gradients: non-finite gradient in block " +
                                   names[block]);
        }
    }
    return result;
}

}  // namespace

NetworkStackT<ad::Var> lift_stack(ad::Tape& tape, const NetworkStack& stack) {
    NetworkStackT<ad::Var> out = stack_cast<ad::Var>(stack);
    for_each_parameter(out, [&tape](auto& tensor) {
        for (Eigen::Index k = 0; k < tensor.size(); ++k)
            tensor.data()[k] = tape.leaf(tensor.data()[k].v);
    });
    return out;
}

GradientResult compute_gradients(const NetworkStack& model, const std::vector<DomainBatch>& batches,
                                 const IterationPlan& plan, const ObjectiveOptions& opt) {
    ad::Tape tape;
    std::vector<double> adjoint;
    return compute_gradients_ws(model, batches, plan, opt, tape, adjoint);
}

ComponentGradients compute_component_gradients(const NetworkStack& model,
                                               const std::vector<DomainBatch>& batches,
                                               const IterationPlan& plan,
                                               const ObjectiveOptions& opt) {
    ad::Tape tape;
    const Eigen::Index n_params = parameter_count(model);
    const NetworkStackT<ad::Var> lifted = lift_stack(tape, model);
    const LossBreakdownT<ad::Var> breakdown = evaluate_objective(lifted, batches, plan, opt);

    ComponentGradients result;
    result.values = {value_of(breakdown.classification), value_of(breakdown.kl_extractor),
                     value_of(breakdown.kl_classifier),  value_of(breakdown.local),
                     value_of(breakdown.global),         value_of(breakdown.total)};
    std::vector<double> adjoint;
    for (LossComponent which :
         {LossComponent::classification, LossComponent::kl_extractor, LossComponent::kl_classifier,
          LossComponent::local, LossComponent::global_loss, LossComponent::total}) {
        const ad::Var& node = pick_component(breakdown, which);
        Eigen::VectorXd grad = Eigen::VectorXd::Zero(n_params);
        if (node.tape != nullptr) {
            tape.backward(node, adjoint);
            for (Eigen::Index k = 0; k < n_params; ++k)
                grad(k) = adjoint[static_cast<std::size_t>(k)];
        }
        result.gradients.emplace(which, std::move(grad));
    }
    return result;
}

Eigen::VectorXd finite_difference_gradient(const NetworkStack& model,
                                           const std::vector<DomainBatch>& batches,
                                           const IterationPlan& plan, const ObjectiveOptions& opt,
                                           LossComponent component, double step) {
    if (!(step > 0.0)) throw ValidationError("finite_difference_gradient: step must be positive");
    NetworkStack work = model;
    Eigen::VectorXd params = flatten_parameters(model);
    Eigen::VectorXd grad(params.size());
    for (Eigen::Index k = 0; k < params.size(); ++k) {
        const double saved = params(k);
        params(k) = saved + step;
        set_parameters(work, params);
        const double up = value_of(pick_component(evaluate_objective(work, batches, plan, opt),
                                                  component));
        params(k) = saved - step;
        set_parameters(work, params);
        const double down = value_of(pick_component(evaluate_objective(work, batches, plan, opt),
                                                    component));
        params(k) = saved;
        grad(k) = (up - down) / (2.0 * step);
    }
    set_parameters(work, params);
    return grad;
}

std::vector<std::string> parameter_block_names(const NetworkStack& stack) {
    std::vector<std::string> names;
    for (const char* layer : {"extractor", "classifier"})
        for (const char* tensor : {"weights", "biases"})
            for (const char* part : {"mu", "rho"})
                names.push_back(std::string(layer) + "." + tensor + "." + part);
    for (std::size_t i = 0; i < stack.backbone.size(); ++i) {
        names.push_back("backbone[" + std::to_string(i) + "].weight");
        names.push_back("backbone[" + std::to_string(i) + "].bias");
    }
    for (std::size_t i = 0; i < stack.metric.size(); ++i) {
        names.push_back("metric[" + std::to_string(i) + "].weight");
        names.push_back("metric[" + std::to_string(i) + "].bias");
    }
    return names;
}

void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, AdamState& state, double lr,
               const AdamConfig& cfg) {
    if (params.size() != grad.size())
        throw ShapeError("adam_step: parameter and gradient sizes differ");
    if (state.step == 0) {
        state.m = Eigen::VectorXd::Zero(params.size());
        state.v = Eigen::VectorXd::Zero(params.size());
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: state does not match parameter size");

    state.step += 1;
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double m_corr = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double v_corr = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    params -= (lr / m_corr) *
              (state.m.array() / ((state.v / v_corr).array().sqrt() + cfg.epsilon)).matrix();
}

TrainLog fit(const FitOptions& options, const std::vector<DomainBatch>& sources,
             NetworkStack& model) {
    const TrainConfig& cfg = options.train;
    cfg.validate();
    options.kernel.validate();
    if (sources.size() < 2) throw ValidationError("fit: needs at least 2 source domains");
    for (const auto& source : sources) {
        if (source.x.rows() < 1) throw ValidationError("fit: empty source domain");
        if (source.x.rows() < cfg.batch_per_domain)
            throw ValidationError("fit: batch_per_domain exceeds a domain's sample count");
    }

    std::vector<std::uint64_t> domain_seeds = cfg.domain_seeds;
    if (domain_seeds.empty())
        for (std::size_t l = 0; l < sources.size(); ++l)
            domain_seeds.push_back(Rng::derive(cfg.seed, {kDomainTag, l}));
    if (domain_seeds.size() != sources.size())
        throw ValidationError("fit: domain_seeds length does not match source count");

    const ObjectiveOptions opt = make_objective_options(options);
    Eigen::VectorXd params = flatten_parameters(model);
    AdamState adam;
    ad::Tape tape;
    std::vector<double> adjoint;
    TrainLog log;
    log.reserve(static_cast<std::size_t>(cfg.iterations));

    for (int it = 0; it < cfg.iterations; ++it) {
        std::vector<DomainBatch> batches;
        batches.reserve(sources.size());
        for (std::size_t l = 0; l < sources.size(); ++l) {
            Rng batch_rng(Rng::derive(domain_seeds[l], {kBatchTag, static_cast<std::uint64_t>(it)}));
            batches.push_back(take_rows(
                sources[l], sample_without_replacement(static_cast<int>(sources[l].x.rows()),
                                                       cfg.batch_per_domain, batch_rng)));
        }

        const IterationPlan plan = make_plan(model, options, it, cfg.batch_per_domain);
        const GradientResult result = compute_gradients_ws(model, batches, plan, opt, tape, adjoint);
        adam_step(params, result.gradient, adam, cfg.learning_rate);
        set_parameters(model, params);
        log.push_back({it, result.components});
    }
    return log;
}

void pretrain_pointwise(NetworkStack& model, const std::vector<DomainBatch>& sources,
                        int iterations, double lr, int batch_size, ClassLoss kind, double gamma,
                        std::uint64_t seed) {
    if (sources.empty()) throw ValidationError("pretrain_pointwise: no source data");
    DomainBatch pooled;
    Eigen::Index total = 0;
    for (const auto& source : sources) total += source.x.rows();
    pooled.x.resize(total, sources.front().x.cols());
    Eigen::Index row = 0;
    for (const auto& source : sources) {
        pooled.x.middleRows(row, source.x.rows()) = source.x;
        pooled.labels.insert(pooled.labels.end(), source.labels.begin(), source.labels.end());
        row += source.x.rows();
    }
    batch_size = std::min<int>(batch_size, static_cast<int>(total));

    ObjectiveOptions opt;
    opt.class_loss = kind;
    opt.focal_gamma = gamma;
    opt.ablation.deterministic = true;
    opt.ablation.disable_local = true;
    opt.ablation.disable_global = true;

    IterationPlan plan;
    plan.draws.emplace_back();

    Eigen::VectorXd params = flatten_parameters(model);
    AdamState adam;
    ad::Tape tape;
    std::vector<double> adjoint;
    for (int it = 0; it < iterations; ++it) {
        Rng batch_rng(Rng::derive(seed, {kPretrainTag, static_cast<std::uint64_t>(it)}));
        const std::vector<DomainBatch> batches = {take_rows(
            pooled,
            sample_without_replacement(static_cast<int>(total), batch_size, batch_rng))};
        const GradientResult result = compute_gradients_ws(model, batches, plan, opt, tape, adjoint);
        adam_step(params, result.gradient, adam, lr);
        set_parameters(model, params);
    }
}

EvalMetrics evaluate_lodo(const NetworkStack& model, const std::vector<DomainBatch>& all_domains,
                          int held_out_index, int t_passes, std::uint64_t seed,
                          bool deterministic) {
    if (held_out_index < 0 || held_out_index >= static_cast<int>(all_domains.size()))
        throw ValidationError("evaluate_lodo: held_out_index out of range");
    if (t_passes < 1) throw ValidationError("evaluate_lodo: t_passes must be at least 1");
    const DomainBatch& target = all_domains[static_cast<std::size_t>(held_out_index)];
    if (target.x.rows() < 1) throw ValidationError("evaluate_lodo: empty held-out domain");

    EvalMetrics metrics;
    metrics.samples = static_cast<int>(target.x.rows());
    std::map<int, std::pair<long, long>> per_class;  // label -> (correct, total)
    long correct = 0;
    double entropy_sum = 0.0;

    for (Eigen::Index i = 0; i < target.x.rows(); ++i) {
        Eigen::VectorXd expected;
        if (deterministic) {
            const DrawRecord no_noise;
            const auto out = forward_batch(model, target.x.row(i), no_noise);
            expected = softmax<double>(out.logits.row(0).transpose());
        } else {
            Rng rng(Rng::derive(seed, {kEvalTag, static_cast<std::uint64_t>(i)}));
            const auto [cloud, probs] = forward_prob(model, target.x.row(i).transpose(),
                                                     t_passes, rng);
            expected = predict_expected(probs);
        }
        Eigen::Index predicted;
        expected.maxCoeff(&predicted);

        const int label = target.labels[static_cast<std::size_t>(i)];
        auto& tally = per_class[label];
        tally.second += 1;
        if (static_cast<int>(predicted) == label) {
            tally.first += 1;
            ++correct;
        }
        for (Eigen::Index c = 0; c < expected.size(); ++c)
            if (expected(c) > 0.0) entropy_sum -= expected(c) * std::log(expected(c));
    }

    metrics.accuracy = static_cast<double>(correct) / static_cast<double>(metrics.samples);
    metrics.mean_predictive_entropy = entropy_sum / static_cast<double>(metrics.samples);
    for (const auto& [label, tally] : per_class)
        metrics.per_class_accuracy[label] =
            static_cast<double>(tally.first) / static_cast<double>(tally.second);
    return metrics;
}

}  // namespace pdg
