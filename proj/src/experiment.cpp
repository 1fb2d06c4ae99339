#include "pdg/experiment.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "pdg/checkpoint.hpp"
#include "pdg/errors.hpp"
#include "pdg/version.hpp"

namespace pdg {

namespace {

using nlohmann::json;

constexpr std::uint64_t kModelInitTag = 201;
constexpr std::uint64_t kPretrainSeedTag = 202;

// Strict reader: every consumed key is recorded, and finish() rejects the
// rest with its full path (fail-fast on typos).
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object())
            throw ValidationError("config: expected an object at '" + path_ + "'");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ValidationError("config: bad value for '" + join(key) + "'");
        }
    }

    const json* child(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string join(const char* key) const {
        return path_.empty() ? key : path_ + "." + key;
    }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key()))
                throw ValidationError("config: unknown key '" + join(item.key().c_str()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class Enum>
Enum parse_enum(const std::string& text, const char* where,
                std::initializer_list<std::pair<const char*, Enum>> table) {
    for (const auto& [name, value] : table)
        if (text == name) return value;
    std::string allowed;
    for (const auto& [name, value] : table) allowed += std::string(allowed.empty() ? "" : ", ") + name;
    throw ValidationError(std::string("config: '") + where + "' must be one of: " + allowed);
}

template <class Enum>
const char* enum_name(Enum value, std::initializer_list<std::pair<const char*, Enum>> table) {
    for (const auto& [name, v] : table)
        if (v == value) return name;
    return "?";
}

constexpr std::initializer_list<std::pair<const char*, GlobalMode>> kGlobalModes = {
    {"quadratic", GlobalMode::quadratic}, {"linear", GlobalMode::linear}};
constexpr std::initializer_list<std::pair<const char*, MmdEstimator>> kEstimators = {
    {"biased_v_statistic", MmdEstimator::biased_v_statistic},
    {"unbiased_u_statistic", MmdEstimator::unbiased_u_statistic}};
constexpr std::initializer_list<std::pair<const char*, ClassLoss>> kClassLosses = {
    {"cross_entropy", ClassLoss::cross_entropy}, {"focal", ClassLoss::focal}};

SyntheticSpec synthetic_from_json(const json& j, const std::string& path) {
    SyntheticSpec spec = shift3_spec();
    StrictObject reader(j, path);
    reader.get("n_domains", spec.n_domains);
    reader.get("classes", spec.classes);
    reader.get("dim", spec.dim);
    reader.get("samples_per_domain", spec.samples_per_domain);
    reader.get("class_separation", spec.class_separation);
    reader.get("noise_sigma", spec.noise_sigma);
    reader.get("seed", spec.seed);

    std::vector<double> rotations, scales;
    std::vector<std::vector<double>> translations;
    reader.get("rotations", rotations);
    reader.get("scales", scales);
    reader.get("translations", translations);
    reader.finish();

    if (!rotations.empty() || !scales.empty() || !translations.empty()) {
        spec.transforms.assign(static_cast<std::size_t>(spec.n_domains), DomainTransform{});
        auto check_size = [&](std::size_t n, const char* what) {
            if (n != static_cast<std::size_t>(spec.n_domains))
                throw ValidationError("config: '" + path + "." + what + "' must list one entry per domain");
        };
        if (!rotations.empty()) {
            check_size(rotations.size(), "rotations");
            for (std::size_t i = 0; i < rotations.size(); ++i)
                spec.transforms[i].rotation = rotations[i];
        }
        if (!scales.empty()) {
            check_size(scales.size(), "scales");
            for (std::size_t i = 0; i < scales.size(); ++i) spec.transforms[i].scale = scales[i];
        }
        if (!translations.empty()) {
            check_size(translations.size(), "translations");
            for (std::size_t i = 0; i < translations.size(); ++i) {
                spec.transforms[i].translation.resize(
                    static_cast<Eigen::Index>(translations[i].size()));
                for (std::size_t k = 0; k < translations[i].size(); ++k)
                    spec.transforms[i].translation(static_cast<Eigen::Index>(k)) =
                        translations[i][k];
            }
        }
    } else if (spec.n_domains != 4) {
        spec.transforms.clear();  // shift3 default rotations only fit 4 domains
    }
    return spec;
}

json synthetic_to_json(const SyntheticSpec& spec) {
    json j;
    j["n_domains"] = spec.n_domains;
    j["classes"] = spec.classes;
    j["dim"] = spec.dim;
    j["samples_per_domain"] = spec.samples_per_domain;
    j["class_separation"] = spec.class_separation;
    j["noise_sigma"] = spec.noise_sigma;
    j["seed"] = spec.seed;
    if (!spec.transforms.empty()) {
        json rotations = json::array(), scales = json::array(), translations = json::array();
        for (const auto& t : spec.transforms) {
            rotations.push_back(t.rotation);
            scales.push_back(t.scale);
            std::vector<double> translation(t.translation.data(),
                                            t.translation.data() + t.translation.size());
            translations.push_back(translation);
        }
        j["rotations"] = rotations;
        j["scales"] = scales;
        j["translations"] = translations;
    }
    return j;
}

json breakdown_to_json(const LossBreakdown& b) {
    return json{{"classification", b.classification}, {"kl_extractor", b.kl_extractor},
                {"kl_classifier", b.kl_classifier},   {"local", b.local},
                {"global", b.global},                 {"total", b.total}};
}

LossBreakdown breakdown_from_json(const json& j) {
    LossBreakdown b;
    b.classification = j.at("classification").get<double>();
    b.kl_extractor = j.at("kl_extractor").get<double>();
    b.kl_classifier = j.at("kl_classifier").get<double>();
    b.local = j.at("local").get<double>();
    b.global = j.at("global").get<double>();
    b.total = j.at("total").get<double>();
    return b;
}

LossBreakdown mean_window(const TrainLog& log, std::size_t begin, std::size_t end) {
    LossBreakdown mean;
    if (begin >= end) return mean;
    for (std::size_t i = begin; i < end; ++i) {
        mean.classification += log[i].losses.classification;
        mean.kl_extractor += log[i].losses.kl_extractor;
        mean.kl_classifier += log[i].losses.kl_classifier;
        mean.local += log[i].losses.local;
        mean.global += log[i].losses.global;
        mean.total += log[i].losses.total;
    }
    const double n = static_cast<double>(end - begin);
    mean.classification /= n;
    mean.kl_extractor /= n;
    mean.kl_classifier /= n;
    mean.local /= n;
    mean.global /= n;
    mean.total /= n;
    return mean;
}

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

void ExperimentConfig::validate() const {
    const bool has_synthetic = data.synthetic.has_value();
    const bool has_paths = !data.paths.empty();
    if (has_synthetic == has_paths)
        throw ValidationError("config: 'data' must name exactly one source (synthetic or paths)");
    if (has_synthetic) {
        data.synthetic->validate();
        if (held_out_domain < 0 || held_out_domain >= data.synthetic->n_domains)
            throw ValidationError("config: 'held_out_domain' out of range");
    } else if (held_out_domain < 0) {
        throw ValidationError("config: 'held_out_domain' must be non-negative");
    }
    train.validate();
    kernel.validate();
    if (model.stack.latent_dim < 1) throw ValidationError("config: 'model.latent_dim' < 1");
    if (!(model.stack.sigma_floor > 0.0))
        throw ValidationError("config: 'model.sigma_floor' must be positive");
    if (!(model.stack.init_sigma > 0.0))
        throw ValidationError("config: 'model.init_sigma' must be positive");
    if (model.moped && !(model.moped_delta > 0.0))
        throw ValidationError("config: 'model.moped_delta' must be positive");
    if (model.pretrain_iterations < 0 || model.pretrain_batch < 1)
        throw ValidationError("config: invalid pretraining settings");
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig cfg;
    cfg.data.synthetic = shift3_spec();
    cfg.held_out_domain = 3;

    StrictObject root(j, "");
    root.get("seed", cfg.seed);
    root.get("held_out_domain", cfg.held_out_domain);
    root.get("out_dir", cfg.out_dir);

    if (const json* data = root.child("data")) {
        StrictObject reader(*data, "data");
        const json* synthetic = reader.child("synthetic");
        std::vector<std::string> paths;
        reader.get("paths", paths);
        reader.finish();
        cfg.data.synthetic.reset();
        cfg.data.paths = paths;
        if (synthetic) cfg.data.synthetic = synthetic_from_json(*synthetic, "data.synthetic");
    }

    if (const json* train = root.child("train")) {
        StrictObject reader(*train, "train");
        reader.get("learning_rate", cfg.train.learning_rate);
        reader.get("batch_per_domain", cfg.train.batch_per_domain);
        reader.get("iterations", cfg.train.iterations);
        reader.get("n_pairs", cfg.train.n_pairs);
        reader.get("focal_gamma", cfg.train.focal_gamma);
        reader.get("domain_seeds", cfg.train.domain_seeds);
        std::string mode = enum_name(cfg.train.global_mode, kGlobalModes);
        reader.get("global_mode", mode);
        cfg.train.global_mode = parse_enum(mode, "train.global_mode", kGlobalModes);
        std::string loss = enum_name(cfg.train.class_loss, kClassLosses);
        reader.get("class_loss", loss);
        cfg.train.class_loss = parse_enum(loss, "train.class_loss", kClassLosses);
        if (const json* weights = reader.child("weights")) {
            StrictObject w(*weights, "train.weights");
            w.get("beta1", cfg.train.weights.beta1);
            w.get("beta2", cfg.train.weights.beta2);
            w.get("margin_xi", cfg.train.weights.margin_xi);
            w.get("t_passes", cfg.train.weights.t_passes);
            w.get("kl_scale", cfg.train.weights.kl_scale);
            w.finish();
        }
        reader.finish();
    }

    if (const json* kernel = root.child("kernel")) {
        StrictObject reader(*kernel, "kernel");
        reader.get("lambda1", cfg.kernel.lambda1);
        reader.get("lambda2", cfg.kernel.lambda2);
        std::string estimator = enum_name(cfg.kernel.estimator, kEstimators);
        reader.get("estimator", estimator);
        cfg.kernel.estimator = parse_enum(estimator, "kernel.estimator", kEstimators);
        reader.finish();
    }

    if (const json* model = root.child("model")) {
        StrictObject reader(*model, "model");
        reader.get("backbone_widths", cfg.model.stack.backbone_widths);
        reader.get("latent_dim", cfg.model.stack.latent_dim);
        reader.get("metric_widths", cfg.model.stack.metric_widths);
        reader.get("sigma_floor", cfg.model.stack.sigma_floor);
        reader.get("init_sigma", cfg.model.stack.init_sigma);
        reader.get("per_item_draws", cfg.model.stack.per_item_draws);
        reader.get("decouple_draws", cfg.model.stack.decouple_draws);
        reader.get("moped", cfg.model.moped);
        reader.get("moped_delta", cfg.model.moped_delta);
        reader.get("pretrain_iterations", cfg.model.pretrain_iterations);
        reader.get("pretrain_lr", cfg.model.pretrain_lr);
        reader.get("pretrain_batch", cfg.model.pretrain_batch);
        reader.finish();
    }

    if (const json* ablation = root.child("ablation")) {
        StrictObject reader(*ablation, "ablation");
        reader.get("mean_embedding_global", cfg.ablation.mean_embedding_global);
        reader.get("mean_csa_local", cfg.ablation.mean_csa_local);
        reader.get("disable_local", cfg.ablation.disable_local);
        reader.get("disable_global", cfg.ablation.disable_global);
        reader.get("deterministic", cfg.ablation.deterministic);
        reader.get("detach_metric_input", cfg.ablation.detach_metric_input);
        reader.finish();
    }

    root.finish();
    cfg.validate();
    return cfg;
}

json config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["held_out_domain"] = cfg.held_out_domain;
    j["out_dir"] = cfg.out_dir;
    j["data"] = json::object();
    if (cfg.data.synthetic) j["data"]["synthetic"] = synthetic_to_json(*cfg.data.synthetic);
    if (!cfg.data.paths.empty()) j["data"]["paths"] = cfg.data.paths;
    j["train"] = {{"learning_rate", cfg.train.learning_rate},
                  {"batch_per_domain", cfg.train.batch_per_domain},
                  {"iterations", cfg.train.iterations},
                  {"n_pairs", cfg.train.n_pairs},
                  {"focal_gamma", cfg.train.focal_gamma},
                  {"global_mode", enum_name(cfg.train.global_mode, kGlobalModes)},
                  {"class_loss", enum_name(cfg.train.class_loss, kClassLosses)},
                  {"weights",
                   {{"beta1", cfg.train.weights.beta1},
                    {"beta2", cfg.train.weights.beta2},
                    {"margin_xi", cfg.train.weights.margin_xi},
                    {"t_passes", cfg.train.weights.t_passes},
                    {"kl_scale", cfg.train.weights.kl_scale}}}};
    if (!cfg.train.domain_seeds.empty()) j["train"]["domain_seeds"] = cfg.train.domain_seeds;
    j["kernel"] = {{"lambda1", cfg.kernel.lambda1},
                   {"lambda2", cfg.kernel.lambda2},
                   {"estimator", enum_name(cfg.kernel.estimator, kEstimators)}};
    j["model"] = {{"backbone_widths", cfg.model.stack.backbone_widths},
                  {"latent_dim", cfg.model.stack.latent_dim},
                  {"metric_widths", cfg.model.stack.metric_widths},
                  {"sigma_floor", cfg.model.stack.sigma_floor},
                  {"init_sigma", cfg.model.stack.init_sigma},
                  {"per_item_draws", cfg.model.stack.per_item_draws},
                  {"decouple_draws", cfg.model.stack.decouple_draws},
                  {"moped", cfg.model.moped},
                  {"moped_delta", cfg.model.moped_delta},
                  {"pretrain_iterations", cfg.model.pretrain_iterations},
                  {"pretrain_lr", cfg.model.pretrain_lr},
                  {"pretrain_batch", cfg.model.pretrain_batch}};
    j["ablation"] = {{"mean_embedding_global", cfg.ablation.mean_embedding_global},
                     {"mean_csa_local", cfg.ablation.mean_csa_local},
                     {"disable_local", cfg.ablation.disable_local},
                     {"disable_global", cfg.ablation.disable_global},
                     {"deterministic", cfg.ablation.deterministic},
                     {"detach_metric_input", cfg.ablation.detach_metric_input}};
    return j;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return config_from_json(j);
}

void apply_ablation_list(AblationFlags& flags, const std::string& list) {
    std::size_t start = 0;
    while (start <= list.size()) {
        const std::size_t comma = list.find(',', start);
        const std::string token =
            list.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
        if (token == "mean_embedding") flags.mean_embedding_global = true;
        else if (token == "mean_csa") flags.mean_csa_local = true;
        else if (token == "disable_local") flags.disable_local = true;
        else if (token == "disable_global") flags.disable_global = true;
        else if (token == "deterministic") flags.deterministic = true;
        else if (token == "detach_metric") flags.detach_metric_input = true;
        else if (!token.empty())
            throw ValidationError("unknown ablation flag '" + token +
                                  "' (expected mean_embedding, mean_csa, disable_local, "
                                  "disable_global, deterministic, detach_metric)");
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
}

json report_to_json(const MetricsReport& report) {
    json per_class = json::object();
    for (const auto& [label, acc] : report.per_class_accuracy)
        per_class[std::to_string(label)] = acc;
    return json{{"schema_version", report.schema_version},
                {"library_version", report.library_version},
                {"seed", report.seed},
                {"accuracy", report.accuracy},
                {"per_class_accuracy", per_class},
                {"mean_predictive_entropy", report.mean_predictive_entropy},
                {"evaluated_samples", report.evaluated_samples},
                {"loss_summary",
                 {{"first_tenth_mean", breakdown_to_json(report.loss_summary.first_tenth_mean)},
                  {"last_tenth_mean", breakdown_to_json(report.loss_summary.last_tenth_mean)}}},
                {"wall_clock_seconds", report.wall_clock_seconds},
                {"config_echo", report.config_echo}};
}

MetricsReport report_from_json(const json& j) {
    MetricsReport report;
    report.schema_version = j.at("schema_version").get<int>();
    if (report.schema_version != 1)
        throw IoError("metrics: unsupported schema_version " +
                      std::to_string(report.schema_version));
    report.library_version = j.at("library_version").get<std::string>();
    report.seed = j.at("seed").get<std::uint64_t>();
    report.accuracy = j.at("accuracy").get<double>();
    for (const auto& item : j.at("per_class_accuracy").items())
        report.per_class_accuracy[std::stoi(item.key())] = item.value().get<double>();
    report.mean_predictive_entropy = j.at("mean_predictive_entropy").get<double>();
    report.evaluated_samples = j.at("evaluated_samples").get<int>();
    report.loss_summary.first_tenth_mean =
        breakdown_from_json(j.at("loss_summary").at("first_tenth_mean"));
    report.loss_summary.last_tenth_mean =
        breakdown_from_json(j.at("loss_summary").at("last_tenth_mean"));
    report.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
    report.config_echo = j.at("config_echo");
    return report;
}

void write_loss_csv(const std::string& path, const TrainLog& log) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "iteration,L_c,KL_Q,KL_C,L_local,L_global,total\n";
    for (const auto& entry : log) {
        out << entry.iteration << ',' << format_double(entry.losses.classification) << ','
            << format_double(entry.losses.kl_extractor) << ','
            << format_double(entry.losses.kl_classifier) << ','
            << format_double(entry.losses.local) << ',' << format_double(entry.losses.global)
            << ',' << format_double(entry.losses.total) << '\n';
    }
}

NetworkStack initialize_model(const ExperimentConfig& cfg, const std::vector<DomainBatch>& sources,
                              int input_dim, int num_classes) {
    Rng init_rng(Rng::derive(cfg.seed, {kModelInitTag}));
    NetworkStack model = build_stack(cfg.model.stack, input_dim, num_classes, init_rng);
    if (cfg.model.moped && cfg.model.pretrain_iterations > 0) {
        pretrain_pointwise(model, sources, cfg.model.pretrain_iterations, cfg.model.pretrain_lr,
                           cfg.model.pretrain_batch, cfg.train.class_loss, cfg.train.focal_gamma,
                           Rng::derive(cfg.seed, {kPretrainSeedTag}));
        const Eigen::MatrixXd ext_w = model.extractor.weights.mu;
        const Eigen::VectorXd ext_b = model.extractor.biases.mu.row(0).transpose();
        moped_init(model.extractor, ext_w, ext_b, cfg.model.moped_delta,
                   cfg.model.stack.sigma_floor);
        const Eigen::MatrixXd cls_w = model.classifier.weights.mu;
        const Eigen::VectorXd cls_b = model.classifier.biases.mu.row(0).transpose();
        moped_init(model.classifier, cls_w, cls_b, cfg.model.moped_delta,
                   cfg.model.stack.sigma_floor);
    }
    return model;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto start = std::chrono::steady_clock::now();

    const std::vector<DomainDataset> datasets =
        cfg.data.synthetic ? generate_synthetic(*cfg.data.synthetic)
                           : load_domain_csvs(cfg.data.paths);
    if (datasets.size() < 3)
        throw ValidationError("run_experiment: need at least 3 domains (2 sources + 1 target)");
    if (cfg.held_out_domain >= static_cast<int>(datasets.size()))
        throw ValidationError("config: 'held_out_domain' out of range for the loaded data");

    const Eigen::Index input_dim = datasets.front().x.cols();
    int num_classes = 0;
    for (const auto& dataset : datasets) {
        if (dataset.x.cols() != input_dim)
            throw ValidationError("run_experiment: domains disagree on feature dimension");
        for (int label : dataset.labels) num_classes = std::max(num_classes, label + 1);
    }
    if (num_classes < 2) throw ValidationError("run_experiment: need at least 2 classes");

    const std::vector<DomainBatch> all_batches = to_batches(datasets);
    std::vector<DomainBatch> sources;
    for (std::size_t i = 0; i < all_batches.size(); ++i)
        if (static_cast<int>(i) != cfg.held_out_domain) sources.push_back(all_batches[i]);

    ExperimentResult result;
    result.model = initialize_model(cfg, sources, static_cast<int>(input_dim), num_classes);

    FitOptions options;
    options.train = cfg.train;
    options.kernel = cfg.kernel;
    options.ablation = cfg.ablation;
    options.per_item_draws = cfg.model.stack.per_item_draws;
    options.decouple_draws = cfg.model.stack.decouple_draws;
    result.log = fit(options, sources, result.model);

    const EvalMetrics metrics =
        evaluate_lodo(result.model, all_batches, cfg.held_out_domain, cfg.train.weights.t_passes,
                      cfg.seed, cfg.ablation.deterministic);

    MetricsReport& report = result.report;
    report.library_version = kVersion;
    report.seed = cfg.seed;
    report.accuracy = metrics.accuracy;
    report.per_class_accuracy = metrics.per_class_accuracy;
    report.mean_predictive_entropy = metrics.mean_predictive_entropy;
    report.evaluated_samples = metrics.samples;
    const std::size_t window = std::max<std::size_t>(1, result.log.size() / 10);
    if (!result.log.empty()) {
        report.loss_summary.first_tenth_mean = mean_window(result.log, 0, window);
        report.loss_summary.last_tenth_mean =
            mean_window(result.log, result.log.size() - window, result.log.size());
    }
    report.config_echo = config_to_json(cfg);
    report.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        const std::filesystem::path dir(cfg.out_dir);
        write_loss_csv((dir / "loss.csv").string(), result.log);
        save_checkpoint((dir / "checkpoint.json").string(), result.model);
        std::ofstream out(dir / "metrics.json");
        if (!out) throw IoError("cannot open metrics.json for writing in " + cfg.out_dir);
        out << report_to_json(report).dump(2) << '\n';
    }
    return result;
}

}  // namespace pdg
