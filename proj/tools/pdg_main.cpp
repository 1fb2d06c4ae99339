// Experiment CLI: synthetic data generation, training/evaluation runs,
// two-sample discrepancy queries, and the selfcheck suite.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "pdg/checkpoint.hpp"
#include "pdg/dataset.hpp"
#include "pdg/errors.hpp"
#include "pdg/experiment.hpp"
#include "pdg/selfcheck.hpp"
#include "pdg/synthetic.hpp"
#include "pdg/version.hpp"

namespace {

using nlohmann::json;

int log_level() {
    const char* env = std::getenv("PDG_LOG");
    if (env == nullptr) return 1;
    const std::string value(env);
    if (value == "quiet") return 0;
    if (value == "debug") return 2;
    return 1;
}

pdg::ExperimentConfig resolve_config(const std::string& config_path,
                                     std::optional<std::uint64_t> seed,
                                     const std::string& out_dir, const std::string& ablation) {
    pdg::ExperimentConfig cfg =
        config_path.empty() ? pdg::config_from_json(json::object()) : pdg::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (!ablation.empty()) pdg::apply_ablation_list(cfg.ablation, ablation);
    cfg.validate();
    return cfg;
}

int cmd_generate_data(const std::string& config_path, std::optional<std::uint64_t> seed,
                      const std::string& out_dir) {
    pdg::SyntheticSpec spec = pdg::shift3_spec();
    if (!config_path.empty()) {
        const pdg::ExperimentConfig cfg = pdg::load_config(config_path);
        if (!cfg.data.synthetic)
            throw pdg::ValidationError("generate-data: config has no synthetic data source");
        spec = *cfg.data.synthetic;
    }
    if (seed) spec.seed = *seed;

    const auto datasets = pdg::generate_synthetic(spec);
    std::filesystem::create_directories(out_dir);
    for (const auto& dataset : datasets) {
        const auto path =
            (std::filesystem::path(out_dir) / ("domain_" + std::to_string(dataset.domain_id) +
                                               ".csv"))
                .string();
        pdg::write_domain_csv(path, {dataset});
        if (log_level() > 0) std::cout << "wrote " << path << " (" << dataset.x.rows()
                                       << " samples)\n";
    }
    return 0;
}

int cmd_train(const pdg::ExperimentConfig& cfg) {
    const pdg::ExperimentResult result = pdg::run_experiment(cfg);
    std::cout << pdg::report_to_json(result.report).dump(2) << '\n';
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const pdg::ExperimentConfig& cfg) {
    const pdg::NetworkStack model = pdg::load_checkpoint(checkpoint_path);
    const auto datasets = cfg.data.synthetic ? pdg::generate_synthetic(*cfg.data.synthetic)
                                             : pdg::load_domain_csvs(cfg.data.paths);
    const auto metrics = pdg::evaluate_lodo(model, pdg::to_batches(datasets), cfg.held_out_domain,
                                            cfg.train.weights.t_passes, cfg.seed,
                                            cfg.ablation.deterministic);
    json j;
    j["accuracy"] = metrics.accuracy;
    j["mean_predictive_entropy"] = metrics.mean_predictive_entropy;
    j["evaluated_samples"] = metrics.samples;
    json per_class = json::object();
    for (const auto& [label, acc] : metrics.per_class_accuracy)
        per_class[std::to_string(label)] = acc;
    j["per_class_accuracy"] = per_class;
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_mmd(const std::string& file_x, const std::string& file_y, double lambda1,
            const std::string& estimator) {
    pdg::KernelConfig cfg;
    cfg.lambda1 = lambda1;
    if (estimator == "unbiased") cfg.estimator = pdg::MmdEstimator::unbiased_u_statistic;
    else if (estimator != "biased")
        throw pdg::ValidationError("mmd: --estimator must be 'biased' or 'unbiased'");

    const Eigen::MatrixXd x = pdg::load_point_set_csv(file_x);
    const Eigen::MatrixXd y = pdg::load_point_set_csv(file_y);
    json j;
    j["mmd2"] = pdg::mmd2<double>(cfg, x, y);
    j["estimator"] = estimator + "_" + (estimator == "biased" ? "v_statistic" : "u_statistic");
    j["lambda1"] = lambda1;
    j["n_x"] = x.rows();
    j["n_y"] = y.rows();
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_pmmd(const std::string& file_l, const std::string& file_t, double lambda1, double lambda2,
             bool linear, std::uint64_t seed) {
    pdg::KernelConfig cfg;
    cfg.lambda1 = lambda1;
    cfg.lambda2 = lambda2;
    const auto dl = pdg::load_embeddings_csv(file_l);
    const auto dt = pdg::load_embeddings_csv(file_t);

    json j;
    if (linear) {
        pdg::Rng rng(seed);
        j["pmmd2"] = pdg::pmmd2_linear(cfg, dl, dt, rng);
        j["estimator"] = "linear_statistic";
        j["seed"] = seed;
    } else {
        j["pmmd2"] = pdg::pmmd2(cfg, dl, dt);
        j["estimator"] = "plug_in";
    }
    j["lambda1"] = lambda1;
    j["lambda2"] = lambda2;
    j["n_l"] = dl.size();
    j["n_t"] = dt.size();
    std::cout << j.dump(2) << '\n';
    return 0;
}

int cmd_selfcheck(std::uint64_t seed) {
    const pdg::SelfcheckReport report = pdg::selfcheck(seed);
    pdg::print_report(std::cout, report);
    return report.all_passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Probabilistic domain generalization experiments (P-MMD / P-CSA)"};
    app.set_version_flag("--version", pdg::kVersion);
    app.require_subcommand(1);

    std::string config_path, out_dir, ablation, checkpoint_path;
    std::optional<std::uint64_t> seed;

    auto* generate = app.add_subcommand("generate-data", "Write synthetic domain CSV files");
    std::string gen_out = "data";
    generate->add_option("--config", config_path, "Experiment config JSON");
    generate->add_option("--seed", seed, "Override the data seed");
    generate->add_option("--out-dir", gen_out, "Output directory");

    auto* train = app.add_subcommand("train", "Run a leave-one-domain-out experiment");
    train->add_option("--config", config_path, "Experiment config JSON");
    train->add_option("--seed", seed, "Override the experiment seed");
    train->add_option("--out-dir", out_dir, "Directory for loss.csv/metrics.json/checkpoint.json");
    train->add_option("--ablation", ablation, "Comma-separated ablation flags");

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a checkpoint on the held-out domain");
    evaluate->add_option("checkpoint", checkpoint_path, "checkpoint.json path")->required();
    evaluate->add_option("--config", config_path, "Experiment config JSON");
    evaluate->add_option("--seed", seed, "Override the evaluation seed");
    evaluate->add_option("--ablation", ablation, "Comma-separated ablation flags");

    std::string mmd_x, mmd_y, mmd_estimator = "biased";
    double lambda1 = 1.0, lambda2 = 1.0;
    auto* mmd_cmd = app.add_subcommand("mmd", "Squared MMD between two point-set CSV files");
    mmd_cmd->add_option("x", mmd_x, "First point-set CSV")->required();
    mmd_cmd->add_option("y", mmd_y, "Second point-set CSV")->required();
    mmd_cmd->add_option("--lambda1", lambda1, "Level-1 kernel bandwidth");
    mmd_cmd->add_option("--estimator", mmd_estimator, "biased | unbiased");

    std::string pmmd_l, pmmd_t;
    bool pmmd_linear = false;
    auto* pmmd_cmd =
        app.add_subcommand("pmmd", "Squared probabilistic MMD between two embedding CSV files");
    pmmd_cmd->add_option("l", pmmd_l, "First domain embedding CSV")->required();
    pmmd_cmd->add_option("t", pmmd_t, "Second domain embedding CSV")->required();
    pmmd_cmd->add_option("--lambda1", lambda1, "Level-1 kernel bandwidth");
    pmmd_cmd->add_option("--lambda2", lambda2, "Level-2 kernel bandwidth");
    pmmd_cmd->add_flag("--linear", pmmd_linear, "Use the linear-statistic estimator");
    pmmd_cmd->add_option("--seed", seed, "Seed for the linear estimator's pairings");

    auto* selfcheck_cmd = app.add_subcommand("selfcheck", "Run the oracle/gradient/property suite");
    selfcheck_cmd->add_option("--seed", seed, "Suite seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (generate->parsed()) return cmd_generate_data(config_path, seed, gen_out);
        if (train->parsed()) return cmd_train(resolve_config(config_path, seed, out_dir, ablation));
        if (evaluate->parsed())
            return cmd_evaluate(checkpoint_path,
                                resolve_config(config_path, seed, "", ablation));
        if (mmd_cmd->parsed()) return cmd_mmd(mmd_x, mmd_y, lambda1, mmd_estimator);
        if (pmmd_cmd->parsed())
            return cmd_pmmd(pmmd_l, pmmd_t, lambda1, lambda2, pmmd_linear, seed.value_or(0));
        if (selfcheck_cmd->parsed()) return cmd_selfcheck(seed.value_or(0));
    } catch (const pdg::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
