#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pdg/bayes_net.hpp"
#include "pdg/dataset.hpp"
#include "pdg/synthetic.hpp"
#include "pdg/train.hpp"

namespace pdg {

// Exactly one data source: a synthetic task spec or dataset CSV paths.
struct DataConfig {
    std::optional<SyntheticSpec> synthetic;
    std::vector<std::string> paths;
};

struct ModelConfig {
    StackConfig stack;
    bool moped = true;
    double moped_delta = 0.1;
    int pretrain_iterations = 300;
    double pretrain_lr = 0.01;
    int pretrain_batch = 64;
};

struct ExperimentConfig {
    std::uint64_t seed = 0;
    int held_out_domain = 0;
    std::string out_dir;
    DataConfig data;
    TrainConfig train;
    KernelConfig kernel;
    ModelConfig model;
    AblationFlags ablation;

    void validate() const;
};

// Declarative experiment description as a JSON document. Every field has a
// default; unknown keys are errors reported with their full path.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);

// Comma-separated ablation switches for the CLI --ablation flag, e.g.
// "mean_embedding,disable_local".
void apply_ablation_list(AblationFlags& flags, const std::string& list);

struct LossSummary {
    LossBreakdown first_tenth_mean;
    LossBreakdown last_tenth_mean;
};

struct MetricsReport {
    int schema_version = 1;
    std::string library_version;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    std::map<int, double> per_class_accuracy;
    double mean_predictive_entropy = 0.0;
    int evaluated_samples = 0;
    LossSummary loss_summary;
    double wall_clock_seconds = 0.0;
    nlohmann::json config_echo;
};

nlohmann::json report_to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

void write_loss_csv(const std::string& path, const TrainLog& log);

struct ExperimentResult {
    MetricsReport report;
    TrainLog log;
    NetworkStack model;
};

// Full leave-one-domain-out run: load or generate the domains, pretrain and
// MOPED-initialize the stack, fit on the source domains, evaluate on the
// held-out one, and (when out_dir is set) write loss.csv, metrics.json and
// checkpoint.json.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// Builds and initializes the model the way run_experiment does, without
// training. Exposed for evaluation tooling.
NetworkStack initialize_model(const ExperimentConfig& cfg, const std::vector<DomainBatch>& sources,
                              int input_dim, int num_classes);

}  // namespace pdg
