#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pdg/checkpoint.hpp"
#include "pdg/dataset.hpp"
#include "pdg/experiment.hpp"
#include "pdg/oracles.hpp"
#include "pdg/selfcheck.hpp"
#include "pdg/synthetic.hpp"

using nlohmann::json;
using pdg::SyntheticSpec;

namespace {

std::filesystem::path temp_dir() {
    const auto dir = std::filesystem::temp_directory_path() / "pdg_harness_tests";
    std::filesystem::create_directories(dir);
    return dir;
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("synthetic spec validation") {
    SyntheticSpec spec = pdg::shift3_spec();
    CHECK_NOTHROW(spec.validate());

    SyntheticSpec bad = spec;
    bad.samples_per_domain = 61;  // not divisible by classes
    CHECK_THROWS_AS(bad.validate(), pdg::ValidationError);
    bad = spec;
    bad.n_domains = 1;
    CHECK_THROWS_AS(bad.validate(), pdg::ValidationError);
    bad = spec;
    bad.noise_sigma = 0.0;
    CHECK_THROWS_AS(bad.validate(), pdg::ValidationError);
    bad = spec;
    bad.transforms.resize(2);
    CHECK_THROWS_AS(bad.validate(), pdg::ValidationError);
}

TEST_CASE("identity transforms generate identically distributed domains") {
    SyntheticSpec spec;
    spec.n_domains = 3;
    spec.classes = 2;
    spec.dim = 4;
    spec.samples_per_domain = 12;
    spec.seed = 11;

    const auto implicit_identity = pdg::generate_synthetic(spec);
    spec.transforms.assign(3, pdg::DomainTransform{});
    const auto explicit_identity = pdg::generate_synthetic(spec);
    REQUIRE(implicit_identity.size() == explicit_identity.size());
    for (std::size_t i = 0; i < implicit_identity.size(); ++i) {
        CHECK(implicit_identity[i].x == explicit_identity[i].x);
        CHECK(implicit_identity[i].labels == explicit_identity[i].labels);
    }
}

TEST_CASE("a pi rotation negates the class centers in 2d") {
    SyntheticSpec spec;
    spec.n_domains = 2;
    spec.classes = 2;
    spec.dim = 2;
    spec.samples_per_domain = 40;
    spec.noise_sigma = 1e-6;
    spec.seed = 13;
    spec.transforms.assign(2, pdg::DomainTransform{});
    spec.transforms[1].rotation = M_PI;

    const auto datasets = pdg::generate_synthetic(spec);
    const int per_class = spec.samples_per_domain / spec.classes;
    for (int label = 0; label < spec.classes; ++label) {
        const auto rows = Eigen::seqN(label * per_class, per_class);
        const Eigen::RowVector2d base_mean = datasets[0].x(rows, Eigen::all).colwise().mean();
        const Eigen::RowVector2d rotated_mean = datasets[1].x(rows, Eigen::all).colwise().mean();
        CHECK((rotated_mean + base_mean).cwiseAbs().maxCoeff() <= 1e-4);
    }
}

TEST_CASE("generation is deterministic and CSV files are byte-identical") {
    const SyntheticSpec spec = pdg::shift3_spec(21);
    const auto first = pdg::generate_synthetic(spec);
    const auto second = pdg::generate_synthetic(spec);
    REQUIRE(first.size() == second.size());
    for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i].x == second[i].x);

    const auto dir = temp_dir();
    pdg::write_domain_csv((dir / "a.csv").string(), first);
    pdg::write_domain_csv((dir / "b.csv").string(), second);
    CHECK(read_file(dir / "a.csv") == read_file(dir / "b.csv"));
}

TEST_CASE("dataset CSV round-trips exactly") {
    const auto datasets = pdg::generate_synthetic(pdg::shift3_spec(23));
    const auto dir = temp_dir();
    const auto path = (dir / "roundtrip.csv").string();
    pdg::write_domain_csv(path, datasets);

    const auto loaded = pdg::load_domain_csv(path);
    REQUIRE(loaded.size() == datasets.size());
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        CHECK(loaded[i].domain_id == datasets[i].domain_id);
        CHECK(loaded[i].labels == datasets[i].labels);
        CHECK(loaded[i].x == datasets[i].x);
    }

    // One file per domain merges back to the same data.
    std::vector<std::string> paths;
    for (const auto& dataset : datasets) {
        paths.push_back((dir / ("d" + std::to_string(dataset.domain_id) + ".csv")).string());
        pdg::write_domain_csv(paths.back(), {dataset});
    }
    const auto merged = pdg::load_domain_csvs(paths);
    REQUIRE(merged.size() == datasets.size());
    for (std::size_t i = 0; i < datasets.size(); ++i) CHECK(merged[i].x == datasets[i].x);
}

TEST_CASE("point-set and embedding CSVs round-trip exactly") {
    const auto dir = temp_dir();
    pdg::Rng rng(29);
    Eigen::MatrixXd points(7, 3);
    for (Eigen::Index k = 0; k < points.size(); ++k) points.data()[k] = rng.normal();
    const auto ppath = (dir / "points.csv").string();
    pdg::write_point_set_csv(ppath, points);
    CHECK(pdg::load_point_set_csv(ppath) == points);

    std::vector<pdg::ProbEmbedding> members(3);
    for (auto& member : members) {
        member.samples.resize(4, 2);
        for (Eigen::Index k = 0; k < member.samples.size(); ++k)
            member.samples.data()[k] = rng.normal();
    }
    const auto epath = (dir / "embeddings.csv").string();
    pdg::write_embeddings_csv(epath, members);
    const auto loaded = pdg::load_embeddings_csv(epath);
    REQUIRE(loaded.size() == members.size());
    for (std::size_t i = 0; i < members.size(); ++i) CHECK(loaded[i].samples == members[i].samples);
}

TEST_CASE("malformed dataset files raise IoError") {
    const auto dir = temp_dir();
    CHECK_THROWS_AS((void)pdg::load_domain_csv((dir / "missing.csv").string()), pdg::IoError);

    const auto bad_header = dir / "bad_header.csv";
    std::ofstream(bad_header) << "domain,class,f0\n0,1,0.5\n";
    CHECK_THROWS_AS((void)pdg::load_domain_csv(bad_header.string()), pdg::IoError);

    const auto bad_field = dir / "bad_field.csv";
    std::ofstream(bad_field) << "domain,label,f0\n0,1,zebra\n";
    CHECK_THROWS_AS((void)pdg::load_domain_csv(bad_field.string()), pdg::IoError);

    const auto short_row = dir / "short_row.csv";
    std::ofstream(short_row) << "domain,label,f0,f1\n0,1,0.5\n";
    CHECK_THROWS_AS((void)pdg::load_domain_csv(short_row.string()), pdg::IoError);
}

TEST_CASE("oracle edge cases") {
    pdg::KernelConfig cfg;
    Eigen::MatrixXd x(3, 2);
    x << 0.0, 1.0, 2.0, -1.0, 0.5, 0.25;
    CHECK(pdg::oracle::mmd2(cfg, x, x) == 0.0);

    CHECK(pdg::oracle::kl_gaussian(1.0, 1.0, 0.0, 1.0) == doctest::Approx(0.5).epsilon(1e-8));

    Eigen::MatrixXd big(9, 2);
    big.setZero();
    CHECK_THROWS_AS((void)pdg::oracle::mmd2(cfg, big, x), pdg::ValidationError);
    pdg::ProbEmbedding wide;
    wide.samples = Eigen::MatrixXd::Zero(2, 5);
    CHECK_THROWS_AS((void)pdg::oracle::kme_inner(cfg, wide, wide), pdg::ValidationError);
}

TEST_CASE("a corrupted kernel fails the oracle-equivalence suite") {
    pdg::KernelOps corrupted = pdg::KernelOps::library();
    // Flipped exponent sign in the level-2 kernel.
    corrupted.level2_fn = [](const pdg::KernelConfig& cfg, const pdg::ProbEmbedding& a,
                             const pdg::ProbEmbedding& b) {
        return 1.0 / pdg::level2_kernel(cfg, a, b);
    };
    const auto results = pdg::check_oracle_equivalence(20, 7, corrupted);
    bool level2_failed = false;
    for (const auto& check : results) {
        CHECK_FALSE(check.name.empty());
        if (check.name == "oracle/level2_kernel") {
            level2_failed = !check.passed;
            CHECK(check.max_error > 1e-6);
        } else {
            CHECK(check.passed);
        }
    }
    CHECK(level2_failed);
}

TEST_CASE("selfcheck passes on a fresh build") {
    const auto report = pdg::selfcheck(3);
    for (const auto& check : report.checks) {
        INFO(check.name, " max_err=", check.max_error);
        CHECK(check.passed);
    }
    CHECK(report.all_passed());
}

TEST_CASE("config defaults, round trip and strict unknown keys") {
    const pdg::ExperimentConfig defaults = pdg::config_from_json(json::object());
    CHECK(defaults.data.synthetic.has_value());
    CHECK(defaults.data.synthetic->n_domains == 4);
    CHECK(defaults.data.synthetic->dim == 8);
    CHECK(defaults.held_out_domain == 3);
    CHECK(defaults.train.weights.beta1 == 0.1);
    CHECK(defaults.train.weights.beta2 == 0.7);
    CHECK(defaults.train.weights.margin_xi == 1.0);
    CHECK(defaults.train.weights.t_passes == 10);
    CHECK(defaults.train.learning_rate == 5e-5);
    CHECK(defaults.kernel.lambda1 == 1.0);
    CHECK(defaults.kernel.lambda2 == 1.0);
    CHECK(defaults.model.moped);
    CHECK(defaults.model.moped_delta == 0.1);

    const json echoed = pdg::config_to_json(defaults);
    const pdg::ExperimentConfig reparsed = pdg::config_from_json(echoed);
    CHECK(pdg::config_to_json(reparsed) == echoed);

    try {
        (void)pdg::config_from_json(json::parse(R"({"train": {"foo": 1}})"));
        FAIL("expected ValidationError");
    } catch (const pdg::ValidationError& e) {
        CHECK(std::string(e.what()).find("train.foo") != std::string::npos);
    }

    CHECK_THROWS_AS(
        (void)pdg::config_from_json(json::parse(R"({"kernel": {"estimator": "wrong"}})")),
        pdg::ValidationError);
    CHECK_THROWS_AS(
        (void)pdg::config_from_json(json::parse(
            R"({"data": {"synthetic": {"n_domains": 4}, "paths": ["x.csv"]}})")),
        pdg::ValidationError);
    CHECK_THROWS_AS((void)pdg::config_from_json(json::parse(R"({"held_out_domain": 9})")),
                    pdg::ValidationError);
}

TEST_CASE("ablation flag lists") {
    pdg::AblationFlags flags;
    pdg::apply_ablation_list(flags, "mean_embedding,disable_local,deterministic");
    CHECK(flags.mean_embedding_global);
    CHECK(flags.disable_local);
    CHECK(flags.deterministic);
    CHECK_FALSE(flags.disable_global);
    CHECK_THROWS_AS(pdg::apply_ablation_list(flags, "nonsense"), pdg::ValidationError);
}

TEST_CASE("metrics report round-trips losslessly") {
    pdg::MetricsReport report;
    report.library_version = "0.1.0";
    report.seed = 123456789;
    report.accuracy = 0.9375;
    report.per_class_accuracy = {{0, 1.0}, {2, 0.8125}};
    report.mean_predictive_entropy = 0.4567891234567;
    report.evaluated_samples = 60;
    report.loss_summary.first_tenth_mean.total = 1.23456789e-3;
    report.loss_summary.last_tenth_mean.global = 9.87654321e-5;
    report.wall_clock_seconds = 12.5;
    report.config_echo = pdg::config_to_json(pdg::config_from_json(json::object()));

    const json j = pdg::report_to_json(report);
    const pdg::MetricsReport loaded = pdg::report_from_json(j);
    CHECK(pdg::report_to_json(loaded) == j);
    CHECK(loaded.per_class_accuracy == report.per_class_accuracy);
    CHECK(loaded.loss_summary.first_tenth_mean.total ==
          report.loss_summary.first_tenth_mean.total);
}

TEST_CASE("checkpoints restore the exact parameter state") {
    pdg::StackConfig cfg;
    cfg.backbone_widths = {5};
    cfg.latent_dim = 4;
    cfg.metric_widths = {4, 2};
    pdg::Rng rng(31);
    const pdg::NetworkStack stack = pdg::build_stack(cfg, 6, 3, rng);

    const auto dir = temp_dir();
    const auto path = (dir / "checkpoint.json").string();
    pdg::save_checkpoint(path, stack);
    const pdg::NetworkStack loaded = pdg::load_checkpoint(path);

    CHECK(pdg::flatten_parameters(loaded) == pdg::flatten_parameters(stack));
    CHECK(loaded.extractor.weights.prior_mu == stack.extractor.weights.prior_mu);
    CHECK(loaded.extractor.weights.prior_sigma == stack.extractor.weights.prior_sigma);
    CHECK(loaded.backbone.size() == stack.backbone.size());
    CHECK(loaded.metric.size() == stack.metric.size());

    const auto bad = dir / "bad_checkpoint.json";
    std::ofstream(bad) << R"({"format": "other"})";
    CHECK_THROWS_AS((void)pdg::load_checkpoint(bad.string()), pdg::IoError);
}

TEST_CASE("run_experiment smoke test writes consistent artifacts") {
    pdg::ExperimentConfig cfg = pdg::config_from_json(json::object());
    cfg.seed = 5;
    cfg.data.synthetic->samples_per_domain = 24;
    cfg.data.synthetic->seed = 5;
    cfg.train.iterations = 8;
    cfg.train.batch_per_domain = 8;
    cfg.train.weights.t_passes = 3;
    cfg.train.n_pairs = 4;
    cfg.model.pretrain_iterations = 40;
    const auto dir = temp_dir() / "experiment";
    std::filesystem::remove_all(dir);
    cfg.out_dir = dir.string();

    const auto result = pdg::run_experiment(cfg);
    CHECK(result.report.evaluated_samples == 24);
    CHECK(result.report.accuracy >= 0.0);
    CHECK(result.log.size() == 8);
    CHECK(std::filesystem::exists(dir / "loss.csv"));
    CHECK(std::filesystem::exists(dir / "metrics.json"));
    CHECK(std::filesystem::exists(dir / "checkpoint.json"));

    // The checkpoint reloads into a usable model.
    const auto model = pdg::load_checkpoint((dir / "checkpoint.json").string());
    CHECK(pdg::flatten_parameters(model) == pdg::flatten_parameters(result.model));

    // Loss CSV has the documented header.
    std::ifstream in(dir / "loss.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "iteration,L_c,KL_Q,KL_C,L_local,L_global,total");
}
