#include "pdg/selfcheck.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <iomanip>
#include <ostream>

#include "pdg/oracles.hpp"
#include "pdg/rng.hpp"
#include "pdg/synthetic.hpp"

namespace pdg {

namespace {

Eigen::MatrixXd random_points(int rows, int cols, Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = rng.normal();
    return m;
}

ProbEmbedding random_cloud(int draws, int dim, Rng& rng) {
    return ProbEmbedding{random_points(draws, dim, rng)};
}

std::vector<ProbEmbedding> random_domain(int members, int draws, int dim, Rng& rng) {
    std::vector<ProbEmbedding> domain;
    domain.reserve(static_cast<std::size_t>(members));
    for (int i = 0; i < members; ++i) domain.push_back(random_cloud(draws, dim, rng));
    return domain;
}

CheckResult summarize(std::string name, double max_error, double tolerance, std::string detail) {
    CheckResult result;
    result.name = std::move(name);
    result.max_error = max_error;
    result.passed = max_error <= tolerance;
    result.detail = std::move(detail);
    return result;
}

}  // namespace

KernelOps KernelOps::library() {
    KernelOps ops;
    ops.mmd2_fn = [](const KernelConfig& cfg, const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
        return mmd2<double>(cfg, x, y);
    };
    ops.kme_fn = [](const KernelConfig& cfg, const ProbEmbedding& a, const ProbEmbedding& b) {
        return kme_inner(cfg, a, b);
    };
    ops.level2_fn = [](const KernelConfig& cfg, const ProbEmbedding& a, const ProbEmbedding& b) {
        return level2_kernel(cfg, a, b);
    };
    ops.pmmd2_fn = [](const KernelConfig& cfg, const std::vector<ProbEmbedding>& dl,
                      const std::vector<ProbEmbedding>& dt, PmmdWeighting w) {
        return pmmd2(cfg, dl, dt, w);
    };
    return ops;
}

std::vector<CheckResult> check_oracle_equivalence(int instances, std::uint64_t seed,
                                                  const KernelOps& ops, double tolerance) {
    Rng rng(Rng::derive(seed, {11}));
    double err_mmd = 0.0, err_kme = 0.0, err_level2 = 0.0, err_pmmd = 0.0;

    for (int i = 0; i < instances; ++i) {
        KernelConfig cfg;
        cfg.lambda1 = rng.uniform(0.25, 4.0);
        cfg.lambda2 = rng.uniform(0.25, 4.0);
        const int d = 1 + rng.uniform_int(4);

        // mmd2 on point sets, alternating estimator.
        cfg.estimator = (i % 2 == 0) ? MmdEstimator::biased_v_statistic
                                     : MmdEstimator::unbiased_u_statistic;
        const int nx = 2 + rng.uniform_int(7), ny = 2 + rng.uniform_int(7);
        const Eigen::MatrixXd x = random_points(nx, d, rng);
        const Eigen::MatrixXd y = random_points(ny, d, rng);
        err_mmd = std::max(err_mmd, relative_error(ops.mmd2_fn(cfg, x, y), oracle::mmd2(cfg, x, y)));

        // kme_inner / level2 on clouds.
        const int ta = 1 + rng.uniform_int(6), tb = 1 + rng.uniform_int(6);
        const ProbEmbedding a = random_cloud(ta, d, rng);
        const ProbEmbedding b = random_cloud(tb, d, rng);
        err_kme =
            std::max(err_kme, relative_error(ops.kme_fn(cfg, a, b), oracle::kme_inner(cfg, a, b)));
        err_level2 = std::max(
            err_level2, relative_error(ops.level2_fn(cfg, a, b), oracle::level2_kernel(cfg, a, b)));

        // pmmd2 on domain lists, alternating weighting.
        const PmmdWeighting weighting =
            (i % 2 == 0) ? PmmdWeighting::plug_in : PmmdWeighting::unbiased_u_statistic;
        const int nl = 2 + rng.uniform_int(7), nt = 2 + rng.uniform_int(7);
        const int t = 1 + rng.uniform_int(6);
        const auto dl = random_domain(nl, t, d, rng);
        const auto dt = random_domain(nt, t, d, rng);
        err_pmmd = std::max(err_pmmd, relative_error(ops.pmmd2_fn(cfg, dl, dt, weighting),
                                                     oracle::pmmd2(cfg, dl, dt, weighting)));
    }

    const std::string detail = std::to_string(instances) + " random instances";
    return {summarize("oracle/mmd2", err_mmd, tolerance, detail),
            summarize("oracle/kme_inner", err_kme, tolerance, detail),
            summarize("oracle/level2_kernel", err_level2, tolerance, detail),
            summarize("oracle/pmmd2", err_pmmd, tolerance, detail)};
}

GradcheckFixture make_gradcheck_fixture(std::uint64_t seed, GlobalMode mode) {
    GradcheckFixture fixture;

    SyntheticSpec spec;
    spec.n_domains = 3;
    spec.classes = 3;
    spec.dim = 5;
    spec.samples_per_domain = 6;
    spec.class_separation = 1.5;
    spec.noise_sigma = 0.4;
    spec.seed = Rng::derive(seed, {21});
    fixture.batches = to_batches(generate_synthetic(spec));

    StackConfig stack_cfg;
    stack_cfg.backbone_widths = {6};
    stack_cfg.latent_dim = 5;
    stack_cfg.metric_widths = {5, 4};
    Rng model_rng(Rng::derive(seed, {22}));
    fixture.model = build_stack(stack_cfg, spec.dim, spec.classes, model_rng);

    fixture.options.kernel = KernelConfig{};
    fixture.options.weights.t_passes = 2;
    fixture.options.global_mode = mode;
    fixture.options.n_pairs = 4;

    Rng noise_rng(Rng::derive(seed, {23}));
    for (int t = 0; t < fixture.options.weights.t_passes; ++t)
        fixture.plan.draws.push_back(draw_noise(fixture.model, noise_rng, noise_rng));
    fixture.plan.pair_seed = Rng::derive(seed, {24});
    fixture.plan.linear_seed = Rng::derive(seed, {25});
    return fixture;
}

CheckResult check_component_gradient(const std::string& name, const GradcheckFixture& fixture,
                                     LossComponent component, double tolerance, double step) {
    const ComponentGradients analytic =
        compute_component_gradients(fixture.model, fixture.batches, fixture.plan, fixture.options);
    const Eigen::VectorXd& an = analytic.gradients.at(component);
    const double mid = value_of(pick_component(
        evaluate_objective(fixture.model, fixture.batches, fixture.plan, fixture.options),
        component));

    NetworkStack work = fixture.model;
    Eigen::VectorXd params = flatten_parameters(fixture.model);
    double max_err = 0.0;
    int compared = 0, skipped = 0;
    for (Eigen::Index k = 0; k < params.size(); ++k) {
        const double saved = params(k);
        params(k) = saved + step;
        set_parameters(work, params);
        const double up = value_of(pick_component(
            evaluate_objective(work, fixture.batches, fixture.plan, fixture.options), component));
        params(k) = saved - step;
        set_parameters(work, params);
        const double down = value_of(pick_component(
            evaluate_objective(work, fixture.batches, fixture.plan, fixture.options), component));
        params(k) = saved;

        const double fd_plus = (up - mid) / step;
        const double fd_minus = (mid - down) / step;
        const double disagreement = std::abs(fd_plus - fd_minus);
        if (disagreement > std::max(1e-4, 0.05 * std::max(std::abs(fd_plus),
                                                          std::abs(fd_minus)))) {
            ++skipped;  // one-sided quotients disagree: a kink sits inside [x-h, x+h]
            continue;
        }
        ++compared;
        max_err = std::max(max_err, relative_error(an(k), 0.5 * (fd_plus + fd_minus)));
    }
    set_parameters(work, params);

    std::string detail = std::to_string(compared) + " parameters";
    if (skipped > 0) detail += ", " + std::to_string(skipped) + " near a kink skipped";
    return summarize(name, max_err, tolerance, detail);
}

std::vector<CheckResult> check_gradients(std::uint64_t seed, double tolerance, double step) {
    std::vector<CheckResult> results;
    const struct {
        LossComponent component;
        const char* name;
    } cases[] = {{LossComponent::classification, "grad/classification"},
                 {LossComponent::kl_extractor, "grad/kl_extractor"},
                 {LossComponent::kl_classifier, "grad/kl_classifier"},
                 {LossComponent::local, "grad/pcsa_local"},
                 {LossComponent::global_loss, "grad/global_quadratic"}};

    const GradcheckFixture quad = make_gradcheck_fixture(seed, GlobalMode::quadratic);
    for (const auto& c : cases)
        results.push_back(check_component_gradient(c.name, quad, c.component, tolerance, step));

    const GradcheckFixture lin = make_gradcheck_fixture(seed, GlobalMode::linear);
    results.push_back(check_component_gradient("grad/global_linear", lin,
                                               LossComponent::global_loss, tolerance, step));
    return results;
}

std::vector<CheckResult> check_psd(std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {31}));
    const KernelConfig cfg;

    double worst_level1 = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + rng.uniform_int(15);
        const int d = 1 + rng.uniform_int(4);
        const Eigen::MatrixXd x = random_points(n, d, rng);
        const Eigen::MatrixXd gram = gram_matrix<double>(cfg, x, x);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        worst_level1 = std::min(worst_level1, eig.eigenvalues().minCoeff());
    }

    double worst_level2 = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 2 + rng.uniform_int(7);
        const auto domain = random_domain(n, 1 + rng.uniform_int(5), 3, rng);
        Eigen::MatrixXd gram(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                gram(i, j) = level2_kernel(cfg, domain[static_cast<std::size_t>(i)],
                                           domain[static_cast<std::size_t>(j)]);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        worst_level2 = std::min(worst_level2, eig.eigenvalues().minCoeff());
    }

    return {summarize("psd/level1_gram", std::max(0.0, -worst_level1), 1e-8,
                      "min eigenvalue over 20 random Gram matrices"),
            summarize("psd/level2_gram", std::max(0.0, -worst_level2), 1e-8,
                      "min eigenvalue over 20 random level-2 Gram matrices")};
}

std::vector<CheckResult> check_corollary2(std::uint64_t seed, int bases) {
    Rng rng(Rng::derive(seed, {41}));
    const KernelConfig cfg;
    Rng unused(0);

    double worst_zero = 0.0;
    double worst_shifted = std::numeric_limits<double>::infinity();
    for (int base = 0; base < bases; ++base) {
        const int n = 2 + rng.uniform_int(5);
        const int t = 2 + rng.uniform_int(4);
        const int d = 2 + rng.uniform_int(3);
        const auto domain = random_domain(n, t, d, rng);
        const std::vector<std::vector<ProbEmbedding>> identical = {domain, domain, domain};
        worst_zero = std::max(
            worst_zero,
            std::abs(global_alignment_loss(cfg, identical, GlobalMode::quadratic, unused)));

        auto shifted = identical;
        Eigen::RowVectorXd direction = Eigen::RowVectorXd::Zero(d);
        direction(0) = 1.0;  // unit shift
        for (auto& member : shifted[1]) member.samples.rowwise() += direction;
        worst_shifted = std::min(
            worst_shifted, global_alignment_loss(cfg, shifted, GlobalMode::quadratic, unused));
    }

    CheckResult zero = summarize("corollary2/identical_zero", worst_zero, 0.0,
                                 "exact zero over " + std::to_string(bases) + " bases");
    CheckResult shifted;
    shifted.name = "corollary2/shifted_positive";
    shifted.max_error = worst_shifted;
    shifted.passed = worst_shifted > 1e-6;
    shifted.detail = "smallest loss after unit shift (must exceed 1e-6)";
    return {zero, shifted};
}

std::vector<CheckResult> check_kl_closed_form(std::uint64_t seed) {
    Rng rng(Rng::derive(seed, {51}));
    double max_err = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const double mu_q = rng.uniform(-2.0, 2.0);
        const double sigma_q = rng.uniform(0.2, 2.5);
        const double mu_p = rng.uniform(-2.0, 2.0);
        const double sigma_p = rng.uniform(0.2, 2.5);

        GaussianVariational v;
        v.mu = Eigen::MatrixXd::Constant(1, 1, mu_q);
        v.rho = Eigen::MatrixXd::Constant(1, 1, softplus_inverse(sigma_q));
        v.prior_mu = Eigen::MatrixXd::Constant(1, 1, mu_p);
        v.prior_sigma = Eigen::MatrixXd::Constant(1, 1, sigma_p);
        const double closed = kl_to_prior(v);
        const double quad = oracle::kl_gaussian(mu_q, softplus(v.rho(0, 0)), mu_p, sigma_p);
        max_err = std::max(max_err, std::abs(closed - quad));
    }

    // MOPED initialization must report exactly zero KL.
    Rng model_rng(Rng::derive(seed, {52}));
    StackConfig cfg;
    NetworkStack stack = build_stack(cfg, 4, 3, model_rng);
    const Eigen::MatrixXd w = random_points(static_cast<int>(stack.extractor.weights.mu.rows()),
                                            static_cast<int>(stack.extractor.weights.mu.cols()),
                                            model_rng);
    Eigen::VectorXd b = random_points(static_cast<int>(stack.extractor.biases.mu.cols()), 1,
                                      model_rng)
                            .col(0);
    b(0) = 0.0;  // exercise the |w|=0 floor path
    moped_init(stack.extractor, w, b, 0.1);
    const double kl_at_init = kl_to_prior(stack.extractor);

    return {summarize("kl/closed_form_vs_quadrature", max_err, 1e-6, "100 random tuples"),
            summarize("kl/moped_init_zero", std::abs(kl_at_init), 0.0, "exact zero required")};
}

SelfcheckReport selfcheck(std::uint64_t seed) {
    SelfcheckReport report;
    auto append = [&report](std::vector<CheckResult> results) {
        for (auto& r : results) report.checks.push_back(std::move(r));
    };
    append(check_oracle_equivalence(50, seed));
    append(check_kl_closed_form(seed));
    append(check_psd(seed));
    append(check_corollary2(seed));
    append(check_gradients(seed));
    return report;
}

void print_report(std::ostream& os, const SelfcheckReport& report) {
    for (const auto& check : report.checks) {
        os << std::left << std::setw(36) << check.name << (check.passed ? "PASS" : "FAIL")
           << "  max_err=" << std::scientific << std::setprecision(3) << check.max_error
           << std::defaultfloat;
        if (!check.detail.empty()) os << "  (" << check.detail << ")";
        os << '\n';
    }
    os << (report.all_passed() ? "selfcheck: all checks passed" : "selfcheck: FAILURES detected")
       << '\n';
}

}  // namespace pdg
