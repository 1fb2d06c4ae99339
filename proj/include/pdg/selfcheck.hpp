#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "pdg/kernel.hpp"
#include "pdg/prob_embedding.hpp"
#include "pdg/train.hpp"

namespace pdg {

struct CheckResult {
    std::string name;
    bool passed = false;
    double max_error = 0.0;
    std::string detail;
};

struct SelfcheckReport {
    std::vector<CheckResult> checks;

    bool all_passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        return true;
    }
};

// The fast paths compared against the oracles. Injectable so tests can
// verify that a corrupted kernel actually fails the suite.
struct KernelOps {
    std::function<double(const KernelConfig&, const Eigen::MatrixXd&, const Eigen::MatrixXd&)>
        mmd2_fn;
    std::function<double(const KernelConfig&, const ProbEmbedding&, const ProbEmbedding&)> kme_fn;
    std::function<double(const KernelConfig&, const ProbEmbedding&, const ProbEmbedding&)>
        level2_fn;
    std::function<double(const KernelConfig&, const std::vector<ProbEmbedding>&,
                         const std::vector<ProbEmbedding>&, PmmdWeighting)>
        pmmd2_fn;

    static KernelOps library();
};

// max |a - b| / max(floor, |a|, |b|); the floor keeps near-zero values from
// reporting meaningless relative errors.
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({floor, std::abs(a), std::abs(b)});
}

// Random-instance equivalence of the fast kernel quantities against the
// nested-summation oracles (one result per operation).
std::vector<CheckResult> check_oracle_equivalence(int instances, std::uint64_t seed,
                                                  const KernelOps& ops = KernelOps::library(),
                                                  double tolerance = 1e-10);

// Shared desk-scale fixture for gradient checks.
struct GradcheckFixture {
    NetworkStack model;
    std::vector<DomainBatch> batches;
    IterationPlan plan;
    ObjectiveOptions options;
};

GradcheckFixture make_gradcheck_fixture(std::uint64_t seed, GlobalMode mode);

// Compares one component's analytic gradient against central finite
// differences over every parameter. The objective is piecewise smooth
// (rectifiers, the contrastive margin), and a difference quotient straddling
// a kink says nothing about the derivative, so parameters whose one-sided
// quotients disagree are excluded and counted in the result detail.
CheckResult check_component_gradient(const std::string& name, const GradcheckFixture& fixture,
                                     LossComponent component, double tolerance = 1e-4,
                                     double step = 1e-5);

std::vector<CheckResult> check_gradients(std::uint64_t seed, double tolerance = 1e-4,
                                         double step = 1e-5);

std::vector<CheckResult> check_psd(std::uint64_t seed);

std::vector<CheckResult> check_corollary2(std::uint64_t seed, int bases = 10);

std::vector<CheckResult> check_kl_closed_form(std::uint64_t seed);

// Runs the whole suite: oracle equivalence, gradient fidelity, PSD spectra,
// the identical-vs-shifted global-loss property, and the KL closed form.
SelfcheckReport selfcheck(std::uint64_t seed = 0);

void print_report(std::ostream& os, const SelfcheckReport& report);

}  // namespace pdg
