#pragma once

#include <vector>

#include <Eigen/Core>

#include "pdg/kernel.hpp"
#include "pdg/prob_embedding.hpp"

// Literal-form reference evaluations used to check the fast paths: fully
// nested summations for the kernel quantities and adaptive quadrature for
// the Gaussian KL. They share no summation code with the production
// implementations (not even the scalar kernel) and accept only desk-scale
// instances (n <= 8 members or points, T <= 6 draws, d <= 4 dimensions).
namespace pdg::oracle {

double mmd2(const KernelConfig& cfg, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

double kme_inner(const KernelConfig& cfg, const ProbEmbedding& A, const ProbEmbedding& B);

double level2_kernel(const KernelConfig& cfg, const ProbEmbedding& A, const ProbEmbedding& B);

double pmmd2(const KernelConfig& cfg, const std::vector<ProbEmbedding>& Dl,
             const std::vector<ProbEmbedding>& Dt,
             PmmdWeighting weighting = PmmdWeighting::plug_in);

// KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2)) by adaptive Simpson
// quadrature of the integrand q ln(q/p); accurate to ~1e-10.
double kl_gaussian(double mu_q, double sigma_q, double mu_p, double sigma_p);

}  // namespace pdg::oracle
