#include "pdg/oracles.hpp"

#include <cmath>
#include <string>

#include "pdg/errors.hpp"

namespace pdg::oracle {

namespace {

constexpr int kMaxMembers = 8;
constexpr int kMaxDraws = 6;
constexpr int kMaxDim = 4;

void check_points(const Eigen::MatrixXd& points, const char* what) {
    if (points.rows() < 1 || points.rows() > kMaxMembers || points.cols() > kMaxDim)
        throw ValidationError(std::string(what) + ": oracle instance too large (n <= " +
                              std::to_string(kMaxMembers) + ", d <= " + std::to_string(kMaxDim) +
                              ")");
}

void check_cloud(const ProbEmbedding& e, const char* what) {
    if (e.samples.rows() < 1 || e.samples.rows() > kMaxDraws || e.samples.cols() > kMaxDim)
        throw ValidationError(std::string(what) + ": oracle instance too large (T <= " +
                              std::to_string(kMaxDraws) + ", d <= " + std::to_string(kMaxDim) +
                              ")");
}

// Oracle-local Gaussian kernel; shares no code with the fast paths.
double kernel(const Eigen::MatrixXd& A, Eigen::Index i, const Eigen::MatrixXd& B,
              Eigen::Index j, double lambda) {
    double dist_sq = 0.0;
    for (Eigen::Index k = 0; k < A.cols(); ++k) {
        const double diff = A(i, k) - B(j, k);
        dist_sq += diff * diff;
    }
    return std::exp(-0.5 * lambda * dist_sq);
}

double mean_kernel_sum(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B, double lambda) {
    double sum = 0.0;
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < B.rows(); ++j) sum += kernel(A, i, B, j, lambda);
    return sum / (static_cast<double>(A.rows()) * static_cast<double>(B.rows()));
}

double level2_value(const KernelConfig& cfg, const ProbEmbedding& A, const ProbEmbedding& B) {
    const double saa = mean_kernel_sum(A.samples, A.samples, cfg.lambda1);
    const double sab = mean_kernel_sum(A.samples, B.samples, cfg.lambda1);
    const double sbb = mean_kernel_sum(B.samples, B.samples, cfg.lambda1);
    return std::exp(-0.5 * cfg.lambda2 * (saa - 2.0 * sab + sbb));
}

double adaptive_simpson(double (*f)(double, const double*), const double* params, double lo,
                        double hi, double f_lo, double f_mid, double f_hi, double tol, int depth) {
    const double mid = 0.5 * (lo + hi);
    const double lm = 0.5 * (lo + mid), mh = 0.5 * (mid + hi);
    const double f_lm = f(lm, params), f_mh = f(mh, params);
    const double whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi);
    const double left = (mid - lo) / 6.0 * (f_lo + 4.0 * f_lm + f_mid);
    const double right = (hi - mid) / 6.0 * (f_mid + 4.0 * f_mh + f_hi);
    const double split = left + right;
    if (depth <= 0 || std::abs(split - whole) < 15.0 * tol) return split + (split - whole) / 15.0;
    return adaptive_simpson(f, params, lo, mid, f_lo, f_lm, f_mid, tol * 0.5, depth - 1) +
           adaptive_simpson(f, params, mid, hi, f_mid, f_mh, f_hi, tol * 0.5, depth - 1);
}

double kl_integrand(double x, const double* p) {
    const double mu_q = p[0], sigma_q = p[1], mu_p = p[2], sigma_p = p[3];
    const double zq = (x - mu_q) / sigma_q;
    const double zp = (x - mu_p) / sigma_p;
    const double log_q = -0.5 * zq * zq - std::log(sigma_q) - 0.5 * std::log(2.0 * M_PI);
    const double log_p = -0.5 * zp * zp - std::log(sigma_p) - 0.5 * std::log(2.0 * M_PI);
    return std::exp(log_q) * (log_q - log_p);
}

}  // namespace

double mmd2(const KernelConfig& cfg, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y) {
    cfg.validate();
    check_points(X, "oracle::mmd2");
    check_points(Y, "oracle::mmd2");

    if (cfg.estimator == MmdEstimator::biased_v_statistic)
        return mean_kernel_sum(X, X, cfg.lambda1) + mean_kernel_sum(Y, Y, cfg.lambda1) -
               2.0 * mean_kernel_sum(X, Y, cfg.lambda1);

    if (X.rows() < 2 || Y.rows() < 2)
        throw ValidationError("oracle::mmd2: unbiased estimator needs at least 2 points per set");
    double sum_xx = 0.0, sum_yy = 0.0;
    for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.rows(); ++j)
            if (i != j) sum_xx += kernel(X, i, X, j, cfg.lambda1);
    for (Eigen::Index i = 0; i < Y.rows(); ++i)
        for (Eigen::Index j = 0; j < Y.rows(); ++j)
            if (i != j) sum_yy += kernel(Y, i, Y, j, cfg.lambda1);
    const double n = static_cast<double>(X.rows()), m = static_cast<double>(Y.rows());
    return sum_xx / (n * (n - 1.0)) + sum_yy / (m * (m - 1.0)) -
           2.0 * mean_kernel_sum(X, Y, cfg.lambda1);
}

double kme_inner(const KernelConfig& cfg, const ProbEmbedding& A, const ProbEmbedding& B) {
    cfg.validate();
    check_cloud(A, "oracle::kme_inner");
    check_cloud(B, "oracle::kme_inner");
    return mean_kernel_sum(A.samples, B.samples, cfg.lambda1);
}

double level2_kernel(const KernelConfig& cfg, const ProbEmbedding& A, const ProbEmbedding& B) {
    cfg.validate();
    check_cloud(A, "oracle::level2_kernel");
    check_cloud(B, "oracle::level2_kernel");
    return level2_value(cfg, A, B);
}

double pmmd2(const KernelConfig& cfg, const std::vector<ProbEmbedding>& Dl,
             const std::vector<ProbEmbedding>& Dt, PmmdWeighting weighting) {
    cfg.validate();
    if (Dl.empty() || Dt.empty()) throw ValidationError("oracle::pmmd2: empty domain list");
    if (Dl.size() > kMaxMembers || Dt.size() > kMaxMembers)
        throw ValidationError("oracle::pmmd2: oracle instance too large (n <= " +
                              std::to_string(kMaxMembers) + ")");
    for (const auto& e : Dl) check_cloud(e, "oracle::pmmd2");
    for (const auto& e : Dt) check_cloud(e, "oracle::pmmd2");

    const double nl = static_cast<double>(Dl.size()), nt = static_cast<double>(Dt.size());
    double sum_ll = 0.0, sum_tt = 0.0, sum_lt = 0.0;
    for (const auto& a : Dl)
        for (const auto& b : Dt) sum_lt += level2_value(cfg, a, b);

    if (weighting == PmmdWeighting::plug_in) {
        for (const auto& a : Dl)
            for (const auto& b : Dl) sum_ll += level2_value(cfg, a, b);
        for (const auto& a : Dt)
            for (const auto& b : Dt) sum_tt += level2_value(cfg, a, b);
        return sum_ll / (nl * nl) + sum_tt / (nt * nt) - 2.0 * sum_lt / (nl * nt);
    }

    if (Dl.size() < 2 || Dt.size() < 2)
        throw ValidationError("oracle::pmmd2: unbiased weighting needs 2 members per domain");
    for (std::size_t i = 0; i < Dl.size(); ++i)
        for (std::size_t j = 0; j < Dl.size(); ++j)
            if (i != j) sum_ll += level2_value(cfg, Dl[i], Dl[j]);
    for (std::size_t i = 0; i < Dt.size(); ++i)
        for (std::size_t j = 0; j < Dt.size(); ++j)
            if (i != j) sum_tt += level2_value(cfg, Dt[i], Dt[j]);
    return sum_ll / (nl * (nl - 1.0)) + sum_tt / (nt * (nt - 1.0)) - 2.0 * sum_lt / (nl * nt);
}

double kl_gaussian(double mu_q, double sigma_q, double mu_p, double sigma_p) {
    if (!(sigma_q > 0.0) || !(sigma_p > 0.0))
        throw ValidationError("oracle::kl_gaussian: standard deviations must be positive");
    const double params[4] = {mu_q, sigma_q, mu_p, sigma_p};
    const double lo = mu_q - 15.0 * sigma_q;
    const double hi = mu_q + 15.0 * sigma_q;
    const double mid = 0.5 * (lo + hi);
    return adaptive_simpson(kl_integrand, params, lo, hi, kl_integrand(lo, params),
                            kl_integrand(mid, params), kl_integrand(hi, params), 1e-12, 48);
}

}  // namespace pdg::oracle
