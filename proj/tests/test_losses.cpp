#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "pdg/losses.hpp"
#include "pdg/rng.hpp"

using pdg::ClassLoss;
using pdg::KernelConfig;
using pdg::LossWeights;
using pdg::PairSample;
using pdg::ProbEmbedding;

namespace {

ProbEmbedding random_cloud(int t, int d, pdg::Rng& rng) {
    ProbEmbedding e;
    e.samples.resize(t, d);
    for (Eigen::Index k = 0; k < e.samples.size(); ++k) e.samples.data()[k] = rng.normal();
    return e;
}

PairSample make_pair(ProbEmbedding a, ProbEmbedding b, bool same_label) {
    PairSample pair;
    pair.a = std::move(a);
    pair.b = std::move(b);
    pair.same_label = same_label;
    pair.domain_a = 0;
    pair.domain_b = 1;
    return pair;
}

}  // namespace

TEST_CASE("classification loss basics") {
    Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(4);
    one_hot(2) = 1.0;
    CHECK(std::abs(pdg::classification_loss<double>(one_hot, 2, ClassLoss::cross_entropy)) < 1e-11);
    CHECK(std::abs(pdg::classification_loss<double>(one_hot, 2, ClassLoss::focal, 2.0)) < 1e-11);

    const Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
    CHECK(pdg::classification_loss<double>(uniform, 1, ClassLoss::cross_entropy) ==
          doctest::Approx(std::log(4.0)).epsilon(1e-9));

    CHECK_THROWS_AS((void)pdg::classification_loss<double>(uniform, 4, ClassLoss::cross_entropy),
                    pdg::ValidationError);
    CHECK_THROWS_AS((void)pdg::classification_loss<double>(uniform, -1, ClassLoss::cross_entropy),
                    pdg::ValidationError);
}

TEST_CASE("focal loss with gamma 0 equals cross entropy") {
    pdg::Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Eigen::VectorXd logits(5);
        for (int i = 0; i < 5; ++i) logits(i) = rng.normal();
        Eigen::VectorXd probs = logits.array().exp();
        probs /= probs.sum();
        const int label = rng.uniform_int(5);
        CHECK(pdg::classification_loss<double>(probs, label, ClassLoss::focal, 0.0) ==
              pdg::classification_loss<double>(probs, label, ClassLoss::cross_entropy));
    }
}

TEST_CASE("pcsa loss branches") {
    KernelConfig cfg;
    LossWeights weights;  // margin 1
    pdg::Rng rng(5);

    // Same label, identical clouds: zero attraction.
    const ProbEmbedding cloud = random_cloud(4, 3, rng);
    CHECK(pdg::pcsa_loss(cfg, make_pair(cloud, ProbEmbedding{cloud.samples}, true), weights) == 0.0);

    // Different labels, identical clouds: full margin penalty 1/2.
    CHECK(pdg::pcsa_loss(cfg, make_pair(cloud, ProbEmbedding{cloud.samples}, false), weights) ==
          0.5);

    // Different labels, tight clouds far apart (MMD^2 near 2 > xi): clamped
    // to zero.
    ProbEmbedding tight = random_cloud(4, 3, rng);
    tight.samples *= 0.01;
    ProbEmbedding far = random_cloud(4, 3, rng);
    far.samples *= 0.01;
    far.samples.array() += 50.0;
    CHECK(pdg::pcsa_loss(cfg, make_pair(tight, far, false), weights) == 0.0);
}

TEST_CASE("pcsa positive branch is exactly half the biased mmd2") {
    KernelConfig cfg;
    cfg.lambda1 = 1.8;
    cfg.estimator = pdg::MmdEstimator::unbiased_u_statistic;  // must be ignored by pcsa
    LossWeights weights;
    pdg::Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const ProbEmbedding a = random_cloud(3, 2, rng);
        const ProbEmbedding b = random_cloud(5, 2, rng);
        KernelConfig plug_in = cfg;
        plug_in.estimator = pdg::MmdEstimator::biased_v_statistic;
        CHECK(pdg::pcsa_loss(cfg, make_pair(a, b, true), weights) ==
              0.5 * pdg::mmd2<double>(plug_in, a.samples, b.samples));
    }
}

TEST_CASE("pcsa negative branch is non-increasing in the distance and clamps at the margin") {
    KernelConfig cfg;
    LossWeights weights;
    pdg::Rng rng(9);
    const ProbEmbedding base = random_cloud(3, 2, rng);
    double previous = std::numeric_limits<double>::infinity();
    for (double shift : {0.0, 0.2, 0.5, 1.0, 2.0, 5.0, 50.0}) {
        ProbEmbedding moved{base.samples};
        moved.samples.array() += shift;
        const double loss = pdg::pcsa_loss(cfg, make_pair(base, moved, false), weights);
        CHECK(loss <= previous);
        CHECK(loss >= 0.0);
        previous = loss;
    }
    CHECK(previous == 0.0);  // far beyond the margin
}

TEST_CASE("pcsa with T=1 reduces to 1 - k of the mapped points") {
    KernelConfig cfg;
    LossWeights weights;
    pdg::Rng rng(11);
    const ProbEmbedding a = random_cloud(1, 3, rng);
    const ProbEmbedding b = random_cloud(1, 3, rng);
    const Eigen::VectorXd av = a.samples.row(0), bv = b.samples.row(0);
    const double k = pdg::rbf_kernel<double>(cfg, av, bv);
    CHECK(pdg::pcsa_loss(cfg, make_pair(a, b, true), weights) ==
          doctest::Approx(1.0 - k).epsilon(1e-13));
}

TEST_CASE("mean csa loss") {
    LossWeights weights;
    pdg::Rng rng(13);

    const ProbEmbedding cloud = random_cloud(4, 3, rng);
    CHECK(pdg::mean_csa_loss(make_pair(cloud, ProbEmbedding{cloud.samples}, true), weights) == 0.0);

    // Means differing by a unit vector: positive branch = 1/2.
    ProbEmbedding a, b;
    a.samples = Eigen::MatrixXd::Zero(2, 3);
    b.samples = Eigen::MatrixXd::Zero(2, 3);
    b.samples.col(0).array() += 1.0;
    CHECK(pdg::mean_csa_loss(make_pair(a, b, true), weights) == 0.5);

    // Different labels, identical means: margin penalty 1/2.
    ProbEmbedding c;
    c.samples = Eigen::MatrixXd::Zero(2, 3);
    c.samples(0, 1) = 1.0;
    c.samples(1, 1) = -1.0;  // mean still zero
    CHECK(pdg::mean_csa_loss(make_pair(a, c, false), weights) == 0.5);
}

TEST_CASE("sample_pairs draws cross-domain pairs into both buckets") {
    pdg::Rng data_rng(17);
    std::vector<pdg::DomainEmbeddings> batches(3);
    for (int domain = 0; domain < 3; ++domain) {
        for (int i = 0; i < 12; ++i) {
            batches[domain].members.push_back(random_cloud(2, 3, data_rng));
            batches[domain].labels.push_back(i % 3);
        }
    }

    pdg::Rng rng(23);
    const auto sampled = pdg::sample_pairs(batches, 10, rng);
    CHECK_FALSE(sampled.positives_missing);
    CHECK_FALSE(sampled.negatives_missing);
    int positives = 0, negatives = 0;
    for (const auto& pair : sampled.pairs) {
        CHECK(pair.domain_a != pair.domain_b);
        (pair.same_label ? positives : negatives) += 1;
    }
    CHECK(positives == 10);
    CHECK(negatives == 10);

    // Deterministic under the seed.
    pdg::Rng rng2(23);
    const auto again = pdg::sample_pairs(batches, 10, rng2);
    REQUIRE(again.pairs.size() == sampled.pairs.size());
    for (std::size_t i = 0; i < sampled.pairs.size(); ++i) {
        CHECK(again.pairs[i].same_label == sampled.pairs[i].same_label);
        CHECK(again.pairs[i].a.samples == sampled.pairs[i].a.samples);
        CHECK(again.pairs[i].b.samples == sampled.pairs[i].b.samples);
    }
}

TEST_CASE("sample_pairs flags unrealizable categories") {
    pdg::Rng data_rng(29);
    std::vector<pdg::DomainEmbeddings> batches(2);
    for (int domain = 0; domain < 2; ++domain) {
        batches[domain].members.push_back(random_cloud(2, 2, data_rng));
        batches[domain].labels.push_back(0);  // one shared class everywhere
    }
    pdg::Rng rng(31);
    const auto sampled = pdg::sample_pairs(batches, 1, rng);
    CHECK(sampled.pairs.size() == 1);
    CHECK(sampled.pairs[0].same_label);
    CHECK_FALSE(sampled.positives_missing);
    CHECK(sampled.negatives_missing);

    CHECK_THROWS_AS((void)pdg::sample_pairs(std::vector<pdg::DomainEmbeddings>{batches[0]}, 1, rng),
                    pdg::ValidationError);
}

TEST_CASE("sample_pairs candidate stream is label-uniform") {
    // Balanced labels over m=3 classes: a uniformly drawn cross-domain pair
    // is positive with probability 1/3.
    pdg::Rng data_rng(37);
    std::vector<pdg::DomainEmbeddings> batches(2);
    for (int domain = 0; domain < 2; ++domain) {
        for (int i = 0; i < 30; ++i) {
            batches[domain].members.push_back(random_cloud(1, 2, data_rng));
            batches[domain].labels.push_back(i % 3);
        }
    }
    pdg::Rng rng(41);
    const auto sampled = pdg::sample_pairs(batches, 1000, rng);
    CHECK(sampled.candidates_drawn >= 1000);
    const double fraction = static_cast<double>(sampled.positives_seen) /
                            static_cast<double>(sampled.candidates_drawn);
    const double p = 1.0 / 3.0;
    const double sigma = std::sqrt(p * (1.0 - p) / static_cast<double>(sampled.candidates_drawn));
    CHECK(std::abs(fraction - p) <= 3.0 * sigma);
}

TEST_CASE("total objective is the exact weighted sum") {
    LossWeights weights;  // beta1 = 0.1, beta2 = 0.7, kl_scale = 1
    CHECK(pdg::total_objective<double>(1.0, 0.2, 0.1, 0.4, 0.3, weights) ==
          doctest::Approx(1.55).epsilon(1e-12));
    CHECK(pdg::total_objective<double>(0.0, 0.0, 0.0, 0.0, 0.0, weights) == 0.0);

    LossWeights off = weights;
    off.beta1 = 0.0;
    off.beta2 = 0.0;
    CHECK(pdg::total_objective<double>(1.5, 0.25, 0.125, 9.0, 7.0, off) ==
          doctest::Approx(1.875).epsilon(1e-12));
}

TEST_CASE("total objective is linear in each component") {
    LossWeights weights;
    weights.kl_scale = 0.5;
    pdg::Rng rng(43);
    for (int trial = 0; trial < 50; ++trial) {
        double a[5], b[5];
        for (int i = 0; i < 5; ++i) {
            a[i] = rng.uniform(0.0, 2.0);
            b[i] = rng.uniform(0.0, 2.0);
        }
        const double sum_of_parts =
            pdg::total_objective<double>(a[0], a[1], a[2], a[3], a[4], weights) +
            pdg::total_objective<double>(b[0], b[1], b[2], b[3], b[4], weights);
        const double part_of_sums = pdg::total_objective<double>(
            a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3], a[4] + b[4], weights);
        CHECK(part_of_sums == doctest::Approx(sum_of_parts).epsilon(1e-12));
    }
}

TEST_CASE("total objective rejects non-finite components by name") {
    LossWeights weights;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    try {
        (void)pdg::total_objective<double>(1.0, 0.0, 0.0, nan, 0.0, weights);
        FAIL("expected NumericError");
    } catch (const pdg::NumericError& e) {
        CHECK(std::string(e.what()).find("local") != std::string::npos);
    }
}
