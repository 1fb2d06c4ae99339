#include "pdg/synthetic.hpp"

#include <cmath>

#include "pdg/errors.hpp"
#include "pdg/rng.hpp"

namespace pdg {

namespace {

constexpr std::uint64_t kCentersTag = 101;
constexpr std::uint64_t kDomainTag = 102;

}  // namespace

void SyntheticSpec::validate() const {
    if (n_domains < 2) throw ValidationError("SyntheticSpec: n_domains must be at least 2");
    if (classes < 2) throw ValidationError("SyntheticSpec: classes must be at least 2");
    if (dim < 2) throw ValidationError("SyntheticSpec: dim must be at least 2");
    if (samples_per_domain < 2 * classes)
        throw ValidationError("SyntheticSpec: samples_per_domain must be at least 2*classes");
    if (samples_per_domain % classes != 0)
        throw ValidationError("SyntheticSpec: samples_per_domain must be divisible by classes");
    if (!(noise_sigma > 0.0)) throw ValidationError("SyntheticSpec: noise_sigma must be positive");
    if (!(class_separation >= 0.0))
        throw ValidationError("SyntheticSpec: class_separation must be non-negative");
    if (!transforms.empty() && transforms.size() != static_cast<std::size_t>(n_domains))
        throw ValidationError("SyntheticSpec: transforms must be empty or one per domain");
    for (const auto& t : transforms) {
        if (!(t.scale > 0.0)) throw ValidationError("SyntheticSpec: scale must be positive");
        if (t.translation.size() != 0 && t.translation.size() != dim)
            throw ValidationError("SyntheticSpec: translation dimension mismatch");
    }
}

std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();

    // Shared canonical class centers, drawn once on the separation sphere.
    Rng center_rng(Rng::derive(spec.seed, {kCentersTag}));
    Eigen::MatrixXd centers(spec.classes, spec.dim);
    for (int c = 0; c < spec.classes; ++c) {
        Eigen::VectorXd direction(spec.dim);
        for (int j = 0; j < spec.dim; ++j) direction(j) = center_rng.normal();
        centers.row(c) = (spec.class_separation / direction.norm()) * direction.transpose();
    }

    const int per_class = spec.samples_per_domain / spec.classes;
    std::vector<DomainDataset> datasets;
    datasets.reserve(static_cast<std::size_t>(spec.n_domains));

    for (int domain = 0; domain < spec.n_domains; ++domain) {
        DomainTransform transform;
        if (!spec.transforms.empty()) transform = spec.transforms[static_cast<std::size_t>(domain)];
        Eigen::VectorXd translation = transform.translation.size() == spec.dim
                                          ? transform.translation
                                          : Eigen::VectorXd::Zero(spec.dim);
        const double c = std::cos(transform.rotation);
        const double s = std::sin(transform.rotation);

        DomainDataset dataset;
        dataset.domain_id = domain;
        dataset.x.resize(spec.samples_per_domain, spec.dim);
        dataset.labels.reserve(static_cast<std::size_t>(spec.samples_per_domain));

        Rng rng(Rng::derive(spec.seed, {kDomainTag, static_cast<std::uint64_t>(domain)}));
        Eigen::Index row = 0;
        for (int label = 0; label < spec.classes; ++label) {
            // Transform the center: scale, rotate coords (0, 1), translate.
            Eigen::VectorXd center = transform.scale * centers.row(label).transpose();
            const double c0 = center(0), c1 = center(1);
            center(0) = c * c0 - s * c1;
            center(1) = s * c0 + c * c1;
            center += translation;

            for (int i = 0; i < per_class; ++i, ++row) {
                for (int j = 0; j < spec.dim; ++j)
                    dataset.x(row, j) = center(j) + spec.noise_sigma * rng.normal();
                dataset.labels.push_back(label);
            }
        }
        datasets.push_back(std::move(dataset));
    }
    return datasets;
}

SyntheticSpec shift3_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.n_domains = 4;
    spec.classes = 3;
    spec.dim = 8;
    spec.samples_per_domain = 60;
    spec.class_separation = 2.0;
    spec.noise_sigma = 0.3;
    spec.seed = seed;
    const double angles[] = {0.0, 0.35, 0.7, 1.05};
    for (double angle : angles) {
        DomainTransform t;
        t.rotation = angle;
        spec.transforms.push_back(t);
    }
    return spec;
}

}  // namespace pdg
