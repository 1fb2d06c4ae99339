#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "pdg/dataset.hpp"

namespace pdg {

// Per-domain affine shift: a rotation by `rotation` radians in the first two
// coordinates, an isotropic scale, and a translation.
struct DomainTransform {
    double rotation = 0.0;
    double scale = 1.0;
    Eigen::VectorXd translation;  // empty means zero
};

// Desk-scale multi-domain task: class-conditional Gaussians around shared
// canonical class centers, with each domain seeing the centers through its
// own transform.
struct SyntheticSpec {
    int n_domains = 4;
    int classes = 3;
    int dim = 8;
    int samples_per_domain = 60;
    std::vector<DomainTransform> transforms;  // empty means identity for all
    double class_separation = 2.0;
    double noise_sigma = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

std::vector<DomainDataset> generate_synthetic(const SyntheticSpec& spec);

// The default toy task: 4 domains rotated by {0, 0.35, 0.7, 1.05} radians.
SyntheticSpec shift3_spec(std::uint64_t seed = 0);

}  // namespace pdg
