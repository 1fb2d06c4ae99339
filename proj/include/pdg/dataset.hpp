#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "pdg/prob_embedding.hpp"
#include "pdg/train.hpp"

namespace pdg {

// One domain's labeled samples as read from or written to disk.
struct DomainDataset {
    int domain_id = 0;
    Eigen::MatrixXd x;
    std::vector<int> labels;
};

// Dataset CSV format: header "domain,label,f0,...,f{d-1}". A file may hold
// one domain or several (distinguished by the domain column); loaders group
// rows by domain id, ascending.
std::vector<DomainDataset> load_domain_csv(const std::string& path);
std::vector<DomainDataset> load_domain_csvs(const std::vector<std::string>& paths);
void write_domain_csv(const std::string& path, const std::vector<DomainDataset>& domains);

// Point-set CSV: header "f0,...,f{d-1}", one point per row.
Eigen::MatrixXd load_point_set_csv(const std::string& path);
void write_point_set_csv(const std::string& path, const Eigen::MatrixXd& points);

// Embedding CSV: header "member,f0,...,f{d-1}"; rows with the same member
// index form that member's Monte Carlo sample cloud.
std::vector<ProbEmbedding> load_embeddings_csv(const std::string& path);
void write_embeddings_csv(const std::string& path, const std::vector<ProbEmbedding>& members);

DomainBatch to_batch(const DomainDataset& dataset);
std::vector<DomainBatch> to_batches(const std::vector<DomainDataset>& datasets);

}  // namespace pdg
