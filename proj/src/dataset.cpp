#include "pdg/dataset.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "pdg/errors.hpp"

namespace pdg {

namespace {

// Shortest exact decimal form: parse(format(x)) == x.
std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& s, const std::string& path, std::size_t line_no) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw IoError(path + ":" + std::to_string(line_no) + ": bad numeric field '" + s + "'");
    }
}

int parse_int(const std::string& s, const std::string& path, std::size_t line_no) {
    int v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
        throw IoError(path + ":" + std::to_string(line_no) + ": bad integer field '" + s + "'");
    return v;
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (!line.empty()) lines.push_back(line);
    }
    return lines;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    return out;
}

void write_feature_header(std::ofstream& out, Eigen::Index d) {
    for (Eigen::Index j = 0; j < d; ++j) out << ",f" << j;
}

}  // namespace

std::vector<DomainDataset> load_domain_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw IoError(path + ": empty dataset file");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 3 || header[0] != "domain" || header[1] != "label")
        throw IoError(path + ": expected header 'domain,label,f0,...'");
    const std::size_t d = header.size() - 2;

    std::map<int, DomainDataset> by_domain;
    std::map<int, std::vector<Eigen::VectorXd>> rows;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto fields = split_csv_line(lines[k]);
        if (fields.size() != header.size())
            throw IoError(path + ":" + std::to_string(k + 1) + ": expected " +
                          std::to_string(header.size()) + " fields, found " +
                          std::to_string(fields.size()));
        const int domain = parse_int(fields[0], path, k + 1);
        const int label = parse_int(fields[1], path, k + 1);
        if (label < 0) throw IoError(path + ":" + std::to_string(k + 1) + ": negative label");
        Eigen::VectorXd row(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j)
            row(static_cast<Eigen::Index>(j)) = parse_double(fields[j + 2], path, k + 1);
        by_domain[domain].domain_id = domain;
        by_domain[domain].labels.push_back(label);
        rows[domain].push_back(std::move(row));
    }

    std::vector<DomainDataset> datasets;
    for (auto& [id, dataset] : by_domain) {
        const auto& domain_rows = rows[id];
        dataset.x.resize(static_cast<Eigen::Index>(domain_rows.size()),
                         static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < domain_rows.size(); ++i)
            dataset.x.row(static_cast<Eigen::Index>(i)) = domain_rows[i].transpose();
        datasets.push_back(std::move(dataset));
    }
    return datasets;
}

std::vector<DomainDataset> load_domain_csvs(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ValidationError("load_domain_csvs: no dataset paths");
    std::map<int, DomainDataset> merged;
    for (const auto& path : paths) {
        for (auto& dataset : load_domain_csv(path)) {
            auto it = merged.find(dataset.domain_id);
            if (it == merged.end()) {
                merged.emplace(dataset.domain_id, std::move(dataset));
                continue;
            }
            DomainDataset& existing = it->second;
            if (existing.x.cols() != dataset.x.cols())
                throw IoError(path + ": domain " + std::to_string(dataset.domain_id) +
                              " changes feature dimension");
            Eigen::MatrixXd x(existing.x.rows() + dataset.x.rows(), existing.x.cols());
            x << existing.x, dataset.x;
            existing.x = std::move(x);
            existing.labels.insert(existing.labels.end(), dataset.labels.begin(),
                                   dataset.labels.end());
        }
    }
    std::vector<DomainDataset> datasets;
    datasets.reserve(merged.size());
    for (auto& [id, dataset] : merged) datasets.push_back(std::move(dataset));
    return datasets;
}

void write_domain_csv(const std::string& path, const std::vector<DomainDataset>& domains) {
    if (domains.empty()) throw ValidationError("write_domain_csv: no domains");
    auto out = open_out(path);
    out << "domain,label";
    write_feature_header(out, domains.front().x.cols());
    out << '\n';
    for (const auto& domain : domains) {
        if (domain.x.rows() != static_cast<Eigen::Index>(domain.labels.size()))
            throw ValidationError("write_domain_csv: rows and labels differ in length");
        for (Eigen::Index i = 0; i < domain.x.rows(); ++i) {
            out << domain.domain_id << ',' << domain.labels[static_cast<std::size_t>(i)];
            for (Eigen::Index j = 0; j < domain.x.cols(); ++j)
                out << ',' << format_double(domain.x(i, j));
            out << '\n';
        }
    }
}

Eigen::MatrixXd load_point_set_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.size() < 2) throw IoError(path + ": point-set file needs a header and rows");
    const auto header = split_csv_line(lines[0]);
    if (header.empty() || header[0] != "f0") throw IoError(path + ": expected header 'f0,...'");
    const std::size_t d = header.size();

    Eigen::MatrixXd points(static_cast<Eigen::Index>(lines.size() - 1),
                           static_cast<Eigen::Index>(d));
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto fields = split_csv_line(lines[k]);
        if (fields.size() != d)
            throw IoError(path + ":" + std::to_string(k + 1) + ": expected " + std::to_string(d) +
                          " fields");
        for (std::size_t j = 0; j < d; ++j)
            points(static_cast<Eigen::Index>(k - 1), static_cast<Eigen::Index>(j)) =
                parse_double(fields[j], path, k + 1);
    }
    return points;
}

void write_point_set_csv(const std::string& path, const Eigen::MatrixXd& points) {
    auto out = open_out(path);
    for (Eigen::Index j = 0; j < points.cols(); ++j) out << (j ? "," : "") << 'f' << j;
    out << '\n';
    for (Eigen::Index i = 0; i < points.rows(); ++i) {
        for (Eigen::Index j = 0; j < points.cols(); ++j)
            out << (j ? "," : "") << format_double(points(i, j));
        out << '\n';
    }
}

std::vector<ProbEmbedding> load_embeddings_csv(const std::string& path) {
    const auto lines = read_lines(path);
    if (lines.size() < 2) throw IoError(path + ": embedding file needs a header and rows");
    const auto header = split_csv_line(lines[0]);
    if (header.size() < 2 || header[0] != "member")
        throw IoError(path + ": expected header 'member,f0,...'");
    const std::size_t d = header.size() - 1;

    std::map<int, std::vector<Eigen::VectorXd>> rows;
    for (std::size_t k = 1; k < lines.size(); ++k) {
        const auto fields = split_csv_line(lines[k]);
        if (fields.size() != header.size())
            throw IoError(path + ":" + std::to_string(k + 1) + ": expected " +
                          std::to_string(header.size()) + " fields");
        const int member = parse_int(fields[0], path, k + 1);
        Eigen::VectorXd row(static_cast<Eigen::Index>(d));
        for (std::size_t j = 0; j < d; ++j)
            row(static_cast<Eigen::Index>(j)) = parse_double(fields[j + 1], path, k + 1);
        rows[member].push_back(std::move(row));
    }

    std::vector<ProbEmbedding> members;
    members.reserve(rows.size());
    for (const auto& [id, member_rows] : rows) {
        ProbEmbedding e;
        e.samples.resize(static_cast<Eigen::Index>(member_rows.size()),
                         static_cast<Eigen::Index>(d));
        for (std::size_t i = 0; i < member_rows.size(); ++i)
            e.samples.row(static_cast<Eigen::Index>(i)) = member_rows[i].transpose();
        members.push_back(std::move(e));
    }
    return members;
}

void write_embeddings_csv(const std::string& path, const std::vector<ProbEmbedding>& members) {
    if (members.empty()) throw ValidationError("write_embeddings_csv: no members");
    auto out = open_out(path);
    out << "member";
    write_feature_header(out, members.front().samples.cols());
    out << '\n';
    for (std::size_t m = 0; m < members.size(); ++m) {
        for (Eigen::Index i = 0; i < members[m].samples.rows(); ++i) {
            out << m;
            for (Eigen::Index j = 0; j < members[m].samples.cols(); ++j)
                out << ',' << format_double(members[m].samples(i, j));
            out << '\n';
        }
    }
}

DomainBatch to_batch(const DomainDataset& dataset) { return {dataset.x, dataset.labels}; }

std::vector<DomainBatch> to_batches(const std::vector<DomainDataset>& datasets) {
    std::vector<DomainBatch> batches;
    batches.reserve(datasets.size());
    for (const auto& dataset : datasets) batches.push_back(to_batch(dataset));
    return batches;
}

}  // namespace pdg
