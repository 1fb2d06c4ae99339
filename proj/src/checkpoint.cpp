#include "pdg/checkpoint.hpp"

#include <fstream>

#include "pdg/errors.hpp"

namespace pdg {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "pdg-checkpoint";
constexpr int kVersion = 1;

json matrix_to_json(const Eigen::MatrixXd& m) {
    json j;
    j["rows"] = m.rows();
    j["cols"] = m.cols();
    std::vector<double> data(m.data(), m.data() + m.size());  // column-major
    j["data"] = std::move(data);
    return j;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& where) {
    if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
        throw IoError("checkpoint: malformed matrix at " + where);
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(data.size()) != rows * cols)
        throw IoError("checkpoint: matrix size mismatch at " + where);
    Eigen::MatrixXd m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
}

json variational_to_json(const GaussianVariational& v) {
    json j;
    j["mu"] = matrix_to_json(v.mu);
    j["rho"] = matrix_to_json(v.rho);
    j["prior_mu"] = matrix_to_json(v.prior_mu);
    j["prior_sigma"] = matrix_to_json(v.prior_sigma);
    return j;
}

GaussianVariational variational_from_json(const json& j, const std::string& where) {
    GaussianVariational v;
    v.mu = matrix_from_json(j.at("mu"), where + ".mu");
    v.rho = matrix_from_json(j.at("rho"), where + ".rho");
    v.prior_mu = matrix_from_json(j.at("prior_mu"), where + ".prior_mu");
    v.prior_sigma = matrix_from_json(j.at("prior_sigma"), where + ".prior_sigma");
    v.validate();
    return v;
}

json affine_to_json(const AffineLayer& layer) {
    json j;
    j["weight"] = matrix_to_json(layer.weight);
    j["bias"] = matrix_to_json(layer.bias);
    return j;
}

AffineLayer affine_from_json(const json& j, const std::string& where) {
    AffineLayer layer;
    layer.weight = matrix_from_json(j.at("weight"), where + ".weight");
    const Eigen::MatrixXd bias = matrix_from_json(j.at("bias"), where + ".bias");
    if (bias.cols() != 1) throw IoError("checkpoint: bias must be a column at " + where);
    layer.bias = bias.col(0);
    return layer;
}

}  // namespace

nlohmann::json checkpoint_to_json(const NetworkStack& stack) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    j["architecture"] = {{"input_dim", stack.input_dim()},
                         {"latent_dim", stack.latent_dim()},
                         {"num_classes", stack.num_classes()}};
    j["backbone"] = json::array();
    for (const auto& layer : stack.backbone) j["backbone"].push_back(affine_to_json(layer));
    j["extractor"] = {{"weights", variational_to_json(stack.extractor.weights)},
                      {"biases", variational_to_json(stack.extractor.biases)}};
    j["classifier"] = {{"weights", variational_to_json(stack.classifier.weights)},
                       {"biases", variational_to_json(stack.classifier.biases)}};
    j["metric"] = json::array();
    for (const auto& layer : stack.metric) j["metric"].push_back(affine_to_json(layer));
    return j;
}

NetworkStack checkpoint_from_json(const nlohmann::json& j) {
    if (!j.is_object() || j.value("format", "") != kFormat)
        throw IoError("checkpoint: not a pdg-checkpoint document");
    if (j.value("version", 0) != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(j.value("version", 0)));

    NetworkStack stack;
    for (std::size_t i = 0; i < j.at("backbone").size(); ++i)
        stack.backbone.push_back(
            affine_from_json(j.at("backbone")[i], "backbone[" + std::to_string(i) + "]"));
    stack.extractor.weights =
        variational_from_json(j.at("extractor").at("weights"), "extractor.weights");
    stack.extractor.biases =
        variational_from_json(j.at("extractor").at("biases"), "extractor.biases");
    stack.classifier.weights =
        variational_from_json(j.at("classifier").at("weights"), "classifier.weights");
    stack.classifier.biases =
        variational_from_json(j.at("classifier").at("biases"), "classifier.biases");
    for (std::size_t i = 0; i < j.at("metric").size(); ++i)
        stack.metric.push_back(
            affine_from_json(j.at("metric")[i], "metric[" + std::to_string(i) + "]"));
    validate_stack(stack);
    return stack;
}

void save_checkpoint(const std::string& path, const NetworkStack& stack) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << checkpoint_to_json(stack).dump(2) << '\n';
}

NetworkStack load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace pdg
