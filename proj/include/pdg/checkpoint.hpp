#pragma once

#include <string>

#include <json.hpp>

#include "pdg/bayes_net.hpp"

namespace pdg {

// Model checkpoints: a versioned JSON archive holding (mu, rho, prior_mu,
// prior_sigma) for each Bayesian layer, the point weights of the backbone
// and metric layers, and the architecture. Values round-trip exactly.
nlohmann::json checkpoint_to_json(const NetworkStack& stack);
NetworkStack checkpoint_from_json(const nlohmann::json& j);

void save_checkpoint(const std::string& path, const NetworkStack& stack);
NetworkStack load_checkpoint(const std::string& path);

}  // namespace pdg
