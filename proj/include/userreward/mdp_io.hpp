#pragma once

#include "userreward/mdp.hpp"

#include <filesystem>
#include <string>

namespace userreward {

struct MdpBundle {
    Mdp mdp;
    FeatureMap features;
};

/// JSON document with `states`, `actions`, `transitions` ([s][a][s']),
/// `initial_dist`, `discount`, `horizon`, `feature_matrix`, `feature_names`.
/// Doubles are written in shortest round-trip form, so reloading is bit-exact.
std::string mdp_to_json(const Mdp& mdp, const FeatureMap& features);
MdpBundle mdp_from_json(const std::string& text);

void save_mdp(const std::filesystem::path& path, const Mdp& mdp, const FeatureMap& features);
MdpBundle load_mdp(const std::filesystem::path& path);

}  // namespace userreward
