#include "userreward/mdp_io.hpp"

#include "userreward/errors.hpp"
#include "userreward/io.hpp"

#include <json.hpp>

namespace userreward {

using nlohmann::ordered_json;

std::string mdp_to_json(const Mdp& mdp, const FeatureMap& features) {
    const std::size_t n = mdp.n_states();
    const std::size_t m = mdp.n_actions();
    ordered_json doc;
    doc["states"] = mdp.states.labels;
    doc["actions"] = mdp.actions.labels;
    ordered_json trans = ordered_json::array();
    for (std::size_t s = 0; s < n; ++s) {
        ordered_json per_action = ordered_json::array();
        for (std::size_t a = 0; a < m; ++a) {
            const auto row = mdp.transitions.row(s, a);
            per_action.push_back(std::vector<double>(row.begin(), row.end()));
        }
        trans.push_back(std::move(per_action));
    }
    doc["transitions"] = std::move(trans);
    doc["initial_dist"] = std::vector<double>(mdp.initial_dist.data(), mdp.initial_dist.data() + mdp.initial_dist.size());
    doc["discount"] = mdp.discount;
    doc["horizon"] = mdp.horizon;
    ordered_json fm = ordered_json::array();
    for (Eigen::Index i = 0; i < features.matrix().rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(features.matrix().cols()));
        for (Eigen::Index j = 0; j < features.matrix().cols(); ++j) row[static_cast<std::size_t>(j)] = features.matrix()(i, j);
        fm.push_back(std::move(row));
    }
    doc["feature_matrix"] = std::move(fm);
    doc["feature_names"] = features.names();
    if (!features.blocks().empty()) doc["feature_blocks"] = features.blocks();
    return doc.dump(1) + "\n";
}

MdpBundle mdp_from_json(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const std::exception& e) {
        throw ParseError(std::string("MDP file is not valid JSON: ") + e.what());
    }
    try {
        MdpBundle out;
        out.mdp.states.labels = doc.at("states").get<std::vector<std::string>>();
        out.mdp.actions.labels = doc.at("actions").get<std::vector<std::string>>();
        const std::size_t n = out.mdp.states.size();
        const std::size_t m = out.mdp.actions.size();
        const auto& trans = doc.at("transitions");
        if (trans.size() != n) throw ParseError("transitions: expected " + std::to_string(n) + " state rows");
        std::vector<double> probs;
        probs.reserve(n * m * n);
        for (const auto& per_action : trans) {
            if (per_action.size() != m) throw ParseError("transitions: wrong number of actions");
            for (const auto& row : per_action) {
                if (row.size() != n) throw ParseError("transitions: wrong row length");
                for (const auto& p : row) probs.push_back(p.get<double>());
            }
        }
        out.mdp.transitions = TransitionModel(n, m, std::move(probs));
        const auto d0 = doc.at("initial_dist").get<std::vector<double>>();
        out.mdp.initial_dist = Eigen::Map<const Eigen::VectorXd>(d0.data(), static_cast<Eigen::Index>(d0.size()));
        out.mdp.discount = doc.at("discount").get<double>();
        out.mdp.horizon = doc.at("horizon").get<std::size_t>();
        const auto& fm = doc.at("feature_matrix");
        auto names = doc.at("feature_names").get<std::vector<std::string>>();
        Eigen::MatrixXd matrix(static_cast<Eigen::Index>(fm.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t i = 0; i < fm.size(); ++i) {
            if (fm[i].size() != names.size()) throw ParseError("feature_matrix: wrong row length");
            for (std::size_t j = 0; j < names.size(); ++j)
                matrix(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = fm[i][j].get<double>();
        }
        std::vector<std::size_t> blocks;
        if (doc.contains("feature_blocks")) blocks = doc["feature_blocks"].get<std::vector<std::size_t>>();
        out.features = FeatureMap(std::move(matrix), std::move(names), std::move(blocks));
        return out;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed MDP file: ") + e.what());
    }
}

void save_mdp(const std::filesystem::path& path, const Mdp& mdp, const FeatureMap& features) {
    write_text_atomic(path, mdp_to_json(mdp, features));
}

MdpBundle load_mdp(const std::filesystem::path& path) { return mdp_from_json(read_text(path)); }

}  // namespace userreward
