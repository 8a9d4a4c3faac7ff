#include "userreward/feature_stats.hpp"

#include "userreward/errors.hpp"

#include <json.hpp>

#include <algorithm>

namespace userreward {

FeatureExpectations empirical_feature_expectations(const SessionSet& set, const FeatureMap& features,
                                                   double discount, std::size_t horizon) {
    if (set.empty()) throw EstimationError("cannot compute feature expectations of an empty session set");
    if (horizon < 1) throw ConfigurationError("horizon must be at least 1");
    if (!(discount >= 0.0 && discount < 1.0)) throw ConfigurationError("discount outside [0, 1)");

    const auto k = static_cast<Eigen::Index>(features.k());
    const auto n = static_cast<Eigen::Index>(features.n_states());
    FeatureExpectations fe;
    fe.mu = Eigen::VectorXd::Zero(k);
    fe.discount = discount;
    fe.horizon = horizon;
    fe.feature_names = features.names();

    const auto& F = features.matrix();
    for (const auto& sess : set.sessions) {
        if (sess.state_seq.empty()) throw EstimationError("session " + sess.session_id + " has no states");
        const std::size_t len = std::min(sess.length(), horizon);
        double weight = 1.0;
        for (std::size_t t = 0; t < len; ++t) {
            const auto s = static_cast<Eigen::Index>(sess.state_seq[t]);
            if (s >= n) throw ConfigurationError("session " + sess.session_id + " has a state outside the feature map");
            fe.mu.noalias() += weight * F.row(s).transpose();
            weight *= discount;
        }
        auto [it, inserted] = fe.start_counts_by_length.try_emplace(len);
        if (inserted) it->second = Eigen::VectorXd::Zero(n);
        it->second(static_cast<Eigen::Index>(sess.state_seq.front())) += 1.0;
    }
    fe.n_sessions = set.size();
    fe.mu /= static_cast<double>(fe.n_sessions);
    return fe;
}

std::vector<std::size_t> state_visit_counts(const SessionSet& set, std::size_t n_states) {
    std::vector<std::size_t> counts(n_states, 0);
    for (const auto& sess : set.sessions)
        for (auto s : sess.state_seq) {
            if (s >= n_states) throw ConfigurationError("state index " + std::to_string(s) + " out of range");
            ++counts[s];
        }
    return counts;
}

std::string feature_expectations_to_json(const FeatureExpectations& fe, const std::string& group_label) {
    nlohmann::ordered_json doc;
    doc["role"] = "empirical";
    doc["group_label"] = group_label;
    doc["feature_names"] = fe.feature_names;
    doc["mu"] = std::vector<double>(fe.mu.data(), fe.mu.data() + fe.mu.size());
    doc["n_sessions"] = fe.n_sessions;
    doc["discount"] = fe.discount;
    doc["horizon"] = fe.horizon;
    return doc.dump(2) + "\n";
}

}  // namespace userreward
