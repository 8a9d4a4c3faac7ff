#pragma once

#include "userreward/mdp.hpp"
#include "userreward/session_ingest.hpp"

#include <map>
#include <string>
#include <vector>

namespace userreward {

/// Discounted empirical feature expectations of a session set, plus the
/// (truncated length, first state) counts the solver needs to build the
/// matching model-side expectation.
struct FeatureExpectations {
    Eigen::VectorXd mu;
    std::size_t n_sessions = 0;
    double discount = 0.9;
    std::size_t horizon = 1;
    /// length -> per-state count of first states among sessions of that length
    /// (lengths already truncated to the horizon). May be empty.
    std::map<std::size_t, Eigen::VectorXd> start_counts_by_length;
    std::vector<std::string> feature_names;
};

/// mu = 1/m sum_i sum_{t < min(len_i, horizon)} discount^t f(s_t^i).
FeatureExpectations empirical_feature_expectations(const SessionSet& set, const FeatureMap& features,
                                                   double discount, std::size_t horizon);

/// Raw visits per state over every time step of every session.
std::vector<std::size_t> state_visit_counts(const SessionSet& set, std::size_t n_states);

/// Weights-file document with role "empirical".
std::string feature_expectations_to_json(const FeatureExpectations& fe, const std::string& group_label = {});

}  // namespace userreward
