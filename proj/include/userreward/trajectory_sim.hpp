#pragma once

#include "userreward/maxent.hpp"
#include "userreward/mdp.hpp"
#include "userreward/session_ingest.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace userreward {

struct LengthDistribution {
    enum class Kind { geometric, fixed };
    Kind kind = Kind::geometric;
    /// Success probability of the geometric law on {1, 2, ...}.
    double p = 0.125;
    std::size_t length = 1;

    static LengthDistribution geometric_with_mean(double mean) { return {Kind::geometric, 1.0 / mean, 1}; }
    static LengthDistribution fixed_length(std::size_t len) { return {Kind::fixed, 1.0, len}; }
};

struct GeneratorSpec {
    Mdp mdp;
    FeatureMap features;
    RewardWeights true_theta;
    std::size_t n_sessions = 1;
    LengthDistribution length;
    std::uint64_t seed = 0;
    std::string group_label;
    std::map<std::string, std::string> profile_template;

    void validate() const;
};

/// Draws sessions from the maximum-entropy trajectory distribution of the
/// planted reward: length L from the length law, s0 ~ d0, then
/// a_t ~ pi_t(.|s_t) and s_{t+1} ~ the policy's successor law, with pi the
/// L-step backward-pass policy. Deterministic given the seed.
SessionSet sample_trajectories(const GeneratorSpec& spec);

struct Trajectory {
    std::vector<StateIndex> states;
    std::vector<ActionIndex> actions;
};

struct WeightedTrajectory {
    Trajectory trajectory;
    double probability = 0.0;
};

/// Brute-force trajectory distribution over `horizon` states:
///   P(tau) = d0(s0) w(tau) / sum_{tau' from s0} w(tau'),
///   w(tau) = prod_t P(s_{t+1}|s_t,a_t) exp(sum_t discount^t R(s_t)).
/// Refuses (ConfigurationError) when horizon > 6 or n_states^horizon > 1e6.
std::vector<WeightedTrajectory> enumerate_trajectories(const Mdp& mdp, const RewardWeights& weights,
                                                       const FeatureMap& features, std::size_t horizon);

/// Probability-weighted discounted feature sums.
Eigen::VectorXd exact_feature_expectations(const std::vector<WeightedTrajectory>& trajectories,
                                           const FeatureMap& features, double discount);

/// P(s_t = s) for t = 0 .. horizon-1.
std::vector<Eigen::VectorXd> enumerated_state_marginals(const std::vector<WeightedTrajectory>& trajectories,
                                                        std::size_t n_states, std::size_t horizon);

/// P(a_t = a | s_t = s); rows of states with zero mass at depth t are zero.
std::vector<Eigen::MatrixXd> enumerated_action_conditionals(const std::vector<WeightedTrajectory>& trajectories,
                                                            std::size_t n_states, std::size_t n_actions,
                                                            std::size_t horizon);

/// Museum-schema MDP with every topic available from every situation and a
/// seeded random (object, duration bin) law inside the chosen topic.
Mdp museum_ground_truth_mdp(const SchemaConfig& schema, std::uint64_t seed, double discount, std::size_t horizon);

struct ToyLimits {
    std::size_t max_states = 5;
    std::size_t max_actions = 3;
    std::size_t max_horizon = 5;
    std::size_t max_features = 4;
};

struct ToyInstance {
    Mdp mdp;
    FeatureMap features;
    RewardWeights theta;
};

/// Small random MDP with sparse stochastic transitions, at least one supported
/// action per state, features in [0,1] and theta in [-1,1]^k.
ToyInstance random_toy_instance(std::mt19937_64& rng, const ToyLimits& limits = {});

struct LogRenderOptions {
    std::uint64_t seed = 0;
    double start_time = 1500000000.0;
    /// Extra sessions that the parser must drop.
    std::size_t invalid_no_events = 0;
    std::size_t invalid_missing_attribute = 0;
};

/// Ingest-format log for museum-schema sessions: durations are drawn uniformly
/// inside each state's bin (last bin capped at 300 s) in tenths of a second.
std::string render_session_log(const SessionSet& set, const SchemaConfig& schema, const LogRenderOptions& options);

}  // namespace userreward
