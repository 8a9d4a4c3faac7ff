#pragma once

#include "userreward/feature_stats.hpp"
#include "userreward/mdp.hpp"
#include "userreward/session_ingest.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace userreward {

struct SolverConfig {
    double learning_rate = 0.05;
    std::size_t max_iters = 2000;
    /// Sup-norm threshold on the gradient.
    double grad_tol = 1e-4;
    /// When set, must agree with the MDP the solver is given.
    std::optional<double> discount;
    std::optional<std::size_t> horizon;
    enum class Init { zero, small_random };
    Init init = Init::zero;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Time-indexed action distribution pi_t(a|s), t = 0 .. horizon-2.
///
/// A policy produced by backward_pass also carries the soft log-partition
/// beta_t(s) of every state and depth. Under the maximum-entropy trajectory
/// distribution the successor of (s, a) at depth t is drawn from
///   P~_t(s'|s,a) = P(s'|s,a) exp(g^{t+1} R(s') + beta_{t+1}(s')) / Z_t(s,a),
/// which coincides with P(s'|s,a) whenever the dynamics are deterministic.
/// Policies built from plain action tables use P directly.
class Policy {
public:
    Policy() = default;

    /// Same action table at every depth.
    static Policy stationary(const Eigen::MatrixXd& probs, std::size_t horizon);
    static Policy time_indexed(std::vector<Eigen::MatrixXd> probs);

    std::size_t horizon() const { return horizon_; }
    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }

    /// S x A table for depth t (t < horizon - 1).
    const Eigen::MatrixXd& action_probs(std::size_t t) const { return probs_.at(t); }
    double prob(std::size_t t, StateIndex s, ActionIndex a) const {
        return probs_[t](static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a));
    }

    bool is_maxent() const { return !log_partition_.empty(); }
    /// beta_t(s); -inf when s cannot be continued for the remaining steps.
    const Eigen::VectorXd& log_partition(std::size_t t) const { return log_partition_.at(t); }
    const Eigen::VectorXd& state_rewards() const { return rewards_; }
    double discount() const { return discount_; }

    /// g^t R(s) + beta_t(s) for every s.
    Eigen::VectorXd successor_log_weight(std::size_t t) const;

    /// Successor distribution of (s, a) at depth t, as a dense vector over states.
    Eigen::VectorXd successor_distribution(const TransitionModel& transitions, std::size_t t, StateIndex s,
                                           ActionIndex a) const;

private:
    friend Policy backward_pass(const TransitionModel&, const Eigen::VectorXd&, double, std::size_t);

    std::size_t horizon_ = 1;
    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    std::vector<Eigen::MatrixXd> probs_;
    std::vector<Eigen::VectorXd> log_partition_;
    Eigen::VectorXd rewards_;
    double discount_ = 0.0;
};

struct VisitationFrequencies {
    /// per_time[t](s) = P(s_t = s), t = 0 .. horizon-1.
    std::vector<Eigen::VectorXd> per_time;
    /// sum_t discount^t per_time[t].
    Eigen::VectorXd totals;
};

struct ConservationStats {
    std::size_t checks = 0;
    std::size_t violations = 0;
    double max_policy_row_error = 0.0;
    double max_slice_error = 0.0;

    void merge(const ConservationStats& other);
};

struct FitResult {
    RewardWeights weights;
    /// Log-likelihood per session at every visited iterate.
    std::vector<double> ll_trace;
    std::vector<double> grad_norm_trace;
    bool converged = false;
    /// Gradient steps taken.
    std::size_t iterations = 0;
    SolverConfig config;
    Eigen::VectorXd final_gradient;
    double final_learning_rate = 0.0;
    std::string stop_reason;
    std::vector<StateIndex> unreachable_states;
    ConservationStats conservation;
};

/// Soft backups over `horizon - 1` steps with the successor reward of depth t
/// discounted by discount^{t+1}; log-space throughout.
Policy backward_pass(const TransitionModel& transitions, const Eigen::VectorXd& state_rewards, double discount,
                     std::size_t horizon);

/// MaxEnt policy of the MDP under R = theta . f. Throws ModelingError when an
/// initial state cannot be continued for mdp.horizon steps.
Policy backward_pass(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features);

VisitationFrequencies forward_pass(const Mdp& mdp, const Policy& policy);
VisitationFrequencies forward_pass(const Mdp& mdp, const Policy& policy, const Eigen::VectorXd& initial);

/// F^T totals.
Eigen::VectorXd expected_feature_counts(const VisitationFrequencies& freqs, const FeatureMap& features);

/// sum over sessions of log P_theta(trajectory | first state, length), dropping
/// the theta-free sum of log P(s'|s,a). Sessions longer than mdp.horizon are truncated.
double log_likelihood(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                      const SessionSet& set);

/// mu_hat - model feature expectation. The model side mirrors mu_hat's
/// (length, first state) statistics when present, otherwise uses
/// mdp.initial_dist and mdp.horizon.
Eigen::VectorXd gradient(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                         const FeatureExpectations& mu_hat);

struct ObjectiveValue {
    /// Log-likelihood per session (theta-free terms dropped).
    double log_likelihood = 0.0;
    Eigen::VectorXd gradient;
    Eigen::VectorXd expected_counts;
    ConservationStats conservation;
};

ObjectiveValue evaluate_objective(const Mdp& mdp, const Eigen::VectorXd& theta, const FeatureMap& features,
                                  const FeatureExpectations& mu_hat);

/// Gradient ascent on the per-session log-likelihood.
FitResult fit(const Mdp& mdp, const FeatureMap& features, const FeatureExpectations& mu_hat,
              const SolverConfig& config);

/// E_{s0 ~ d0}[sum_t discount^t R(s_t)] under `policy`.
double evaluate_policy(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                       const Policy& policy);

}  // namespace userreward
