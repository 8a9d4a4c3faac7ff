#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace userreward {

using StateIndex = std::size_t;
using ActionIndex = std::size_t;

/// Tolerance for every stochasticity check in the library.
inline constexpr double kProbabilityTolerance = 1e-9;

struct StateSpace {
    std::vector<std::string> labels;

    std::size_t size() const { return labels.size(); }

    /// Labels "s0".."s{n-1}".
    static StateSpace numbered(std::size_t n);
};

struct ActionSpace {
    std::vector<std::string> labels;

    std::size_t size() const { return labels.size(); }

    static ActionSpace numbered(std::size_t n);
};

/// Dense P(s'|s,a) tensor in [state][action][next_state] order plus the
/// support mask. Immutable after construction; the sparse views used by the
/// solver are built once here.
class TransitionModel {
public:
    TransitionModel() = default;

    /// Support is inferred: (s,a) is supported iff its row has a non-zero entry.
    TransitionModel(std::size_t n_states, std::size_t n_actions, std::vector<double> probs);

    TransitionModel(std::size_t n_states, std::size_t n_actions, std::vector<double> probs,
                    std::vector<bool> support);

    std::size_t n_states() const { return n_states_; }
    std::size_t n_actions() const { return n_actions_; }

    double prob(StateIndex s, ActionIndex a, StateIndex next) const {
        return probs_[(s * n_actions_ + a) * n_states_ + next];
    }
    bool supported(StateIndex s, ActionIndex a) const { return support_[s * n_actions_ + a]; }
    std::span<const double> row(StateIndex s, ActionIndex a) const;

    /// Number of supported actions in state s.
    std::size_t support_count(StateIndex s) const;

    const std::vector<double>& dense() const { return probs_; }

    /// Row (s * n_actions + a) holds P(.|s,a); unsupported rows are empty.
    const Eigen::SparseMatrix<double, Eigen::RowMajor>& stacked() const { return stacked_; }

private:
    void build_views();

    std::size_t n_states_ = 0;
    std::size_t n_actions_ = 0;
    std::vector<double> probs_;
    std::vector<bool> support_;
    Eigen::SparseMatrix<double, Eigen::RowMajor> stacked_;
};

struct Mdp {
    StateSpace states;
    ActionSpace actions;
    TransitionModel transitions;
    Eigen::VectorXd initial_dist;
    double discount = 0.9;
    /// Number of states in a trajectory (H states, H-1 actions).
    std::size_t horizon = 1;

    std::size_t n_states() const { return states.size(); }
    std::size_t n_actions() const { return actions.size(); }
};

/// State -> [0,1]^k feature rows. `blocks` optionally records the sizes of
/// consecutive one-hot blocks (empty for unstructured maps).
class FeatureMap {
public:
    FeatureMap() = default;
    FeatureMap(Eigen::MatrixXd matrix, std::vector<std::string> names,
               std::vector<std::size_t> blocks = {});

    std::size_t n_states() const { return static_cast<std::size_t>(matrix_.rows()); }
    std::size_t k() const { return static_cast<std::size_t>(matrix_.cols()); }
    const Eigen::MatrixXd& matrix() const { return matrix_; }
    const std::vector<std::string>& names() const { return names_; }
    const std::vector<std::size_t>& blocks() const { return blocks_; }
    Eigen::VectorXd row(StateIndex s) const { return matrix_.row(static_cast<Eigen::Index>(s)).transpose(); }

private:
    Eigen::MatrixXd matrix_;
    std::vector<std::string> names_;
    std::vector<std::size_t> blocks_;
};

struct RewardWeights {
    Eigen::VectorXd theta;
    std::vector<std::string> feature_names;
};

/// R(s) = theta . f(s) for every state.
Eigen::VectorXd state_rewards(const RewardWeights& weights, const FeatureMap& features);

double reward_of_state(const RewardWeights& weights, const FeatureMap& features, StateIndex s);

/// Sum over s' of P(s'|s,a) R(s'). Throws UnsupportedActionError for an unsupported pair.
double expected_next_reward(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                            StateIndex s, ActionIndex a);

struct Violation {
    std::string message;
    std::optional<StateIndex> state;
    std::optional<ActionIndex> action;
};

/// Every broken invariant of the transition model / MDP; empty iff valid.
std::vector<Violation> validate_mdp(const Mdp& mdp);

/// States with zero initial mass and no supported inbound transition.
std::vector<StateIndex> unreachable_states(const Mdp& mdp);

}  // namespace userreward
