#include "userreward/mdp.hpp"

#include "userreward/errors.hpp"

#include <cmath>
#include <sstream>

namespace userreward {

StateSpace StateSpace::numbered(std::size_t n) {
    StateSpace space;
    for (std::size_t i = 0; i < n; ++i) space.labels.push_back("s" + std::to_string(i));
    return space;
}

ActionSpace ActionSpace::numbered(std::size_t n) {
    ActionSpace space;
    for (std::size_t i = 0; i < n; ++i) space.labels.push_back("a" + std::to_string(i));
    return space;
}

TransitionModel::TransitionModel(std::size_t n_states, std::size_t n_actions, std::vector<double> probs)
    : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)) {
    if (probs_.size() != n_states_ * n_actions_ * n_states_)
        throw ConfigurationError("transition tensor has " + std::to_string(probs_.size()) +
                                 " entries, expected " + std::to_string(n_states_ * n_actions_ * n_states_));
    support_.assign(n_states_ * n_actions_, false);
    for (std::size_t sa = 0; sa < n_states_ * n_actions_; ++sa)
        for (std::size_t j = 0; j < n_states_; ++j)
            if (probs_[sa * n_states_ + j] != 0.0) {
                support_[sa] = true;
                break;
            }
    build_views();
}

TransitionModel::TransitionModel(std::size_t n_states, std::size_t n_actions, std::vector<double> probs,
                                 std::vector<bool> support)
    : n_states_(n_states), n_actions_(n_actions), probs_(std::move(probs)), support_(std::move(support)) {
    if (probs_.size() != n_states_ * n_actions_ * n_states_)
        throw ConfigurationError("transition tensor has " + std::to_string(probs_.size()) +
                                 " entries, expected " + std::to_string(n_states_ * n_actions_ * n_states_));
    if (support_.size() != n_states_ * n_actions_)
        throw ConfigurationError("support mask has wrong size");
    build_views();
}

std::span<const double> TransitionModel::row(StateIndex s, ActionIndex a) const {
    return {probs_.data() + (s * n_actions_ + a) * n_states_, n_states_};
}

std::size_t TransitionModel::support_count(StateIndex s) const {
    std::size_t n = 0;
    for (std::size_t a = 0; a < n_actions_; ++a) n += supported(s, a) ? 1 : 0;
    return n;
}

void TransitionModel::build_views() {
    std::vector<Eigen::Triplet<double>> entries;
    for (std::size_t s = 0; s < n_states_; ++s)
        for (std::size_t a = 0; a < n_actions_; ++a) {
            if (!supported(s, a)) continue;
            for (std::size_t j = 0; j < n_states_; ++j) {
                const double p = prob(s, a, j);
                if (p != 0.0)
                    entries.emplace_back(static_cast<int>(s * n_actions_ + a), static_cast<int>(j), p);
            }
        }
    stacked_.resize(static_cast<Eigen::Index>(n_states_ * n_actions_), static_cast<Eigen::Index>(n_states_));
    stacked_.setFromTriplets(entries.begin(), entries.end());
    stacked_.makeCompressed();
}

FeatureMap::FeatureMap(Eigen::MatrixXd matrix, std::vector<std::string> names, std::vector<std::size_t> blocks)
    : matrix_(std::move(matrix)), names_(std::move(names)), blocks_(std::move(blocks)) {
    if (names_.size() != static_cast<std::size_t>(matrix_.cols()))
        throw ConfigurationError("feature map has " + std::to_string(matrix_.cols()) + " columns but " +
                                 std::to_string(names_.size()) + " names");
    for (Eigen::Index i = 0; i < matrix_.rows(); ++i)
        for (Eigen::Index j = 0; j < matrix_.cols(); ++j) {
            const double v = matrix_(i, j);
            if (!(v >= 0.0 && v <= 1.0))
                throw ConfigurationError("feature value outside [0,1] at state " + std::to_string(i) +
                                         ", feature " + names_[static_cast<std::size_t>(j)]);
        }
    if (!blocks_.empty()) {
        std::size_t total = 0;
        for (auto b : blocks_) total += b;
        if (total != names_.size()) throw ConfigurationError("feature blocks do not cover all features");
    }
}

Eigen::VectorXd state_rewards(const RewardWeights& weights, const FeatureMap& features) {
    if (static_cast<std::size_t>(weights.theta.size()) != features.k())
        throw ConfigurationError("theta has length " + std::to_string(weights.theta.size()) +
                                 " but the feature map has k = " + std::to_string(features.k()));
    return features.matrix() * weights.theta;
}

double reward_of_state(const RewardWeights& weights, const FeatureMap& features, StateIndex s) {
    if (static_cast<std::size_t>(weights.theta.size()) != features.k())
        throw ConfigurationError("theta has length " + std::to_string(weights.theta.size()) +
                                 " but the feature map has k = " + std::to_string(features.k()));
    if (s >= features.n_states()) throw ConfigurationError("state index " + std::to_string(s) + " out of range");
    return features.matrix().row(static_cast<Eigen::Index>(s)).dot(weights.theta);
}

double expected_next_reward(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                            StateIndex s, ActionIndex a) {
    if (features.n_states() != mdp.n_states())
        throw ConfigurationError("feature map and MDP disagree on the number of states");
    if (s >= mdp.n_states() || a >= mdp.n_actions())
        throw ConfigurationError("state/action index out of range");
    if (!mdp.transitions.supported(s, a))
        throw UnsupportedActionError("action " + std::to_string(a) + " is not supported in state " +
                                     std::to_string(s));
    const Eigen::VectorXd rewards = state_rewards(weights, features);
    double total = 0.0;
    const auto row = mdp.transitions.row(s, a);
    for (std::size_t j = 0; j < row.size(); ++j) total += row[j] * rewards(static_cast<Eigen::Index>(j));
    return total;
}

std::vector<Violation> validate_mdp(const Mdp& mdp) {
    std::vector<Violation> out;
    const auto& tm = mdp.transitions;
    const std::size_t n = mdp.n_states();

    if (n == 0) out.push_back({"state space is empty", {}, {}});
    if (mdp.n_actions() == 0) out.push_back({"action space is empty", {}, {}});
    if (tm.n_states() != n || tm.n_actions() != mdp.n_actions()) {
        out.push_back({"transition model dimensions do not match the state/action spaces", {}, {}});
        return out;
    }
    if (static_cast<std::size_t>(mdp.initial_dist.size()) != n) {
        out.push_back({"initial distribution has wrong length", {}, {}});
    } else {
        double total = 0.0;
        for (std::size_t s = 0; s < n; ++s) {
            const double p = mdp.initial_dist(static_cast<Eigen::Index>(s));
            if (!(p >= 0.0)) out.push_back({"negative initial probability at state " + std::to_string(s), s, {}});
            total += p;
        }
        if (!(std::abs(total - 1.0) <= kProbabilityTolerance)) {
            std::ostringstream msg;
            msg.precision(17);
            msg << "initial distribution sums to " << total;
            out.push_back({msg.str(), {}, {}});
        }
    }
    if (!(mdp.discount >= 0.0 && mdp.discount < 1.0))
        out.push_back({"discount outside [0, 1)", {}, {}});
    if (mdp.horizon < 1) out.push_back({"horizon must be at least 1", {}, {}});

    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
            const auto row = tm.row(s, a);
            double total = 0.0;
            bool negative = false;
            for (double p : row) {
                if (p < 0.0) negative = true;
                total += p;
            }
            const std::string where = "(" + std::to_string(s) + ", " + std::to_string(a) + ")";
            if (negative) out.push_back({"negative transition probability at " + where, s, a});
            if (tm.supported(s, a)) {
                if (!(std::abs(total - 1.0) <= kProbabilityTolerance)) {
                    std::ostringstream msg;
                    msg.precision(17);
                    msg << "transition row " << where << " sums to " << total;
                    out.push_back({msg.str(), s, a});
                }
            } else if (total != 0.0 || negative) {
                out.push_back({"unsupported transition row " + where + " is not all-zero", s, a});
            }
        }
    return out;
}

std::vector<StateIndex> unreachable_states(const Mdp& mdp) {
    const std::size_t n = mdp.n_states();
    std::vector<bool> inbound(n, false);
    const auto& stacked = mdp.transitions.stacked();
    for (Eigen::Index r = 0; r < stacked.outerSize(); ++r)
        for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(stacked, r); it; ++it)
            if (it.value() > 0.0) inbound[static_cast<std::size_t>(it.col())] = true;
    std::vector<StateIndex> out;
    for (std::size_t s = 0; s < n; ++s)
        if (!inbound[s] && !(mdp.initial_dist(static_cast<Eigen::Index>(s)) > 0.0)) out.push_back(s);
    return out;
}

}  // namespace userreward
