#include "userreward/maxent.hpp"

#include "userreward/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

namespace userreward {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double max_finite(const Eigen::VectorXd& v) {
    double m = kNegInf;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (std::isfinite(v(i))) m = std::max(m, v(i));
    return m;
}

/// exp(v - shift) with exp(-inf) = 0.
Eigen::VectorXd shifted_exp(const Eigen::VectorXd& v, double shift) {
    Eigen::VectorXd out(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::isfinite(v(i)) ? std::exp(v(i) - shift) : 0.0;
    return out;
}

void check_conservation(const Policy& policy, const VisitationFrequencies& freqs, ConservationStats& stats) {
    for (std::size_t t = 0; t + 1 < policy.horizon(); ++t) {
        const auto& probs = policy.action_probs(t);
        for (Eigen::Index s = 0; s < probs.rows(); ++s) {
            if (policy.is_maxent() && !std::isfinite(policy.log_partition(t)(s))) continue;
            const double sum = probs.row(s).sum();
            if (sum == 0.0 && !policy.is_maxent()) continue;
            const double err = std::abs(sum - 1.0);
            ++stats.checks;
            stats.max_policy_row_error = std::max(stats.max_policy_row_error, err);
            if (!(err <= kProbabilityTolerance)) ++stats.violations;
        }
    }
    for (const auto& slice : freqs.per_time) {
        const double err = std::abs(slice.sum() - 1.0);
        ++stats.checks;
        stats.max_slice_error = std::max(stats.max_slice_error, err);
        if (!(err <= kProbabilityTolerance)) ++stats.violations;
    }
}

double sup_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

}  // namespace

void SolverConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigurationError("learning_rate must be positive");
    if (!(grad_tol > 0.0)) throw ConfigurationError("grad_tol must be positive");
    if (max_iters < 1) throw ConfigurationError("max_iters must be at least 1");
    if (discount && !(*discount >= 0.0 && *discount < 1.0)) throw ConfigurationError("discount outside [0, 1)");
    if (horizon && *horizon < 1) throw ConfigurationError("horizon must be at least 1");
}

void ConservationStats::merge(const ConservationStats& other) {
    checks += other.checks;
    violations += other.violations;
    max_policy_row_error = std::max(max_policy_row_error, other.max_policy_row_error);
    max_slice_error = std::max(max_slice_error, other.max_slice_error);
}

Policy Policy::stationary(const Eigen::MatrixXd& probs, std::size_t horizon) {
    if (horizon < 1) throw ConfigurationError("horizon must be at least 1");
    Policy p;
    p.horizon_ = horizon;
    p.n_states_ = static_cast<std::size_t>(probs.rows());
    p.n_actions_ = static_cast<std::size_t>(probs.cols());
    p.probs_.assign(horizon - 1, probs);
    return p;
}

Policy Policy::time_indexed(std::vector<Eigen::MatrixXd> probs) {
    Policy p;
    p.horizon_ = probs.size() + 1;
    if (!probs.empty()) {
        p.n_states_ = static_cast<std::size_t>(probs.front().rows());
        p.n_actions_ = static_cast<std::size_t>(probs.front().cols());
        for (const auto& m : probs)
            if (static_cast<std::size_t>(m.rows()) != p.n_states_ || static_cast<std::size_t>(m.cols()) != p.n_actions_)
                throw ConfigurationError("policy tables differ in shape across depths");
    }
    p.probs_ = std::move(probs);
    return p;
}

Eigen::VectorXd Policy::successor_log_weight(std::size_t t) const {
    return std::pow(discount_, static_cast<double>(t)) * rewards_ + log_partition_.at(t);
}

Eigen::VectorXd Policy::successor_distribution(const TransitionModel& transitions, std::size_t t, StateIndex s,
                                               ActionIndex a) const {
    const auto row = transitions.row(s, a);
    Eigen::VectorXd out = Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()));
    if (!is_maxent()) return out;
    const Eigen::VectorXd u = successor_log_weight(t + 1);
    const double m = max_finite(u);
    if (!std::isfinite(m)) return Eigen::VectorXd::Zero(out.size());
    out = out.cwiseProduct(shifted_exp(u, m));
    const double total = out.sum();
    if (total > 0.0) out /= total;
    return out;
}

Policy backward_pass(const TransitionModel& transitions, const Eigen::VectorXd& state_rewards, double discount,
                     std::size_t horizon) {
    const std::size_t n = transitions.n_states();
    const std::size_t m = transitions.n_actions();
    if (static_cast<std::size_t>(state_rewards.size()) != n)
        throw ConfigurationError("reward vector length does not match the number of states");
    if (horizon < 1) throw ConfigurationError("horizon must be at least 1");

    Policy p;
    p.horizon_ = horizon;
    p.n_states_ = n;
    p.n_actions_ = m;
    p.rewards_ = state_rewards;
    p.discount_ = discount;
    p.log_partition_.assign(horizon, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
    p.probs_.assign(horizon - 1, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m)));

    Eigen::VectorXd zsa(static_cast<Eigen::Index>(n * m));
    for (std::size_t t = horizon - 1; t >= 1; --t) {
        const Eigen::VectorXd u = p.successor_log_weight(t);
        const double shift = max_finite(u);
        auto& beta = p.log_partition_[t - 1];
        auto& probs = p.probs_[t - 1];
        if (!std::isfinite(shift)) {
            beta.setConstant(kNegInf);
            continue;
        }
        zsa.noalias() = transitions.stacked() * shifted_exp(u, shift);
        for (std::size_t s = 0; s < n; ++s) {
            const auto si = static_cast<Eigen::Index>(s);
            double z = 0.0;
            for (std::size_t a = 0; a < m; ++a) z += zsa(static_cast<Eigen::Index>(s * m + a));
            if (z > 0.0) {
                beta(si) = std::log(z) + shift;
                for (std::size_t a = 0; a < m; ++a)
                    probs(si, static_cast<Eigen::Index>(a)) = zsa(static_cast<Eigen::Index>(s * m + a)) / z;
            } else {
                beta(si) = kNegInf;
            }
        }
    }
    return p;
}

Policy backward_pass(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features) {
    if (features.n_states() != mdp.n_states())
        throw ConfigurationError("feature map and MDP disagree on the number of states");
    Policy p = backward_pass(mdp.transitions, state_rewards(weights, features), mdp.discount, mdp.horizon);
    if (mdp.horizon > 1) {
        const auto& beta0 = p.log_partition(0);
        for (std::size_t s = 0; s < mdp.n_states(); ++s) {
            const auto si = static_cast<Eigen::Index>(s);
            if (mdp.initial_dist(si) > 0.0 && !std::isfinite(beta0(si))) {
                if (mdp.transitions.support_count(s) == 0)
                    throw ModelingError("state " + std::to_string(s) + " (" + mdp.states.labels[s] +
                                        ") has initial mass but no supported actions");
                throw ModelingError("state " + std::to_string(s) + " (" + mdp.states.labels[s] +
                                    ") cannot be continued for " + std::to_string(mdp.horizon) + " steps");
            }
        }
    }
    return p;
}

VisitationFrequencies forward_pass(const Mdp& mdp, const Policy& policy) {
    return forward_pass(mdp, policy, mdp.initial_dist);
}

VisitationFrequencies forward_pass(const Mdp& mdp, const Policy& policy, const Eigen::VectorXd& initial) {
    const std::size_t n = mdp.n_states();
    const std::size_t m = mdp.n_actions();
    const auto& tm = mdp.transitions;
    if (static_cast<std::size_t>(initial.size()) != n)
        throw ConfigurationError("initial distribution length does not match the number of states");
    if (policy.horizon() > 1 && (policy.n_states() != n || policy.n_actions() != m))
        throw ConfigurationError("policy shape does not match the MDP");

    VisitationFrequencies out;
    out.per_time.reserve(policy.horizon());
    out.per_time.push_back(initial);
    Eigen::VectorXd source(static_cast<Eigen::Index>(n * m));
    for (std::size_t t = 0; t + 1 < policy.horizon(); ++t) {
        const Eigen::VectorXd& mass = out.per_time.back();
        source.setZero();
        Eigen::VectorXd next;
        if (policy.is_maxent()) {
            // pi_t(a|s) P~_t(s'|s,a) = P(s'|s,a) exp(u(s') - beta_t(s))
            const auto& beta = policy.log_partition(t);
            const Eigen::VectorXd u = policy.successor_log_weight(t + 1);
            const double shift = max_finite(u);
            double top = kNegInf;
            for (std::size_t s = 0; s < n; ++s) {
                const auto si = static_cast<Eigen::Index>(s);
                if (!(mass(si) > 0.0)) continue;
                if (!std::isfinite(beta(si)))
                    throw ModelingError("state " + std::to_string(s) + " (" + mdp.states.labels[s] +
                                        ") is visited at depth " + std::to_string(t) +
                                        " but cannot be continued for the remaining steps");
                top = std::max(top, shift - beta(si));
            }
            if (!std::isfinite(top)) {
                out.per_time.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n)));
                continue;
            }
            for (std::size_t s = 0; s < n; ++s) {
                const auto si = static_cast<Eigen::Index>(s);
                if (!(mass(si) > 0.0)) continue;
                const double c = mass(si) * std::exp(shift - beta(si) - top);
                for (std::size_t a = 0; a < m; ++a)
                    if (tm.supported(s, a)) source(static_cast<Eigen::Index>(s * m + a)) = c;
            }
            next = tm.stacked().transpose() * source;
            for (Eigen::Index j = 0; j < next.size(); ++j)
                next(j) = std::isfinite(u(j)) && next(j) != 0.0 ? next(j) * std::exp(u(j) - shift + top) : 0.0;
        } else {
            const auto& probs = policy.action_probs(t);
            for (std::size_t s = 0; s < n; ++s) {
                const auto si = static_cast<Eigen::Index>(s);
                if (!(mass(si) > 0.0)) continue;
                for (std::size_t a = 0; a < m; ++a) {
                    const double pa = probs(si, static_cast<Eigen::Index>(a));
                    if (pa == 0.0) continue;
                    if (!tm.supported(s, a))
                        throw UnsupportedActionError("policy selects unsupported action " + std::to_string(a) +
                                                     " in state " + std::to_string(s));
                    source(static_cast<Eigen::Index>(s * m + a)) = mass(si) * pa;
                }
            }
            next = tm.stacked().transpose() * source;
        }
        out.per_time.push_back(std::move(next));
    }
    out.totals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    double weight = 1.0;
    for (const auto& slice : out.per_time) {
        out.totals.noalias() += weight * slice;
        weight *= mdp.discount;
    }
    return out;
}

Eigen::VectorXd expected_feature_counts(const VisitationFrequencies& freqs, const FeatureMap& features) {
    if (static_cast<std::size_t>(freqs.totals.size()) != features.n_states())
        throw ConfigurationError("visitation vector length does not match the feature map");
    return features.matrix().transpose() * freqs.totals;
}

double log_likelihood(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                      const SessionSet& set) {
    if (features.n_states() != mdp.n_states())
        throw ConfigurationError("feature map and MDP disagree on the number of states");
    const Eigen::VectorXd rewards = state_rewards(weights, features);
    const auto& tm = mdp.transitions;
    std::map<std::size_t, Policy> policies;
    double total = 0.0;
    for (const auto& sess : set.sessions) {
        const std::size_t len = std::min(sess.length(), mdp.horizon);
        if (len < 2) continue;
        auto it = policies.find(len);
        if (it == policies.end()) it = policies.emplace(len, backward_pass(tm, rewards, mdp.discount, len)).first;
        const Policy& pol = it->second;
        for (std::size_t t = 0; t + 1 < len; ++t) {
            const auto s = sess.state_seq[t];
            const auto a = sess.action_seq[t];
            const auto next = sess.state_seq[t + 1];
            if (s >= mdp.n_states() || next >= mdp.n_states() || a >= mdp.n_actions())
                throw DataMismatchError("session " + sess.session_id + " has out-of-range indices");
            if (!tm.supported(s, a) || tm.prob(s, a, next) <= 0.0)
                throw DataMismatchError("session " + sess.session_id + " takes unsupported step (" +
                                        std::to_string(s) + ", " + std::to_string(a) + ") -> " + std::to_string(next));
            const double pa = pol.prob(t, s, a);
            if (!(pa > 0.0))
                throw DataMismatchError("session " + sess.session_id + " is impossible under the model at depth " +
                                        std::to_string(t));
            // log P~_t(next|s,a) - log P(next|s,a) = u(next) - log sum_j P(j|s,a) exp(u(j))
            const Eigen::VectorXd u = pol.successor_log_weight(t + 1);
            const auto row = tm.row(s, a);
            double top = kNegInf;
            for (std::size_t j = 0; j < row.size(); ++j)
                if (row[j] > 0.0 && std::isfinite(u(static_cast<Eigen::Index>(j))))
                    top = std::max(top, u(static_cast<Eigen::Index>(j)));
            double acc = 0.0;
            for (std::size_t j = 0; j < row.size(); ++j)
                if (row[j] > 0.0 && std::isfinite(u(static_cast<Eigen::Index>(j))))
                    acc += row[j] * std::exp(u(static_cast<Eigen::Index>(j)) - top);
            total += std::log(pa) + u(static_cast<Eigen::Index>(next)) - (std::log(acc) + top);
        }
    }
    return total;
}

ObjectiveValue evaluate_objective(const Mdp& mdp, const Eigen::VectorXd& theta, const FeatureMap& features,
                                  const FeatureExpectations& mu_hat) {
    if (features.n_states() != mdp.n_states())
        throw ConfigurationError("feature map and MDP disagree on the number of states");
    if (static_cast<std::size_t>(theta.size()) != features.k() || static_cast<std::size_t>(mu_hat.mu.size()) != features.k())
        throw ConfigurationError("theta / mu_hat length does not match the feature dimension");

    const Eigen::VectorXd rewards = features.matrix() * theta;
    struct Slice {
        std::size_t horizon;
        Eigen::VectorXd start;
        double weight;
    };
    std::vector<Slice> slices;
    if (mu_hat.start_counts_by_length.empty()) {
        slices.push_back({mdp.horizon, mdp.initial_dist, 1.0});
    } else {
        double m = 0.0;
        for (const auto& [len, counts] : mu_hat.start_counts_by_length) m += counts.sum();
        if (!(m > 0.0)) throw EstimationError("feature expectations carry no sessions");
        for (const auto& [len, counts] : mu_hat.start_counts_by_length) {
            if (static_cast<std::size_t>(counts.size()) != mdp.n_states())
                throw ConfigurationError("start counts do not match the number of states");
            if (len > mdp.horizon)
                throw ConfigurationError("feature expectations contain sessions longer than the MDP horizon");
            const double ml = counts.sum();
            if (ml > 0.0) slices.push_back({len, counts / ml, ml / m});
        }
    }

    ObjectiveValue out;
    out.expected_counts = Eigen::VectorXd::Zero(theta.size());
    double log_partition = 0.0;
    for (const auto& slice : slices) {
        const Policy pol = backward_pass(mdp.transitions, rewards, mdp.discount, slice.horizon);
        const VisitationFrequencies freqs = forward_pass(mdp, pol, slice.start);
        check_conservation(pol, freqs, out.conservation);
        out.expected_counts.noalias() += slice.weight * expected_feature_counts(freqs, features);
        const auto& beta0 = pol.log_partition(0);
        for (Eigen::Index s = 0; s < slice.start.size(); ++s)
            if (slice.start(s) > 0.0) log_partition += slice.weight * slice.start(s) * (rewards(s) + beta0(s));
    }
    out.gradient = mu_hat.mu - out.expected_counts;
    out.log_likelihood = theta.dot(mu_hat.mu) - log_partition;
    return out;
}

Eigen::VectorXd gradient(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                         const FeatureExpectations& mu_hat) {
    return evaluate_objective(mdp, weights.theta, features, mu_hat).gradient;
}

FitResult fit(const Mdp& mdp, const FeatureMap& features, const FeatureExpectations& mu_hat,
              const SolverConfig& config) {
    config.validate();
    if (config.discount && *config.discount != mdp.discount)
        throw ConfigurationError("solver discount differs from the MDP discount");
    if (config.horizon && *config.horizon != mdp.horizon)
        throw ConfigurationError("solver horizon differs from the MDP horizon");
    if (mu_hat.discount != mdp.discount)
        throw ConfigurationError("feature expectations were computed with a different discount");
    if (!mu_hat.start_counts_by_length.empty() && mu_hat.horizon != mdp.horizon)
        throw ConfigurationError("feature expectations were computed with a different horizon");

    FitResult result;
    result.config = config;
    result.config.discount = mdp.discount;
    result.config.horizon = mdp.horizon;
    result.unreachable_states = unreachable_states(mdp);
    result.weights.feature_names = features.names();

    const auto k = static_cast<Eigen::Index>(features.k());
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(k);
    if (config.init == SolverConfig::Init::small_random) {
        std::mt19937_64 rng(config.seed);
        std::uniform_real_distribution<double> unif(-0.01, 0.01);
        for (Eigen::Index j = 0; j < k; ++j) theta(j) = unif(rng);
    }

    double lr = config.learning_rate;
    std::size_t decreases = 0;
    ObjectiveValue current = evaluate_objective(mdp, theta, features, mu_hat);
    result.conservation.merge(current.conservation);
    if (!std::isfinite(current.log_likelihood))
        throw ModelingError("the starting point has a non-finite log-likelihood");

    bool record = true;
    for (;;) {
        if (record) {
            const double gnorm = sup_norm(current.gradient);
            result.ll_trace.push_back(current.log_likelihood);
            result.grad_norm_trace.push_back(gnorm);
            if (gnorm <= config.grad_tol) {
                result.converged = true;
                result.stop_reason = "gradient below tolerance";
                break;
            }
            if (result.iterations >= config.max_iters) {
                result.stop_reason = "iteration limit";
                break;
            }
        }
        record = true;
        Eigen::VectorXd candidate = theta + lr * current.gradient;
        ObjectiveValue next = evaluate_objective(mdp, candidate, features, mu_hat);
        result.conservation.merge(next.conservation);
        bool halve = false;
        if (!std::isfinite(next.log_likelihood) || !next.gradient.allFinite()) {
            // rejected step: retry from the same iterate with a smaller rate
            halve = true;
            record = false;
        } else {
            if (next.log_likelihood < current.log_likelihood) {
                if (++decreases >= 10) {
                    halve = true;
                    decreases = 0;
                }
            } else {
                decreases = 0;
            }
            theta = std::move(candidate);
            current = std::move(next);
            ++result.iterations;
        }
        if (halve) {
            lr *= 0.5;
            if (lr < 1e-12) {
                result.stop_reason = "learning rate underflow";
                if (record) {
                    result.ll_trace.push_back(current.log_likelihood);
                    result.grad_norm_trace.push_back(sup_norm(current.gradient));
                }
                break;
            }
        }
    }
    result.weights.theta = theta;
    result.final_gradient = current.gradient;
    result.final_learning_rate = lr;
    return result;
}

double evaluate_policy(const Mdp& mdp, const RewardWeights& weights, const FeatureMap& features,
                       const Policy& policy) {
    const VisitationFrequencies freqs = forward_pass(mdp, policy);
    return weights.theta.dot(expected_feature_counts(freqs, features));
}

}  // namespace userreward
