#include "userreward/trajectory_sim.hpp"

#include "userreward/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace userreward {

namespace {

/// Inverse-CDF draw from unnormalized non-negative weights.
std::size_t draw_index(const Eigen::VectorXd& weights, std::mt19937_64& rng) {
    const double total = weights.sum();
    if (!(total > 0.0)) throw ModelingError("cannot sample from an all-zero distribution");
    std::uniform_real_distribution<double> unif(0.0, total);
    const double u = unif(rng);
    double acc = 0.0;
    std::size_t last = 0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
        if (weights(i) <= 0.0) continue;
        acc += weights(i);
        last = static_cast<std::size_t>(i);
        if (u < acc) return last;
    }
    return last;
}

std::string padded(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%06zu", i);
    return buf;
}

Eigen::VectorXd dirichlet_ones(std::size_t n, std::mt19937_64& rng) {
    std::exponential_distribution<double> expo(1.0);
    Eigen::VectorXd v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i) v(static_cast<Eigen::Index>(i)) = expo(rng);
    return v / v.sum();
}

}  // namespace

void GeneratorSpec::validate() const {
    if (n_sessions < 1) throw ConfigurationError("generator needs n_sessions >= 1");
    if (length.kind == LengthDistribution::Kind::geometric && !(length.p > 0.0 && length.p <= 1.0))
        throw ConfigurationError("geometric length parameter must lie in (0, 1]");
    if (length.kind == LengthDistribution::Kind::fixed && length.length < 1)
        throw ConfigurationError("fixed session length must be at least 1");
    if (features.n_states() != mdp.n_states()) throw ConfigurationError("feature map does not match the MDP");
    if (static_cast<std::size_t>(true_theta.theta.size()) != features.k())
        throw ConfigurationError("true theta does not match the feature dimension");
}

SessionSet sample_trajectories(const GeneratorSpec& spec) {
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const Eigen::VectorXd rewards = state_rewards(spec.true_theta, spec.features);
    std::map<std::size_t, Policy> policies;
    std::geometric_distribution<std::size_t> geo(spec.length.p);

    SessionSet set;
    set.n_states = spec.mdp.n_states();
    set.n_actions = spec.mdp.n_actions();
    if (!spec.group_label.empty()) set.group_label = spec.group_label;
    const std::string prefix = spec.group_label.empty() ? std::string("s") : spec.group_label;
    const auto& tm = spec.mdp.transitions;

    for (std::size_t i = 0; i < spec.n_sessions; ++i) {
        const std::size_t len =
            spec.length.kind == LengthDistribution::Kind::fixed ? spec.length.length : 1 + geo(rng);
        auto it = policies.find(len);
        if (it == policies.end())
            it = policies.emplace(len, backward_pass(tm, rewards, spec.mdp.discount, len)).first;
        const Policy& pol = it->second;

        Session sess;
        sess.session_id = prefix + "-" + padded(i + 1);
        sess.profile = {sess.session_id, spec.profile_template};
        // starts are conditioned on being able to last `len` steps
        Eigen::VectorXd start = spec.mdp.initial_dist;
        if (len > 1)
            for (Eigen::Index s = 0; s < start.size(); ++s)
                if (!std::isfinite(pol.log_partition(0)(s))) start(s) = 0.0;
        StateIndex s = draw_index(start, rng);
        sess.state_seq.push_back(s);
        for (std::size_t t = 0; t + 1 < len; ++t) {
            const ActionIndex a = draw_index(pol.action_probs(t).row(static_cast<Eigen::Index>(s)).transpose(), rng);
            s = draw_index(pol.successor_distribution(tm, t, s, a), rng);
            sess.action_seq.push_back(a);
            sess.state_seq.push_back(s);
        }
        set.sessions.push_back(std::move(sess));
    }
    return set;
}

std::vector<WeightedTrajectory> enumerate_trajectories(const Mdp& mdp, const RewardWeights& weights,
                                                       const FeatureMap& features, std::size_t horizon) {
    if (horizon < 1) throw ConfigurationError("horizon must be at least 1");
    const double estimate = std::pow(static_cast<double>(mdp.n_states()), static_cast<double>(horizon));
    if (horizon > 6 || estimate > 1e6) {
        std::ostringstream msg;
        msg << "refusing to enumerate: horizon " << horizon << " over " << mdp.n_states()
            << " states is about " << estimate << " state sequences (limit: horizon 6, 1e6 sequences)";
        throw ConfigurationError(msg.str());
    }
    const Eigen::VectorXd rewards = state_rewards(weights, features);
    const auto& tm = mdp.transitions;

    std::vector<WeightedTrajectory> out;
    for (std::size_t s0 = 0; s0 < mdp.n_states(); ++s0) {
        const double d = mdp.initial_dist(static_cast<Eigen::Index>(s0));
        if (!(d > 0.0)) continue;
        std::vector<std::pair<Trajectory, double>> found;  // (trajectory, log weight)
        Trajectory cur;
        cur.states.push_back(s0);
        // depth-first over every supported action and positive-probability successor
        auto extend = [&](auto&& self, double log_w) -> void {
            const std::size_t t = cur.states.size();
            if (t == horizon) {
                found.emplace_back(cur, log_w);
                return;
            }
            const StateIndex s = cur.states.back();
            const double disc = std::pow(mdp.discount, static_cast<double>(t));
            for (std::size_t a = 0; a < mdp.n_actions(); ++a) {
                if (!tm.supported(s, a)) continue;
                for (std::size_t j = 0; j < mdp.n_states(); ++j) {
                    const double p = tm.prob(s, a, j);
                    if (!(p > 0.0)) continue;
                    cur.actions.push_back(a);
                    cur.states.push_back(j);
                    self(self, log_w + std::log(p) + disc * rewards(static_cast<Eigen::Index>(j)));
                    cur.states.pop_back();
                    cur.actions.pop_back();
                }
            }
        };
        extend(extend, rewards(static_cast<Eigen::Index>(s0)));
        if (found.empty())
            throw ModelingError("no trajectory of length " + std::to_string(horizon) + " starts in state " +
                                std::to_string(s0));
        double top = -std::numeric_limits<double>::infinity();
        for (const auto& f : found) top = std::max(top, f.second);
        double z = 0.0;
        for (const auto& f : found) z += std::exp(f.second - top);
        for (auto& f : found) out.push_back({std::move(f.first), d * std::exp(f.second - top) / z});
    }
    return out;
}

Eigen::VectorXd exact_feature_expectations(const std::vector<WeightedTrajectory>& trajectories,
                                           const FeatureMap& features, double discount) {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(features.k()));
    for (const auto& wt : trajectories) {
        double g = 1.0;
        for (auto s : wt.trajectory.states) {
            out += wt.probability * g * features.row(s);
            g *= discount;
        }
    }
    return out;
}

std::vector<Eigen::VectorXd> enumerated_state_marginals(const std::vector<WeightedTrajectory>& trajectories,
                                                        std::size_t n_states, std::size_t horizon) {
    std::vector<Eigen::VectorXd> out(horizon, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_states)));
    for (const auto& wt : trajectories)
        for (std::size_t t = 0; t < wt.trajectory.states.size() && t < horizon; ++t)
            out[t](static_cast<Eigen::Index>(wt.trajectory.states[t])) += wt.probability;
    return out;
}

std::vector<Eigen::MatrixXd> enumerated_action_conditionals(const std::vector<WeightedTrajectory>& trajectories,
                                                            std::size_t n_states, std::size_t n_actions,
                                                            std::size_t horizon) {
    const std::size_t depth = horizon > 0 ? horizon - 1 : 0;
    std::vector<Eigen::MatrixXd> joint(depth, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states),
                                                                    static_cast<Eigen::Index>(n_actions)));
    for (const auto& wt : trajectories)
        for (std::size_t t = 0; t < wt.trajectory.actions.size() && t < depth; ++t)
            joint[t](static_cast<Eigen::Index>(wt.trajectory.states[t]),
                     static_cast<Eigen::Index>(wt.trajectory.actions[t])) += wt.probability;
    for (auto& m : joint)
        for (Eigen::Index s = 0; s < m.rows(); ++s) {
            const double mass = m.row(s).sum();
            if (mass > 0.0) m.row(s) /= mass;
        }
    return joint;
}

Mdp museum_ground_truth_mdp(const SchemaConfig& schema, std::uint64_t seed, double discount, std::size_t horizon) {
    schema.validate();
    std::mt19937_64 rng(seed);
    const std::size_t n = schema.n_states();
    const std::size_t m = schema.n_actions();
    const std::size_t inner = schema.n_objects * schema.n_bins;
    std::vector<double> probs(n * m * n, 0.0);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < m; ++a) {
            const Eigen::VectorXd law = dirichlet_ones(inner, rng);
            for (std::size_t j = 0; j < inner; ++j) probs[(s * m + a) * n + a * inner + j] = law(static_cast<Eigen::Index>(j));
        }
    Mdp mdp;
    mdp.states = schema.state_space();
    mdp.actions = schema.action_space();
    mdp.transitions = TransitionModel(n, m, std::move(probs));
    mdp.initial_dist = dirichlet_ones(n, rng);
    mdp.discount = discount;
    mdp.horizon = horizon;
    return mdp;
}

ToyInstance random_toy_instance(std::mt19937_64& rng, const ToyLimits& limits) {
    auto uniform_count = [&](std::size_t lo, std::size_t hi) {
        return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const std::size_t n = uniform_count(2, std::max<std::size_t>(2, limits.max_states));
    const std::size_t m = uniform_count(1, std::max<std::size_t>(1, limits.max_actions));
    const std::size_t horizon = uniform_count(2, std::max<std::size_t>(2, limits.max_horizon));
    const std::size_t k = uniform_count(1, std::max<std::size_t>(1, limits.max_features));

    std::vector<double> probs(n * m * n, 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        std::vector<bool> on(m, false);
        for (std::size_t a = 0; a < m; ++a) on[a] = unit(rng) < 0.8;
        if (std::none_of(on.begin(), on.end(), [](bool b) { return b; })) on[uniform_count(0, m - 1)] = true;
        for (std::size_t a = 0; a < m; ++a) {
            if (!on[a]) continue;
            std::vector<double> w(n, 0.0);
            for (std::size_t j = 0; j < n; ++j)
                if (unit(rng) < 0.6) w[j] = 0.1 + unit(rng);
            if (std::all_of(w.begin(), w.end(), [](double x) { return x == 0.0; })) w[uniform_count(0, n - 1)] = 1.0;
            double total = 0.0;
            for (double x : w) total += x;
            for (std::size_t j = 0; j < n; ++j) probs[(s * m + a) * n + j] = w[j] / total;
        }
    }
    Eigen::VectorXd d0(static_cast<Eigen::Index>(n));
    for (std::size_t s = 0; s < n; ++s) d0(static_cast<Eigen::Index>(s)) = unit(rng) < 0.7 ? 0.1 + unit(rng) : 0.0;
    if (d0.sum() == 0.0) d0(static_cast<Eigen::Index>(uniform_count(0, n - 1))) = 1.0;
    d0 /= d0.sum();

    const double discounts[] = {0.5, 0.9, 0.95};
    ToyInstance inst;
    inst.mdp.states = StateSpace::numbered(n);
    inst.mdp.actions = ActionSpace::numbered(m);
    inst.mdp.transitions = TransitionModel(n, m, std::move(probs));
    inst.mdp.initial_dist = d0;
    inst.mdp.discount = discounts[uniform_count(0, 2)];
    inst.mdp.horizon = horizon;

    Eigen::MatrixXd f(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    for (Eigen::Index i = 0; i < f.rows(); ++i)
        for (Eigen::Index j = 0; j < f.cols(); ++j) f(i, j) = unit(rng);
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) names.push_back("f" + std::to_string(j));
    inst.features = FeatureMap(std::move(f), names);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    inst.theta.feature_names = names;
    inst.theta.theta.resize(static_cast<Eigen::Index>(k));
    for (Eigen::Index j = 0; j < inst.theta.theta.size(); ++j) inst.theta.theta(j) = sym(rng);
    return inst;
}

std::string render_session_log(const SessionSet& set, const SchemaConfig& schema, const LogRenderOptions& options) {
    schema.validate();
    std::mt19937_64 rng(options.seed);
    auto duration_in_bin = [&](std::size_t bin) {
        const double lo = bin == 0 ? 0.0 : schema.bin_edges[bin - 1];
        const double hi = bin < schema.bin_edges.size() ? schema.bin_edges[bin] : std::max(300.0, lo + 60.0);
        const auto first = static_cast<long>(std::llround(lo * 10.0)) + 1;
        const auto last = static_cast<long>(std::llround(hi * 10.0));
        return static_cast<double>(std::uniform_int_distribution<long>(first, last)(rng)) / 10.0;
    };

    std::string out;
    double clock = options.start_time;
    auto emit_events = [&](const std::string& id, const std::vector<StateIndex>& states) {
        for (auto s : states) {
            const auto sit = schema.decode_state(s);
            RawEvent e{id, clock, static_cast<long>(sit.topic), static_cast<long>(sit.object), duration_in_bin(sit.bin)};
            out += format_event_record(e);
            out += '\n';
            clock += std::ceil(e.duration) + 1.0;
        }
        clock += 600.0;
    };

    for (const auto& sess : set.sessions) {
        for (const auto& [attr, value] : sess.profile.static_attributes) {
            out += format_attribute_record(sess.session_id, attr, value);
            out += '\n';
        }
        emit_events(sess.session_id, sess.state_seq);
    }

    std::uniform_int_distribution<std::size_t> any_state(0, schema.n_states() - 1);
    const std::string tag = set.group_label ? *set.group_label + "-invalid" : std::string("invalid");
    for (std::size_t i = 0; i < options.invalid_no_events; ++i) {
        const std::string id = tag + "-noevents-" + padded(i + 1);
        for (const auto& attr : schema.required_attributes) {
            out += format_attribute_record(id, attr, "30");
            out += '\n';
        }
    }
    for (std::size_t i = 0; i < options.invalid_missing_attribute; ++i) {
        const std::string id = tag + "-noattr-" + padded(i + 1);
        const bool language_required = std::find(schema.required_attributes.begin(), schema.required_attributes.end(),
                                                 "language") != schema.required_attributes.end();
        out += format_attribute_record(id, language_required ? "note" : "language", "en");
        out += '\n';
        emit_events(id, {any_state(rng), any_state(rng)});
    }
    return out;
}

}  // namespace userreward
