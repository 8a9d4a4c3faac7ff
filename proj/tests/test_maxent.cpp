#include "userreward/errors.hpp"
#include "userreward/maxent.hpp"
#include "userreward/trajectory_sim.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

using namespace userreward;

namespace {

Mdp make_mdp(std::size_t n, std::size_t m, std::vector<double> probs, Eigen::VectorXd d0, double gamma,
             std::size_t horizon) {
    Mdp mdp;
    mdp.states = StateSpace::numbered(n);
    mdp.actions = ActionSpace::numbered(m);
    mdp.transitions = TransitionModel(n, m, std::move(probs));
    mdp.initial_dist = std::move(d0);
    mdp.discount = gamma;
    mdp.horizon = horizon;
    return mdp;
}

FeatureMap identity_features(std::size_t n) {
    std::vector<std::string> names;
    for (std::size_t i = 0; i < n; ++i) names.push_back("f" + std::to_string(i));
    return FeatureMap(Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n)), names);
}

RewardWeights weights_of(const Eigen::VectorXd& theta, const FeatureMap& f) { return {theta, f.names()}; }

// sessions of exactly `len` states drawn from the model itself
SessionSet sample_fixed(const ToyInstance& inst, const Eigen::VectorXd& theta, std::size_t n, std::size_t len,
                        std::uint64_t seed) {
    GeneratorSpec spec{inst.mdp, inst.features, weights_of(theta, inst.features), n,
                       LengthDistribution::fixed_length(len), seed, "toy", {}};
    return sample_trajectories(spec);
}

double central_difference(const Mdp& mdp, const FeatureMap& f, const FeatureExpectations& mu, Eigen::VectorXd theta,
                          Eigen::Index j) {
    const double h = 1e-5;
    theta(j) += h;
    const double up = evaluate_objective(mdp, theta, f, mu).log_likelihood;
    theta(j) -= 2 * h;
    const double down = evaluate_objective(mdp, theta, f, mu).log_likelihood;
    return (up - down) / (2 * h);
}

}  // namespace

TEST_CASE("theta zero with uniform dynamics gives the uniform policy") {
    const std::size_t n = 4, m = 3;
    std::vector<double> probs(n * m * n, 1.0 / n);
    const Mdp mdp = make_mdp(n, m, probs, Eigen::VectorXd::Constant(4, 0.25), 0.9, 5);
    const FeatureMap f = identity_features(n);
    const Policy pol = backward_pass(mdp, weights_of(Eigen::VectorXd::Zero(4), f), f);
    for (std::size_t t = 0; t + 1 < mdp.horizon; ++t)
        CHECK((pol.action_probs(t).array() - 1.0 / 3.0).abs().maxCoeff() <= 1e-15);
}

TEST_CASE("single supported action per state gets probability one") {
    // s0 -a1-> s1, s1 -a0-> s0 or s1
    const Mdp mdp = make_mdp(2, 2, {0, 0, 0, 1, 0.3, 0.7, 0, 0}, Eigen::Vector2d(0.5, 0.5), 0.8, 4);
    const FeatureMap f = identity_features(2);
    const Policy pol = backward_pass(mdp, weights_of(Eigen::Vector2d(0.4, -1.3), f), f);
    for (std::size_t t = 0; t < 3; ++t) {
        CHECK(pol.prob(t, 0, 1) == 1.0);
        CHECK(pol.prob(t, 0, 0) == 0.0);
        CHECK(pol.prob(t, 1, 0) == 1.0);
    }
}

TEST_CASE("dead-end start state is a modeling error naming the state") {
    // s0 -> s1, s1 has no supported action
    const Mdp mdp = make_mdp(2, 1, {0, 1, 0, 0}, Eigen::Vector2d(1.0, 0.0), 0.9, 3);
    const FeatureMap f = identity_features(2);
    try {
        backward_pass(mdp, weights_of(Eigen::Vector2d::Zero(), f), f);
        FAIL("expected a modeling error");
    } catch (const ModelingError& e) {
        CHECK(std::string(e.what()).find("state 0") != std::string::npos);
    }
    Mdp dead = mdp;
    dead.initial_dist = Eigen::Vector2d(0.0, 1.0);
    dead.horizon = 2;
    try {
        backward_pass(dead, weights_of(Eigen::Vector2d::Zero(), f), f);
        FAIL("expected a modeling error");
    } catch (const ModelingError& e) {
        CHECK(std::string(e.what()).find("state 1") != std::string::npos);
    }
    // horizon 2 from s0 is fine
    Mdp ok = mdp;
    ok.horizon = 2;
    CHECK_NOTHROW(backward_pass(ok, weights_of(Eigen::Vector2d::Zero(), f), f));
}

TEST_CASE("deterministic chain forward pass") {
    const Mdp mdp = make_mdp(3, 1, {0, 1, 0, 0, 0, 1, 0, 0, 1}, Eigen::Vector3d(1, 0, 0), 0.5, 3);
    const FeatureMap f = identity_features(3);
    const Policy pol = backward_pass(mdp, weights_of(Eigen::Vector3d(0.2, -0.1, 0.7), f), f);
    const auto fr = forward_pass(mdp, pol);
    REQUIRE(fr.per_time.size() == 3);
    CHECK(fr.per_time[1](1) == 1.0);
    CHECK(fr.per_time[2](2) == 1.0);
    CHECK(fr.totals(0) == 1.0);
    CHECK(fr.totals(1) == 0.5);
    CHECK(fr.totals(2) == 0.25);
}

TEST_CASE("absorbing state keeps the initial distribution") {
    const Mdp mdp = make_mdp(1, 1, {1.0}, Eigen::VectorXd::Ones(1), 0.9, 6);
    const FeatureMap f = identity_features(1);
    const auto fr = forward_pass(mdp, backward_pass(mdp, weights_of(Eigen::VectorXd::Ones(1), f), f));
    for (const auto& slice : fr.per_time) CHECK(slice(0) == 1.0);
}

TEST_CASE("stationary table policies push mass through P") {
    // s0: a0 -> s0, a1 -> s1; s1: a0 -> s1
    const Mdp mdp = make_mdp(2, 2, {1, 0, 0, 1, 0, 1, 0, 0}, Eigen::Vector2d(1, 0), 0.9, 3);
    Eigen::MatrixXd table(2, 2);
    table << 0.25, 0.75,
             1.0, 0.0;
    const auto fr = forward_pass(mdp, Policy::stationary(table, 3));
    CHECK(fr.per_time[1](0) == 0.25);
    CHECK(fr.per_time[1](1) == 0.75);
    CHECK(fr.per_time[2](0) == doctest::Approx(0.0625));
    CHECK(fr.per_time[2](1) == doctest::Approx(0.9375));
    Eigen::MatrixXd bad(2, 2);
    bad << 0.5, 0.5,
           0.5, 0.5;
    CHECK_THROWS_AS(forward_pass(mdp, Policy::stationary(bad, 3)), UnsupportedActionError);
}

TEST_CASE("expected_feature_counts is F^T totals") {
    Eigen::MatrixXd m(3, 2);
    m << 0.1, 0.9,
         0.4, 0.4,
         0.4, 0.4;
    const FeatureMap f(m, {"a", "b"});
    VisitationFrequencies v;
    v.totals = Eigen::Vector3d(0, 1, 0);
    CHECK(expected_feature_counts(v, f) == Eigen::Vector2d(0.4, 0.4));
    v.totals = Eigen::Vector3d(0, 1.5, 1.5);
    CHECK((expected_feature_counts(v, f) - Eigen::Vector2d(1.2, 1.2)).cwiseAbs().maxCoeff() <= 1e-15);
}

TEST_CASE("passes agree with trajectory enumeration on random toy MDPs") {
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 25; ++rep) {
        const ToyInstance inst = random_toy_instance(rng);
        const Mdp& mdp = inst.mdp;
        const std::size_t H = mdp.horizon;
        const Policy pol = backward_pass(mdp, inst.theta, inst.features);
        const auto fr = forward_pass(mdp, pol);
        const auto traj = enumerate_trajectories(mdp, inst.theta, inst.features, H);
        const auto marg = enumerated_state_marginals(traj, mdp.n_states(), H);
        const auto cond = enumerated_action_conditionals(traj, mdp.n_states(), mdp.n_actions(), H);
        for (std::size_t t = 0; t < H; ++t) CHECK((marg[t] - fr.per_time[t]).cwiseAbs().maxCoeff() <= 1e-8);
        for (std::size_t t = 0; t + 1 < H; ++t)
            for (std::size_t s = 0; s < mdp.n_states(); ++s)
                if (marg[t](static_cast<Eigen::Index>(s)) > 0.0)
                    CHECK((cond[t].row(static_cast<Eigen::Index>(s)) - pol.action_probs(t).row(static_cast<Eigen::Index>(s)))
                              .cwiseAbs()
                              .maxCoeff() <= 1e-8);
        const Eigen::VectorXd exact = exact_feature_expectations(traj, inst.features, mdp.discount);
        CHECK((exact - expected_feature_counts(fr, inst.features)).cwiseAbs().maxCoeff() <= 1e-8);

        // value of the MaxEnt policy
        double value = 0.0;
        const Eigen::VectorXd r = state_rewards(inst.theta, inst.features);
        for (const auto& wt : traj) {
            double g = 1.0;
            for (auto s : wt.trajectory.states) {
                value += wt.probability * g * r(static_cast<Eigen::Index>(s));
                g *= mdp.discount;
            }
        }
        CHECK(evaluate_policy(mdp, inst.theta, inst.features, pol) == doctest::Approx(value).epsilon(1e-10));
    }
}

TEST_CASE("log_likelihood equals the enumerated conditional likelihood") {
    std::mt19937_64 rng(31);
    for (int rep = 0; rep < 15; ++rep) {
        const ToyInstance inst = random_toy_instance(rng);
        const std::size_t H = inst.mdp.horizon;
        const SessionSet set = sample_fixed(inst, inst.theta.theta.reverse(), 30, H, rep);
        const auto traj = enumerate_trajectories(inst.mdp, inst.theta, inst.features, H);
        double oracle = 0.0;
        for (const auto& sess : set.sessions) {
            double p = -1.0;
            for (const auto& wt : traj)
                if (wt.trajectory.states == sess.state_seq && wt.trajectory.actions == sess.action_seq) p = wt.probability;
            REQUIRE(p > 0.0);
            oracle += std::log(p / inst.mdp.initial_dist(static_cast<Eigen::Index>(sess.state_seq[0])));
            for (std::size_t t = 0; t + 1 < sess.length(); ++t)
                oracle -= std::log(inst.mdp.transitions.prob(sess.state_seq[t], sess.action_seq[t], sess.state_seq[t + 1]));
        }
        const double ll = log_likelihood(inst.mdp, inst.theta, inst.features, set);
        CHECK(ll == doctest::Approx(oracle).epsilon(1e-10));

        // the objective's closed form agrees with the per-session sum
        const auto mu = empirical_feature_expectations(set, inst.features, inst.mdp.discount, H);
        const auto obj = evaluate_objective(inst.mdp, inst.theta.theta, inst.features, mu);
        CHECK(obj.log_likelihood == doctest::Approx(ll / static_cast<double>(set.size())).epsilon(1e-10));
    }
}

TEST_CASE("log_likelihood trivial cases") {
    SUBCASE("one deterministic action per state") {
        const Mdp mdp = make_mdp(2, 1, {0, 1, 1, 0}, Eigen::Vector2d(1, 0), 0.9, 4);
        const FeatureMap f = identity_features(2);
        SessionSet set;
        set.n_states = 2;
        set.n_actions = 1;
        set.sessions.push_back({"a", {}, {0, 1, 0, 1}, {0, 0, 0}});
        CHECK(log_likelihood(mdp, weights_of(Eigen::Vector2d(0.3, 2.0), f), f, set) == 0.0);
    }
    SUBCASE("theta zero, one step, K symmetric actions") {
        // s0 -a_k-> s_{k+1}; the three targets are absorbing
        std::vector<double> p(4 * 3 * 4, 0.0);
        for (std::size_t a = 0; a < 3; ++a) p[(0 * 3 + a) * 4 + a + 1] = 1.0;
        for (std::size_t s = 1; s < 4; ++s) p[(s * 3 + 0) * 4 + s] = 1.0;
        const Mdp mdp = make_mdp(4, 3, p, Eigen::Vector4d(1, 0, 0, 0), 0.9, 2);
        const FeatureMap f = identity_features(4);
        SessionSet set;
        set.n_states = 4;
        set.n_actions = 3;
        set.sessions.push_back({"a", {}, {0, 2}, {1}});
        CHECK(log_likelihood(mdp, weights_of(Eigen::Vector4d::Zero(), f), f, set) ==
              doctest::Approx(std::log(1.0 / 3.0)).epsilon(1e-15));
        set.sessions[0].action_seq = {2};
        CHECK_THROWS_AS(log_likelihood(mdp, weights_of(Eigen::Vector4d::Zero(), f), f, set), DataMismatchError);
    }
}

TEST_CASE("gradient matches central differences") {
    std::mt19937_64 rng(99);
    std::uniform_real_distribution<double> u(-1, 1);
    for (int rep = 0; rep < 20; ++rep) {
        const ToyInstance inst = random_toy_instance(rng);
        Eigen::VectorXd data_theta(inst.theta.theta.size());
        for (Eigen::Index j = 0; j < data_theta.size(); ++j) data_theta(j) = u(rng);
        GeneratorSpec spec{inst.mdp, inst.features, weights_of(data_theta, inst.features), 150,
                           LengthDistribution::geometric_with_mean(3.0), static_cast<std::uint64_t>(rep), "", {}};
        const SessionSet set = sample_trajectories(spec);
        const auto mu = empirical_feature_expectations(set, inst.features, inst.mdp.discount, inst.mdp.horizon);
        const Eigen::VectorXd g = gradient(inst.mdp, inst.theta, inst.features, mu);
        Eigen::VectorXd fd(g.size());
        for (Eigen::Index j = 0; j < g.size(); ++j) fd(j) = central_difference(inst.mdp, inst.features, mu, inst.theta.theta, j);
        const double rel = (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-6});
        CHECK(rel <= 1e-4);
    }
}

TEST_CASE("discount zero makes the conditional likelihood constant in theta") {
    std::mt19937_64 rng(4);
    const ToyInstance inst = random_toy_instance(rng);
    Mdp mdp = inst.mdp;
    mdp.discount = 0.0;
    GeneratorSpec spec{mdp, inst.features, inst.theta, 100, LengthDistribution::geometric_with_mean(3.0), 1, "", {}};
    const auto mu = empirical_feature_expectations(sample_trajectories(spec), inst.features, 0.0, mdp.horizon);
    const auto obj = evaluate_objective(mdp, inst.theta.theta, inst.features, mu);
    CHECK(obj.gradient.cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("symmetric MDP and symmetric data give equal gradient components") {
    // s0 branches to s1 or s2 (mirror images), both absorbing
    const Mdp mdp = make_mdp(3, 2, {0, 1, 0, 0, 0, 1, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0}, Eigen::Vector3d(1, 0, 0),
                             0.9, 3);
    const FeatureMap f = identity_features(3);
    SessionSet set;
    set.n_states = 3;
    set.n_actions = 2;
    set.sessions.push_back({"a", {}, {0, 1, 1}, {0, 0}});
    set.sessions.push_back({"b", {}, {0, 2, 2}, {1, 0}});
    const auto mu = empirical_feature_expectations(set, f, 0.9, 3);
    const Eigen::VectorXd g = gradient(mdp, weights_of(Eigen::Vector3d(0.3, 0.0, 0.0), f), f, mu);
    CHECK(g(1) == doctest::Approx(g(2)).epsilon(1e-14));
}

TEST_CASE("adding a constant to every reward leaves the policy unchanged") {
    std::mt19937_64 rng(8);
    for (int rep = 0; rep < 10; ++rep) {
        const ToyInstance inst = random_toy_instance(rng);
        const Eigen::VectorXd r = state_rewards(inst.theta, inst.features);
        const Policy a = backward_pass(inst.mdp.transitions, r, inst.mdp.discount, inst.mdp.horizon);
        const Policy b = backward_pass(inst.mdp.transitions, (r.array() + 3.7).matrix(), inst.mdp.discount,
                                       inst.mdp.horizon);
        for (std::size_t t = 0; t + 1 < inst.mdp.horizon; ++t)
            CHECK((a.action_probs(t) - b.action_probs(t)).cwiseAbs().maxCoeff() <= 1e-9);
    }
}

TEST_CASE("fit matches moments of a model-generated expectation") {
    std::mt19937_64 rng(12);
    const ToyInstance inst = random_toy_instance(rng);
    const Policy pol = backward_pass(inst.mdp, inst.theta, inst.features);
    FeatureExpectations mu;
    mu.mu = expected_feature_counts(forward_pass(inst.mdp, pol), inst.features);
    mu.discount = inst.mdp.discount;
    mu.horizon = inst.mdp.horizon;
    mu.n_sessions = 1;
    SolverConfig cfg;
    cfg.max_iters = 20000;
    const FitResult r = fit(inst.mdp, inst.features, mu, cfg);
    CHECK(r.converged);
    const Policy back = backward_pass(inst.mdp, r.weights, inst.features);
    const Eigen::VectorXd e = expected_feature_counts(forward_pass(inst.mdp, back), inst.features);
    CHECK((e - mu.mu).cwiseAbs().maxCoeff() <= 1e-4);
    CHECK(r.grad_norm_trace.back() <= cfg.grad_tol);
    CHECK(r.conservation.violations == 0);
    CHECK(r.conservation.checks > 0);
}

TEST_CASE("data on the high-feature state gives a positive weight") {
    // two states reachable from each other, single feature on s1
    const Mdp mdp = make_mdp(2, 2, {1, 0, 0, 1, 1, 0, 0, 1}, Eigen::Vector2d(0, 1), 0.9, 3);
    const FeatureMap f(Eigen::Vector2d(0, 1), {"high"});
    SessionSet set;
    set.n_states = 2;
    set.n_actions = 2;
    for (int i = 0; i < 5; ++i) set.sessions.push_back({"s" + std::to_string(i), {}, {1, 1, 1}, {1, 1}});
    const auto mu = empirical_feature_expectations(set, f, 0.9, 3);
    SolverConfig cfg;
    cfg.max_iters = 200;
    const FitResult r = fit(mdp, f, mu, cfg);
    CHECK(r.weights.theta(0) > 0.0);
    CHECK_FALSE(r.converged);
    CHECK(r.stop_reason == "iteration limit");
    CHECK(r.iterations == 200);
    CHECK(r.ll_trace.size() == 201);
}

TEST_CASE("fit is deterministic") {
    std::mt19937_64 rng(40);
    const ToyInstance inst = random_toy_instance(rng);
    const SessionSet set = sample_fixed(inst, inst.theta.theta, 80, inst.mdp.horizon, 3);
    const auto mu = empirical_feature_expectations(set, inst.features, inst.mdp.discount, inst.mdp.horizon);
    SolverConfig cfg;
    cfg.init = SolverConfig::Init::small_random;
    cfg.seed = 17;
    cfg.max_iters = 300;
    const FitResult a = fit(inst.mdp, inst.features, mu, cfg);
    const FitResult b = fit(inst.mdp, inst.features, mu, cfg);
    REQUIRE(a.ll_trace.size() == b.ll_trace.size());
    CHECK(std::memcmp(a.ll_trace.data(), b.ll_trace.data(), a.ll_trace.size() * sizeof(double)) == 0);
    CHECK(std::memcmp(a.weights.theta.data(), b.weights.theta.data(), a.weights.theta.size() * sizeof(double)) == 0);
    cfg.seed = 18;
    const FitResult c = fit(inst.mdp, inst.features, mu, cfg);
    CHECK(c.ll_trace.front() != a.ll_trace.front());
}

TEST_CASE("a hopeless step size ends in non-convergence, not an exception") {
    std::mt19937_64 rng(41);
    const ToyInstance inst = random_toy_instance(rng);
    FeatureExpectations mu;
    mu.mu = Eigen::VectorXd::Constant(inst.theta.theta.size(), 1e300);
    mu.discount = inst.mdp.discount;
    mu.horizon = inst.mdp.horizon;
    mu.n_sessions = 1;
    FitResult r;
    CHECK_NOTHROW(r = fit(inst.mdp, inst.features, mu, SolverConfig{}));
    CHECK_FALSE(r.converged);
    CHECK(r.stop_reason == "learning rate underflow");
    CHECK(r.final_learning_rate < 1e-12);
    CHECK(r.weights.theta.allFinite());
}

TEST_CASE("solver configuration checks") {
    SolverConfig c;
    c.learning_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c = SolverConfig{};
    c.grad_tol = -1;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);
    c = SolverConfig{};
    c.max_iters = 0;
    CHECK_THROWS_AS(c.validate(), ConfigurationError);

    std::mt19937_64 rng(1);
    const ToyInstance inst = random_toy_instance(rng);
    FeatureExpectations mu;
    mu.mu = Eigen::VectorXd::Zero(inst.theta.theta.size());
    mu.discount = inst.mdp.discount;
    mu.horizon = inst.mdp.horizon;
    SolverConfig wrong;
    wrong.discount = inst.mdp.discount == 0.5 ? 0.9 : 0.5;
    CHECK_THROWS_AS(fit(inst.mdp, inst.features, mu, wrong), ConfigurationError);
}

TEST_CASE("evaluate_policy trivial values") {
    const Mdp mdp = make_mdp(1, 1, {1.0}, Eigen::VectorXd::Ones(1), 0.9, 4);
    const FeatureMap f = identity_features(1);
    const RewardWeights one = weights_of(Eigen::VectorXd::Ones(1), f);
    const RewardWeights zero = weights_of(Eigen::VectorXd::Zero(1), f);
    CHECK(evaluate_policy(mdp, zero, f, backward_pass(mdp, zero, f)) == 0.0);
    CHECK(evaluate_policy(mdp, one, f, backward_pass(mdp, one, f)) ==
          doctest::Approx(1 + 0.9 + 0.81 + 0.729).epsilon(1e-15));
}
