// One line per acceptance criterion; exit status is non-zero if any fails.
#include "userreward/commands.hpp"
#include "userreward/feature_stats.hpp"
#include "userreward/io.hpp"
#include "userreward/maxent.hpp"
#include "userreward/report.hpp"
#include "userreward/session_ingest.hpp"
#include "userreward/trajectory_sim.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

using namespace userreward;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

int failures = 0;

void run(const std::string& id, const std::string& title, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!o.pass) ++failures;
    char time_buf[32];
    std::snprintf(time_buf, sizeof time_buf, "%.2f s", secs);
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << title << ": " << o.detail << " [" << time_buf << "]"
              << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

fs::path workdir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "userreward_acceptance" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

struct Sink {
    std::ostringstream out, err;
    CommandIo io() { return {out, err}; }
};

// the shared toy matrix for A2-A4 and A7
std::vector<ToyInstance> toy_matrix() {
    std::mt19937_64 rng(20240611);
    std::vector<ToyInstance> out;
    for (int i = 0; i < 20; ++i) out.push_back(random_toy_instance(rng));
    return out;
}

FeatureExpectations toy_data(const ToyInstance& inst, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    RewardWeights data = inst.theta;
    for (Eigen::Index j = 0; j < data.theta.size(); ++j) data.theta(j) = u(rng);
    GeneratorSpec spec{inst.mdp, inst.features, data, 200,
                       LengthDistribution::geometric_with_mean(0.5 * static_cast<double>(inst.mdp.horizon) + 1.0),
                       seed, "toy", {}};
    return empirical_feature_expectations(sample_trajectories(spec), inst.features, inst.mdp.discount, inst.mdp.horizon);
}

ConservationStats conservation_total;

// A5 pipeline; returns the directory holding weights and the elapsed time
struct PipelineRun {
    fs::path dir;
    double seconds = 0.0;
    bool ok = false;
    std::string error;
};

PipelineRun run_pipeline(const std::string& name) {
    PipelineRun r;
    r.dir = workdir(name);
    const auto t0 = std::chrono::steady_clock::now();
    RunConfig cfg = default_run_config();
    cfg.seed = 424242;
    Sink sim, ing, fit;
    if (cmd_simulate(cfg, r.dir, sim.io()) != kExitOk) {
        r.error = "simulate: " + sim.err.str();
        return r;
    }
    if (cmd_ingest({r.dir / "child.jsonl", r.dir / "adult.jsonl"}, cfg, r.dir, ing.io()) != kExitOk) {
        r.error = "ingest: " + ing.err.str();
        return r;
    }
    if (cmd_fit(r.dir / "sessions.json", cfg, r.dir, fit.io()) != kExitOk) {
        r.error = "fit: " + fit.err.str();
        return r;
    }
    r.seconds = seconds_since(t0);
    r.ok = true;
    return r;
}

PipelineRun first_run;

}  // namespace

int main() {
    const std::vector<ToyInstance> toys = toy_matrix();

    run("A1", "schema fidelity", [] {
        const fs::path dir = workdir("a1");
        RunConfig cfg = default_run_config();
        cfg.seed = 1;
        cfg.simulate.groups[0].n_sessions = 300;
        cfg.simulate.groups[1].n_sessions = 300;
        Sink s;
        if (cmd_simulate(cfg, dir, s.io()) != kExitOk) return Outcome{false, "simulate failed: " + s.err.str()};
        const auto t0 = std::chrono::steady_clock::now();
        Sink i;
        if (cmd_ingest({dir / "child.jsonl", dir / "adult.jsonl"}, cfg, dir, i.io()) != kExitOk)
            return Outcome{false, "ingest failed: " + i.err.str()};
        const SessionSet set = sessions_from_json(read_text(dir / "sessions.json"));
        const double secs = seconds_since(t0);
        const SchemaConfig sc = set.schema.value_or(SchemaConfig{});
        const std::size_t k = sc.feature_map().k();
        const bool ok = set.n_states == 72 && k == 14 && set.n_actions == 8 && sc.n_states() == 72 && secs < 1.0;
        return Outcome{ok, std::to_string(set.n_states) + " states, " + std::to_string(k) + " features, " +
                               std::to_string(set.n_actions) + " actions; ingest " + num(secs) + " s"};
    });

    run("A2", "gradient vs central differences", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        double worst = 0.0, smallest = 1e300;
        for (std::size_t i = 0; i < toys.size(); ++i) {
            const ToyInstance& inst = toys[i];
            const FeatureExpectations mu = toy_data(inst, 1000 + i);
            const Eigen::VectorXd& theta = inst.theta.theta;
            const Eigen::VectorXd g = evaluate_objective(inst.mdp, theta, inst.features, mu).gradient;
            Eigen::VectorXd fd(theta.size());
            for (Eigen::Index j = 0; j < theta.size(); ++j) {
                Eigen::VectorXd up = theta, down = theta;
                up(j) += 1e-5;
                down(j) -= 1e-5;
                // log_likelihood / m from the per-session sum, a second route to the objective
                fd(j) = (evaluate_objective(inst.mdp, up, inst.features, mu).log_likelihood -
                         evaluate_objective(inst.mdp, down, inst.features, mu).log_likelihood) /
                        2e-5;
            }
            worst = std::max(worst, (g - fd).norm() / std::max({g.norm(), fd.norm(), 1e-6}));
            smallest = std::min(smallest, g.norm());
        }
        const double secs = seconds_since(t0);
        return Outcome{worst <= 1e-4 && secs < 10.0, "max relative error " + num(worst) + " over " +
                                                          std::to_string(toys.size()) + " MDPs (smallest |g| " +
                                                          num(smallest) + ")"};
    });

    run("A3", "dynamic programming vs enumeration", [&] {
        const auto t0 = std::chrono::steady_clock::now();
        double policy_err = 0.0, totals_err = 0.0, counts_err = 0.0;
        for (const ToyInstance& inst : toys) {
            const Mdp& mdp = inst.mdp;
            const std::size_t H = mdp.horizon;
            const Policy pol = backward_pass(mdp, inst.theta, inst.features);
            const auto fr = forward_pass(mdp, pol);
            const auto traj = enumerate_trajectories(mdp, inst.theta, inst.features, H);
            Eigen::VectorXd visits = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mdp.n_states()));
            std::vector<Eigen::MatrixXd> joint(H, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(mdp.n_states()),
                                                                         static_cast<Eigen::Index>(mdp.n_actions())));
            for (const auto& wt : traj) {
                double g = 1.0;
                for (std::size_t t = 0; t < H; ++t) {
                    visits(static_cast<Eigen::Index>(wt.trajectory.states[t])) += g * wt.probability;
                    if (t + 1 < H)
                        joint[t](static_cast<Eigen::Index>(wt.trajectory.states[t]),
                                 static_cast<Eigen::Index>(wt.trajectory.actions[t])) += wt.probability;
                    g *= mdp.discount;
                }
            }
            for (std::size_t t = 0; t + 1 < H; ++t)
                for (Eigen::Index s = 0; s < joint[t].rows(); ++s) {
                    const double mass = joint[t].row(s).sum();
                    if (mass <= 0.0) continue;
                    policy_err = std::max(policy_err, (joint[t].row(s) / mass - pol.action_probs(t).row(s)).cwiseAbs().maxCoeff());
                }
            totals_err = std::max(totals_err, (visits - fr.totals).cwiseAbs().maxCoeff());
            counts_err = std::max(counts_err, (inst.features.matrix().transpose() * visits -
                                               expected_feature_counts(fr, inst.features))
                                                  .cwiseAbs()
                                                  .maxCoeff());
        }
        const double secs = seconds_since(t0);
        const bool ok = policy_err <= 1e-8 && totals_err <= 1e-8 && counts_err <= 1e-8 && secs < 30.0;
        return Outcome{ok, "max |diff| policy " + num(policy_err) + ", totals " + num(totals_err) + ", feature counts " +
                               num(counts_err)};
    });

    // A5 runs before A4 so its fits are part of the conservation tally
    first_run = run_pipeline("a5_run1");

    run("A4", "conservation invariants", [&] {
        ConservationStats total;
        for (std::size_t i = 0; i < toys.size(); ++i) {
            SolverConfig cfg;
            cfg.max_iters = 300;
            const FitResult r = fit(toys[i].mdp, toys[i].features, toy_data(toys[i], 5000 + i), cfg);
            total.merge(r.conservation);
        }
        if (!first_run.ok) return Outcome{false, "pipeline failed: " + first_run.error};
        for (const char* g : {"child", "adult"}) {
            const WeightsFile w = weights_from_json(read_text(first_run.dir / ("weights_" + std::string(g) + ".json")));
            if (w.conservation.checks == 0) return Outcome{false, std::string("no conservation record for ") + g};
            total.merge(w.conservation);
        }
        return Outcome{total.violations == 0, std::to_string(total.violations) + " violations in " +
                                                  std::to_string(total.checks) + " checks (max row error " +
                                                  num(total.max_policy_row_error) + ", max slice error " +
                                                  num(total.max_slice_error) + ")"};
    });

    run("A5", "synthetic recovery", [&] {
        if (!first_run.ok) return Outcome{false, "pipeline failed: " + first_run.error};
        const GroundTruth truth = ground_truth_from_json(read_text(first_run.dir / "ground_truth.json"));
        const WeightsFile child = weights_from_json(read_text(first_run.dir / "weights_child.json"));
        const WeightsFile adult = weights_from_json(read_text(first_run.dir / "weights_adult.json"));
        const ScoreReport sc = score(child, truth);
        const ScoreReport sa = score(adult, truth);
        const auto& blocks = truth.features.blocks();
        const double between = pearson(block_centered(child.weights.theta, blocks), block_centered(adult.weights.theta, blocks));
        const bool ok = sc.spearman_state_rewards >= 0.9 && sa.spearman_state_rewards >= 0.9 && between < 0.8 &&
                        first_run.seconds < 120.0;
        return Outcome{ok, "spearman child " + num(sc.spearman_state_rewards) + ", adult " +
                               num(sa.spearman_state_rewards) + "; centered pearson between groups " + num(between) +
                               "; pipeline " + num(first_run.seconds) + " s"};
    });

    run("A6", "determinism", [&] {
        if (!first_run.ok) return Outcome{false, "first run failed: " + first_run.error};
        const PipelineRun second = run_pipeline("a5_run2");
        if (!second.ok) return Outcome{false, "second run failed: " + second.error};
        bool same = true;
        for (const char* f : {"weights_child.json", "weights_adult.json"})
            same = same && read_text(first_run.dir / f) == read_text(second.dir / f);
        return Outcome{same, same ? "weights files byte-identical across reruns" : "weights files differ"};
    });

    run("A7", "shaping invariance", [&] {
        double worst = 0.0;
        auto compare = [&](const TransitionModel& tm, const Eigen::VectorXd& r, double gamma, std::size_t H) {
            const Policy base = backward_pass(tm, r, gamma, H);
            for (double c : {-50.0, -1.0, 0.5, 3.0, 200.0}) {
                const Policy shifted = backward_pass(tm, (r.array() + c).matrix(), gamma, H);
                for (std::size_t t = 0; t + 1 < H; ++t)
                    worst = std::max(worst, (base.action_probs(t) - shifted.action_probs(t)).cwiseAbs().maxCoeff());
            }
        };
        for (const ToyInstance& inst : toys)
            compare(inst.mdp.transitions, state_rewards(inst.theta, inst.features), inst.mdp.discount, inst.mdp.horizon);
        const SchemaConfig sc;
        const Mdp museum = museum_ground_truth_mdp(sc, 3, 0.9, 1);
        Eigen::VectorXd theta = Eigen::VectorXd::LinSpaced(14, -1.0, 1.2);
        compare(museum.transitions, sc.feature_map().matrix() * theta, 0.9, 30);
        return Outcome{worst <= 1e-9, "max policy change " + num(worst)};
    });

    run("A8", "feature-expectation estimator", [] {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0, 1);
        double worst = 0.0;
        int sets = 0;
        for (int rep = 0; rep < 100; ++rep) {
            const std::size_t n = 2 + rng() % 10, k = 1 + rng() % 5;
            Eigen::MatrixXd m(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = u(rng);
            std::vector<std::string> names;
            for (std::size_t j = 0; j < k; ++j) names.push_back("f" + std::to_string(j));
            const FeatureMap f(m, names);
            SessionSet set;
            set.n_states = n;
            set.n_actions = 1;
            const std::size_t count = 1 + rng() % 60;
            for (std::size_t i = 0; i < count; ++i) {
                Session s;
                s.session_id = std::to_string(i);
                s.state_seq.resize(1 + rng() % 20);
                for (auto& x : s.state_seq) x = rng() % n;
                s.action_seq.assign(s.state_seq.size() - 1, 0);
                set.sessions.push_back(s);
            }
            const std::size_t horizon = 1 + rng() % 25;
            for (double gamma : {0.0, 0.5, 0.9}) {
                const Eigen::VectorXd mu = empirical_feature_expectations(set, f, gamma, horizon).mu;
                // naive oracle: plain nested loops, powers recomputed with std::pow
                for (std::size_t j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (const auto& s : set.sessions)
                        for (std::size_t t = 0; t < s.state_seq.size() && t < horizon; ++t)
                            acc += std::pow(gamma, static_cast<double>(t)) *
                                   m(static_cast<Eigen::Index>(s.state_seq[t]), static_cast<Eigen::Index>(j));
                    acc /= static_cast<double>(count);
                    worst = std::max(worst, std::abs(acc - mu(static_cast<Eigen::Index>(j))));
                }
            }
            ++sets;
        }
        return Outcome{worst <= 1e-12, "max |diff| " + num(worst) + " over " + std::to_string(sets) + " sets x 3 discounts"};
    });

    run("A9", "comparison report structure", [&] {
        if (!first_run.ok) return Outcome{false, "pipeline failed: " + first_run.error};
        const fs::path dir = workdir("a9");
        // a synthetic file with a known negative entry next to a fitted one
        WeightsFile adult = weights_from_json(read_text(first_run.dir / "weights_adult.json"));
        adult.weights.theta(3) = -0.7106;
        FitResult fr;
        fr.weights = adult.weights;
        fr.final_gradient = Eigen::VectorXd::Zero(14);
        write_text_atomic(dir / "weights_adult.json", weights_to_json(fr, SchemaConfig{}.feature_map(), "adult", 1));
        Sink s;
        if (cmd_compare({first_run.dir / "weights_child.json", dir / "weights_adult.json"}, dir, s.io()) != kExitOk)
            return Outcome{false, "compare failed: " + s.err.str()};
        const WeightsFile child = weights_from_json(read_text(first_run.dir / "weights_child.json"));

        std::istringstream table(s.out.str());
        std::string header, r1, r2, blank;
        std::getline(table, header);
        std::getline(table, r1);
        std::getline(table, r2);
        std::getline(table, blank);
        std::vector<std::string> cols, c1, c2;
        for (std::istringstream h(header); h;) {
            std::string c;
            if (h >> c) cols.push_back(c);
        }
        for (std::istringstream h(r1); h;) {
            std::string c;
            if (h >> c) c1.push_back(c);
        }
        for (std::istringstream h(r2); h;) {
            std::string c;
            if (h >> c) c2.push_back(c);
        }
        const std::vector<std::string> expected = {"group", "appearance", "death", "religion", "architecture",
                                                   "entertainment", "food", "trade", "army", "object1", "object2",
                                                   "object3", "duration_0_30", "duration_30_90", "duration_90_plus"};
        if (cols != expected) return Outcome{false, "unexpected columns: " + header};
        if (!blank.empty()) return Outcome{false, "table has more than two rows"};
        if (c1.size() != 15 || c2.size() != 15 || c1[0] != "child" || c2[0] != "adult")
            return Outcome{false, "row layout broken"};
        const std::regex four_dp(R"(^-?\d+\.\d{4}$)");
        auto row_ok = [&](const std::vector<std::string>& cells, const Eigen::VectorXd& theta) {
            for (int j = 0; j < 14; ++j) {
                const std::string& c = cells[static_cast<std::size_t>(j) + 1];
                if (!std::regex_match(c, four_dp)) return false;
                if (std::abs(std::stod(c) - theta(j)) > 5e-5 + 1e-12) return false;
                if ((c[0] == '-') != (theta(j) < -5e-5)) return false;
            }
            return true;
        };
        const bool ok = row_ok(c1, child.weights.theta) && row_ok(c2, adult.weights.theta) && c2[4] == "-0.7106";
        // CSV header must be the feature names after the group column
        const std::string csv = read_text(dir / "comparison.csv");
        const std::string csv_head = csv.substr(0, csv.find('\n'));
        std::string joined = "group";
        for (std::size_t j = 1; j < expected.size(); ++j) joined += "," + expected[j];
        return Outcome{ok && csv_head == joined, "2 rows x 14 columns (8 topic, 3 object, 3 duration), architecture " +
                                                     c2[4] + ", csv header ok=" + (csv_head == joined ? "yes" : "no")};
    });

    std::cout << (failures == 0 ? "all acceptance criteria passed" : std::to_string(failures) + " criteria failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
