#include "userreward/commands.hpp"

#include "userreward/errors.hpp"
#include "userreward/feature_stats.hpp"
#include "userreward/io.hpp"
#include "userreward/mdp_io.hpp"
#include "userreward/report.hpp"
#include "userreward/trajectory_sim.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <iomanip>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace userreward {

using nlohmann::ordered_json;
namespace fs = std::filesystem;

SimulateConfig default_simulation() {
    SimulateConfig sim;
    // topic weights dominate; object and duration blocks are smaller
    sim.groups.push_back({"child", 5000,
                          {1.0, -0.5, 0.2, -0.8, 1.5, 0.8, -0.3, 0.6, 0.3, 0.0, -0.3, -0.2, 0.4, 0.1},
                          {{"age", "10"}}});
    sim.groups.push_back({"adult", 5000,
                          {-0.4, 0.9, 1.2, 0.7, -0.6, -0.2, 1.0, -0.9, -0.2, 0.1, 0.2, 0.3, -0.1, 0.2},
                          {{"age", "35"}}});
    return sim;
}

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.simulate = default_simulation();
    return cfg;
}

namespace {

void reject_unknown(const ordered_json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) throw ConfigurationError("config: '" + where + "' must be an object");
    const std::set<std::string> ok(allowed.begin(), allowed.end());
    for (const auto& [key, _] : obj.items())
        if (!ok.count(key)) throw ConfigurationError("config: unknown key '" + key + "' in " + where);
}

template <class T>
void read_opt(const ordered_json& obj, const char* key, T& dst) {
    if (obj.contains(key)) dst = obj.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig cfg = default_run_config();
    try {
        reject_unknown(doc, {"seed", "output_dir", "schema", "grouping", "estimation", "solver", "fit", "simulate"},
                       "top level");
        read_opt(doc, "seed", cfg.seed);
        read_opt(doc, "output_dir", cfg.output_dir);
        if (doc.contains("schema")) {
            const auto& j = doc["schema"];
            reject_unknown(j, {"n_topics", "n_objects", "n_bins", "bin_edges", "required_attributes", "topic_names"},
                           "schema");
            read_opt(j, "n_topics", cfg.schema.n_topics);
            read_opt(j, "n_objects", cfg.schema.n_objects);
            read_opt(j, "n_bins", cfg.schema.n_bins);
            read_opt(j, "bin_edges", cfg.schema.bin_edges);
            read_opt(j, "required_attributes", cfg.schema.required_attributes);
            read_opt(j, "topic_names", cfg.schema.topic_names);
        }
        if (doc.contains("grouping")) {
            const auto& j = doc["grouping"];
            reject_unknown(j, {"attribute", "threshold", "below_label", "above_label", "categories", "other_label"},
                           "grouping");
            read_opt(j, "attribute", cfg.grouping.attribute);
            if (j.contains("threshold")) {
                if (j["threshold"].is_null())
                    cfg.grouping.threshold.reset();
                else
                    cfg.grouping.threshold = j["threshold"].get<double>();
            }
            read_opt(j, "below_label", cfg.grouping.below_label);
            read_opt(j, "above_label", cfg.grouping.above_label);
            read_opt(j, "categories", cfg.grouping.categories);
            if (j.contains("other_label")) {
                if (j["other_label"].is_null())
                    cfg.grouping.other_label.reset();
                else
                    cfg.grouping.other_label = j["other_label"].get<std::string>();
            }
        }
        if (doc.contains("estimation")) {
            const auto& j = doc["estimation"];
            reject_unknown(j, {"smoothing", "discount", "horizon"}, "estimation");
            read_opt(j, "smoothing", cfg.smoothing);
            read_opt(j, "discount", cfg.discount);
            read_opt(j, "horizon", cfg.horizon);
        }
        if (doc.contains("solver")) {
            const auto& j = doc["solver"];
            reject_unknown(j, {"learning_rate", "max_iters", "grad_tol", "init"}, "solver");
            read_opt(j, "learning_rate", cfg.solver.learning_rate);
            read_opt(j, "max_iters", cfg.solver.max_iters);
            read_opt(j, "grad_tol", cfg.solver.grad_tol);
            if (j.contains("init")) {
                const auto init = j["init"].get<std::string>();
                if (init == "zero")
                    cfg.solver.init = SolverConfig::Init::zero;
                else if (init == "small_random")
                    cfg.solver.init = SolverConfig::Init::small_random;
                else
                    throw ConfigurationError("config: solver.init must be 'zero' or 'small_random'");
            }
        }
        if (doc.contains("fit")) {
            const auto& j = doc["fit"];
            reject_unknown(j, {"min_group_size"}, "fit");
            read_opt(j, "min_group_size", cfg.min_group_size);
        }
        if (doc.contains("simulate")) {
            const auto& j = doc["simulate"];
            reject_unknown(j, {"mean_length", "invalid_no_events", "invalid_missing_attribute", "groups"}, "simulate");
            read_opt(j, "mean_length", cfg.simulate.mean_length);
            read_opt(j, "invalid_no_events", cfg.simulate.invalid_no_events);
            read_opt(j, "invalid_missing_attribute", cfg.simulate.invalid_missing_attribute);
            if (j.contains("groups")) {
                cfg.simulate.groups.clear();
                for (const auto& g : j["groups"]) {
                    reject_unknown(g, {"label", "n_sessions", "theta", "profile"}, "simulate.groups");
                    SimulatedGroup sg;
                    sg.label = g.at("label").get<std::string>();
                    read_opt(g, "n_sessions", sg.n_sessions);
                    sg.theta = g.at("theta").get<std::vector<double>>();
                    read_opt(g, "profile", sg.profile);
                    cfg.simulate.groups.push_back(std::move(sg));
                }
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigurationError(std::string("config: ") + e.what());
    }
    cfg.schema.validate();
    cfg.solver.validate();
    if (!(cfg.discount >= 0.0 && cfg.discount < 1.0)) throw ConfigurationError("config: discount outside [0, 1)");
    if (cfg.smoothing < 0.0) throw ConfigurationError("config: smoothing must be non-negative");
    if (!(cfg.simulate.mean_length >= 1.0)) throw ConfigurationError("config: simulate.mean_length must be >= 1");
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    ordered_json doc;
    doc["seed"] = cfg.seed;
    doc["output_dir"] = cfg.output_dir;
    doc["schema"] = {{"n_topics", cfg.schema.n_topics},
                     {"n_objects", cfg.schema.n_objects},
                     {"n_bins", cfg.schema.n_bins},
                     {"bin_edges", cfg.schema.bin_edges},
                     {"required_attributes", cfg.schema.required_attributes},
                     {"topic_names", cfg.schema.topic_names}};
    ordered_json grouping;
    grouping["attribute"] = cfg.grouping.attribute;
    grouping["threshold"] = cfg.grouping.threshold ? ordered_json(*cfg.grouping.threshold) : ordered_json(nullptr);
    grouping["below_label"] = cfg.grouping.below_label;
    grouping["above_label"] = cfg.grouping.above_label;
    grouping["categories"] = cfg.grouping.categories;
    grouping["other_label"] = cfg.grouping.other_label ? ordered_json(*cfg.grouping.other_label) : ordered_json(nullptr);
    doc["grouping"] = grouping;
    doc["estimation"] = {{"smoothing", cfg.smoothing}, {"discount", cfg.discount}, {"horizon", cfg.horizon}};
    doc["solver"] = {{"learning_rate", cfg.solver.learning_rate},
                     {"max_iters", cfg.solver.max_iters},
                     {"grad_tol", cfg.solver.grad_tol},
                     {"init", cfg.solver.init == SolverConfig::Init::zero ? "zero" : "small_random"}};
    doc["fit"] = {{"min_group_size", cfg.min_group_size}};
    ordered_json groups = ordered_json::array();
    for (const auto& g : cfg.simulate.groups) {
        ordered_json e;
        e["label"] = g.label;
        e["n_sessions"] = g.n_sessions;
        e["theta"] = g.theta;
        e["profile"] = g.profile;
        groups.push_back(e);
    }
    doc["simulate"] = {{"mean_length", cfg.simulate.mean_length},
                       {"invalid_no_events", cfg.simulate.invalid_no_events},
                       {"invalid_missing_attribute", cfg.simulate.invalid_missing_attribute},
                       {"groups", groups}};
    return doc.dump(2) + "\n";
}

RunConfig load_run_config(const fs::path& path) { return run_config_from_json(read_text(path)); }

fs::path resolve_output_dir(const RunConfig& config, const std::optional<std::string>& flag) {
    if (flag && !flag->empty()) return *flag;
    if (const char* env = std::getenv("USERREWARD_OUT_DIR"); env && *env) return env;
    return config.output_dir;
}

std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag) {
    std::uint64_t h = 1469598103934665603ULL;  // FNV-1a
    for (unsigned char c : tag) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    std::uint64_t z = seed ^ h;
    // splitmix64 finalizer
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::string group_file_stem(const std::string& label) {
    std::string out;
    for (char c : label) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return out.empty() ? std::string("group") : out;
}

namespace {

void write_effective_config(const fs::path& out_dir, const RunConfig& config, const std::string& command) {
    RunConfig snap = config;
    snap.output_dir = out_dir.string();
    auto doc = ordered_json::parse(run_config_to_json(snap));
    doc["command"] = command;
    write_text_atomic(out_dir / "effective_config.json", doc.dump(2) + "\n");
}

std::string fixed(double v, int digits) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

template <class F>
int guarded(CommandIo io, F&& body) {
    try {
        return body();
    } catch (const std::exception& e) {
        io.err << "error: " << e.what() << '\n';
        return kExitFatal;
    }
}

}  // namespace

int cmd_ingest(const std::vector<fs::path>& logs, const RunConfig& config, const fs::path& out_dir, CommandIo io) {
    return guarded(io, [&] {
        if (logs.empty()) throw ConfigurationError("ingest needs at least one log file");
        ParseResult res = parse_sessions(logs, config.schema);
        for (const auto& issue : res.errors) io.err << issue.source << ':' << issue.line << ": " << issue.message << '\n';
        write_text_atomic(out_dir / "sessions.json", sessions_to_json(res.sessions, res.drops));
        write_text_atomic(out_dir / "drop_report.json", res.drops.to_json());
        write_effective_config(out_dir, config, "ingest");
        io.out << "sessions: " << res.sessions.size() << '\n';
        io.out << "dropped: " << res.drops.total();
        for (const auto& [reason, n] : res.drops.counts) io.out << "  " << reason << '=' << n;
        io.out << '\n';
        io.out << "states: " << res.sessions.n_states << "  actions: " << res.sessions.n_actions
               << "  features: " << config.schema.n_features() << '\n';
        if (!res.errors.empty()) {
            io.err << res.errors.size() << " malformed record(s) skipped\n";
            return kExitDataIssue;
        }
        return kExitOk;
    });
}

int cmd_fit(const fs::path& sessions_path, const RunConfig& config, const fs::path& out_dir, CommandIo io) {
    return guarded(io, [&] {
        const SessionSet all = sessions_from_json(read_text(sessions_path));
        const SchemaConfig schema = all.schema.value_or(config.schema);
        const FeatureMap features = schema.feature_map();
        if (all.n_states != features.n_states())
            throw ConfigurationError("sessions were encoded with " + std::to_string(all.n_states) +
                                     " states but the schema defines " + std::to_string(features.n_states()));
        const auto groups = segment_groups(all, config.grouping);

        struct Job {
            std::string label;
            const SessionSet* set;
            Mdp mdp;
            FitResult result;
            std::exception_ptr error;
        };
        std::vector<Job> jobs;
        for (const auto& [label, set] : groups) {
            if (set.size() < config.min_group_size) {
                io.err << "warning: skipping group '" << label << "': " << set.size() << " sessions < minimum "
                       << config.min_group_size << '\n';
                continue;
            }
            jobs.push_back({label, &set, {}, {}, nullptr});
        }
        std::vector<std::thread> workers;
        for (auto& job : jobs) {
            workers.emplace_back([&job, &config, &features] {
                try {
                    job.mdp = estimate_mdp(*job.set, config.smoothing, config.discount, config.horizon);
                    const auto mu = empirical_feature_expectations(*job.set, features, config.discount, job.mdp.horizon);
                    SolverConfig sc = config.solver;
                    sc.seed = derive_seed(config.seed, "solver:" + job.label);
                    job.result = fit(job.mdp, features, mu, sc);
                } catch (...) {
                    job.error = std::current_exception();
                }
            });
        }
        for (auto& w : workers) w.join();
        for (auto& job : jobs)
            if (job.error) std::rethrow_exception(job.error);

        for (const auto& job : jobs)
            write_text_atomic(out_dir / ("weights_" + group_file_stem(job.label) + ".json"),
                              weights_to_json(job.result, features, job.label, job.set->size()));
        write_effective_config(out_dir, config, "fit");

        io.out << std::left << std::setw(12) << "group" << std::right << std::setw(10) << "sessions" << std::setw(9)
               << "horizon" << std::setw(7) << "iters" << std::setw(11) << "converged" << std::setw(12) << "|grad|"
               << std::setw(14) << "loglik/m" << '\n';
        for (const auto& job : jobs) {
            const auto& r = job.result;
            io.out << std::left << std::setw(12) << job.label << std::right << std::setw(10) << job.set->size()
                   << std::setw(9) << job.mdp.horizon << std::setw(7) << r.iterations << std::setw(11)
                   << (r.converged ? "yes" : "no") << std::setw(12) << sci(r.grad_norm_trace.back()) << std::setw(14)
                   << fixed(r.ll_trace.back(), 6) << '\n';
            if (!r.unreachable_states.empty())
                io.err << "note: group '" << job.label << "' has " << r.unreachable_states.size()
                       << " unreachable state(s)\n";
        }
        if (jobs.empty()) {
            io.err << "no group reached the minimum size; nothing was fitted\n";
            return kExitDataIssue;
        }
        return kExitOk;
    });
}

int cmd_compare(const std::vector<fs::path>& weights, const fs::path& out_dir, CommandIo io) {
    return guarded(io, [&] {
        std::vector<WeightsFile> files;
        for (const auto& p : weights) files.push_back(weights_from_json(read_text(p)));
        const ComparisonTable table = build_comparison(files);
        const std::string csv = render_csv(table);
        write_text_atomic(out_dir / "comparison.csv", csv);
        io.out << render_table(table) << '\n' << render_rankings(table);
        return kExitOk;
    });
}

int cmd_simulate(const RunConfig& config, const fs::path& out_dir, CommandIo io) {
    return guarded(io, [&] {
        const SchemaConfig& schema = config.schema;
        schema.validate();
        if (config.simulate.groups.empty()) throw ConfigurationError("simulate: no groups configured");
        const FeatureMap features = schema.feature_map();
        GroundTruth truth;
        truth.features = features;
        truth.discount = config.discount;
        truth.mean_length = config.simulate.mean_length;
        truth.seed = config.seed;
        truth.mdp_seed = derive_seed(config.seed, "mdp");
        const Mdp mdp = museum_ground_truth_mdp(schema, truth.mdp_seed, config.discount, 1);

        std::set<std::string> seen;
        for (const auto& g : config.simulate.groups) {
            if (!seen.insert(g.label).second) throw ConfigurationError("simulate: duplicate group '" + g.label + "'");
            if (g.theta.size() != features.k())
                throw ConfigurationError("simulate: group '" + g.label + "' theta has " + std::to_string(g.theta.size()) +
                                         " entries, expected " + std::to_string(features.k()));
            GeneratorSpec spec;
            spec.mdp = mdp;
            spec.features = features;
            spec.true_theta = {Eigen::Map<const Eigen::VectorXd>(g.theta.data(), static_cast<Eigen::Index>(g.theta.size())),
                               features.names()};
            spec.n_sessions = g.n_sessions;
            spec.length = LengthDistribution::geometric_with_mean(config.simulate.mean_length);
            spec.seed = derive_seed(config.seed, "sample:" + g.label);
            spec.group_label = g.label;
            spec.profile_template = g.profile;
            SessionSet set = sample_trajectories(spec);
            set.schema = schema;

            LogRenderOptions opts;
            opts.seed = derive_seed(config.seed, "log:" + g.label);
            opts.invalid_no_events = config.simulate.invalid_no_events;
            opts.invalid_missing_attribute = config.simulate.invalid_missing_attribute;
            const std::string log = render_session_log(set, schema, opts);
            const std::string name = group_file_stem(g.label) + ".jsonl";
            write_text_atomic(out_dir / name, log);
            truth.groups.push_back({g.label, spec.true_theta.theta, g.n_sessions, name});
            const auto lines = static_cast<std::size_t>(std::count(log.begin(), log.end(), '\n'));
            io.out << g.label << ": " << g.n_sessions << " sessions, " << lines << " lines -> " << (out_dir / name).string()
                   << '\n';
        }
        write_text_atomic(out_dir / "ground_truth.json", ground_truth_to_json(truth));
        save_mdp(out_dir / "truth_mdp.json", mdp, features);
        write_effective_config(out_dir, config, "simulate");
        return kExitOk;
    });
}

int cmd_score(const fs::path& weights, const fs::path& truth_path, CommandIo io) {
    return guarded(io, [&] {
        const WeightsFile w = weights_from_json(read_text(weights));
        const GroundTruth truth = ground_truth_from_json(read_text(truth_path));
        const ScoreReport r = score(w, truth);
        io.out << "group: " << r.group_label << '\n'
               << "spearman_state_rewards: " << fixed(r.spearman_state_rewards, 6) << '\n'
               << "pearson_centered_theta: " << fixed(r.pearson_centered_theta, 6) << '\n'
               << "moment_residual_sup: " << sci(r.moment_residual) << '\n';
        return kExitOk;
    });
}

GradcheckSummary run_gradcheck(std::size_t instances, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> sym(-1.0, 1.0);
    GradcheckSummary summary;
    summary.min_gradient_norm = std::numeric_limits<double>::infinity();
    constexpr double h = 1e-5;
    for (std::size_t i = 0; i < instances; ++i) {
        const ToyInstance inst = random_toy_instance(rng);
        // data come from a different reward so the gradient is not near zero
        GeneratorSpec spec;
        spec.mdp = inst.mdp;
        spec.features = inst.features;
        spec.true_theta = inst.theta;
        for (Eigen::Index j = 0; j < spec.true_theta.theta.size(); ++j) spec.true_theta.theta(j) = sym(rng);
        spec.n_sessions = 200;
        spec.length = LengthDistribution::geometric_with_mean(0.5 * static_cast<double>(inst.mdp.horizon) + 1.0);
        spec.seed = rng();
        const SessionSet set = sample_trajectories(spec);
        const auto mu = empirical_feature_expectations(set, inst.features, inst.mdp.discount, inst.mdp.horizon);

        const Eigen::VectorXd& theta = inst.theta.theta;
        const Eigen::VectorXd analytic = evaluate_objective(inst.mdp, theta, inst.features, mu).gradient;
        Eigen::VectorXd numeric(theta.size());
        for (Eigen::Index j = 0; j < theta.size(); ++j) {
            Eigen::VectorXd up = theta, down = theta;
            up(j) += h;
            down(j) -= h;
            numeric(j) = (evaluate_objective(inst.mdp, up, inst.features, mu).log_likelihood -
                          evaluate_objective(inst.mdp, down, inst.features, mu).log_likelihood) /
                         (2.0 * h);
        }
        const double scale = std::max({analytic.norm(), numeric.norm(), 1e-6});
        summary.max_relative_error = std::max(summary.max_relative_error, (analytic - numeric).norm() / scale);
        summary.min_gradient_norm = std::min(summary.min_gradient_norm, analytic.norm());
        if (analytic.norm() < 1e-9) ++summary.flat_instances;
        ++summary.instances;
    }
    return summary;
}

int cmd_gradcheck(std::size_t instances, std::uint64_t seed, double tolerance, CommandIo io) {
    return guarded(io, [&] {
        const auto s = run_gradcheck(instances, seed);
        io.out << "instances: " << s.instances << '\n'
               << "max_relative_error: " << sci(s.max_relative_error) << '\n'
               << "min_gradient_norm: " << sci(s.min_gradient_norm) << '\n'
               << "flat_instances: " << s.flat_instances << '\n'
               << (s.max_relative_error <= tolerance ? "PASS" : "FAIL") << " (tolerance " << sci(tolerance) << ")\n";
        return s.max_relative_error <= tolerance ? kExitOk : kExitFatal;
    });
}

}  // namespace userreward
