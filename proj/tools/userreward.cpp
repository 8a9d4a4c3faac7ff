#include "userreward/commands.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace userreward;

int main(int argc, char** argv) {
    CLI::App app{"Recover per-group reward weights from museum interaction logs (maximum-entropy IRL)."};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("-o,--out", out_dir, "output directory (overrides USERREWARD_OUT_DIR and the config)");
    app.add_option("--seed", seed, "top-level seed");

    std::vector<std::string> logs;
    auto* ingest = app.add_subcommand("ingest", "parse interaction logs into encoded sessions");
    ingest->add_option("logs", logs, "log files (JSON lines)")->required();

    std::string sessions_path;
    std::optional<double> discount, smoothing, lr;
    std::optional<std::size_t> horizon, max_iters, min_group;
    auto* fitc = app.add_subcommand("fit", "fit reward weights for every group");
    fitc->add_option("sessions", sessions_path, "sessions.json written by ingest")->required();
    fitc->add_option("--discount", discount, "discount factor");
    fitc->add_option("--horizon", horizon, "trajectory horizon in states (0: longest session)");
    fitc->add_option("--smoothing", smoothing, "additive transition smoothing");
    fitc->add_option("--learning-rate", lr, "gradient ascent step");
    fitc->add_option("--max-iters", max_iters, "iteration limit");
    fitc->add_option("--min-group-size", min_group, "skip smaller groups");

    std::vector<std::string> weights;
    auto* compare = app.add_subcommand("compare", "tabulate weights of several groups");
    compare->add_option("weights", weights, "weights files")->required()->expected(2, -1);

    std::optional<std::size_t> n_sessions;
    std::optional<double> mean_length;
    auto* simulate = app.add_subcommand("simulate", "generate synthetic logs from planted rewards");
    simulate->add_option("--sessions", n_sessions, "sessions per group");
    simulate->add_option("--mean-length", mean_length, "mean session length");

    std::string weights_path, truth_path;
    auto* scorec = app.add_subcommand("score", "compare fitted weights with planted ones");
    scorec->add_option("weights", weights_path, "weights file")->required();
    scorec->add_option("truth", truth_path, "ground_truth.json from simulate")->required();

    std::size_t instances = 20;
    double tolerance = 1e-4;
    auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the analytic gradient");
    grad->add_option("--instances", instances, "random toy MDPs");
    grad->add_option("--tolerance", tolerance, "maximum relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // help and version requests exit 0, usage errors are fatal
        return app.exit(e) == 0 ? 0 : 1;
    }

    CommandIo io{std::cout, std::cerr};
    RunConfig config;
    try {
        config = config_path.empty() ? default_run_config() : load_run_config(config_path);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFatal;
    }
    if (seed) config.seed = *seed;
    if (discount) config.discount = *discount;
    if (horizon) config.horizon = *horizon;
    if (smoothing) config.smoothing = *smoothing;
    if (lr) config.solver.learning_rate = *lr;
    if (max_iters) config.solver.max_iters = *max_iters;
    if (min_group) config.min_group_size = *min_group;
    if (n_sessions)
        for (auto& g : config.simulate.groups) g.n_sessions = *n_sessions;
    if (mean_length) config.simulate.mean_length = *mean_length;
    const fs::path out = resolve_output_dir(config, out_dir);

    if (*ingest) return cmd_ingest({logs.begin(), logs.end()}, config, out, io);
    if (*fitc) return cmd_fit(sessions_path, config, out, io);
    if (*compare) return cmd_compare({weights.begin(), weights.end()}, out, io);
    if (*simulate) return cmd_simulate(config, out, io);
    if (*scorec) return cmd_score(weights_path, truth_path, io);
    return cmd_gradcheck(instances, seed.value_or(config.seed), tolerance, io);
}
