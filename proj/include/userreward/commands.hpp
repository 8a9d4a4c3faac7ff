#pragma once

#include "userreward/maxent.hpp"
#include "userreward/session_ingest.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace userreward {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFatal = 1;
inline constexpr int kExitDataIssue = 2;

struct SimulatedGroup {
    std::string label;
    std::size_t n_sessions = 5000;
    std::vector<double> theta;
    std::map<std::string, std::string> profile;
};

struct SimulateConfig {
    std::vector<SimulatedGroup> groups;
    double mean_length = 8.0;
    std::size_t invalid_no_events = 0;
    std::size_t invalid_missing_attribute = 0;
};

/// Everything a run needs; loaded from one JSON document, then overridden by flags.
struct RunConfig {
    std::uint64_t seed = 20240601;
    std::string output_dir = "out";
    SchemaConfig schema;
    GroupSpec grouping;
    double smoothing = 0.0;
    double discount = 0.9;
    /// 0: longest session of each group.
    std::size_t horizon = 0;
    SolverConfig solver;
    std::size_t min_group_size = 50;
    SimulateConfig simulate;
};

/// Two planted groups ("child", "adult") of 5000 sessions each.
SimulateConfig default_simulation();
RunConfig default_run_config();

/// Missing keys keep their defaults; unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text);
std::string run_config_to_json(const RunConfig& config);
RunConfig load_run_config(const std::filesystem::path& path);

/// Flag value, else USERREWARD_OUT_DIR, else the config value.
std::filesystem::path resolve_output_dir(const RunConfig& config, const std::optional<std::string>& flag);

/// Independent stream seed for a named consumer of the top-level seed.
std::uint64_t derive_seed(std::uint64_t seed, const std::string& tag);

std::string group_file_stem(const std::string& label);

struct CommandIo {
    std::ostream& out;
    std::ostream& err;
};

int cmd_ingest(const std::vector<std::filesystem::path>& logs, const RunConfig& config,
               const std::filesystem::path& out_dir, CommandIo io);
int cmd_fit(const std::filesystem::path& sessions_path, const RunConfig& config, const std::filesystem::path& out_dir,
            CommandIo io);
int cmd_compare(const std::vector<std::filesystem::path>& weights, const std::filesystem::path& out_dir, CommandIo io);
int cmd_simulate(const RunConfig& config, const std::filesystem::path& out_dir, CommandIo io);
int cmd_score(const std::filesystem::path& weights, const std::filesystem::path& truth, CommandIo io);

struct GradcheckSummary {
    std::size_t instances = 0;
    double max_relative_error = 0.0;
    double min_gradient_norm = 0.0;
    /// Instances whose likelihood does not depend on theta (e.g. no choice anywhere);
    /// for these the check is absolute.
    std::size_t flat_instances = 0;
};

/// Central differences (step 1e-5) of the per-session log-likelihood against
/// the analytic gradient on random toy MDPs. Relative error is
/// |g - fd| / max(|g|, |fd|, 1e-6) in the Euclidean norm.
GradcheckSummary run_gradcheck(std::size_t instances, std::uint64_t seed);
int cmd_gradcheck(std::size_t instances, std::uint64_t seed, double tolerance, CommandIo io);

}  // namespace userreward
