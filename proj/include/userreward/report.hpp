#pragma once

#include "userreward/maxent.hpp"
#include "userreward/mdp.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace userreward {

/// Parsed weights file (role "fit").
struct WeightsFile {
    std::string group_label;
    RewardWeights weights;
    std::vector<std::size_t> feature_blocks;
    bool converged = false;
    std::size_t iterations = 0;
    std::size_t n_sessions = 0;
    double final_grad_sup_norm = 0.0;
    std::vector<double> ll_trace;
    ConservationStats conservation;
};

std::string weights_to_json(const FitResult& result, const FeatureMap& features, const std::string& group_label,
                            std::size_t n_sessions);
WeightsFile weights_from_json(const std::string& text);

/// Report number: 4 decimals, leading '-' for negatives, never "-0.0000".
std::string format_weight(double value);

struct ComparisonTable {
    std::vector<std::string> feature_names;
    std::vector<std::string> groups;
    /// rows[g][j] = theta_j of group g.
    std::vector<std::vector<double>> rows;
};

/// Throws ComparisonError unless every file carries the same feature names.
ComparisonTable build_comparison(const std::vector<WeightsFile>& files);

std::string render_table(const ComparisonTable& table);
/// Header row = feature names; one row per group in the same order as the table.
std::string render_csv(const ComparisonTable& table);
/// Features of each group ordered by decreasing weight (ties keep column order).
std::string render_rankings(const ComparisonTable& table);

/// Average ranks (1-based) with ties sharing the mean rank.
Eigen::VectorXd average_ranks(const Eigen::VectorXd& values);
/// NaN when either input is constant.
double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b);
double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

/// Subtracts each block's mean from its coordinates (the whole vector when
/// `blocks` is empty). Shifts that one-hot blocks make invisible are removed.
Eigen::VectorXd block_centered(const Eigen::VectorXd& theta, const std::vector<std::size_t>& blocks);

/// Simulation sidecar: planted weights per group plus the feature map and
/// generator settings that produced the logs.
struct GroundTruth {
    struct Group {
        std::string label;
        Eigen::VectorXd theta;
        std::size_t n_sessions = 0;
        std::string log_file;
    };
    std::vector<Group> groups;
    FeatureMap features;
    double discount = 0.9;
    double mean_length = 8.0;
    std::uint64_t seed = 0;
    std::uint64_t mdp_seed = 0;
};

std::string ground_truth_to_json(const GroundTruth& truth);
GroundTruth ground_truth_from_json(const std::string& text);

struct ScoreReport {
    std::string group_label;
    double spearman_state_rewards = 0.0;
    double pearson_centered_theta = 0.0;
    double moment_residual = 0.0;
};

/// Throws ScoringError on dimension or feature-name mismatch, or when the
/// group is absent from the sidecar.
ScoreReport score(const WeightsFile& fitted, const GroundTruth& truth);

}  // namespace userreward
