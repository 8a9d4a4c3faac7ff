#include "userreward/report.hpp"

#include "userreward/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

namespace userreward {

using nlohmann::ordered_json;

namespace {

ordered_json vector_json(const Eigen::VectorXd& v) {
    ordered_json out = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
    return out;
}

Eigen::VectorXd vector_from(const ordered_json& arr) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

ordered_json parse_doc(const std::string& text, const char* what) {
    try {
        return ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed ") + what + ": " + e.what());
    }
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

}  // namespace

std::string weights_to_json(const FitResult& result, const FeatureMap& features, const std::string& group_label,
                            std::size_t n_sessions) {
    ordered_json doc;
    doc["role"] = "fit";
    doc["group_label"] = group_label;
    doc["n_sessions"] = n_sessions;
    doc["feature_names"] = result.weights.feature_names;
    doc["feature_blocks"] = features.blocks();
    doc["theta"] = vector_json(result.weights.theta);
    ordered_json cfg;
    cfg["learning_rate"] = result.config.learning_rate;
    cfg["max_iters"] = result.config.max_iters;
    cfg["grad_tol"] = result.config.grad_tol;
    cfg["discount"] = result.config.discount ? ordered_json(*result.config.discount) : ordered_json(nullptr);
    cfg["horizon"] = result.config.horizon ? ordered_json(*result.config.horizon) : ordered_json(nullptr);
    cfg["init"] = result.config.init == SolverConfig::Init::zero ? "zero" : "small_random";
    cfg["seed"] = result.config.seed;
    doc["config"] = cfg;
    doc["converged"] = result.converged;
    doc["stop_reason"] = result.stop_reason;
    doc["iterations"] = result.iterations;
    doc["final_learning_rate"] = result.final_learning_rate;
    doc["final_grad_sup_norm"] = result.final_gradient.size() ? result.final_gradient.cwiseAbs().maxCoeff() : 0.0;
    doc["unreachable_states"] = result.unreachable_states;
    doc["conservation"] = {{"checks", result.conservation.checks},
                           {"violations", result.conservation.violations},
                           {"max_policy_row_error", result.conservation.max_policy_row_error},
                           {"max_slice_error", result.conservation.max_slice_error}};
    doc["ll_trace"] = result.ll_trace;
    doc["grad_norm_trace"] = result.grad_norm_trace;
    return doc.dump(2) + "\n";
}

WeightsFile weights_from_json(const std::string& text) {
    const ordered_json doc = parse_doc(text, "weights file");
    try {
        if (doc.value("role", std::string()) != "fit") throw ParseError("weights file is not a fit result");
        WeightsFile w;
        w.group_label = doc.at("group_label").get<std::string>();
        w.weights.theta = vector_from(doc.at("theta"));
        w.weights.feature_names = doc.at("feature_names").get<std::vector<std::string>>();
        if (doc.contains("feature_blocks")) w.feature_blocks = doc["feature_blocks"].get<std::vector<std::size_t>>();
        w.converged = doc.value("converged", false);
        w.iterations = doc.value("iterations", std::size_t{0});
        w.n_sessions = doc.value("n_sessions", std::size_t{0});
        w.final_grad_sup_norm = doc.value("final_grad_sup_norm", 0.0);
        if (doc.contains("conservation")) {
            const auto& c = doc["conservation"];
            w.conservation.checks = c.value("checks", std::size_t{0});
            w.conservation.violations = c.value("violations", std::size_t{0});
            w.conservation.max_policy_row_error = c.value("max_policy_row_error", 0.0);
            w.conservation.max_slice_error = c.value("max_slice_error", 0.0);
        }
        if (doc.contains("ll_trace")) w.ll_trace = doc["ll_trace"].get<std::vector<double>>();
        if (static_cast<std::size_t>(w.weights.theta.size()) != w.weights.feature_names.size())
            throw ParseError("weights file: theta and feature_names differ in length");
        return w;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("weights file: ") + e.what());
    }
}

std::string format_weight(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.4f", value);
    std::string s = buf;
    if (s == "-0.0000") s = "0.0000";
    return s;
}

ComparisonTable build_comparison(const std::vector<WeightsFile>& files) {
    if (files.size() < 2) throw ComparisonError("comparison needs at least two weights files");
    ComparisonTable table;
    table.feature_names = files.front().weights.feature_names;
    for (const auto& f : files) {
        const auto& names = f.weights.feature_names;
        if (names != table.feature_names) {
            std::ostringstream msg;
            msg << "feature names of group '" << f.group_label << "' differ from group '" << files.front().group_label
                << "':";
            const std::size_t n = std::max(names.size(), table.feature_names.size());
            for (std::size_t j = 0; j < n; ++j) {
                const std::string a = j < table.feature_names.size() ? table.feature_names[j] : "<none>";
                const std::string b = j < names.size() ? names[j] : "<none>";
                if (a != b) msg << " [" << j << "] " << a << " vs " << b << ";";
            }
            throw ComparisonError(msg.str());
        }
        table.groups.push_back(f.group_label);
        table.rows.emplace_back(f.weights.theta.data(), f.weights.theta.data() + f.weights.theta.size());
    }
    return table;
}

std::string render_table(const ComparisonTable& table) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"group"});
    for (const auto& n : table.feature_names) cells.back().push_back(n);
    for (std::size_t g = 0; g < table.groups.size(); ++g) {
        cells.push_back({table.groups[g]});
        for (double v : table.rows[g]) cells.back().push_back(format_weight(v));
    }
    std::vector<std::size_t> width(cells.front().size(), 0);
    for (const auto& row : cells)
        for (std::size_t j = 0; j < row.size(); ++j) width[j] = std::max(width[j], row[j].size());

    std::ostringstream out;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t j = 0; j < cells[r].size(); ++j) {
            const auto& c = cells[r][j];
            if (j == 0) {
                out << c << std::string(width[j] - c.size(), ' ');
            } else {
                out << "  " << std::string(width[j] - c.size(), ' ') << c;
            }
        }
        out << '\n';
    }
    return out.str();
}

std::string render_csv(const ComparisonTable& table) {
    std::ostringstream out;
    out << "group";
    for (const auto& n : table.feature_names) out << ',' << csv_field(n);
    out << '\n';
    for (std::size_t g = 0; g < table.groups.size(); ++g) {
        out << csv_field(table.groups[g]);
        for (double v : table.rows[g]) out << ',' << format_weight(v);
        out << '\n';
    }
    return out.str();
}

std::string render_rankings(const ComparisonTable& table) {
    std::ostringstream out;
    for (std::size_t g = 0; g < table.groups.size(); ++g) {
        const auto& row = table.rows[g];
        std::vector<std::size_t> order(row.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return row[a] > row[b]; });
        out << table.groups[g] << ':';
        for (std::size_t r = 0; r < order.size(); ++r)
            out << (r ? " > " : " ") << table.feature_names[order[r]] << " (" << format_weight(row[order[r]]) << ")";
        out << '\n';
    }
    return out.str();
}

Eigen::VectorXd average_ranks(const Eigen::VectorXd& values) {
    const auto n = static_cast<std::size_t>(values.size());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return values(static_cast<Eigen::Index>(a)) < values(static_cast<Eigen::Index>(b));
    });
    Eigen::VectorXd ranks(values.size());
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values(static_cast<Eigen::Index>(order[j + 1])) == values(static_cast<Eigen::Index>(order[i])))
            ++j;
        const double r = (static_cast<double>(i + j) / 2.0) + 1.0;
        for (std::size_t q = i; q <= j; ++q) ranks(static_cast<Eigen::Index>(order[q])) = r;
        i = j + 1;
    }
    return ranks;
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size() || a.size() < 2) throw ScoringError("correlation needs two equal-length vectors of size >= 2");
    const Eigen::VectorXd x = a.array() - a.mean();
    const Eigen::VectorXd y = b.array() - b.mean();
    const double den = x.norm() * y.norm();
    if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    return x.dot(y) / den;
}

double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    if (a.size() != b.size()) throw ScoringError("spearman: vectors differ in length");
    return pearson(average_ranks(a), average_ranks(b));
}

Eigen::VectorXd block_centered(const Eigen::VectorXd& theta, const std::vector<std::size_t>& blocks) {
    Eigen::VectorXd out = theta;
    if (blocks.empty()) {
        out.array() -= out.mean();
        return out;
    }
    const std::size_t total = std::accumulate(blocks.begin(), blocks.end(), std::size_t{0});
    if (total != static_cast<std::size_t>(theta.size())) throw ScoringError("feature blocks do not cover theta");
    Eigen::Index start = 0;
    for (std::size_t b : blocks) {
        const auto len = static_cast<Eigen::Index>(b);
        out.segment(start, len).array() -= out.segment(start, len).mean();
        start += len;
    }
    return out;
}

std::string ground_truth_to_json(const GroundTruth& truth) {
    ordered_json doc;
    doc["role"] = "ground_truth";
    doc["seed"] = truth.seed;
    doc["mdp_seed"] = truth.mdp_seed;
    doc["discount"] = truth.discount;
    doc["mean_length"] = truth.mean_length;
    doc["feature_names"] = truth.features.names();
    doc["feature_blocks"] = truth.features.blocks();
    ordered_json fm = ordered_json::array();
    for (Eigen::Index s = 0; s < truth.features.matrix().rows(); ++s)
        fm.push_back(vector_json(truth.features.matrix().row(s).transpose()));
    doc["feature_matrix"] = fm;
    ordered_json groups = ordered_json::array();
    for (const auto& g : truth.groups) {
        ordered_json e;
        e["label"] = g.label;
        e["n_sessions"] = g.n_sessions;
        e["log_file"] = g.log_file;
        e["theta"] = vector_json(g.theta);
        groups.push_back(e);
    }
    doc["groups"] = groups;
    return doc.dump(2) + "\n";
}

GroundTruth ground_truth_from_json(const std::string& text) {
    const ordered_json doc = parse_doc(text, "ground-truth file");
    try {
        if (doc.value("role", std::string()) != "ground_truth") throw ParseError("not a ground-truth file");
        GroundTruth t;
        t.seed = doc.value("seed", std::uint64_t{0});
        t.mdp_seed = doc.value("mdp_seed", std::uint64_t{0});
        t.discount = doc.value("discount", 0.9);
        t.mean_length = doc.value("mean_length", 8.0);
        const auto& fm = doc.at("feature_matrix");
        const auto names = doc.at("feature_names").get<std::vector<std::string>>();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(fm.size()), static_cast<Eigen::Index>(names.size()));
        for (std::size_t s = 0; s < fm.size(); ++s) {
            if (fm[s].size() != names.size()) throw ParseError("ground-truth feature row has the wrong width");
            for (std::size_t j = 0; j < names.size(); ++j)
                m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = fm[s][j].get<double>();
        }
        std::vector<std::size_t> blocks;
        if (doc.contains("feature_blocks")) blocks = doc["feature_blocks"].get<std::vector<std::size_t>>();
        t.features = FeatureMap(std::move(m), names, blocks);
        for (const auto& e : doc.at("groups")) {
            GroundTruth::Group g;
            g.label = e.at("label").get<std::string>();
            g.n_sessions = e.value("n_sessions", std::size_t{0});
            g.log_file = e.value("log_file", std::string());
            g.theta = vector_from(e.at("theta"));
            t.groups.push_back(std::move(g));
        }
        return t;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("ground-truth file: ") + e.what());
    }
}

ScoreReport score(const WeightsFile& fitted, const GroundTruth& truth) {
    const auto it = std::find_if(truth.groups.begin(), truth.groups.end(),
                                 [&](const GroundTruth::Group& g) { return g.label == fitted.group_label; });
    if (it == truth.groups.end())
        throw ScoringError("group '" + fitted.group_label + "' has no planted weights in the ground-truth file");
    if (fitted.weights.theta.size() != it->theta.size() ||
        static_cast<std::size_t>(fitted.weights.theta.size()) != truth.features.k())
        throw ScoringError("dimension mismatch: fitted theta has " + std::to_string(fitted.weights.theta.size()) +
                           " entries, planted theta " + std::to_string(it->theta.size()) + ", feature map " +
                           std::to_string(truth.features.k()));
    if (fitted.weights.feature_names != truth.features.names())
        throw ScoringError("fitted and planted feature names differ");
    ScoreReport r;
    r.group_label = fitted.group_label;
    r.spearman_state_rewards =
        spearman(truth.features.matrix() * fitted.weights.theta, truth.features.matrix() * it->theta);
    const auto& blocks = truth.features.blocks();
    r.pearson_centered_theta = pearson(block_centered(fitted.weights.theta, blocks), block_centered(it->theta, blocks));
    r.moment_residual = fitted.final_grad_sup_norm;
    return r;
}

}  // namespace userreward
