#include "userreward/session_ingest.hpp"

#include "userreward/errors.hpp"
#include "userreward/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>
#include <unordered_map>

namespace userreward {

using nlohmann::json;
using nlohmann::ordered_json;

void SchemaConfig::validate() const {
    if (n_topics == 0 || n_objects == 0 || n_bins == 0)
        throw ConfigurationError("schema cardinalities must be positive");
    if (bin_edges.size() + 1 != n_bins)
        throw ConfigurationError("schema needs " + std::to_string(n_bins - 1) + " bin edges, got " +
                                 std::to_string(bin_edges.size()));
    if (!std::is_sorted(bin_edges.begin(), bin_edges.end()))
        throw ConfigurationError("bin edges must be increasing");
    if (topic_names.size() != n_topics)
        throw ConfigurationError("schema has " + std::to_string(topic_names.size()) + " topic names for " +
                                 std::to_string(n_topics) + " topics");
}

std::size_t SchemaConfig::discretize_duration(double seconds) const {
    if (!(seconds >= 0.0)) throw ParseError("negative duration");
    for (std::size_t i = 0; i < bin_edges.size(); ++i)
        if (seconds <= bin_edges[i]) return i;
    return bin_edges.size();
}

StateIndex SchemaConfig::encode_state(std::size_t topic, std::size_t object, std::size_t bin) const {
    if (topic >= n_topics || object >= n_objects || bin >= n_bins)
        throw EncodingError("situation (" + std::to_string(topic) + ", " + std::to_string(object) + ", " +
                            std::to_string(bin) + ") out of range");
    return (topic * n_objects + object) * n_bins + bin;
}

SchemaConfig::Situation SchemaConfig::decode_state(StateIndex s) const {
    if (s >= n_states()) throw EncodingError("state index " + std::to_string(s) + " out of range");
    return {s / (n_objects * n_bins), (s / n_bins) % n_objects, s % n_bins};
}

std::vector<std::string> SchemaConfig::feature_names() const {
    std::vector<std::string> names = topic_names;
    for (std::size_t o = 0; o < n_objects; ++o) names.push_back("object" + std::to_string(o + 1));
    for (std::size_t b = 0; b < n_bins; ++b) {
        std::ostringstream name;
        name << "duration_";
        if (b == 0)
            name << "0_" << bin_edges.front();
        else if (b + 1 == n_bins)
            name << bin_edges.back() << "_plus";
        else
            name << bin_edges[b - 1] << "_" << bin_edges[b];
        names.push_back(name.str());
    }
    return names;
}

FeatureMap SchemaConfig::feature_map() const {
    validate();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_states()),
                                              static_cast<Eigen::Index>(n_features()));
    for (std::size_t s = 0; s < n_states(); ++s) {
        const auto sit = decode_state(s);
        const auto row = static_cast<Eigen::Index>(s);
        m(row, static_cast<Eigen::Index>(sit.topic)) = 1.0;
        m(row, static_cast<Eigen::Index>(n_topics + sit.object)) = 1.0;
        m(row, static_cast<Eigen::Index>(n_topics + n_objects + sit.bin)) = 1.0;
    }
    return FeatureMap(std::move(m), feature_names(), {n_topics, n_objects, n_bins});
}

StateSpace SchemaConfig::state_space() const {
    StateSpace space;
    for (std::size_t s = 0; s < n_states(); ++s) {
        const auto sit = decode_state(s);
        space.labels.push_back(topic_names[sit.topic] + "/object" + std::to_string(sit.object + 1) + "/bin" +
                               std::to_string(sit.bin));
    }
    return space;
}

ActionSpace SchemaConfig::action_space() const { return ActionSpace{topic_names}; }

std::size_t discretize_duration(double seconds) { return SchemaConfig{}.discretize_duration(seconds); }

StateIndex encode_state(std::size_t topic, std::size_t object, std::size_t bin) {
    return SchemaConfig{}.encode_state(topic, object, bin);
}

std::size_t SessionSet::max_length() const {
    std::size_t best = 0;
    for (const auto& s : sessions) best = std::max(best, s.length());
    return best;
}

std::size_t DropReport::total() const {
    std::size_t n = 0;
    for (const auto& [_, c] : counts) n += c;
    return n;
}

std::string DropReport::to_json() const {
    ordered_json doc;
    doc["dropped"] = total();
    doc["reasons"] = ordered_json::object();
    for (const auto& [reason, c] : counts) doc["reasons"][reason] = c;
    return doc.dump(2) + "\n";
}

namespace {

struct PendingSession {
    std::string id;
    std::vector<RawEvent> events;
    std::map<std::string, std::string> attributes;
};

bool integral(const json& v, long& out) {
    if (v.is_number_integer()) {
        out = v.get<long>();
        return true;
    }
    if (v.is_number_float()) {
        const double d = v.get<double>();
        if (std::floor(d) == d) {
            out = static_cast<long>(d);
            return true;
        }
    }
    return false;
}

class Parser {
public:
    explicit Parser(const SchemaConfig& schema) : schema_(schema) { schema_.validate(); }

    void feed(const std::string& text, const std::string& source) {
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.find_first_not_of(" \t") == std::string::npos) continue;
            if (auto msg = parse_line(line); !msg.empty()) result_.errors.push_back({source, lineno, msg});
        }
    }

    ParseResult finish() {
        auto& set = result_.sessions;
        set.n_states = schema_.n_states();
        set.n_actions = schema_.n_actions();
        set.schema = schema_;
        for (auto& p : pending_) {
            if (p.events.empty()) {
                ++result_.drops.counts["no_events"];
                continue;
            }
            const bool missing = std::any_of(schema_.required_attributes.begin(), schema_.required_attributes.end(),
                                             [&](const std::string& a) { return !p.attributes.contains(a); });
            if (missing) {
                ++result_.drops.counts["missing_attribute"];
                continue;
            }
            std::stable_sort(p.events.begin(), p.events.end(),
                             [](const RawEvent& a, const RawEvent& b) { return a.timestamp < b.timestamp; });
            Session s;
            s.session_id = p.id;
            s.profile = {p.id, p.attributes};
            for (const auto& e : p.events)
                s.state_seq.push_back(schema_.encode_state(static_cast<std::size_t>(e.topic_id),
                                                           static_cast<std::size_t>(e.object_order),
                                                           schema_.discretize_duration(e.duration)));
            for (std::size_t t = 1; t < s.state_seq.size(); ++t)
                s.action_seq.push_back(schema_.topic_of(s.state_seq[t]));
            set.sessions.push_back(std::move(s));
        }
        return std::move(result_);
    }

private:
    PendingSession& session(const std::string& id) {
        auto [it, inserted] = index_.try_emplace(id, pending_.size());
        if (inserted) pending_.push_back(PendingSession{id, {}, {}});
        return pending_[it->second];
    }

    std::string parse_line(const std::string& line) {
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception&) {
            return "not a JSON object";
        }
        if (!rec.is_object()) return "not a JSON object";
        if (!rec.contains("type") || !rec["type"].is_string()) return "missing field 'type'";
        if (!rec.contains("session_id") || !rec["session_id"].is_string() ||
            rec["session_id"].get<std::string>().empty())
            return "missing field 'session_id'";
        const auto type = rec["type"].get<std::string>();
        const auto id = rec["session_id"].get<std::string>();
        if (type == "event") {
            RawEvent e;
            e.session_id = id;
            for (const char* f : {"timestamp", "topic_id", "object_order", "duration_s"})
                if (!rec.contains(f) || !rec[f].is_number()) return std::string("missing or non-numeric field '") + f + "'";
            e.timestamp = rec["timestamp"].get<double>();
            if (!integral(rec["topic_id"], e.topic_id)) return "topic_id is not an integer";
            if (!integral(rec["object_order"], e.object_order)) return "object_order is not an integer";
            e.duration = rec["duration_s"].get<double>();
            if (e.topic_id < 0 || static_cast<std::size_t>(e.topic_id) >= schema_.n_topics)
                return "topic_id " + std::to_string(e.topic_id) + " out of range";
            if (e.object_order < 0 || static_cast<std::size_t>(e.object_order) >= schema_.n_objects)
                return "object_order " + std::to_string(e.object_order) + " out of range";
            if (!(e.duration >= 0.0)) return "negative duration";
            session(id).events.push_back(std::move(e));
            return {};
        }
        if (type == "attr") {
            if (!rec.contains("attr") || !rec["attr"].is_string()) return "missing field 'attr'";
            if (!rec.contains("value")) return "missing field 'value'";
            std::string value;
            if (rec["value"].is_string())
                value = rec["value"].get<std::string>();
            else if (rec["value"].is_number())
                value = rec["value"].dump();
            else
                return "attribute value must be a string or number";
            auto& attrs = session(id).attributes;
            const auto name = rec["attr"].get<std::string>();
            if (auto it = attrs.find(name); it != attrs.end()) {
                if (it->second != value) return "attribute '" + name + "' changes within session " + id;
                return {};
            }
            attrs.emplace(name, std::move(value));
            return {};
        }
        return "unknown record type '" + type + "'";
    }

    SchemaConfig schema_;
    std::vector<PendingSession> pending_;
    std::unordered_map<std::string, std::size_t> index_;
    ParseResult result_;
};

}  // namespace

ParseResult parse_session_text(const std::string& text, const SchemaConfig& schema, const std::string& source) {
    Parser parser(schema);
    parser.feed(text, source);
    return parser.finish();
}

ParseResult parse_sessions(const std::vector<std::filesystem::path>& paths, const SchemaConfig& schema) {
    Parser parser(schema);
    for (const auto& p : paths) {
        if (!std::filesystem::exists(p)) throw Error("log file not found: " + p.string());
        parser.feed(read_text(p), p.string());
    }
    return parser.finish();
}

ParseResult parse_sessions(const std::filesystem::path& path, const SchemaConfig& schema) {
    return parse_sessions(std::vector<std::filesystem::path>{path}, schema);
}

std::string format_event_record(const RawEvent& event) {
    ordered_json rec;
    rec["type"] = "event";
    rec["session_id"] = event.session_id;
    if (std::floor(event.timestamp) == event.timestamp && std::abs(event.timestamp) < 9e15)
        rec["timestamp"] = static_cast<long long>(event.timestamp);
    else
        rec["timestamp"] = event.timestamp;
    rec["topic_id"] = event.topic_id;
    rec["object_order"] = event.object_order;
    rec["duration_s"] = event.duration;
    return rec.dump();
}

std::string format_attribute_record(const std::string& session_id, const std::string& attr, const std::string& value) {
    ordered_json rec;
    rec["type"] = "attr";
    rec["session_id"] = session_id;
    rec["attr"] = attr;
    rec["value"] = value;
    return rec.dump();
}

std::string GroupSpec::label_for(const std::string& value) const {
    if (threshold) {
        double v = 0.0;
        const char* first = value.data();
        const char* last = value.data() + value.size();
        auto [ptr, ec] = std::from_chars(first, last, v);
        if (ec != std::errc() || ptr != last)
            throw SegmentationError("attribute '" + attribute + "' value '" + value + "' is not numeric");
        return v < *threshold ? below_label : above_label;
    }
    if (auto it = categories.find(value); it != categories.end()) return it->second;
    if (other_label) return *other_label;
    throw SegmentationError("attribute '" + attribute + "' value '" + value + "' has no group and no 'other' bucket");
}

std::map<std::string, SessionSet> segment_groups(const SessionSet& set, const GroupSpec& spec) {
    std::map<std::string, SessionSet> groups;
    std::vector<std::string> unmapped;
    for (const auto& s : set.sessions) {
        auto it = s.profile.static_attributes.find(spec.attribute);
        if (it == s.profile.static_attributes.end())
            throw SegmentationError("session " + s.session_id + " has no attribute '" + spec.attribute + "'");
        std::string label;
        try {
            label = spec.label_for(it->second);
        } catch (const SegmentationError&) {
            if (std::find(unmapped.begin(), unmapped.end(), it->second) == unmapped.end())
                unmapped.push_back(it->second);
            continue;
        }
        auto [git, inserted] = groups.try_emplace(label);
        if (inserted) {
            git->second.group_label = label;
            git->second.n_states = set.n_states;
            git->second.n_actions = set.n_actions;
            git->second.schema = set.schema;
        }
        git->second.sessions.push_back(s);
    }
    if (!unmapped.empty()) {
        std::string msg = "unmapped values for attribute '" + spec.attribute + "':";
        for (const auto& v : unmapped) msg += " '" + v + "'";
        throw SegmentationError(msg);
    }
    return groups;
}

TransitionModel estimate_transitions(const SessionSet& set, double smoothing) {
    if (set.empty()) throw EstimationError("cannot estimate transitions from an empty session set");
    if (smoothing < 0.0) throw ConfigurationError("smoothing must be non-negative");
    const std::size_t n = set.n_states;
    const std::size_t m = set.n_actions;
    std::vector<double> counts(n * m * n, 0.0);
    std::vector<double> totals(n * m, 0.0);
    std::vector<bool> observed(m, false);
    for (const auto& sess : set.sessions) {
        for (std::size_t t = 0; t + 1 < sess.state_seq.size(); ++t) {
            const auto s = sess.state_seq[t];
            const auto a = sess.action_seq[t];
            const auto next = sess.state_seq[t + 1];
            if (s >= n || next >= n || a >= m) throw EstimationError("session " + sess.session_id + " has out-of-range indices");
            counts[(s * m + a) * n + next] += 1.0;
            totals[s * m + a] += 1.0;
            observed[a] = true;
        }
    }
    auto consistent = [&](ActionIndex a, StateIndex next) {
        return !set.schema || set.schema->topic_of(next) == a;
    };
    std::vector<std::size_t> n_consistent(m, 0);
    for (std::size_t a = 0; a < m; ++a)
        for (std::size_t j = 0; j < n; ++j) n_consistent[a] += consistent(a, j) ? 1 : 0;

    std::vector<double> probs(n * m * n, 0.0);
    std::vector<bool> support(n * m, false);
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t a = 0; a < m; ++a) {
            const std::size_t sa = s * m + a;
            const bool on = totals[sa] > 0.0 || (smoothing > 0.0 && observed[a]);
            if (!on) continue;
            support[sa] = true;
            const double denom = totals[sa] + smoothing * static_cast<double>(n_consistent[a]);
            for (std::size_t j = 0; j < n; ++j)
                if (consistent(a, j)) probs[sa * n + j] = (counts[sa * n + j] + smoothing) / denom;
        }
    return TransitionModel(n, m, std::move(probs), std::move(support));
}

Eigen::VectorXd estimate_initial_distribution(const SessionSet& set) {
    if (set.empty()) throw EstimationError("cannot estimate the initial distribution from an empty session set");
    Eigen::VectorXd d0 = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(set.n_states));
    std::size_t used = 0;
    for (const auto& s : set.sessions) {
        if (s.state_seq.empty()) continue;
        d0(static_cast<Eigen::Index>(s.state_seq.front())) += 1.0;
        ++used;
    }
    if (used == 0) throw EstimationError("no session has a first state");
    return d0 / static_cast<double>(used);
}

Mdp estimate_mdp(const SessionSet& set, double smoothing, double discount, std::size_t horizon) {
    Mdp mdp;
    if (set.schema) {
        mdp.states = set.schema->state_space();
        mdp.actions = set.schema->action_space();
    } else {
        mdp.states = StateSpace::numbered(set.n_states);
        mdp.actions = ActionSpace::numbered(set.n_actions);
    }
    mdp.transitions = estimate_transitions(set, smoothing);
    mdp.initial_dist = estimate_initial_distribution(set);
    mdp.discount = discount;
    mdp.horizon = horizon == 0 ? std::max<std::size_t>(1, set.max_length()) : horizon;
    return mdp;
}

std::string sessions_to_json(const SessionSet& set, const DropReport& drops) {
    ordered_json doc;
    doc["n_states"] = set.n_states;
    doc["n_actions"] = set.n_actions;
    if (set.group_label) doc["group_label"] = *set.group_label;
    if (set.schema) {
        const auto& sc = *set.schema;
        doc["schema"] = {{"n_topics", sc.n_topics},
                         {"n_objects", sc.n_objects},
                         {"n_bins", sc.n_bins},
                         {"bin_edges", sc.bin_edges},
                         {"required_attributes", sc.required_attributes},
                         {"topic_names", sc.topic_names}};
    }
    doc["drops"] = ordered_json::object();
    for (const auto& [reason, c] : drops.counts) doc["drops"][reason] = c;
    ordered_json arr = ordered_json::array();
    for (const auto& s : set.sessions) {
        ordered_json rec;
        rec["session_id"] = s.session_id;
        rec["attributes"] = s.profile.static_attributes;
        rec["states"] = s.state_seq;
        rec["actions"] = s.action_seq;
        arr.push_back(std::move(rec));
    }
    doc["sessions"] = std::move(arr);
    return doc.dump() + "\n";
}

SessionSet sessions_from_json(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        SessionSet set;
        set.n_states = doc.at("n_states").get<std::size_t>();
        set.n_actions = doc.at("n_actions").get<std::size_t>();
        if (doc.contains("group_label")) set.group_label = doc["group_label"].get<std::string>();
        if (doc.contains("schema")) {
            const auto& j = doc["schema"];
            SchemaConfig sc;
            sc.n_topics = j.at("n_topics").get<std::size_t>();
            sc.n_objects = j.at("n_objects").get<std::size_t>();
            sc.n_bins = j.at("n_bins").get<std::size_t>();
            sc.bin_edges = j.at("bin_edges").get<std::vector<double>>();
            sc.required_attributes = j.at("required_attributes").get<std::vector<std::string>>();
            sc.topic_names = j.at("topic_names").get<std::vector<std::string>>();
            sc.validate();
            set.schema = sc;
        }
        for (const auto& rec : doc.at("sessions")) {
            Session s;
            s.session_id = rec.at("session_id").get<std::string>();
            s.profile = {s.session_id, rec.at("attributes").get<std::map<std::string, std::string>>()};
            s.state_seq = rec.at("states").get<std::vector<StateIndex>>();
            s.action_seq = rec.at("actions").get<std::vector<ActionIndex>>();
            if (s.state_seq.empty() || s.action_seq.size() + 1 != s.state_seq.size())
                throw ParseError("session " + s.session_id + " has inconsistent state/action sequences");
            set.sessions.push_back(std::move(s));
        }
        return set;
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed sessions file: ") + e.what());
    }
}

}  // namespace userreward
