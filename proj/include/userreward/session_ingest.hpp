#pragma once

#include "userreward/mdp.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace userreward {

/// Cardinalities and required attributes of the museum log schema. A state is
/// the triple (topic, object order, duration bin); the action taken before
/// entering a state is that state's topic.
struct SchemaConfig {
    std::size_t n_topics = 8;
    std::size_t n_objects = 3;
    std::size_t n_bins = 3;
    /// Upper (inclusive) edges of all bins but the last, in seconds.
    std::vector<double> bin_edges = {30.0, 90.0};
    std::vector<std::string> required_attributes = {"age"};
    std::vector<std::string> topic_names = {"appearance", "death", "religion", "architecture",
                                            "entertainment", "food", "trade", "army"};

    std::size_t n_states() const { return n_topics * n_objects * n_bins; }
    std::size_t n_actions() const { return n_topics; }
    std::size_t n_features() const { return n_topics + n_objects + n_bins; }

    /// Throws ConfigurationError for inconsistent cardinalities.
    void validate() const;

    std::size_t discretize_duration(double seconds) const;
    StateIndex encode_state(std::size_t topic, std::size_t object, std::size_t bin) const;

    struct Situation {
        std::size_t topic;
        std::size_t object;
        std::size_t bin;
    };
    Situation decode_state(StateIndex s) const;
    ActionIndex topic_of(StateIndex s) const { return decode_state(s).topic; }

    std::vector<std::string> feature_names() const;
    /// Concatenated one-hot(topic), one-hot(object), one-hot(bin) rows.
    FeatureMap feature_map() const;
    StateSpace state_space() const;
    ActionSpace action_space() const;
};

/// Bin index under the default schema: 0 for <= 30 s, 1 for <= 90 s, 2 above.
std::size_t discretize_duration(double seconds);

/// topic * 9 + object * 3 + bin under the default schema.
StateIndex encode_state(std::size_t topic, std::size_t object, std::size_t bin);

struct RawEvent {
    std::string session_id;
    double timestamp = 0.0;
    long topic_id = 0;
    long object_order = 0;
    double duration = 0.0;
};

struct UserProfile {
    std::string session_id;
    std::map<std::string, std::string> static_attributes;
};

struct Session {
    std::string session_id;
    UserProfile profile;
    std::vector<StateIndex> state_seq;
    /// action_seq[t] is the action taken in state_seq[t]; one shorter than state_seq.
    std::vector<ActionIndex> action_seq;

    std::size_t length() const { return state_seq.size(); }
};

struct SessionSet {
    std::vector<Session> sessions;
    std::optional<std::string> group_label;
    std::size_t n_states = 0;
    std::size_t n_actions = 0;
    /// Present when the sessions were encoded with the museum schema.
    std::optional<SchemaConfig> schema;

    std::size_t size() const { return sessions.size(); }
    bool empty() const { return sessions.empty(); }
    std::size_t max_length() const;
};

/// Drop reasons: "no_events", "missing_attribute".
struct DropReport {
    std::map<std::string, std::size_t> counts;

    std::size_t total() const;
    std::string to_json() const;
};

struct ParseIssue {
    std::string source;
    std::size_t line = 0;
    std::string message;
};

struct ParseResult {
    SessionSet sessions;
    DropReport drops;
    std::vector<ParseIssue> errors;
};

/// One JSON object per line:
///   {"type":"event","session_id":..,"timestamp":..,"topic_id":..,"object_order":..,"duration_s":..}
///   {"type":"attr","session_id":..,"attr":..,"value":..}
/// Malformed lines are collected in `errors`; a missing file throws Error.
ParseResult parse_sessions(const std::vector<std::filesystem::path>& paths, const SchemaConfig& schema = {});
ParseResult parse_sessions(const std::filesystem::path& path, const SchemaConfig& schema = {});
ParseResult parse_session_text(const std::string& text, const SchemaConfig& schema = {},
                               const std::string& source = "<memory>");

std::string format_event_record(const RawEvent& event);
std::string format_attribute_record(const std::string& session_id, const std::string& attr,
                                    const std::string& value);

/// Numeric threshold on an attribute (value < threshold -> below_label), or an
/// explicit value -> label map with an optional catch-all bucket.
struct GroupSpec {
    std::string attribute = "age";
    std::optional<double> threshold = 18.0;
    std::string below_label = "child";
    std::string above_label = "adult";
    std::map<std::string, std::string> categories;
    std::optional<std::string> other_label;

    std::string label_for(const std::string& value) const;
};

std::map<std::string, SessionSet> segment_groups(const SessionSet& set, const GroupSpec& spec);

/// Frequency estimate of P(s'|s,a) with optional additive smoothing restricted
/// to next states consistent with the action (same topic under the museum schema).
TransitionModel estimate_transitions(const SessionSet& set, double smoothing = 0.0);

Eigen::VectorXd estimate_initial_distribution(const SessionSet& set);

/// Empirical MDP for a session set; horizon 0 means "longest session".
Mdp estimate_mdp(const SessionSet& set, double smoothing, double discount, std::size_t horizon = 0);

/// Encoded-session file used between `ingest` and `fit`.
std::string sessions_to_json(const SessionSet& set, const DropReport& drops);
SessionSet sessions_from_json(const std::string& text);

}  // namespace userreward
