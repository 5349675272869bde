#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pinalite/script.hpp"

namespace pinalite {

/// Screen state machine standing in for a real app.
struct SimulatedApp {
  struct Transition {
    std::string from;
    std::string element;
    ActionKind action = ActionKind::CLICK;
    std::string to;
  };

  std::string package;
  std::map<std::string, Screen> screens;
  std::vector<Transition> transitions;
  std::string initial;

  /// Throws ValidationError when `initial` or a transition endpoint is unknown.
  void validate() const;
  std::optional<std::string> next(const std::string& from, const std::string& element, ActionKind action) const;

  /// {package, screens:{name: screen | "file.json"}, transitions:[{from, element, action, to}], initial}
  static SimulatedApp from_json(const nlohmann::json& j, const std::string& base_dir = ".");
  static SimulatedApp load_file(const std::string& path);
};

struct ScreenMatch {
  bool same_screen = false;
  double similarity = 0.0;
};

inline constexpr double kSameScreenThreshold = 0.6;

/// Jaccard index over structural triples (class, view id, flags, tree shape).
/// Nodes are identified by child-index path so ids and texts do not matter.
double structural_similarity(const UiSnapshotGraph& a, const UiSnapshotGraph& b);
ScreenMatch screen_match(const UiSnapshotGraph& current, const UiSnapshotGraph& stored,
                         double threshold = kSameScreenThreshold);

enum class FailureKind { NO_MATCH, AMBIGUOUS, WRONG_SCREEN, NEEDS_INPUT };
std::string_view to_string(FailureKind kind);

struct Rebuild {
  std::string slot;
  std::string old_hidden_hash;
  std::string new_plaintext;
};

struct TraceEvent {
  BlockPath op;
  ActionKind kind = ActionKind::CLICK;
  std::string screen;
  std::optional<std::string> element;
  bool used_alt = false;
  std::optional<FailureKind> failure;
  std::optional<double> similarity;
  std::vector<Rebuild> rebuilt;
  /// READ_OUT / EXTRACT_VALUE result, or the typed text.
  std::optional<std::string> value;
  std::string note;
};

struct ExecutionTrace {
  std::vector<TraceEvent> events;
  bool completed = false;

  /// Matched element ids of successful element operations, in order.
  std::vector<std::string> element_sequence() const;
};

struct ExecutorOptions {
  double same_screen_threshold = kSameScreenThreshold;
  /// Plaintext for hidden SET_TEXT arguments, keyed by the hidden hash.
  std::map<std::string, std::string> inputs;
  /// Consumer's choice per parameter name, applied after regeneration.
  std::map<std::string, std::string> parameter_choices;
  /// Off: behave as if no alt_query existed (used to check rebuilt scripts).
  bool use_alt_queries = true;
};

struct ExecutionResult {
  ExecutionTrace trace;
  /// Consumer-local copy with hidden slots of executed operations filled in.
  Script rebuilt;
  std::map<std::string, std::string> variables;
};

/// Runs `script` against `app`. The input is never modified. Element failures
/// end the run with a failure event; an unbound or hidden condition operand
/// throws ExecutionError.
ExecutionResult execute(const Script& script, const SimulatedApp& app, const ExecutorOptions& options = {});

/// Points the bound operation's text slot at `value`. Throws ValidationError
/// when the parameter is unknown, hidden, or `value` is not listed.
Script substitute_parameter(const Script& script, const std::string& name, const std::string& value);

/// One JSON object per line.
std::string trace_to_jsonl(const ExecutionTrace& trace);

}  // namespace pinalite
