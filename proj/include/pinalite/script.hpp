#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pinalite/query.hpp"
#include "pinalite/ui_model.hpp"

namespace pinalite {

enum class ActionKind { CLICK, LONG_CLICK, SET_TEXT, READ_OUT, EXTRACT_VALUE, PAUSE, LAUNCH };

std::string_view to_string(ActionKind kind);
std::optional<ActionKind> action_kind_from_string(std::string_view s);
/// CLICK, LONG_CLICK, SET_TEXT, READ_OUT and EXTRACT_VALUE act on an element.
bool targets_element(ActionKind kind);

struct Operation {
  ActionKind kind = ActionKind::CLICK;
  std::optional<Query> target_query;
  std::optional<Query> alt_query;
  std::optional<Label> text_arg;
  std::optional<std::string> variable_name;
  std::optional<double> duration_s;
  bool wait_for_user = false;
  std::optional<AppContext> app;
  std::optional<Screen> snapshot;

  bool operator==(const Operation&) const = default;
};

enum class Comparator { EQ, NE, LT, GT, LE, GE };

std::string_view to_string(Comparator c);

struct Variable {
  std::string name;
  bool operator==(const Variable&) const = default;
};

using Operand = std::variant<Variable, Label>;

struct Condition;

struct Comparison {
  Comparator op = Comparator::EQ;
  Operand lhs;
  Operand rhs;
  bool operator==(const Comparison&) const = default;
};

/// Boolean expression: a comparison, or and/or over sub-conditions.
struct Condition {
  enum class Kind { Compare, And, Or };
  Kind kind = Kind::Compare;
  Comparison comparison;
  std::vector<Condition> operands;

  bool operator==(const Condition&) const = default;
};

struct Block;

struct Conditional {
  Condition condition;
  std::vector<Block> then_blocks;
  std::optional<std::vector<Block>> else_blocks;

  bool operator==(const Conditional&) const;
};

struct Block {
  std::variant<Operation, Conditional> node;
  bool operator==(const Block&) const = default;
};

inline bool Conditional::operator==(const Conditional& o) const {
  return condition == o.condition && then_blocks == o.then_blocks && else_blocks == o.else_blocks;
}

struct Parameter {
  std::string name;
  /// Index into Script::blocks of the operation whose query it substitutes.
  std::size_t bound_op = 0;
  std::vector<Label> possible_values;

  bool operator==(const Parameter&) const = default;
};

struct Script {
  std::string name;
  std::vector<Block> blocks;
  std::vector<Parameter> parameters;

  bool operator==(const Script&) const = default;
};

/// A script ready to leave the author's device: personal slots replaced by
/// salted hashes and alternative queries attached.
struct SharedScript {
  Script body;
  bool operator==(const SharedScript&) const = default;
};

inline constexpr std::string_view kScriptVersion = "pinalite-script/1";
inline constexpr std::string_view kSharedVersion = "pinalite-shared/1";

/// Top-level block as operation, or nullptr.
const Operation* top_level_op(const Script& s, std::size_t index);
Operation* top_level_op(Script& s, std::size_t index);

using BlockPath = std::vector<std::size_t>;

/// Every operation in execution (pre-)order with its block path. Paths into
/// a Conditional use index 0 for then-blocks and 1 for else-blocks, e.g.
/// {2, 1, 0} is the first else-block op of block 2.
std::vector<std::pair<BlockPath, const Operation*>> all_operations(const Script& s);
Operation* operation_at(Script& s, const BlockPath& path);
std::string format_path(const BlockPath& path);

// -- recording ------------------------------------------------------------------

struct DemoEvent {
  ActionKind action = ActionKind::CLICK;
  std::optional<Screen> screen;
  std::string target;
  std::optional<std::string> typed_text;
  bool menu_choice = false;
  std::optional<std::string> parameter_name;
  std::optional<std::string> variable_name;
  std::optional<double> duration_s;
  std::optional<AppContext> app;
};

struct DemoTrace {
  std::string name;
  std::vector<DemoEvent> events;
};

/// `base_dir` resolves "screen_file" references.
DemoTrace load_trace(const nlohmann::json& document, const std::string& base_dir = ".");

/// Default description: unique class+text, else unique view id, else
/// class with flags, else an ordinal over class (+clickable).
Query default_description(const UiSnapshotGraph& graph, std::string_view target);

Script record_from_trace(const DemoTrace& trace);

// -- documents ------------------------------------------------------------------

nlohmann::ordered_json script_to_json(const Script& s, std::string_view version = kScriptVersion);
std::string serialize_script(const Script& s);
std::string serialize_shared(const SharedScript& s);

/// Accepts only kScriptVersion.
Script deserialize_script(std::string_view document);
SharedScript deserialize_shared(std::string_view document);
/// Accepts either version; reports which one through `shared`.
Script deserialize_any(std::string_view document, bool* shared = nullptr);

struct Finding {
  std::string location;
  std::string message;
  bool operator==(const Finding&) const = default;
};

std::vector<Finding> validate(const Script& s);

/// Numeric comparison when both sides parse as decimals, otherwise string.
bool compare_values(Comparator op, std::string_view lhs, std::string_view rhs);

std::string describe_operation(const Operation& op);

}  // namespace pinalite
