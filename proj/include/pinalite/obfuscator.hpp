#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "pinalite/query.hpp"
#include "pinalite/script.hpp"
#include "pinalite/server.hpp"

namespace pinalite {

enum class LocationKind { QUERY_STRING, PARAMETER_VALUE, SNAPSHOT_TEXT, CONDITION_LITERAL };

std::string_view to_string(LocationKind kind);

/// A literal inside an operation's target query.
struct QuerySlot {
  QueryPath path;
  bool operator==(const QuerySlot&) const = default;
};
/// SET_TEXT argument; reported as a query-string location.
struct TextArgSlot {
  bool operator==(const TextArgSlot&) const = default;
};
struct ParameterSlot {
  std::size_t parameter;
  std::size_t value;
  bool operator==(const ParameterSlot&) const = default;
};
struct SnapshotSlot {
  std::string element_id;
  Predicate predicate;  // HAS_TEXT or HAS_CONTENT_DESCRIPTION
  bool operator==(const SnapshotSlot&) const = default;
};
/// n-th literal operand (0-based, preorder, lhs before rhs) of a condition.
struct ConditionSlot {
  std::size_t ordinal;
  bool operator==(const ConditionSlot&) const = default;
};

using SlotDetail = std::variant<QuerySlot, TextArgSlot, ParameterSlot, SnapshotSlot, ConditionSlot>;

/// One string slot of a script, with the context it is classified in.
struct EntryLocation {
  LocationKind kind;
  /// Operation path; for conditions, the conditional's path; for parameters, the bound op.
  BlockPath block;
  SlotDetail detail;
  AppContext context;
  std::string content;

  bool operator==(const EntryLocation&) const = default;
  /// e.g. "snapshot:e4.text", "target_query/1", "parameter:account[0]".
  std::string describe(const Script& s) const;
};

/// Every plaintext, non-blank string slot of the script in block order,
/// parameters last. Hidden slots are skipped.
std::vector<EntryLocation> scan(const Script& s);

/// Condition literals have no screen of their own; they borrow the context of
/// the closest preceding operation with a snapshot, else this one.
inline const AppContext kScriptContext{"pinalite.script", "conditions"};

struct ClassifiedEntry {
  std::size_t entry_id = 0;
  AppContext context;
  std::string content;
  std::vector<EntryLocation> locations;
  UniquenessVerdict verdict;
  std::optional<bool> override_public;
  std::string salted_hash;

  bool final_public() const { return override_public.value_or(verdict.is_public); }
};

struct ObfuscationReport {
  std::string script_name;
  std::vector<ClassifiedEntry> entries;

  std::size_t public_count() const;
  std::size_t personal_count() const;
  const ClassifiedEntry* find(const AppContext& ctx, const std::string& content) const;
  ClassifiedEntry* find(std::size_t entry_id);
};

/// Dedupes scan() by (context, content), asks the server once, attaches
/// verdicts and salted hashes. Only hashes leave the process. Server errors
/// propagate: without verdicts nothing may be shared.
ObfuscationReport classify(const Script& s, AggregationClient& client);

/// `value` nullopt clears the override. Throws ValidationError on unknown id.
void apply_override(ObfuscationReport& report, std::size_t entry_id, std::optional<bool> value);
/// {"<entry_id>": bool} map as written by hand or by the review UI.
void apply_overrides(ObfuscationReport& report, const nlohmann::json& overrides);

nlohmann::ordered_json report_to_json(const ObfuscationReport& report, const Script& s);

struct ObfuscationResult {
  SharedScript shared;
  /// Operations left without alt_query, as "blocks[i]: reason".
  std::vector<std::string> warnings;
};

/// Replaces every final-personal slot by its salted hash, attaches
/// alternative queries, and sweeps the output for plaintext leaks
/// (LeakError). Slots not covered by the report are refused (ValidationError).
ObfuscationResult obfuscate(const Script& s, const ObfuscationReport& report);

/// The sweep used by obfuscate(), exposed for tests: throws LeakError naming
/// the first final-personal content still readable in `shared`.
void leak_sweep(const SharedScript& shared, const ObfuscationReport& report);

}  // namespace pinalite
