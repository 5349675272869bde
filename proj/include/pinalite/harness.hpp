#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pinalite/executor.hpp"
#include "pinalite/obfuscator.hpp"
#include "pinalite/privacy_hash.hpp"
#include "pinalite/script.hpp"

namespace pinalite {

/// Synthetic app description: screens whose text fields are either constant
/// (public) or templates sampled per user (personal).
///
/// Element fields as in screen files, except that bounds are laid out
/// automatically, "text"/"content_desc" may be {"personal": "...{d4}", "key": k}
/// or {"public": "..."}, and "hidden_for_users" lists 0-based user indexes
/// that do not see the element ("shown_to_users" is the inverse). "layout": "horizontal" puts children side by side.
struct SyntheticAppSpec {
  std::string name;
  std::string package;
  std::string initial;
  /// name -> {"activity", "root"}
  nlohmann::json screens;
  nlohmann::json transitions;
  /// {"name", "events": [{action, screen, target, typed_text?, menu_choice?, parameter?, ...}]}
  nlohmann::json task;

  static SyntheticAppSpec from_json(const nlohmann::json& j);
  static SyntheticAppSpec load_file(const std::filesystem::path& path);
};

struct UserWorld {
  UserId user;
  std::map<std::string, Screen> screens;
  /// Sampled personal values by template key.
  std::map<std::string, std::string> values;
  /// Ground truth per (context, content): true = personal.
  std::map<std::pair<AppContext, std::string>, bool> truth;
  /// Typed text per task event index.
  std::map<std::size_t, std::string> typed;
  std::map<std::size_t, bool> typed_personal;
};

struct Population {
  std::vector<UserWorld> users;
};

/// Deterministic under `seed`. Personal values are unique across the whole
/// population and never equal a public string. Throws ValidationError for
/// n_users == 0 and Error when sampling keeps colliding.
Population gen_population(const SyntheticAppSpec& spec, std::size_t n_users, std::uint64_t seed);

SimulatedApp app_for(const SyntheticAppSpec& spec, const UserWorld& world);
DemoTrace task_trace(const SyntheticAppSpec& spec, const UserWorld& world);

/// Writes user<i>/screens/<name>.json, user<i>/app.json and user<i>/trace.json
/// (screens referenced by file) for every user, plus truth.json mapping
/// user → [{package, activity, content, personal}].
void write_population(const SyntheticAppSpec& spec, const Population& pop, const std::filesystem::path& dir);

/// Deterministic 64-byte salt for reproducible runs.
Salt seeded_salt(std::uint64_t seed);

struct EvalRow {
  std::size_t entry_id = 0;
  AppContext context;
  std::string content;
  bool truth_personal = false;
  bool classified_personal = false;
  UniquenessVerdict verdict;
};

struct EvalResult {
  std::string app;
  std::size_t n = 0;
  std::size_t n_personal = 0;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double recall = 1.0;
  double precision = 1.0;  // 1.0 by convention when nothing is classified personal
  double accuracy = 1.0;
  std::vector<EvalRow> rows;
};

/// Fresh in-process server; every user ingests every screen; user 0 records
/// the task; entries of the script are classified and scored (positive =
/// classified personal).
EvalResult run_eval(const SyntheticAppSpec& spec, std::size_t n_users, double t, std::uint64_t seed = 1);

std::string format_eval_table(const std::vector<EvalResult>& results);
nlohmann::ordered_json eval_to_json(const std::vector<EvalResult>& results);

/// Hidden hashes in `shared` guessed from candidates without the server salt:
/// plain SHA-512, client pair hash per context, and the client hash salted
/// with an all-zero key. Returns the number of hits.
std::size_t dictionary_attack_sim(const SharedScript& shared, const std::vector<std::string>& candidate_pool);

/// Every hidden hash in a shared script (query slots, labels, parameters, literals).
std::vector<std::string> hidden_hashes(const Script& s);

struct E2EOptions {
  std::size_t n_users = 5;
  /// Index of the consumer in the population (the author is user 0).
  std::size_t consumer = 1;
  /// Extra attacker candidates on top of the planted strings.
  std::vector<std::string> attack_pool;
};

struct E2EResult {
  bool pass = false;
  std::vector<std::string> failures;

  Script recorded;
  ObfuscationReport report;
  std::string shared_text;
  std::vector<std::string> warnings;
  std::vector<std::string> planted;
  std::vector<std::string> payloads;
  std::string state_file;
  ExecutionResult replay;    // author script on the author's app
  ExecutionResult consumer;  // shared script on the consumer's app
  ExecutionResult rerun;     // rebuilt script on the consumer's app, alt queries off
  std::vector<std::string> consumer_menu;
  std::size_t leak_hits = 0;
  std::size_t attack_matches = 0;
};

/// Ingest → record → classify → share → leak scans → consumer rebuild and
/// run → re-run without alt queries → dictionary attack. `work_dir` holds the
/// server state file.
E2EResult e2e_scenario(const SyntheticAppSpec& spec, std::uint64_t seed, const std::filesystem::path& work_dir,
                       const E2EOptions& options = {});

/// Occurrences of `needle` (raw or JSON-escaped) in `haystack`.
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

}  // namespace pinalite
