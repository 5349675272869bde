#include "pinalite/obfuscator.hpp"

#include <algorithm>
#include <set>

#include "pinalite/errors.hpp"
#include "pinalite/privacy_hash.hpp"

namespace pinalite {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(LocationKind kind) {
  switch (kind) {
    case LocationKind::QUERY_STRING: return "QUERY_STRING";
    case LocationKind::PARAMETER_VALUE: return "PARAMETER_VALUE";
    case LocationKind::SNAPSHOT_TEXT: return "SNAPSHOT_TEXT";
    case LocationKind::CONDITION_LITERAL: return "CONDITION_LITERAL";
  }
  return "?";
}

std::string EntryLocation::describe(const Script& s) const {
  struct Visitor {
    const Script& s;
    std::string operator()(const QuerySlot& q) const {
      std::string out = "target_query";
      for (std::size_t i = 0; i < q.path.size(); ++i) out += (i ? "." : "/") + std::to_string(q.path[i]);
      return out;
    }
    std::string operator()(const TextArgSlot&) const { return "text_arg"; }
    std::string operator()(const ParameterSlot& p) const {
      std::string name = p.parameter < s.parameters.size() ? s.parameters[p.parameter].name : "?";
      return "parameter:" + name + "[" + std::to_string(p.value) + "]";
    }
    std::string operator()(const SnapshotSlot& sn) const {
      return "snapshot:" + sn.element_id + (sn.predicate == Predicate::HAS_TEXT ? ".text" : ".content_desc");
    }
    std::string operator()(const ConditionSlot& c) const { return "condition/" + std::to_string(c.ordinal); }
  };
  return std::visit(Visitor{s}, detail);
}

// ---------------------------------------------------------------------------
// Scanning

namespace {

// Visits every literal operand of a condition in preorder, lhs before rhs.
template <typename Cond, typename F>
void for_each_literal(Cond& c, F&& f, std::size_t& ordinal) {
  if (c.kind == Condition::Kind::Compare) {
    for (auto* o : {&c.comparison.lhs, &c.comparison.rhs}) {
      if (auto* l = std::get_if<Label>(o)) f(*l, ordinal);
      if (std::holds_alternative<Label>(*o)) ++ordinal;
    }
    return;
  }
  for (auto& sub : c.operands) for_each_literal(sub, f, ordinal);
}

class Scanner {
 public:
  explicit Scanner(const Script& s) : s_(s) {}

  std::vector<EntryLocation> run() {
    BlockPath prefix;
    walk(s_.blocks, prefix);
    for (std::size_t i = 0; i < s_.parameters.size(); ++i) {
      const Parameter& p = s_.parameters[i];
      const Operation* op = top_level_op(s_, p.bound_op);
      AppContext ctx = op && op->snapshot ? op->snapshot->context : kScriptContext;
      for (std::size_t v = 0; v < p.possible_values.size(); ++v) {
        const Label& l = p.possible_values[v];
        if (l.hidden || is_blank(l.value)) continue;
        out_.push_back({LocationKind::PARAMETER_VALUE, {p.bound_op}, ParameterSlot{i, v}, ctx, l.value});
      }
    }
    return std::move(out_);
  }

 private:
  void walk(const std::vector<Block>& blocks, BlockPath& prefix) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      prefix.push_back(i);
      if (const auto* op = std::get_if<Operation>(&blocks[i].node)) {
        operation(*op, prefix);
      } else {
        const auto& c = std::get<Conditional>(blocks[i].node);
        const AppContext ctx = last_context_.value_or(kScriptContext);
        std::size_t ordinal = 0;
        for_each_literal(
            c.condition,
            [&](const Label& l, std::size_t n) {
              if (!l.hidden && !is_blank(l.value))
                out_.push_back({LocationKind::CONDITION_LITERAL, prefix, ConditionSlot{n}, ctx, l.value});
            },
            ordinal);
        prefix.push_back(0);
        walk(c.then_blocks, prefix);
        prefix.pop_back();
        if (c.else_blocks) {
          prefix.push_back(1);
          walk(*c.else_blocks, prefix);
          prefix.pop_back();
        }
      }
      prefix.pop_back();
    }
  }

  void operation(const Operation& op, const BlockPath& path) {
    if (op.snapshot) last_context_ = op.snapshot->context;
    const AppContext ctx = op.snapshot ? op.snapshot->context : last_context_.value_or(kScriptContext);
    if (op.target_query) {
      for (const StringRef& r : string_refs(*op.target_query)) {
        if (!is_blank(r.value)) out_.push_back({LocationKind::QUERY_STRING, path, QuerySlot{r.path}, ctx, r.value});
      }
    }
    if (op.text_arg && !op.text_arg->hidden && !is_blank(op.text_arg->value))
      out_.push_back({LocationKind::QUERY_STRING, path, TextArgSlot{}, ctx, op.text_arg->value});
    if (op.snapshot) {
      visit_elements(op.snapshot->root, [&](const UiElement& el) {
        for (auto [label, pred] : {std::pair{&el.text, Predicate::HAS_TEXT},
                                   std::pair{&el.content_description, Predicate::HAS_CONTENT_DESCRIPTION}}) {
          if (*label && !(*label)->hidden && !is_blank((*label)->value))
            out_.push_back({LocationKind::SNAPSHOT_TEXT, path, SnapshotSlot{el.element_id, pred}, ctx, (*label)->value});
        }
      });
    }
  }

  const Script& s_;
  std::vector<EntryLocation> out_;
  std::optional<AppContext> last_context_;
};

}  // namespace

std::vector<EntryLocation> scan(const Script& s) { return Scanner(s).run(); }

// ---------------------------------------------------------------------------
// Classification

std::size_t ObfuscationReport::public_count() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const ClassifiedEntry& e) { return e.final_public(); }));
}

std::size_t ObfuscationReport::personal_count() const { return entries.size() - public_count(); }

const ClassifiedEntry* ObfuscationReport::find(const AppContext& ctx, const std::string& content) const {
  for (const auto& e : entries) {
    if (e.context == ctx && e.content == content) return &e;
  }
  return nullptr;
}

ClassifiedEntry* ObfuscationReport::find(std::size_t entry_id) {
  if (entry_id == 0 || entry_id > entries.size()) return nullptr;
  return &entries[entry_id - 1];
}

ObfuscationReport classify(const Script& s, AggregationClient& client) {
  ObfuscationReport report;
  report.script_name = s.name;
  std::map<std::pair<AppContext, std::string>, std::size_t> index;
  for (EntryLocation& loc : scan(s)) {
    auto key = std::make_pair(loc.context, loc.content);
    auto [it, inserted] = index.emplace(key, report.entries.size());
    if (inserted) {
      ClassifiedEntry e;
      e.entry_id = report.entries.size() + 1;
      e.context = loc.context;
      e.content = loc.content;
      report.entries.push_back(std::move(e));
    }
    report.entries[it->second].locations.push_back(std::move(loc));
  }

  std::vector<UniquenessQuery> queries;
  queries.reserve(report.entries.size());
  for (const auto& e : report.entries)
    queries.push_back({client_hash_context(e.context), client_hash_pair(e.context, e.content)});
  auto results = client.uniqueness(queries);
  for (std::size_t i = 0; i < results.size(); ++i) {
    report.entries[i].verdict = results[i].verdict;
    report.entries[i].salted_hash = results[i].salted_pair_hash.hex();
  }
  return report;
}

void apply_override(ObfuscationReport& report, std::size_t entry_id, std::optional<bool> value) {
  ClassifiedEntry* e = report.find(entry_id);
  if (!e) throw ValidationError("unknown entry_id " + std::to_string(entry_id));
  e->override_public = value;
}

void apply_overrides(ObfuscationReport& report, const json& overrides) {
  if (!overrides.is_object()) throw ValidationError("overrides: expected {\"<entry_id>\": bool}");
  for (const auto& [key, value] : overrides.items()) {
    std::size_t id = 0;
    try {
      std::size_t used = 0;
      id = std::stoul(key, &used);
      if (used != key.size()) throw std::invalid_argument(key);
    } catch (const std::exception&) {
      throw ValidationError("overrides: '" + key + "' is not an entry id");
    }
    if (value.is_null()) {
      apply_override(report, id, std::nullopt);
    } else if (value.is_boolean()) {
      apply_override(report, id, value.get<bool>());
    } else {
      throw ValidationError("overrides." + key + ": expected boolean or null");
    }
  }
}

ordered_json report_to_json(const ObfuscationReport& report, const Script& s) {
  ordered_json j;
  j["script"] = report.script_name;
  ordered_json entries = ordered_json::array();
  for (const auto& e : report.entries) {
    ordered_json ej;
    ej["entry_id"] = e.entry_id;
    ej["content"] = e.content;
    ej["context"] = {{"package", e.context.package_name}, {"activity", e.context.activity_name}};
    ordered_json locs = ordered_json::array();
    for (const auto& l : e.locations) {
      ordered_json lj;
      lj["kind"] = std::string(to_string(l.kind));
      lj["block"] = format_path(l.block);
      lj["slot"] = l.describe(s);
      locs.push_back(std::move(lj));
    }
    ej["locations"] = std::move(locs);
    ej["f"] = e.verdict.f;
    ej["g"] = e.verdict.g;
    ej["p_value"] = e.verdict.p_value;
    ej["public"] = e.verdict.is_public;
    if (e.override_public) ej["override"] = *e.override_public;
    ej["final_public"] = e.final_public();
    ej["salted_hash"] = e.salted_hash;
    entries.push_back(std::move(ej));
  }
  j["entries"] = std::move(entries);
  j["counts"] = {{"public", report.public_count()}, {"personal", report.personal_count()}};
  return j;
}

// ---------------------------------------------------------------------------
// Obfuscation

namespace {

UiElement* find_mutable(UiElement& root, const std::string& id) {
  if (root.element_id == id) return &root;
  for (auto& c : root.children) {
    if (auto* hit = find_mutable(c, id)) return hit;
  }
  return nullptr;
}

Conditional* conditional_at(Script& s, const BlockPath& path) {
  std::vector<Block>* blocks = &s.blocks;
  for (std::size_t i = 0; i < path.size(); i += 2) {
    if (path[i] >= blocks->size()) return nullptr;
    auto* c = std::get_if<Conditional>(&(*blocks)[path[i]].node);
    if (!c) return nullptr;
    if (i + 1 == path.size()) return c;
    if (i + 2 >= path.size()) return nullptr;
    if (path[i + 1] == 0) {
      blocks = &c->then_blocks;
    } else if (path[i + 1] == 1 && c->else_blocks) {
      blocks = &*c->else_blocks;
    } else {
      return nullptr;
    }
  }
  return nullptr;
}

void hide(Script& s, const EntryLocation& loc, const std::string& hash) {
  auto fail = [&] { throw Error("internal: location " + format_path(loc.block) + " does not resolve"); };
  if (const auto* p = std::get_if<ParameterSlot>(&loc.detail)) {
    s.parameters.at(p->parameter).possible_values.at(p->value) = Label::hashed(hash);
    return;
  }
  if (const auto* c = std::get_if<ConditionSlot>(&loc.detail)) {
    Conditional* cond = conditional_at(s, loc.block);
    if (!cond) fail();
    std::size_t ordinal = 0;
    bool done = false;
    for_each_literal(
        cond->condition,
        [&](Label& l, std::size_t n) {
          if (n == c->ordinal) {
            l = Label::hashed(hash);
            done = true;
          }
        },
        ordinal);
    if (!done) fail();
    return;
  }
  Operation* op = operation_at(s, loc.block);
  if (!op) fail();
  if (const auto* q = std::get_if<QuerySlot>(&loc.detail)) {
    Query* node = op->target_query ? query_at(*op->target_query, q->path) : nullptr;
    const auto* eq = node ? std::get_if<q::PropertyEq>(&node->node) : nullptr;
    if (!eq) fail();
    *node = q::hidden(eq->predicate, hash);
  } else if (std::holds_alternative<TextArgSlot>(loc.detail)) {
    op->text_arg = Label::hashed(hash);
  } else if (const auto* sn = std::get_if<SnapshotSlot>(&loc.detail)) {
    UiElement* el = op->snapshot ? find_mutable(op->snapshot->root, sn->element_id) : nullptr;
    if (!el) fail();
    (sn->predicate == Predicate::HAS_TEXT ? el->text : el->content_description) = Label::hashed(hash);
  }
}

// Keys whose values are vocabulary, identifiers or machine data rather than
// screen or user content.
const std::set<std::string> kStructuralKeys = {"version", "type", "kind", "class", "view_id", "package",
                                               "activity", "cmp", "var", "variable", "id", "hash"};

void collect_strings(const ordered_json& j, const std::string& key, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) collect_strings(v, k, out);
  } else if (j.is_array()) {
    for (const auto& v : j) collect_strings(v, key, out);
  } else if (j.is_string()) {
    if (key == "target_query" || key == "alt_query") {
      for (const StringRef& r : string_refs(parse_query(j.get<std::string>()))) out.push_back(r.value);
    } else if (!kStructuralKeys.contains(key)) {
      out.push_back(j.get<std::string>());
    }
  }
}

}  // namespace

void leak_sweep(const SharedScript& shared, const ObfuscationReport& report) {
  std::set<std::string> public_contents;
  for (const auto& e : report.entries) {
    if (e.final_public()) public_contents.insert(e.content);
  }
  std::map<std::string, std::size_t> secrets;  // content -> entry id
  for (const auto& e : report.entries) {
    if (!e.final_public() && !public_contents.contains(e.content)) secrets.emplace(e.content, e.entry_id);
  }

  // Slot level: every plaintext slot left must be final-public in its context.
  for (const EntryLocation& loc : scan(shared.body)) {
    const ClassifiedEntry* e = report.find(loc.context, loc.content);
    if (!e || !e->final_public())
      throw LeakError("plaintext personal entry left at " + format_path(loc.block) + " " + loc.describe(shared.body));
  }

  // Byte level: no content string of the serialized document may carry a
  // secret, except inside a string that is itself public.
  std::vector<std::string> strings;
  collect_strings(script_to_json(shared.body, kSharedVersion), "", strings);
  for (const std::string& s : strings) {
    if (public_contents.contains(s)) continue;
    for (const auto& [secret, id] : secrets) {
      if (s.find(secret) != std::string::npos)
        throw LeakError("serialized shared script still contains personal entry " + std::to_string(id));
    }
  }
}

ObfuscationResult obfuscate(const Script& s, const ObfuscationReport& report) {
  ObfuscationResult result;
  Script out = s;
  const auto locations = scan(s);

  std::map<AppContext, std::set<std::string>> personal_by_context;
  for (const EntryLocation& loc : locations) {
    const ClassifiedEntry* e = report.find(loc.context, loc.content);
    if (!e) throw ValidationError("report does not cover '" + loc.describe(s) + "' at " + format_path(loc.block));
    if (e->final_public()) continue;
    if (e->salted_hash.empty()) throw ValidationError("entry " + std::to_string(e->entry_id) + " has no salted hash");
    personal_by_context[loc.context].insert(loc.content);
    hide(out, loc, e->salted_hash);
  }

  for (const auto& [path, op] : all_operations(s)) {
    if (!targets_element(op->kind) || !op->target_query || !op->snapshot) continue;
    Operation* target = operation_at(out, path);
    const std::string where = "blocks[" + format_path(path) + "]";
    UiSnapshotGraph g = build_graph(*op->snapshot);
    auto hits = evaluate(*op->target_query, g);
    if (hits.size() != 1) {
      target->alt_query.reset();
      result.warnings.push_back(where + ": recorded query does not identify one element on its snapshot");
      continue;
    }
    try {
      target->alt_query = synthesize_alternative(g, hits.front(), personal_by_context[op->snapshot->context]);
    } catch (const SynthesisError& e) {
      target->alt_query.reset();
      result.warnings.push_back(where + ": " + e.what());
    }
  }

  result.shared = SharedScript{std::move(out)};
  leak_sweep(result.shared, report);
  return result;
}

}  // namespace pinalite
