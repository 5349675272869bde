#include "pinalite/executor.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>

#include "pinalite/errors.hpp"

namespace pinalite {

using nlohmann::json;

// ---------------------------------------------------------------------------
// SimulatedApp

void SimulatedApp::validate() const {
  if (!screens.contains(initial)) throw ValidationError("app: initial screen '" + initial + "' not defined");
  for (std::size_t i = 0; i < transitions.size(); ++i) {
    const auto& t = transitions[i];
    const std::string at = "app.transitions[" + std::to_string(i) + "]";
    if (!screens.contains(t.from)) throw ValidationError(at + ".from: unknown screen '" + t.from + "'");
    if (!screens.contains(t.to)) throw ValidationError(at + ".to: unknown screen '" + t.to + "'");
    if (!find_element(screens.at(t.from).root, t.element))
      throw ValidationError(at + ".element: '" + t.element + "' not on screen '" + t.from + "'");
  }
}

std::optional<std::string> SimulatedApp::next(const std::string& from, const std::string& element,
                                              ActionKind action) const {
  for (const auto& t : transitions) {
    if (t.from == from && t.element == element && t.action == action) return t.to;
  }
  return std::nullopt;
}

SimulatedApp SimulatedApp::from_json(const json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ParseError("app: expected object");
  SimulatedApp app;
  try {
    app.package = j.at("package").get<std::string>();
    app.initial = j.at("initial").get<std::string>();
    for (const auto& [name, value] : j.at("screens").items()) {
      const std::string at = "app.screens." + name;
      if (value.is_string()) {
        auto file = std::filesystem::path(base_dir) / value.get<std::string>();
        app.screens.emplace(name, load_screen_file(file.string()));
      } else {
        try {
          app.screens.emplace(name, load_screen(value));
        } catch (const ParseError& e) {
          throw ParseError(at + "." + e.what());
        }
      }
    }
    if (auto t = j.find("transitions"); t != j.end()) {
      for (std::size_t i = 0; i < t->size(); ++i) {
        const json& tj = (*t)[i];
        Transition tr;
        tr.from = tj.at("from").get<std::string>();
        tr.element = tj.at("element").get<std::string>();
        std::string action = tj.value("action", std::string("CLICK"));
        auto kind = action_kind_from_string(action);
        if (!kind) throw ParseError("app.transitions[" + std::to_string(i) + "].action: unknown kind '" + action + "'");
        tr.action = *kind;
        tr.to = tj.at("to").get<std::string>();
        app.transitions.push_back(std::move(tr));
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("app: ") + e.what());
  }
  app.validate();
  return app;
}

SimulatedApp SimulatedApp::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open app file " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path + ": not valid JSON");
  return from_json(j, std::filesystem::path(path).parent_path().string());
}

// ---------------------------------------------------------------------------
// Screen comparison

namespace {

using StructTriple = std::tuple<std::string, Predicate, std::string>;

std::set<StructTriple> structural_triples(const UiSnapshotGraph& g) {
  std::map<std::string, std::string> path;
  path[g.root()] = "";
  // Entities are in document order, so a parent's path is known before its children.
  for (const std::string& e : g.entities()) {
    auto children = g.objects(e, Predicate::HAS_CHILD);
    std::sort(children.begin(), children.end(),
              [&](const std::string& a, const std::string& b) { return g.order_of(a) < g.order_of(b); });
    for (std::size_t i = 0; i < children.size(); ++i) path[children[i]] = path[e] + "/" + std::to_string(i);
  }
  std::set<StructTriple> out;
  for (const Triple& t : g.triples()) {
    const std::string& s = path[t.subject];
    switch (t.predicate) {
      case Predicate::HAS_CLASS_NAME:
      case Predicate::HAS_VIEW_ID:
      case Predicate::IS_CLICKABLE:
      case Predicate::IS_SCROLLABLE:
      case Predicate::IS_FOCUSED:
      case Predicate::IS_ENABLED:
        out.emplace(s, t.predicate, t.object);
        break;
      case Predicate::HAS_CHILD:
        out.emplace(s, t.predicate, path[t.object]);
        break;
      default:
        break;
    }
  }
  return out;
}

}  // namespace

double structural_similarity(const UiSnapshotGraph& a, const UiSnapshotGraph& b) {
  auto sa = structural_triples(a);
  auto sb = structural_triples(b);
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& t : sa) common += sb.contains(t);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

ScreenMatch screen_match(const UiSnapshotGraph& current, const UiSnapshotGraph& stored, double threshold) {
  ScreenMatch m;
  m.similarity = structural_similarity(current, stored);
  m.same_screen = current.context() == stored.context() && m.similarity >= threshold;
  return m;
}

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::NO_MATCH: return "NO_MATCH";
    case FailureKind::AMBIGUOUS: return "AMBIGUOUS";
    case FailureKind::WRONG_SCREEN: return "WRONG_SCREEN";
    case FailureKind::NEEDS_INPUT: return "NEEDS_INPUT";
  }
  return "?";
}

std::vector<std::string> ExecutionTrace::element_sequence() const {
  std::vector<std::string> out;
  for (const auto& e : events) {
    if (e.element && !e.failure) out.push_back(*e.element);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Rebuilding

namespace {

std::string slot_name(const QueryPath& path) {
  std::string out = "target_query";
  for (std::size_t i = 0; i < path.size(); ++i) out += (i ? "." : "/") + std::to_string(path[i]);
  return out;
}

bool mentions_hidden(const Query& q) { return contains_hidden(q); }

// Fills hidden slots of `q` so that it describes `entity` on `g`. Returns
// false when some slot cannot be resolved.
bool resolve(Query& q, const UiSnapshotGraph& g, const std::string& entity, QueryPath& path,
             std::vector<Rebuild>& out) {
  if (auto* h = std::get_if<q::HiddenPropertyEq>(&q.node)) {
    auto value = g.literal(entity, h->predicate);
    if (!value) return false;
    out.push_back({slot_name(path), h->salted_hash, *value});
    q = Query{q::PropertyEq{h->predicate, *value}};
    return true;
  }
  if (auto* c = std::get_if<q::Conj>(&q.node)) {
    for (std::size_t i = 0; i < c->terms.size(); ++i) {
      path.push_back(i);
      bool ok = resolve(c->terms[i], g, entity, path, out);
      path.pop_back();
      if (!ok) return false;
    }
    return true;
  }
  if (auto* r = std::get_if<q::Rel>(&q.node)) {
    if (!mentions_hidden(*r->inner)) return true;
    path.push_back(0);
    for (const std::string& other : g.objects(entity, r->predicate)) {
      Query attempt = *r->inner;
      std::vector<Rebuild> found;
      if (!resolve(attempt, g, other, path, found)) continue;
      auto hits = evaluate(attempt, g);
      if (std::find(hits.begin(), hits.end(), other) == hits.end()) continue;
      *r->inner = std::move(attempt);
      out.insert(out.end(), found.begin(), found.end());
      path.pop_back();
      return true;
    }
    path.pop_back();
    return false;
  }
  if (auto* n = std::get_if<q::Nth>(&q.node)) {
    if (!mentions_hidden(*n->inner)) return true;
    path.push_back(0);
    bool ok = resolve(*n->inner, g, entity, path, out);
    path.pop_back();
    if (!ok) return false;
    auto hits = evaluate(*n->inner, g);
    auto it = std::find(hits.begin(), hits.end(), entity);
    if (it == hits.end()) return false;
    n->index = static_cast<std::size_t>(it - hits.begin()) + 1;
    return true;
  }
  return true;
}

bool screen_has_hidden(const Screen& s) {
  bool hidden = false;
  visit_elements(s.root, [&](const UiElement& el) {
    hidden = hidden || (el.text && el.text->hidden) || (el.content_description && el.content_description->hidden);
  });
  return hidden;
}

std::vector<Label> sibling_values(const Screen& screen, const std::string& element_id) {
  const UiElement* el = find_element(screen.root, element_id);
  const UiElement* parent = find_parent(screen.root, element_id);
  std::vector<Label> out;
  if (!el) return out;
  if (!parent) {
    if (el->text && !el->text->hidden && !is_blank(el->text->value)) out.push_back(*el->text);
    return out;
  }
  for (const auto& sib : parent->children) {
    if (sib.class_name == el->class_name && sib.text && !sib.text->hidden && !is_blank(sib.text->value))
      out.push_back(*sib.text);
  }
  return out;
}

// Index of the HAS_TEXT slot a parameter drives: the first text ref whose
// value is among the possible values.
std::optional<StringRef> parameter_slot(const Query& q, const Parameter& p) {
  for (const StringRef& r : string_refs(q)) {
    if (r.predicate != Predicate::HAS_TEXT) continue;
    for (const Label& v : p.possible_values) {
      if (!v.hidden && v.value == r.value) return r;
    }
  }
  return std::nullopt;
}

void set_slot(Query& q, const StringRef& ref, const std::string& value) {
  Query* node = query_at(q, ref.path);
  auto* eq = node ? std::get_if<q::PropertyEq>(&node->node) : nullptr;
  if (!eq) throw Error("internal: parameter slot does not resolve");
  eq->value = value;
}

class Executor {
 public:
  Executor(const Script& s, const SimulatedApp& app, const ExecutorOptions& opt)
      : app_(app), opt_(opt), current_(app.initial) {
    result_.rebuilt = s;
  }

  ExecutionResult run() {
    BlockPath prefix;
    result_.trace.completed = blocks(result_.rebuilt.blocks, prefix);
    return std::move(result_);
  }

 private:
  // Returns false once an operation failed.
  bool blocks(std::vector<Block>& bs, BlockPath& prefix) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      prefix.push_back(i);
      bool ok = true;
      if (auto* op = std::get_if<Operation>(&bs[i].node)) {
        ok = operation(*op, prefix);
      } else {
        auto& c = std::get<Conditional>(bs[i].node);
        if (condition(c.condition)) {
          prefix.push_back(0);
          ok = blocks(c.then_blocks, prefix);
          prefix.pop_back();
        } else if (c.else_blocks) {
          prefix.push_back(1);
          ok = blocks(*c.else_blocks, prefix);
          prefix.pop_back();
        }
      }
      prefix.pop_back();
      if (!ok) return false;
    }
    return true;
  }

  std::string operand(const Operand& o) const {
    if (const auto* v = std::get_if<Variable>(&o)) {
      auto it = result_.variables.find(v->name);
      if (it == result_.variables.end()) throw ExecutionError("condition references unbound variable '" + v->name + "'");
      return it->second;
    }
    const Label& l = std::get<Label>(o);
    if (l.hidden) throw ExecutionError("condition compares against a hidden value");
    return l.value;
  }

  bool condition(const Condition& c) const {
    switch (c.kind) {
      case Condition::Kind::Compare:
        return compare_values(c.comparison.op, operand(c.comparison.lhs), operand(c.comparison.rhs));
      case Condition::Kind::And:
        return std::all_of(c.operands.begin(), c.operands.end(), [&](const Condition& x) { return condition(x); });
      case Condition::Kind::Or:
        return std::any_of(c.operands.begin(), c.operands.end(), [&](const Condition& x) { return condition(x); });
    }
    return false;
  }

  const Parameter* bound_parameter(const BlockPath& path, std::size_t* index = nullptr) {
    if (path.size() != 1) return nullptr;
    for (std::size_t i = 0; i < result_.rebuilt.parameters.size(); ++i) {
      if (result_.rebuilt.parameters[i].bound_op == path[0]) {
        if (index) *index = i;
        return &result_.rebuilt.parameters[i];
      }
    }
    return nullptr;
  }

  bool fail(TraceEvent& ev, FailureKind kind, std::string note) {
    ev.failure = kind;
    ev.note = std::move(note);
    result_.trace.events.push_back(std::move(ev));
    return false;
  }

  bool operation(Operation& op, const BlockPath& path) {
    TraceEvent ev;
    ev.op = path;
    ev.kind = op.kind;
    ev.screen = current_;

    if (op.kind == ActionKind::PAUSE) {
      ev.note = op.wait_for_user ? "wait for user" : "pause " + std::to_string(op.duration_s.value_or(0)) + " s";
      result_.trace.events.push_back(std::move(ev));
      return true;
    }
    if (op.kind == ActionKind::LAUNCH) return launch(op, ev);

    const Screen& screen = app_.screens.at(current_);
    const UiSnapshotGraph g = build_graph(screen);
    if (op.snapshot) {
      ScreenMatch m = screen_match(g, build_graph(*op.snapshot), opt_.same_screen_threshold);
      ev.similarity = m.similarity;
      if (!m.same_screen) return fail(ev, FailureKind::WRONG_SCREEN, "current screen differs from the recorded one");
    }
    if (!op.target_query) return fail(ev, FailureKind::NO_MATCH, "operation has no target query");

    std::vector<std::string> hits;
    const bool hidden = contains_hidden(*op.target_query);
    if (!hidden) hits = evaluate(*op.target_query, g);
    std::optional<Query> rebuilt_query;
    if ((hidden || hits.empty()) && op.alt_query && opt_.use_alt_queries) {
      hits = evaluate(*op.alt_query, g);
      ev.used_alt = true;
      if (hits.size() == 1 && hidden) {
        Query q = *op.target_query;
        QueryPath qp;
        if (!resolve(q, g, hits.front(), qp, ev.rebuilt))
          return fail(ev, FailureKind::NO_MATCH, "hidden slot has no counterpart on this screen");
        rebuilt_query = std::move(q);
      }
    }
    if (hits.size() != 1)
      return fail(ev, hits.empty() ? FailureKind::NO_MATCH : FailureKind::AMBIGUOUS,
                  std::to_string(hits.size()) + " elements match");
    std::string element = hits.front();

    // Consumer-local values: the bound parameter takes this screen's options.
    std::size_t pindex = 0;
    if (const Parameter* p = bound_parameter(path, &pindex); p && ev.used_alt) {
      result_.rebuilt.parameters[pindex].possible_values = sibling_values(screen, element);
    }
    if (rebuilt_query) op.target_query = std::move(rebuilt_query);
    if (op.snapshot && screen_has_hidden(*op.snapshot)) op.snapshot = screen;

    if (const Parameter* p = bound_parameter(path); p && opt_.parameter_choices.contains(p->name)) {
      const std::string& choice = opt_.parameter_choices.at(p->name);
      auto slot = parameter_slot(*op.target_query, *p);
      bool listed = std::any_of(p->possible_values.begin(), p->possible_values.end(),
                                [&](const Label& l) { return !l.hidden && l.value == choice; });
      if (!slot || !listed) return fail(ev, FailureKind::NO_MATCH, "value '" + choice + "' is not offered here");
      set_slot(*op.target_query, *slot, choice);
      auto chosen = evaluate(*op.target_query, g);
      if (chosen.size() != 1)
        return fail(ev, chosen.empty() ? FailureKind::NO_MATCH : FailureKind::AMBIGUOUS, "parameter choice");
      element = chosen.front();
    }
    ev.element = element;

    const UiElement* el = find_element(screen.root, element);
    auto text = el && el->text && !el->text->hidden ? std::optional<std::string>(el->text->value) : std::nullopt;
    switch (op.kind) {
      case ActionKind::SET_TEXT: {
        if (op.text_arg && op.text_arg->hidden) {
          auto it = opt_.inputs.find(op.text_arg->value);
          if (it == opt_.inputs.end())
            return fail(ev, FailureKind::NEEDS_INPUT, "hidden text " + op.text_arg->value + " needs a value from the consumer");
          ev.rebuilt.push_back({"text_arg", op.text_arg->value, it->second});
          op.text_arg = Label::plain(it->second);
        }
        ev.value = op.text_arg ? op.text_arg->value : "";
        break;
      }
      case ActionKind::READ_OUT:
        ev.value = text.value_or("");
        break;
      case ActionKind::EXTRACT_VALUE:
        ev.value = text.value_or("");
        if (op.variable_name) result_.variables[*op.variable_name] = *ev.value;
        break;
      default:
        break;
    }
    if (auto to = app_.next(current_, element, op.kind)) current_ = *to;
    result_.trace.events.push_back(std::move(ev));
    return true;
  }

  bool launch(const Operation& op, TraceEvent& ev) {
    if (!op.app || op.app->package_name != app_.package)
      return fail(ev, FailureKind::WRONG_SCREEN, "app '" + (op.app ? op.app->package_name : "") + "' not installed");
    std::string target = app_.initial;
    if (app_.screens.at(target).context != *op.app) {
      for (const auto& [name, screen] : app_.screens) {
        if (screen.context == *op.app) {
          target = name;
          break;
        }
      }
    }
    current_ = target;
    ev.screen = target;
    result_.trace.events.push_back(std::move(ev));
    return true;
  }

  const SimulatedApp& app_;
  const ExecutorOptions& opt_;
  std::string current_;
  ExecutionResult result_;
};

}  // namespace

ExecutionResult execute(const Script& script, const SimulatedApp& app, const ExecutorOptions& options) {
  app.validate();
  return Executor(script, app, options).run();
}

Script substitute_parameter(const Script& script, const std::string& name, const std::string& value) {
  Script out = script;
  for (const Parameter& p : out.parameters) {
    if (p.name != name) continue;
    bool listed = std::any_of(p.possible_values.begin(), p.possible_values.end(),
                              [&](const Label& l) { return !l.hidden && l.value == value; });
    if (!listed) throw ValidationError("value '" + value + "' is not a possible value of parameter '" + name + "'");
    Operation* op = top_level_op(out, p.bound_op);
    if (!op || !op->target_query) throw ValidationError("parameter '" + name + "' is not bound to a query");
    if (contains_hidden(*op->target_query))
      throw ValidationError("parameter '" + name + "' is bound to a hidden query; rebuild the script first");
    auto slot = parameter_slot(*op->target_query, p);
    if (!slot) throw ValidationError("bound query of parameter '" + name + "' has no parameter slot");
    set_slot(*op->target_query, *slot, value);
    return out;
  }
  throw ValidationError("unknown parameter '" + name + "'");
}

std::string trace_to_jsonl(const ExecutionTrace& trace) {
  std::string out;
  for (const auto& e : trace.events) {
    nlohmann::ordered_json j;
    j["op"] = format_path(e.op);
    j["kind"] = std::string(to_string(e.kind));
    j["screen"] = e.screen;
    if (e.element) j["element"] = *e.element;
    if (e.used_alt) j["alt"] = true;
    if (e.failure) j["failure"] = std::string(to_string(*e.failure));
    if (e.similarity) j["similarity"] = *e.similarity;
    if (!e.rebuilt.empty()) {
      auto arr = nlohmann::ordered_json::array();
      for (const auto& r : e.rebuilt)
        arr.push_back({{"slot", r.slot}, {"old_hidden_hash", r.old_hidden_hash}, {"new_plaintext", r.new_plaintext}});
      j["rebuilt"] = std::move(arr);
    }
    if (e.value) j["value"] = *e.value;
    if (!e.note.empty()) j["note"] = e.note;
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace pinalite
