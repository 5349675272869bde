#include "pinalite/script.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include "pinalite/errors.hpp"

namespace pinalite {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

constexpr std::pair<ActionKind, std::string_view> kKinds[] = {
    {ActionKind::CLICK, "CLICK"},         {ActionKind::LONG_CLICK, "LONG_CLICK"},
    {ActionKind::SET_TEXT, "SET_TEXT"},   {ActionKind::READ_OUT, "READ_OUT"},
    {ActionKind::EXTRACT_VALUE, "EXTRACT_VALUE"}, {ActionKind::PAUSE, "PAUSE"},
    {ActionKind::LAUNCH, "LAUNCH"},
};

constexpr std::pair<Comparator, std::string_view> kComparators[] = {
    {Comparator::EQ, "="}, {Comparator::NE, "!="}, {Comparator::LT, "<"},
    {Comparator::GT, ">"}, {Comparator::LE, "<="}, {Comparator::GE, ">="},
};

}  // namespace

std::string_view to_string(ActionKind kind) {
  for (const auto& [k, s] : kKinds) {
    if (k == kind) return s;
  }
  return "?";
}

std::optional<ActionKind> action_kind_from_string(std::string_view s) {
  for (const auto& [k, name] : kKinds) {
    if (name == s) return k;
  }
  return std::nullopt;
}

bool targets_element(ActionKind kind) {
  return kind != ActionKind::PAUSE && kind != ActionKind::LAUNCH;
}

std::string_view to_string(Comparator c) {
  for (const auto& [k, s] : kComparators) {
    if (k == c) return s;
  }
  return "?";
}

const Operation* top_level_op(const Script& s, std::size_t index) {
  if (index >= s.blocks.size()) return nullptr;
  return std::get_if<Operation>(&s.blocks[index].node);
}

Operation* top_level_op(Script& s, std::size_t index) {
  if (index >= s.blocks.size()) return nullptr;
  return std::get_if<Operation>(&s.blocks[index].node);
}

namespace {

void collect_ops(const std::vector<Block>& blocks, BlockPath& prefix,
                 std::vector<std::pair<BlockPath, const Operation*>>& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    prefix.push_back(i);
    if (const auto* op = std::get_if<Operation>(&blocks[i].node)) {
      out.emplace_back(prefix, op);
    } else {
      const auto& c = std::get<Conditional>(blocks[i].node);
      prefix.push_back(0);
      collect_ops(c.then_blocks, prefix, out);
      prefix.pop_back();
      if (c.else_blocks) {
        prefix.push_back(1);
        collect_ops(*c.else_blocks, prefix, out);
        prefix.pop_back();
      }
    }
    prefix.pop_back();
  }
}

}  // namespace

std::vector<std::pair<BlockPath, const Operation*>> all_operations(const Script& s) {
  std::vector<std::pair<BlockPath, const Operation*>> out;
  BlockPath prefix;
  collect_ops(s.blocks, prefix, out);
  return out;
}

Operation* operation_at(Script& s, const BlockPath& path) {
  std::vector<Block>* blocks = &s.blocks;
  for (std::size_t i = 0; i < path.size(); i += 2) {
    if (path[i] >= blocks->size()) return nullptr;
    Block& b = (*blocks)[path[i]];
    if (i + 1 == path.size()) return std::get_if<Operation>(&b.node);
    auto* c = std::get_if<Conditional>(&b.node);
    if (!c || i + 2 >= path.size()) return nullptr;
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

std::string format_path(const BlockPath& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (i) out += '.';
    out += std::to_string(path[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Recording

namespace {

std::optional<std::string> plain_text(const UiElement& el) {
  if (el.text && !el.text->hidden && !is_blank(el.text->value)) return el.text->value;
  return std::nullopt;
}

bool identifies(const Query& q, const UiSnapshotGraph& g, std::string_view target) {
  auto r = evaluate(q, g);
  return r.size() == 1 && r.front() == target;
}

Query with_ordinal(const Query& q, const UiSnapshotGraph& g, std::string_view target) {
  auto r = evaluate(q, g);
  auto it = std::find(r.begin(), r.end(), target);
  return q::nth(static_cast<std::size_t>(it - r.begin()) + 1, q);
}

Query text_description(const UiSnapshotGraph& g, std::string_view target, const std::string& cls,
                       const std::string& text) {
  Query c = q::conj({q::cls(cls), q::text(text)});
  if (identifies(c, g, target)) return c;
  return with_ordinal(c, g, target);
}

}  // namespace

Query default_description(const UiSnapshotGraph& g, std::string_view target) {
  auto cls = g.literal(target, Predicate::HAS_CLASS_NAME);
  if (!cls) throw RecordingError("element '" + std::string(target) + "' not on screen");
  if (auto text = g.literal(target, Predicate::HAS_TEXT); text && !is_blank(*text)) {
    Query c = q::conj({q::cls(*cls), q::text(*text)});
    if (identifies(c, g, target)) return c;
  }
  if (auto vid = g.literal(target, Predicate::HAS_VIEW_ID)) {
    Query v = q::view_id(*vid);
    if (identifies(v, g, target)) return v;
  }
  for (Predicate f : {Predicate::IS_CLICKABLE, Predicate::IS_FOCUSED, Predicate::IS_SCROLLABLE}) {
    if (!g.has(target, f)) continue;
    Query c = q::conj({q::cls(*cls), q::flag(f)});
    if (identifies(c, g, target)) return c;
  }
  Query base = g.has(target, Predicate::IS_CLICKABLE) ? q::conj({q::cls(*cls), q::flag(Predicate::IS_CLICKABLE)})
                                                       : q::cls(*cls);
  return with_ordinal(base, g, target);
}

Script record_from_trace(const DemoTrace& trace) {
  if (trace.events.empty()) throw RecordingError("trace has no events");
  Script s;
  s.name = trace.name;
  for (std::size_t i = 0; i < trace.events.size(); ++i) {
    const DemoEvent& ev = trace.events[i];
    const std::string where = "events[" + std::to_string(i) + "]";
    Operation op;
    op.kind = ev.action;
    if (targets_element(ev.action)) {
      if (!ev.screen) throw ValidationError(where + ": element action without screen");
      const UiElement* el = find_element(ev.screen->root, ev.target);
      if (!el) throw ValidationError(where + ": target '" + ev.target + "' not in screen");
      UiSnapshotGraph g = build_graph(*ev.screen);
      Query q;
      auto text = plain_text(*el);
      if (ev.menu_choice && text) {
        q = text_description(g, el->element_id, el->class_name, *text);
      } else {
        q = default_description(g, el->element_id);
      }
      if (!identifies(q, g, el->element_id))
        throw RecordingError(where + ": element '" + el->element_id + "' is ambiguous under every description");
      op.target_query = std::move(q);
      op.snapshot = *ev.screen;

      if (ev.menu_choice) {
        if (!text) throw RecordingError(where + ": menu choice '" + el->element_id + "' has no text");
        Parameter p;
        p.name = ev.parameter_name.value_or("param" + std::to_string(s.parameters.size() + 1));
        p.bound_op = s.blocks.size();
        const UiElement* parent = find_parent(ev.screen->root, el->element_id);
        if (parent) {
          for (const auto& sib : parent->children) {
            if (sib.class_name != el->class_name) continue;
            if (auto t = plain_text(sib)) p.possible_values.push_back(Label::plain(*t));
          }
        } else {
          p.possible_values.push_back(Label::plain(*text));
        }
        s.parameters.push_back(std::move(p));
      }
    }
    switch (ev.action) {
      case ActionKind::SET_TEXT:
        if (!ev.typed_text) throw ValidationError(where + ": SET_TEXT without typed_text");
        op.text_arg = Label::plain(*ev.typed_text);
        break;
      case ActionKind::EXTRACT_VALUE:
        op.variable_name = ev.variable_name.value_or("value" + std::to_string(i + 1));
        break;
      case ActionKind::PAUSE:
        if (ev.duration_s && *ev.duration_s > 0) {
          op.duration_s = ev.duration_s;
        } else {
          op.wait_for_user = true;
        }
        break;
      case ActionKind::LAUNCH:
        if (ev.app) {
          op.app = ev.app;
        } else if (ev.screen) {
          op.app = ev.screen->context;
        } else {
          throw ValidationError(where + ": LAUNCH without app");
        }
        break;
      default:
        break;
    }
    s.blocks.push_back(Block{std::move(op)});
  }
  return s;
}

namespace {

std::string require_string(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) throw ParseError(path + "." + key + ": missing or not a string");
  return it->get<std::string>();
}

AppContext parse_app(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected object");
  AppContext ctx{require_string(j, "package", path), require_string(j, "activity", path)};
  try {
    validate_context(ctx);
  } catch (const ValidationError& e) {
    throw ValidationError(path + ": " + e.what());
  }
  return ctx;
}

ordered_json app_to_json(const AppContext& ctx) {
  ordered_json j;
  j["package"] = ctx.package_name;
  j["activity"] = ctx.activity_name;
  return j;
}

ActionKind parse_kind(const json& obj, const char* key, const std::string& path) {
  std::string s = require_string(obj, key, path);
  auto k = action_kind_from_string(s);
  if (!k) throw ParseError(path + "." + key + ": unknown kind '" + s + "'");
  return *k;
}

Screen parse_screen_at(const json& j, const std::string& path) {
  try {
    return load_screen(j);
  } catch (const ParseError& e) {
    throw ParseError(path + "." + e.what());
  } catch (const ValidationError& e) {
    throw ValidationError(path + "." + e.what());
  }
}

}  // namespace

DemoTrace load_trace(const json& doc, const std::string& base_dir) {
  if (!doc.is_object()) throw ParseError("trace: expected object");
  DemoTrace t;
  t.name = doc.value("name", std::string("recorded script"));
  auto events = doc.find("events");
  if (events == doc.end() || !events->is_array()) throw ParseError("events: missing or not an array");
  for (std::size_t i = 0; i < events->size(); ++i) {
    const json& e = (*events)[i];
    const std::string path = "events[" + std::to_string(i) + "]";
    if (!e.is_object()) throw ParseError(path + ": expected object");
    DemoEvent ev;
    ev.action = parse_kind(e, "action", path);
    if (auto s = e.find("screen"); s != e.end()) {
      ev.screen = parse_screen_at(*s, path + ".screen");
    } else if (auto f = e.find("screen_file"); f != e.end()) {
      if (!f->is_string()) throw ParseError(path + ".screen_file: expected string");
      std::filesystem::path file = std::filesystem::path(base_dir) / f->get<std::string>();
      try {
        ev.screen = load_screen_file(file.string());
      } catch (const ParseError& err) {
        throw ParseError(path + ".screen_file: " + err.what());
      }
    }
    if (targets_element(ev.action)) ev.target = require_string(e, "target", path);
    if (auto v = e.find("typed_text"); v != e.end()) ev.typed_text = v->get<std::string>();
    ev.menu_choice = e.value("menu_choice", false);
    if (auto v = e.find("parameter"); v != e.end()) ev.parameter_name = v->get<std::string>();
    if (auto v = e.find("variable"); v != e.end()) ev.variable_name = v->get<std::string>();
    if (auto v = e.find("duration_s"); v != e.end()) ev.duration_s = v->get<double>();
    if (auto v = e.find("app"); v != e.end()) ev.app = parse_app(*v, path + ".app");
    t.events.push_back(std::move(ev));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Documents

namespace {

ordered_json operand_to_json(const Operand& o) {
  ordered_json j;
  if (const auto* v = std::get_if<Variable>(&o)) {
    j["var"] = v->name;
  } else {
    j["lit"] = label_to_json(std::get<Label>(o));
  }
  return j;
}

ordered_json condition_to_json(const Condition& c) {
  ordered_json j;
  if (c.kind == Condition::Kind::Compare) {
    j["cmp"] = std::string(to_string(c.comparison.op));
    j["lhs"] = operand_to_json(c.comparison.lhs);
    j["rhs"] = operand_to_json(c.comparison.rhs);
    return j;
  }
  ordered_json args = ordered_json::array();
  for (const auto& sub : c.operands) args.push_back(condition_to_json(sub));
  j[c.kind == Condition::Kind::And ? "and" : "or"] = std::move(args);
  return j;
}

ordered_json blocks_to_json(const std::vector<Block>& blocks, bool shared);

ordered_json op_to_json(const Operation& op, bool shared) {
  ordered_json j;
  j["type"] = "op";
  j["kind"] = std::string(to_string(op.kind));
  if (op.target_query) j["target_query"] = serialize_query(*op.target_query);
  if (op.alt_query) {
    j["alt_query"] = serialize_query(*op.alt_query);
  } else if (shared && targets_element(op.kind)) {
    j["alt_query"] = nullptr;
  }
  if (op.text_arg) j["text_arg"] = label_to_json(*op.text_arg);
  if (op.variable_name) j["variable"] = *op.variable_name;
  if (op.duration_s) j["duration_s"] = *op.duration_s;
  if (op.wait_for_user) j["wait_for_user"] = true;
  if (op.app) j["app"] = app_to_json(*op.app);
  if (op.snapshot) j["snapshot"] = screen_to_json(*op.snapshot);
  return j;
}

ordered_json blocks_to_json(const std::vector<Block>& blocks, bool shared) {
  ordered_json arr = ordered_json::array();
  for (const Block& b : blocks) {
    if (const auto* op = std::get_if<Operation>(&b.node)) {
      arr.push_back(op_to_json(*op, shared));
    } else {
      const auto& c = std::get<Conditional>(b.node);
      ordered_json j;
      j["type"] = "if";
      j["condition"] = condition_to_json(c.condition);
      j["then"] = blocks_to_json(c.then_blocks, shared);
      if (c.else_blocks) j["else"] = blocks_to_json(*c.else_blocks, shared);
      arr.push_back(std::move(j));
    }
  }
  return arr;
}

Operand parse_operand(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected {var} or {lit}");
  if (auto v = j.find("var"); v != j.end()) {
    if (!v->is_string()) throw ParseError(path + ".var: expected string");
    return Variable{v->get<std::string>()};
  }
  if (auto l = j.find("lit"); l != j.end()) return label_from_json(*l, path + ".lit");
  throw ParseError(path + ": expected {var} or {lit}");
}

Condition parse_condition(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected object");
  Condition c;
  for (const char* key : {"and", "or"}) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_array() || it->size() < 2) throw ParseError(path + "." + key + ": expected array of >= 2");
      c.kind = std::string_view(key) == "and" ? Condition::Kind::And : Condition::Kind::Or;
      for (std::size_t i = 0; i < it->size(); ++i)
        c.operands.push_back(parse_condition((*it)[i], path + "." + key + "[" + std::to_string(i) + "]"));
      return c;
    }
  }
  std::string cmp = require_string(j, "cmp", path);
  bool found = false;
  for (const auto& [k, s] : kComparators) {
    if (s == cmp) {
      c.comparison.op = k;
      found = true;
    }
  }
  if (!found) throw ParseError(path + ".cmp: unknown comparator '" + cmp + "'");
  if (!j.contains("lhs") || !j.contains("rhs")) throw ParseError(path + ": comparison needs lhs and rhs");
  c.comparison.lhs = parse_operand(j["lhs"], path + ".lhs");
  c.comparison.rhs = parse_operand(j["rhs"], path + ".rhs");
  return c;
}

std::optional<Query> parse_query_field(const json& obj, const char* key, const std::string& path) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  if (!it->is_string()) throw ParseError(path + "." + key + ": expected query text");
  try {
    Query q = parse_query(it->get<std::string>());
    validate_query(q);
    return q;
  } catch (const Error& e) {
    throw ParseError(path + "." + key + ": " + e.what());
  }
}

std::vector<Block> parse_blocks(const json& arr, const std::string& path);

Block parse_block(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected object");
  std::string type = require_string(j, "type", path);
  if (type == "op") {
    Operation op;
    op.kind = parse_kind(j, "kind", path);
    op.target_query = parse_query_field(j, "target_query", path);
    op.alt_query = parse_query_field(j, "alt_query", path);
    if (auto v = j.find("text_arg"); v != j.end() && !v->is_null()) op.text_arg = label_from_json(*v, path + ".text_arg");
    if (auto v = j.find("variable"); v != j.end() && !v->is_null()) {
      if (!v->is_string()) throw ParseError(path + ".variable: expected string");
      op.variable_name = v->get<std::string>();
    }
    if (auto v = j.find("duration_s"); v != j.end() && !v->is_null()) {
      if (!v->is_number()) throw ParseError(path + ".duration_s: expected number");
      op.duration_s = v->get<double>();
    }
    if (auto v = j.find("wait_for_user"); v != j.end()) {
      if (!v->is_boolean()) throw ParseError(path + ".wait_for_user: expected boolean");
      op.wait_for_user = v->get<bool>();
    }
    if (auto v = j.find("app"); v != j.end() && !v->is_null()) op.app = parse_app(*v, path + ".app");
    if (auto v = j.find("snapshot"); v != j.end() && !v->is_null())
      op.snapshot = parse_screen_at(*v, path + ".snapshot");
    return Block{std::move(op)};
  }
  if (type == "if") {
    Conditional c;
    if (!j.contains("condition")) throw ParseError(path + ".condition: missing");
    c.condition = parse_condition(j["condition"], path + ".condition");
    if (!j.contains("then")) throw ParseError(path + ".then: missing");
    c.then_blocks = parse_blocks(j["then"], path + ".then");
    if (auto e = j.find("else"); e != j.end() && !e->is_null()) c.else_blocks = parse_blocks(*e, path + ".else");
    return Block{std::move(c)};
  }
  throw ParseError(path + ".type: unknown block type '" + type + "'");
}

std::vector<Block> parse_blocks(const json& arr, const std::string& path) {
  if (!arr.is_array()) throw ParseError(path + ": expected array");
  std::vector<Block> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(parse_block(arr[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

Script parse_body(const json& doc) {
  Script s;
  s.name = require_string(doc, "name", "script");
  if (!doc.contains("blocks")) throw ParseError("blocks: missing");
  s.blocks = parse_blocks(doc["blocks"], "blocks");
  if (auto p = doc.find("parameters"); p != doc.end() && !p->is_null()) {
    if (!p->is_array()) throw ParseError("parameters: expected array");
    for (std::size_t i = 0; i < p->size(); ++i) {
      const json& pj = (*p)[i];
      const std::string path = "parameters[" + std::to_string(i) + "]";
      if (!pj.is_object()) throw ParseError(path + ": expected object");
      Parameter param;
      param.name = require_string(pj, "name", path);
      auto b = pj.find("bound_op");
      if (b == pj.end() || !b->is_number_unsigned()) throw ParseError(path + ".bound_op: expected index");
      param.bound_op = b->get<std::size_t>();
      auto v = pj.find("possible_values");
      if (v == pj.end() || !v->is_array()) throw ParseError(path + ".possible_values: expected array");
      for (std::size_t k = 0; k < v->size(); ++k)
        param.possible_values.push_back(label_from_json((*v)[k], path + ".possible_values[" + std::to_string(k) + "]"));
      s.parameters.push_back(std::move(param));
    }
  }
  return s;
}

json parse_document(std::string_view document) {
  try {
    json doc = json::parse(document);
    if (!doc.is_object()) throw ParseError("script: expected object");
    return doc;
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("script: ") + e.what());
  }
}

std::string document_version(const json& doc) {
  auto v = doc.find("version");
  if (v == doc.end() || !v->is_string()) throw ParseError("version: missing or not a string");
  return v->get<std::string>();
}

}  // namespace

ordered_json script_to_json(const Script& s, std::string_view version) {
  const bool shared = version == kSharedVersion;
  ordered_json j;
  j["version"] = std::string(version);
  j["name"] = s.name;
  j["blocks"] = blocks_to_json(s.blocks, shared);
  ordered_json params = ordered_json::array();
  for (const Parameter& p : s.parameters) {
    ordered_json pj;
    pj["name"] = p.name;
    pj["bound_op"] = p.bound_op;
    ordered_json values = ordered_json::array();
    for (const Label& v : p.possible_values) values.push_back(label_to_json(v));
    pj["possible_values"] = std::move(values);
    params.push_back(std::move(pj));
  }
  j["parameters"] = std::move(params);
  return j;
}

std::string serialize_script(const Script& s) { return script_to_json(s, kScriptVersion).dump(2) + "\n"; }

std::string serialize_shared(const SharedScript& s) { return script_to_json(s.body, kSharedVersion).dump(2) + "\n"; }

Script deserialize_any(std::string_view document, bool* shared) {
  json doc = parse_document(document);
  std::string version = document_version(doc);
  if (version != kScriptVersion && version != kSharedVersion)
    throw UnsupportedVersionError("unsupported script version '" + version + "'");
  if (shared) *shared = version == kSharedVersion;
  return parse_body(doc);
}

Script deserialize_script(std::string_view document) {
  bool shared = false;
  Script s = deserialize_any(document, &shared);
  if (shared) throw UnsupportedVersionError("expected pinalite-script/1, got a shared script");
  return s;
}

SharedScript deserialize_shared(std::string_view document) {
  bool shared = false;
  Script s = deserialize_any(document, &shared);
  if (!shared) throw UnsupportedVersionError("expected pinalite-shared/1, got a plain script");
  return SharedScript{std::move(s)};
}

// ---------------------------------------------------------------------------
// Validation

namespace {

void condition_variables(const Condition& c, std::vector<std::string>& out) {
  if (c.kind == Condition::Kind::Compare) {
    for (const Operand* o : {&c.comparison.lhs, &c.comparison.rhs}) {
      if (const auto* v = std::get_if<Variable>(o)) out.push_back(v->name);
    }
    return;
  }
  for (const auto& sub : c.operands) condition_variables(sub, out);
}

struct Validator {
  std::vector<Finding> findings;
  std::set<std::string> declared;

  void add(std::string where, std::string what) { findings.push_back({std::move(where), std::move(what)}); }

  void op(const Operation& op, const std::string& where) {
    if (targets_element(op.kind)) {
      if (!op.target_query) add(where, std::string(to_string(op.kind)) + " without target_query");
      if (!op.snapshot) add(where, std::string(to_string(op.kind)) + " without snapshot");
    }
    for (const auto* qp : {&op.target_query, &op.alt_query}) {
      if (!*qp) continue;
      try {
        validate_query(**qp);
      } catch (const ValidationError& e) {
        add(where, e.what());
      }
    }
    if (op.snapshot) {
      try {
        validate_context(op.snapshot->context);
      } catch (const ValidationError& e) {
        add(where + ".snapshot", e.what());
      }
    }
    switch (op.kind) {
      case ActionKind::SET_TEXT:
        if (!op.text_arg) add(where, "SET_TEXT without text_arg");
        break;
      case ActionKind::EXTRACT_VALUE:
        if (!op.variable_name) {
          add(where, "EXTRACT_VALUE without variable");
        } else {
          declared.insert(*op.variable_name);
        }
        break;
      case ActionKind::PAUSE:
        if (!op.wait_for_user && !(op.duration_s && *op.duration_s > 0))
          add(where, "PAUSE needs duration_s > 0 or wait_for_user");
        break;
      case ActionKind::LAUNCH:
        if (!op.app) add(where, "LAUNCH without app");
        break;
      default:
        break;
    }
  }

  void blocks(const std::vector<Block>& bs, const std::string& prefix) {
    for (std::size_t i = 0; i < bs.size(); ++i) {
      const std::string where = prefix + "[" + std::to_string(i) + "]";
      if (const auto* o = std::get_if<Operation>(&bs[i].node)) {
        op(*o, where);
        continue;
      }
      const auto& c = std::get<Conditional>(bs[i].node);
      std::vector<std::string> vars;
      condition_variables(c.condition, vars);
      for (const auto& v : vars) {
        if (!declared.contains(v)) add(where + ".condition", "variable '" + v + "' is not declared before use");
      }
      if (c.then_blocks.empty()) add(where + ".then", "empty then block");
      blocks(c.then_blocks, where + ".then");
      if (c.else_blocks) blocks(*c.else_blocks, where + ".else");
    }
  }
};

}  // namespace

std::vector<Finding> validate(const Script& s) {
  Validator v;
  if (s.blocks.empty()) v.add("blocks", "script has no blocks");
  for (const auto& p : s.parameters) v.declared.insert(p.name);
  v.blocks(s.blocks, "blocks");
  for (std::size_t i = 0; i < s.parameters.size(); ++i) {
    const Parameter& p = s.parameters[i];
    const std::string where = "parameters[" + std::to_string(i) + "]";
    if (p.possible_values.empty()) v.add(where, "parameter has no possible values");
    const Operation* op = top_level_op(s, p.bound_op);
    if (!op) {
      v.add(where, "bound_op " + std::to_string(p.bound_op) + " is not a top-level operation");
      continue;
    }
    if (!targets_element(op->kind)) {
      v.add(where, "parameter bound to " + std::string(to_string(op->kind)));
      continue;
    }
    if (!op->target_query || contains_hidden(*op->target_query)) continue;
    bool any_hidden = std::any_of(p.possible_values.begin(), p.possible_values.end(),
                                  [](const Label& l) { return l.hidden; });
    if (any_hidden) continue;
    bool linked = false;
    for (const StringRef& r : string_refs(*op->target_query)) {
      if (r.predicate != Predicate::HAS_TEXT) continue;
      for (const Label& l : p.possible_values) linked = linked || l.value == r.value;
    }
    if (!linked) v.add(where, "bound query has no text equal to a possible value");
  }
  return v.findings;
}

// ---------------------------------------------------------------------------

namespace {

std::optional<double> as_decimal(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::size_t i = 0;
  if (s[0] == '+' || s[0] == '-') ++i;
  std::size_t digits = 0;
  bool dot = false;
  for (; i < s.size(); ++i) {
    if (std::isdigit(static_cast<unsigned char>(s[i]))) {
      ++digits;
    } else if (s[i] == '.' && !dot) {
      dot = true;
    } else {
      return std::nullopt;
    }
  }
  if (digits == 0) return std::nullopt;
  return std::strtod(std::string(s).c_str(), nullptr);
}

template <typename T>
bool apply(Comparator op, const T& a, const T& b) {
  switch (op) {
    case Comparator::EQ: return a == b;
    case Comparator::NE: return a != b;
    case Comparator::LT: return a < b;
    case Comparator::GT: return a > b;
    case Comparator::LE: return a <= b;
    case Comparator::GE: return a >= b;
  }
  return false;
}

}  // namespace

bool compare_values(Comparator op, std::string_view lhs, std::string_view rhs) {
  auto a = as_decimal(lhs);
  auto b = as_decimal(rhs);
  if (a && b) return apply(op, *a, *b);
  return apply(op, lhs, rhs);
}

std::string describe_operation(const Operation& op) {
  std::string target = op.target_query ? describe_query(*op.target_query) : "the screen";
  std::string out;
  switch (op.kind) {
    case ActionKind::CLICK: out = "Click on " + target; break;
    case ActionKind::LONG_CLICK: out = "Long-click on " + target; break;
    case ActionKind::SET_TEXT: {
      std::string arg = !op.text_arg ? "" : op.text_arg->hidden ? "hidden text" : "\"" + op.text_arg->value + "\"";
      out = "Set " + target + " to " + arg;
      break;
    }
    case ActionKind::READ_OUT: out = "Read out " + target; break;
    case ActionKind::EXTRACT_VALUE: out = "Extract " + target + " as " + op.variable_name.value_or("value"); break;
    case ActionKind::PAUSE:
      out = op.wait_for_user ? "Pause until the user continues"
                             : "Pause for " + std::to_string(op.duration_s.value_or(0)) + " s";
      break;
    case ActionKind::LAUNCH: out = "Launch " + (op.app ? op.app->package_name : std::string("app")); break;
  }
  if (op.snapshot && targets_element(op.kind)) out += " in " + op.snapshot->context.package_name;
  return out;
}

}  // namespace pinalite
