#include "pinalite/ui_model.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <unordered_set>

#include "pinalite/errors.hpp"

namespace pinalite {

using nlohmann::json;
using nlohmann::ordered_json;

void validate_context(const AppContext& ctx) {
  auto check = [](const std::string& field, const char* name) {
    if (field.empty()) throw ValidationError(std::string("app context ") + name + " is empty");
    if (field.find('\x1F') != std::string::npos)
      throw ValidationError(std::string("app context ") + name + " contains the 0x1F delimiter");
  };
  check(ctx.package_name, "package_name");
  check(ctx.activity_name, "activity_name");
}

std::string_view to_string(Predicate p) {
  switch (p) {
    case Predicate::HAS_CLASS_NAME: return "HAS_CLASS_NAME";
    case Predicate::HAS_TEXT: return "HAS_TEXT";
    case Predicate::HAS_CONTENT_DESCRIPTION: return "HAS_CONTENT_DESCRIPTION";
    case Predicate::HAS_VIEW_ID: return "HAS_VIEW_ID";
    case Predicate::HAS_SCREEN_LOCATION: return "HAS_SCREEN_LOCATION";
    case Predicate::IS_CLICKABLE: return "IS_CLICKABLE";
    case Predicate::IS_SCROLLABLE: return "IS_SCROLLABLE";
    case Predicate::IS_FOCUSED: return "IS_FOCUSED";
    case Predicate::IS_ENABLED: return "IS_ENABLED";
    case Predicate::HAS_PARENT: return "HAS_PARENT";
    case Predicate::HAS_CHILD: return "HAS_CHILD";
    case Predicate::ABOVE: return "ABOVE";
    case Predicate::BELOW: return "BELOW";
    case Predicate::LEFT: return "LEFT";
    case Predicate::RIGHT: return "RIGHT";
    case Predicate::CONTAINS_PRICE: return "CONTAINS_PRICE";
    case Predicate::CONTAINS_DATE: return "CONTAINS_DATE";
  }
  return "?";
}

bool is_flag(Predicate p) {
  return p == Predicate::IS_CLICKABLE || p == Predicate::IS_SCROLLABLE ||
         p == Predicate::IS_FOCUSED || p == Predicate::IS_ENABLED;
}

bool is_relation(Predicate p) {
  switch (p) {
    case Predicate::HAS_PARENT:
    case Predicate::HAS_CHILD:
    case Predicate::ABOVE:
    case Predicate::BELOW:
    case Predicate::LEFT:
    case Predicate::RIGHT:
      return true;
    default:
      return false;
  }
}

bool is_string_property(Predicate p) {
  return p == Predicate::HAS_TEXT || p == Predicate::HAS_CONTENT_DESCRIPTION;
}

bool is_blank(std::string_view s) {
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isspace(c) != 0; });
}

// ---------------------------------------------------------------------------
// UiSnapshotGraph

UiSnapshotGraph::UiSnapshotGraph(AppContext context, std::string root,
                                 std::vector<std::string> entities,
                                 std::vector<Triple> triples)
    : context_(std::move(context)),
      root_(std::move(root)),
      entities_(std::move(entities)),
      triples_(std::move(triples)) {
  std::sort(triples_.begin(), triples_.end());
  triples_.erase(std::unique(triples_.begin(), triples_.end()), triples_.end());
  for (std::size_t i = 0; i < entities_.size(); ++i) order_.emplace(entities_[i], i);
  by_subject_.resize(entities_.size());
  for (std::size_t i = 0; i < triples_.size(); ++i) {
    auto it = order_.find(triples_[i].subject);
    if (it != order_.end()) by_subject_[it->second].push_back(i);
  }
}

bool UiSnapshotGraph::contains(const Triple& t) const {
  return std::binary_search(triples_.begin(), triples_.end(), t);
}

std::optional<std::size_t> UiSnapshotGraph::order_of(std::string_view entity) const {
  auto it = order_.find(std::string(entity));
  if (it == order_.end()) return std::nullopt;
  return it->second;
}

std::vector<const Triple*> UiSnapshotGraph::outgoing(std::string_view entity) const {
  std::vector<const Triple*> out;
  if (auto idx = order_of(entity)) {
    for (std::size_t i : by_subject_[*idx]) out.push_back(&triples_[i]);
  }
  return out;
}

std::vector<std::string> UiSnapshotGraph::objects(std::string_view entity, Predicate p) const {
  std::vector<std::string> out;
  for (const Triple* t : outgoing(entity)) {
    if (t->predicate == p) out.push_back(t->object);
  }
  return out;
}

std::optional<std::string> UiSnapshotGraph::literal(std::string_view entity, Predicate p) const {
  for (const Triple* t : outgoing(entity)) {
    if (t->predicate == p && t->kind == ObjectKind::Literal) return t->object;
  }
  return std::nullopt;
}

bool UiSnapshotGraph::has(std::string_view entity, Predicate p) const {
  for (const Triple* t : outgoing(entity)) {
    if (t->predicate == p) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// Screen documents

namespace {

std::string child_path(const std::string& base, std::size_t i) {
  return base + ".children[" + std::to_string(i) + "]";
}

bool optional_bool(const json& obj, const char* key, const std::string& path, bool fallback) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return fallback;
  if (!it->is_boolean()) throw ParseError(path + "." + key + ": expected boolean");
  return it->get<bool>();
}

UiElement parse_element(const json& j, const std::string& path) {
  if (!j.is_object()) throw ParseError(path + ": expected object");
  UiElement el;
  auto cls = j.find("class");
  if (cls == j.end() || !cls->is_string()) throw ParseError(path + ".class: missing or not a string");
  el.class_name = cls->get<std::string>();
  if (auto id = j.find("id"); id != j.end() && !id->is_null()) {
    if (!id->is_string() || id->get<std::string>().empty())
      throw ParseError(path + ".id: expected non-empty string");
    el.element_id = id->get<std::string>();
  }
  if (auto t = j.find("text"); t != j.end() && !t->is_null())
    el.text = label_from_json(*t, path + ".text");
  if (auto t = j.find("content_desc"); t != j.end() && !t->is_null())
    el.content_description = label_from_json(*t, path + ".content_desc");
  if (auto v = j.find("view_id"); v != j.end() && !v->is_null()) {
    if (!v->is_string()) throw ParseError(path + ".view_id: expected string");
    el.view_id = v->get<std::string>();
  }
  auto b = j.find("bounds");
  if (b == j.end() || !b->is_array() || b->size() != 4)
    throw ParseError(path + ".bounds: expected [left, top, right, bottom]");
  for (const auto& v : *b) {
    if (!v.is_number_integer()) throw ParseError(path + ".bounds: expected integers");
  }
  el.bounds = Bounds{(*b)[0].get<int>(), (*b)[1].get<int>(), (*b)[2].get<int>(), (*b)[3].get<int>()};
  if (el.bounds.left > el.bounds.right || el.bounds.top > el.bounds.bottom)
    throw ValidationError(path + ".bounds: left <= right and top <= bottom required");
  el.clickable = optional_bool(j, "clickable", path, false);
  el.scrollable = optional_bool(j, "scrollable", path, false);
  el.focused = optional_bool(j, "focused", path, false);
  el.enabled = optional_bool(j, "enabled", path, true);
  if (auto c = j.find("children"); c != j.end() && !c->is_null()) {
    if (!c->is_array()) throw ParseError(path + ".children: expected array");
    for (std::size_t i = 0; i < c->size(); ++i) el.children.push_back(parse_element((*c)[i], child_path(path, i)));
  }
  return el;
}

void assign_ids(UiElement& root) {
  std::unordered_set<std::string> explicit_ids;
  std::vector<UiElement*> stack{&root};
  while (!stack.empty()) {
    UiElement* el = stack.back();
    stack.pop_back();
    if (!el->element_id.empty() && !explicit_ids.insert(el->element_id).second)
      throw ValidationError("duplicate element_id '" + el->element_id + "'");
    for (auto it = el->children.rbegin(); it != el->children.rend(); ++it) stack.push_back(&*it);
  }
  std::size_t ordinal = 0;
  auto assign = [&](auto& self, UiElement& el) -> void {
    ++ordinal;
    if (el.element_id.empty()) {
      el.element_id = "e" + std::to_string(ordinal);
      if (explicit_ids.contains(el.element_id))
        throw ValidationError("duplicate element_id '" + el.element_id + "' (collides with assigned id)");
    }
    for (auto& c : el.children) self(self, c);
  };
  assign(assign, root);
}

std::string bounds_literal(const Bounds& b) {
  return std::to_string(b.left) + "," + std::to_string(b.top) + "," + std::to_string(b.right) + "," +
         std::to_string(b.bottom);
}

}  // namespace

Label label_from_json(const json& j, const std::string& path) {
  if (j.is_string()) return Label::plain(j.get<std::string>());
  if (j.is_object() && j.value("hidden", false)) {
    auto h = j.find("hash");
    if (h == j.end() || !h->is_string()) throw ParseError(path + ".hash: missing hidden hash");
    return Label::hashed(h->get<std::string>());
  }
  throw ParseError(path + ": expected string or {hidden, hash}");
}

ordered_json label_to_json(const Label& label) {
  if (!label.hidden) return label.value;
  ordered_json j;
  j["hidden"] = true;
  j["hash"] = label.value;
  return j;
}

UiElement load_element_tree(const json& root) {
  UiElement el = parse_element(root, "root");
  assign_ids(el);
  return el;
}

Screen load_screen(const json& document) {
  if (!document.is_object()) throw ParseError("screen: expected object");
  Screen s;
  auto pkg = document.find("package");
  if (pkg == document.end() || !pkg->is_string()) throw ParseError("package: missing or not a string");
  auto act = document.find("activity");
  if (act == document.end() || !act->is_string()) throw ParseError("activity: missing or not a string");
  s.context = AppContext{pkg->get<std::string>(), act->get<std::string>()};
  validate_context(s.context);
  auto root = document.find("root");
  if (root == document.end()) throw ParseError("root: missing");
  s.root = load_element_tree(*root);
  return s;
}

Screen load_screen_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open screen file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return load_screen(doc);
}

ordered_json element_to_json(const UiElement& el) {
  ordered_json j;
  j["id"] = el.element_id;
  j["class"] = el.class_name;
  if (el.text) j["text"] = label_to_json(*el.text);
  if (el.content_description) j["content_desc"] = label_to_json(*el.content_description);
  if (el.view_id) j["view_id"] = *el.view_id;
  j["bounds"] = {el.bounds.left, el.bounds.top, el.bounds.right, el.bounds.bottom};
  if (el.clickable) j["clickable"] = true;
  if (el.scrollable) j["scrollable"] = true;
  if (el.focused) j["focused"] = true;
  if (!el.enabled) j["enabled"] = false;
  ordered_json children = ordered_json::array();
  for (const auto& c : el.children) children.push_back(element_to_json(c));
  j["children"] = std::move(children);
  return j;
}

ordered_json screen_to_json(const Screen& screen) {
  ordered_json j;
  j["package"] = screen.context.package_name;
  j["activity"] = screen.context.activity_name;
  j["root"] = element_to_json(screen.root);
  return j;
}

const UiElement* find_element(const UiElement& root, std::string_view element_id) {
  if (root.element_id == element_id) return &root;
  for (const auto& c : root.children) {
    if (const UiElement* hit = find_element(c, element_id)) return hit;
  }
  return nullptr;
}

const UiElement* find_parent(const UiElement& root, std::string_view element_id) {
  for (const auto& c : root.children) {
    if (c.element_id == element_id) return &root;
    if (const UiElement* hit = find_parent(c, element_id)) return hit;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Graph construction

namespace {

int overlap(int a0, int a1, int b0, int b1) { return std::min(a1, b1) - std::max(a0, b0); }

void add_label(std::vector<Triple>& out, const std::string& id, Predicate p, const Label& label) {
  out.push_back(Triple{id, p, label.value, label.hidden ? ObjectKind::HiddenLiteral : ObjectKind::Literal});
}

void emit(const UiElement& el, std::vector<std::string>& entities, std::vector<Triple>& out) {
  const std::string& id = el.element_id;
  entities.push_back(id);
  out.push_back({id, Predicate::HAS_CLASS_NAME, el.class_name, ObjectKind::Literal});
  if (el.text) add_label(out, id, Predicate::HAS_TEXT, *el.text);
  if (el.content_description) add_label(out, id, Predicate::HAS_CONTENT_DESCRIPTION, *el.content_description);
  if (el.view_id) out.push_back({id, Predicate::HAS_VIEW_ID, *el.view_id, ObjectKind::Literal});
  out.push_back({id, Predicate::HAS_SCREEN_LOCATION, bounds_literal(el.bounds), ObjectKind::Literal});
  if (el.clickable) out.push_back({id, Predicate::IS_CLICKABLE, "true", ObjectKind::Literal});
  if (el.scrollable) out.push_back({id, Predicate::IS_SCROLLABLE, "true", ObjectKind::Literal});
  if (el.focused) out.push_back({id, Predicate::IS_FOCUSED, "true", ObjectKind::Literal});
  if (el.enabled) out.push_back({id, Predicate::IS_ENABLED, "true", ObjectKind::Literal});

  for (const auto& c : el.children) {
    out.push_back({id, Predicate::HAS_CHILD, c.element_id, ObjectKind::Entity});
    out.push_back({c.element_id, Predicate::HAS_PARENT, id, ObjectKind::Entity});
  }
  // Spatial relations between siblings only.
  for (std::size_t i = 0; i < el.children.size(); ++i) {
    for (std::size_t j = 0; j < el.children.size(); ++j) {
      if (i == j) continue;
      const Bounds& a = el.children[i].bounds;
      const Bounds& b = el.children[j].bounds;
      const std::string& ai = el.children[i].element_id;
      const std::string& bi = el.children[j].element_id;
      if (a.bottom <= b.top && overlap(a.left, a.right, b.left, b.right) >= 1) {
        out.push_back({ai, Predicate::ABOVE, bi, ObjectKind::Entity});
        out.push_back({bi, Predicate::BELOW, ai, ObjectKind::Entity});
      }
      if (a.right <= b.left && overlap(a.top, a.bottom, b.top, b.bottom) >= 1) {
        out.push_back({ai, Predicate::LEFT, bi, ObjectKind::Entity});
        out.push_back({bi, Predicate::RIGHT, ai, ObjectKind::Entity});
      }
    }
  }
  for (const auto& c : el.children) emit(c, entities, out);
}

const std::regex& price_whole() {
  static const std::regex re(
      R"(^(?:\$|€|£)?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d{2})?$)");
  return re;
}

const std::regex& price_search() {
  static const std::regex re(R"((?:\$|€|£)(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d{2})?)");
  return re;
}

const std::regex& date_search() {
  static const std::regex re(
      R"((?:^|[^0-9])((?:0[1-9]|1[0-2])/(?:0[1-9]|[12]\d|3[01])/\d{4}|\d{4}-(?:0[1-9]|1[0-2])-(?:0[1-9]|[12]\d|3[01])|(?:January|February|March|April|May|June|July|August|September|October|November|December) (?:[1-9]|[12]\d|3[01]), \d{4})(?:$|[^0-9]))");
  return re;
}

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::optional<std::string> price_match(std::string_view text) {
  std::string t = trim(text);
  if (std::regex_match(t, price_whole())) return t;
  std::smatch m;
  if (std::regex_search(t, m, price_search())) return m.str(0);
  return std::nullopt;
}

std::optional<std::string> date_match(std::string_view text) {
  std::string t(text);
  std::smatch m;
  if (std::regex_search(t, m, date_search())) return m.str(1);
  return std::nullopt;
}

}  // namespace

bool matches_price(std::string_view text) { return price_match(text).has_value(); }
bool matches_date(std::string_view text) { return date_match(text).has_value(); }

UiSnapshotGraph annotate_semantics(const UiSnapshotGraph& graph) {
  std::vector<Triple> triples = graph.triples();
  for (const Triple& t : graph.triples()) {
    if (t.predicate != Predicate::HAS_TEXT || t.kind != ObjectKind::Literal) continue;
    if (auto p = price_match(t.object))
      triples.push_back({t.subject, Predicate::CONTAINS_PRICE, *p, ObjectKind::Literal});
    if (auto d = date_match(t.object))
      triples.push_back({t.subject, Predicate::CONTAINS_DATE, *d, ObjectKind::Literal});
  }
  return UiSnapshotGraph(graph.context(), graph.root(), graph.entities(), std::move(triples));
}

UiSnapshotGraph build_graph(const UiElement& root, const AppContext& context) {
  std::vector<std::string> entities;
  std::vector<Triple> triples;
  emit(root, entities, triples);
  return annotate_semantics(UiSnapshotGraph(context, root.element_id, std::move(entities), std::move(triples)));
}

std::set<InfoEntry> extract_entries(const UiSnapshotGraph& graph) {
  std::set<InfoEntry> out;
  for (const Triple& t : graph.triples()) {
    if (!is_string_property(t.predicate) || t.kind != ObjectKind::Literal) continue;
    if (is_blank(t.object)) continue;
    out.insert(InfoEntry{graph.context(), t.object});
  }
  return out;
}

}  // namespace pinalite
