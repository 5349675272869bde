#pragma once

#include <compare>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace pinalite {

/// The screen an information entry was seen on: app package plus activity.
struct AppContext {
  std::string package_name;
  std::string activity_name;

  auto operator<=>(const AppContext&) const = default;
};

/// Throws ValidationError if a field is empty or contains the 0x1F delimiter.
void validate_context(const AppContext& ctx);

/// A string slot that is either plaintext or, once obfuscated, the salted
/// hash that replaced it.
struct Label {
  std::string value;
  bool hidden = false;

  auto operator<=>(const Label&) const = default;

  static Label plain(std::string v) { return Label{std::move(v), false}; }
  static Label hashed(std::string hex) { return Label{std::move(hex), true}; }
};

struct Bounds {
  int left = 0;
  int top = 0;
  int right = 0;
  int bottom = 0;

  auto operator<=>(const Bounds&) const = default;
};

struct UiElement {
  std::string element_id;
  std::string class_name;
  std::optional<Label> text;
  std::optional<Label> content_description;
  std::optional<std::string> view_id;
  Bounds bounds;
  bool clickable = false;
  bool scrollable = false;
  bool focused = false;
  bool enabled = true;
  std::vector<UiElement> children;

  bool operator==(const UiElement&) const = default;
};

/// One captured screen: its context and element tree.
struct Screen {
  AppContext context;
  UiElement root;

  bool operator==(const Screen&) const = default;
};

enum class Predicate : std::uint8_t {
  HAS_CLASS_NAME,
  HAS_TEXT,
  HAS_CONTENT_DESCRIPTION,
  HAS_VIEW_ID,
  HAS_SCREEN_LOCATION,
  IS_CLICKABLE,
  IS_SCROLLABLE,
  IS_FOCUSED,
  IS_ENABLED,
  HAS_PARENT,
  HAS_CHILD,
  ABOVE,
  BELOW,
  LEFT,
  RIGHT,
  CONTAINS_PRICE,
  CONTAINS_DATE,
};

std::string_view to_string(Predicate p);
bool is_flag(Predicate p);
bool is_relation(Predicate p);
/// Predicates whose literal objects are screen strings (text and content
/// description). These are the ones that can carry personal information.
bool is_string_property(Predicate p);

enum class ObjectKind : std::uint8_t { Entity, Literal, HiddenLiteral };

struct Triple {
  std::string subject;
  Predicate predicate;
  std::string object;
  ObjectKind kind = ObjectKind::Literal;

  auto operator<=>(const Triple&) const = default;
};

/// Triple-store view of one screen. Entities are element ids; document order
/// is depth-first pre-order of the element tree.
class UiSnapshotGraph {
 public:
  UiSnapshotGraph(AppContext context, std::string root,
                  std::vector<std::string> entities, std::vector<Triple> triples);

  const AppContext& context() const { return context_; }
  const std::string& root() const { return root_; }
  const std::vector<std::string>& entities() const { return entities_; }
  const std::vector<Triple>& triples() const { return triples_; }

  bool contains(const Triple& t) const;
  std::optional<std::size_t> order_of(std::string_view entity) const;

  /// Triples with `entity` as subject.
  std::vector<const Triple*> outgoing(std::string_view entity) const;
  /// Objects of (entity, predicate, *) in triple order.
  std::vector<std::string> objects(std::string_view entity, Predicate p) const;
  /// First plaintext literal for (entity, predicate), if any.
  std::optional<std::string> literal(std::string_view entity, Predicate p) const;
  bool has(std::string_view entity, Predicate p) const;

  bool operator==(const UiSnapshotGraph& other) const {
    return context_ == other.context_ && root_ == other.root_ &&
           triples_ == other.triples_;
  }

 private:
  AppContext context_;
  std::string root_;
  std::vector<std::string> entities_;
  std::vector<Triple> triples_;  // sorted, unique
  std::unordered_map<std::string, std::size_t> order_;
  std::vector<std::vector<std::size_t>> by_subject_;
};

struct InfoEntry {
  AppContext context;
  std::string content;

  auto operator<=>(const InfoEntry&) const = default;
};

/// Parses a screen document {package, activity, root}. Missing element ids
/// are assigned as "e<N>" by depth-first ordinal starting at 1.
Screen load_screen(const nlohmann::json& document);
Screen load_screen_file(const std::string& path);
/// Element tree only; ids assigned as in load_screen.
UiElement load_element_tree(const nlohmann::json& root);

nlohmann::ordered_json screen_to_json(const Screen& screen);
nlohmann::ordered_json element_to_json(const UiElement& element);

nlohmann::ordered_json label_to_json(const Label& label);
Label label_from_json(const nlohmann::json& j, const std::string& path);

UiSnapshotGraph build_graph(const UiElement& root, const AppContext& context);
inline UiSnapshotGraph build_graph(const Screen& screen) {
  return build_graph(screen.root, screen.context);
}

std::set<InfoEntry> extract_entries(const UiSnapshotGraph& graph);

UiSnapshotGraph annotate_semantics(const UiSnapshotGraph& graph);

bool matches_price(std::string_view text);
bool matches_date(std::string_view text);

/// Depth-first pre-order walk.
template <typename Fn>
void visit_elements(const UiElement& root, Fn&& fn) {
  fn(root);
  for (const auto& child : root.children) visit_elements(child, fn);
}

const UiElement* find_element(const UiElement& root, std::string_view element_id);
/// Parent of the element with `element_id`; nullptr for the root or when absent.
const UiElement* find_parent(const UiElement& root, std::string_view element_id);

bool is_blank(std::string_view s);

}  // namespace pinalite
