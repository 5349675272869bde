#pragma once

#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "pinalite/ui_model.hpp"

namespace pinalite {

/// Owning pointer with value semantics (deep copy, deep equality). Lets the
/// query AST recurse through std::variant.
template <typename T>
class Box {
 public:
  Box(T value) : ptr_(std::make_unique<T>(std::move(value))) {}  // NOLINT(google-explicit-constructor)
  Box(const Box& other) : ptr_(std::make_unique<T>(*other.ptr_)) {}
  Box(Box&&) noexcept = default;
  Box& operator=(const Box& other) {
    if (this != &other) ptr_ = std::make_unique<T>(*other.ptr_);
    return *this;
  }
  Box& operator=(Box&&) noexcept = default;
  ~Box() = default;

  const T& operator*() const { return *ptr_; }
  T& operator*() { return *ptr_; }
  const T* operator->() const { return ptr_.get(); }
  T* operator->() { return ptr_.get(); }

  friend bool operator==(const Box& a, const Box& b) { return *a == *b; }

 private:
  std::unique_ptr<T> ptr_;
};

struct Query;

namespace q {

/// Target has `predicate` equal to `value` (text, content-desc, class, view-id).
struct PropertyEq {
  Predicate predicate;
  std::string value;
  bool operator==(const PropertyEq&) const = default;
};

/// Obfuscated PropertyEq. Never matches locally.
struct HiddenPropertyEq {
  Predicate predicate;
  std::string salted_hash;
  bool operator==(const HiddenPropertyEq&) const = default;
};

struct Flag {
  Predicate predicate;
  bool operator==(const Flag&) const = default;
};

struct Conj {
  std::vector<Query> terms;
  bool operator==(const Conj&) const;
};

/// Target stands in `predicate` to some node matching `inner`.
struct Rel {
  Predicate predicate;
  Box<Query> inner;
  bool operator==(const Rel&) const = default;
};

/// The index-th (1-based) match of `inner` in document order.
struct Nth {
  std::size_t index;
  Box<Query> inner;
  bool operator==(const Nth&) const = default;
};

}  // namespace q

/// Data-description query identifying a GUI element on a snapshot graph.
struct Query {
  using Node = std::variant<q::PropertyEq, q::HiddenPropertyEq, q::Flag, q::Conj, q::Rel, q::Nth>;
  Node node;

  bool operator==(const Query&) const = default;
};

inline bool q::Conj::operator==(const Conj& other) const { return terms == other.terms; }

namespace q {

Query cls(std::string name);
Query text(std::string value);
Query content_desc(std::string value);
Query view_id(std::string value);
Query hidden(Predicate p, std::string salted_hash);
Query flag(Predicate p);
Query conj(std::vector<Query> terms);
Query rel(Predicate p, Query inner);
Query nth(std::size_t index, Query inner);

}  // namespace q

/// Throws ValidationError if the AST violates the node restrictions.
void validate_query(const Query& query);

/// Throws ParseError with the byte position on malformed input.
Query parse_query(std::string_view text);
std::string serialize_query(const Query& query);

/// Matching entities in document order.
std::vector<std::string> evaluate(const Query& query, const UiSnapshotGraph& graph);

using QueryPath = std::vector<std::size_t>;

struct StringRef {
  QueryPath path;
  Predicate predicate;
  std::string value;
  bool operator==(const StringRef&) const = default;
};

/// Every plaintext HAS_TEXT / HAS_CONTENT_DESCRIPTION literal in the query.
std::vector<StringRef> string_refs(const Query& query);

bool contains_hidden(const Query& query);

/// Node at `path`; nullptr if the path does not resolve.
const Query* query_at(const Query& query, const QueryPath& path);
Query* query_at(Query& query, const QueryPath& path);

/// Cheapest query that matches exactly `target` on `graph` and mentions no
/// string from `personal`. Throws SynthesisError when none exists.
Query synthesize_alternative(const UiSnapshotGraph& graph, std::string_view target,
                             const std::set<std::string>& personal);

/// Short English rendering, e.g. `the Button that has text "next"`.
std::string describe_query(const Query& query);

}  // namespace pinalite
