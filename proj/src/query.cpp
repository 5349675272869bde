#include "pinalite/query.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <map>
#include <optional>

#include "pinalite/errors.hpp"

namespace pinalite {

namespace q {

Query cls(std::string name) { return Query{PropertyEq{Predicate::HAS_CLASS_NAME, std::move(name)}}; }
Query text(std::string value) { return Query{PropertyEq{Predicate::HAS_TEXT, std::move(value)}}; }
Query content_desc(std::string value) {
  return Query{PropertyEq{Predicate::HAS_CONTENT_DESCRIPTION, std::move(value)}};
}
Query view_id(std::string value) { return Query{PropertyEq{Predicate::HAS_VIEW_ID, std::move(value)}}; }
Query hidden(Predicate p, std::string salted_hash) { return Query{HiddenPropertyEq{p, std::move(salted_hash)}}; }
Query flag(Predicate p) { return Query{Flag{p}}; }
Query conj(std::vector<Query> terms) { return Query{Conj{std::move(terms)}}; }
Query rel(Predicate p, Query inner) { return Query{Rel{p, Box<Query>(std::move(inner))}}; }
Query nth(std::size_t index, Query inner) { return Query{Nth{index, Box<Query>(std::move(inner))}}; }

}  // namespace q

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

struct Keyword {
  std::string_view word;
  Predicate predicate;
};

constexpr Keyword kPropertyKeywords[] = {
    {"class", Predicate::HAS_CLASS_NAME},
    {"text", Predicate::HAS_TEXT},
    {"content-desc", Predicate::HAS_CONTENT_DESCRIPTION},
    {"view-id", Predicate::HAS_VIEW_ID},
};
constexpr Keyword kHiddenKeywords[] = {
    {"hidden-text", Predicate::HAS_TEXT},
    {"hidden-content-desc", Predicate::HAS_CONTENT_DESCRIPTION},
};
constexpr Keyword kFlagKeywords[] = {
    {"clickable", Predicate::IS_CLICKABLE},
    {"scrollable", Predicate::IS_SCROLLABLE},
    {"focused", Predicate::IS_FOCUSED},
    {"enabled", Predicate::IS_ENABLED},
};
constexpr Keyword kRelationKeywords[] = {
    {"parent", Predicate::HAS_PARENT}, {"child", Predicate::HAS_CHILD}, {"above", Predicate::ABOVE},
    {"below", Predicate::BELOW},       {"left", Predicate::LEFT},       {"right", Predicate::RIGHT},
};

template <std::size_t N>
std::optional<Predicate> lookup(const Keyword (&table)[N], std::string_view word) {
  for (const auto& k : table) {
    if (k.word == word) return k.predicate;
  }
  return std::nullopt;
}

template <std::size_t N>
std::string_view keyword_for(const Keyword (&table)[N], Predicate p) {
  for (const auto& k : table) {
    if (k.predicate == p) return k.word;
  }
  throw ValidationError("predicate " + std::string(to_string(p)) + " not allowed here");
}

// -- parser -----------------------------------------------------------------

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  Query parse() {
    Query result = expr();
    skip_ws();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return result;
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError("query syntax error at offset " + std::to_string(pos_) + ": " + what);
  }

  void skip_ws() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  bool peek(char c) {
    skip_ws();
    return pos_ < text_.size() && text_[pos_] == c;
  }

  void expect(char c) {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }

  std::string_view atom() {
    skip_ws();
    std::size_t start = pos_;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')' || c == '"') break;
      ++pos_;
    }
    if (start == pos_) fail("expected keyword");
    return text_.substr(start, pos_ - start);
  }

  std::string literal() {
    skip_ws();
    if (pos_ >= text_.size() || text_[pos_] != '"') fail("expected string literal");
    ++pos_;
    std::string out;
    while (true) {
      if (pos_ >= text_.size()) fail("unterminated string literal");
      char c = text_[pos_++];
      if (c == '"') break;
      if (c == '\\') {
        if (pos_ >= text_.size()) fail("dangling escape");
        char e = text_[pos_++];
        if (e != '"' && e != '\\') fail("unknown escape");
        out.push_back(e);
      } else {
        out.push_back(c);
      }
    }
    return out;
  }

  std::size_t index() {
    std::size_t start = (skip_ws(), pos_);
    std::string_view word = atom();
    std::size_t value = 0;
    auto [ptr, ec] = std::from_chars(word.data(), word.data() + word.size(), value);
    if (ec != std::errc() || ptr != word.data() + word.size()) {
      pos_ = start;
      fail("expected ordinal");
    }
    if (value == 0) {
      pos_ = start;
      fail("nth index must be >= 1");
    }
    return value;
  }

  Query expr() {
    expect('(');
    std::size_t kw_pos = (skip_ws(), pos_);
    std::string_view kw = atom();
    Query result;
    if (auto p = lookup(kPropertyKeywords, kw)) {
      result = Query{q::PropertyEq{*p, literal()}};
    } else if (auto p = lookup(kHiddenKeywords, kw)) {
      result = Query{q::HiddenPropertyEq{*p, literal()}};
    } else if (auto p = lookup(kFlagKeywords, kw)) {
      result = Query{q::Flag{*p}};
    } else if (auto p = lookup(kRelationKeywords, kw)) {
      result = q::rel(*p, expr());
    } else if (kw == "nth") {
      std::size_t k = index();
      result = q::nth(k, expr());
    } else if (kw == "conj") {
      std::vector<Query> terms;
      while (peek('(')) terms.push_back(expr());
      if (terms.size() < 2) fail("conj needs at least two terms");
      result = q::conj(std::move(terms));
    } else {
      pos_ = kw_pos;
      fail("unknown predicate '" + std::string(kw) + "'");
    }
    expect(')');
    return result;
  }

  std::string_view text_;
  std::size_t pos_ = 0;
};

void quote(std::string& out, std::string_view s) {
  out.push_back('"');
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    out.push_back(c);
  }
  out.push_back('"');
}

void serialize_into(std::string& out, const Query& query) {
  std::visit(overloaded{
                 [&](const q::PropertyEq& n) {
                   out += '(';
                   out += keyword_for(kPropertyKeywords, n.predicate);
                   out += ' ';
                   quote(out, n.value);
                   out += ')';
                 },
                 [&](const q::HiddenPropertyEq& n) {
                   out += '(';
                   out += keyword_for(kHiddenKeywords, n.predicate);
                   out += ' ';
                   quote(out, n.salted_hash);
                   out += ')';
                 },
                 [&](const q::Flag& n) {
                   out += '(';
                   out += keyword_for(kFlagKeywords, n.predicate);
                   out += ')';
                 },
                 [&](const q::Conj& n) {
                   out += "(conj";
                   for (const auto& t : n.terms) {
                     out += ' ';
                     serialize_into(out, t);
                   }
                   out += ')';
                 },
                 [&](const q::Rel& n) {
                   out += '(';
                   out += keyword_for(kRelationKeywords, n.predicate);
                   out += ' ';
                   serialize_into(out, *n.inner);
                   out += ')';
                 },
                 [&](const q::Nth& n) {
                   out += "(nth ";
                   out += std::to_string(n.index);
                   out += ' ';
                   serialize_into(out, *n.inner);
                   out += ')';
                 },
             },
             query.node);
}

// -- evaluation ---------------------------------------------------------------

using MatchSet = std::vector<char>;

MatchSet match(const Query& query, const UiSnapshotGraph& g) {
  const auto& ents = g.entities();
  MatchSet m(ents.size(), 0);
  std::visit(overloaded{
                 [&](const q::PropertyEq& n) {
                   for (std::size_t i = 0; i < ents.size(); ++i)
                     m[i] = g.contains(Triple{ents[i], n.predicate, n.value, ObjectKind::Literal});
                 },
                 [&](const q::HiddenPropertyEq&) {},
                 [&](const q::Flag& n) {
                   for (std::size_t i = 0; i < ents.size(); ++i) m[i] = g.has(ents[i], n.predicate);
                 },
                 [&](const q::Conj& n) {
                   std::fill(m.begin(), m.end(), 1);
                   for (const auto& t : n.terms) {
                     MatchSet sub = match(t, g);
                     for (std::size_t i = 0; i < m.size(); ++i) m[i] = m[i] && sub[i];
                   }
                 },
                 [&](const q::Rel& n) {
                   MatchSet inner = match(*n.inner, g);
                   for (std::size_t i = 0; i < ents.size(); ++i) {
                     for (const Triple* t : g.outgoing(ents[i])) {
                       if (t->predicate != n.predicate || t->kind != ObjectKind::Entity) continue;
                       auto j = g.order_of(t->object);
                       if (j && inner[*j]) {
                         m[i] = 1;
                         break;
                       }
                     }
                   }
                 },
                 [&](const q::Nth& n) {
                   MatchSet inner = match(*n.inner, g);
                   std::size_t seen = 0;
                   for (std::size_t i = 0; i < inner.size(); ++i) {
                     if (inner[i] && ++seen == n.index) {
                       m[i] = 1;
                       break;
                     }
                   }
                 },
             },
             query.node);
  return m;
}

void collect_refs(const Query& query, QueryPath& path, std::vector<StringRef>& out) {
  std::visit(overloaded{
                 [&](const q::PropertyEq& n) {
                   if (is_string_property(n.predicate)) out.push_back(StringRef{path, n.predicate, n.value});
                 },
                 [&](const q::HiddenPropertyEq&) {},
                 [&](const q::Flag&) {},
                 [&](const q::Conj& n) {
                   for (std::size_t i = 0; i < n.terms.size(); ++i) {
                     path.push_back(i);
                     collect_refs(n.terms[i], path, out);
                     path.pop_back();
                   }
                 },
                 [&](const q::Rel& n) {
                   path.push_back(0);
                   collect_refs(*n.inner, path, out);
                   path.pop_back();
                 },
                 [&](const q::Nth& n) {
                   path.push_back(0);
                   collect_refs(*n.inner, path, out);
                   path.pop_back();
                 },
             },
             query.node);
}

}  // namespace

void validate_query(const Query& query) {
  std::visit(overloaded{
                 [](const q::PropertyEq& n) { (void)keyword_for(kPropertyKeywords, n.predicate); },
                 [](const q::HiddenPropertyEq& n) {
                   if (!is_string_property(n.predicate))
                     throw ValidationError("hidden slot must be text or content description");
                 },
                 [](const q::Flag& n) {
                   if (!is_flag(n.predicate)) throw ValidationError("flag must be an IS_* predicate");
                 },
                 [](const q::Conj& n) {
                   if (n.terms.size() < 2) throw ValidationError("conj needs at least two terms");
                   for (const auto& t : n.terms) validate_query(t);
                 },
                 [](const q::Rel& n) {
                   if (!is_relation(n.predicate)) throw ValidationError("rel needs a relational predicate");
                   validate_query(*n.inner);
                 },
                 [](const q::Nth& n) {
                   if (n.index == 0) throw ValidationError("nth index must be >= 1");
                   validate_query(*n.inner);
                 },
             },
             query.node);
}

Query parse_query(std::string_view text) { return Parser(text).parse(); }

std::string serialize_query(const Query& query) {
  std::string out;
  serialize_into(out, query);
  return out;
}

std::vector<std::string> evaluate(const Query& query, const UiSnapshotGraph& graph) {
  MatchSet m = match(query, graph);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i]) out.push_back(graph.entities()[i]);
  }
  return out;
}

std::vector<StringRef> string_refs(const Query& query) {
  std::vector<StringRef> out;
  QueryPath path;
  collect_refs(query, path, out);
  return out;
}

bool contains_hidden(const Query& query) {
  return std::visit(overloaded{
                        [](const q::HiddenPropertyEq&) { return true; },
                        [](const q::Conj& n) {
                          return std::any_of(n.terms.begin(), n.terms.end(),
                                             [](const Query& t) { return contains_hidden(t); });
                        },
                        [](const q::Rel& n) { return contains_hidden(*n.inner); },
                        [](const q::Nth& n) { return contains_hidden(*n.inner); },
                        [](const auto&) { return false; },
                    },
                    query.node);
}

Query* query_at(Query& query, const QueryPath& path) {
  Query* cur = &query;
  for (std::size_t step : path) {
    if (auto* c = std::get_if<q::Conj>(&cur->node)) {
      if (step >= c->terms.size()) return nullptr;
      cur = &c->terms[step];
    } else if (auto* r = std::get_if<q::Rel>(&cur->node)) {
      if (step != 0) return nullptr;
      cur = &*r->inner;
    } else if (auto* n = std::get_if<q::Nth>(&cur->node)) {
      if (step != 0) return nullptr;
      cur = &*n->inner;
    } else {
      return nullptr;
    }
  }
  return cur;
}

const Query* query_at(const Query& query, const QueryPath& path) {
  return query_at(const_cast<Query&>(query), path);
}

// -- synthesis ----------------------------------------------------------------

namespace {

constexpr Predicate kSynthesisFlags[] = {Predicate::IS_CLICKABLE, Predicate::IS_SCROLLABLE,
                                         Predicate::IS_FOCUSED, Predicate::IS_ENABLED};
constexpr int kMaxRelDepth = 3;

class Synthesizer {
 public:
  Synthesizer(const UiSnapshotGraph& g, std::string_view target, const std::set<std::string>& personal)
      : g_(g), target_(target), personal_(personal) {}

  Query run() {
    if (!g_.order_of(target_)) throw SynthesisError("target '" + target_ + "' not on screen");
    auto cls = g_.literal(target_, Predicate::HAS_CLASS_NAME);
    if (!cls) throw SynthesisError("target '" + target_ + "' has no class");
    cls_ = *cls;

    std::vector<Query> tier;
    if (auto vid = g_.literal(target_, Predicate::HAS_VIEW_ID)) tier.push_back(q::view_id(*vid));
    if (auto hit = first_unique(tier)) return *hit;

    std::vector<Query> basic = basic_candidates();
    if (auto hit = first_unique(basic)) return *hit;

    // Anchored candidates by Rel depth; an Nth ordinal costs one more level.
    std::vector<std::vector<Query>> anchored(kMaxRelDepth + 1);
    anchored[1] = anchored_candidates(target_, 1);
    if (auto hit = first_unique(anchored[1])) return *hit;
    // An ordinal over depth d-1 is preferred to a deeper chain at depth d.
    for (int depth = 2; depth <= kMaxRelDepth + 1; ++depth) {
      std::vector<Query> ordinals;
      for (const Query& c : anchored[depth - 1]) {
        if (auto n = ordinal(c)) ordinals.push_back(std::move(*n));
      }
      if (auto hit = first_unique(ordinals)) return *hit;
      if (depth > kMaxRelDepth) break;
      anchored[depth] = anchored_candidates(target_, depth);
      if (auto hit = first_unique(anchored[depth])) return *hit;
    }

    // Position-only fallback.
    std::vector<Query> positional;
    for (const Query& c : basic) {
      if (auto n = ordinal(c)) positional.push_back(std::move(*n));
    }
    if (auto hit = first_unique(positional)) return *hit;
    throw SynthesisError("no personal-free query identifies '" + target_ + "'");
  }

 private:
  bool unique(const Query& q) const {
    auto r = evaluate(q, g_);
    return r.size() == 1 && r.front() == target_;
  }

  std::optional<Query> first_unique(const std::vector<Query>& candidates) const {
    std::map<std::string, const Query*> ordered;
    for (const Query& c : candidates) ordered.emplace(serialize_query(c), &c);
    for (const auto& [text, q] : ordered) {
      if (unique(*q)) return *q;
    }
    return std::nullopt;
  }

  std::optional<Query> ordinal(const Query& c) const {
    auto r = evaluate(c, g_);
    auto it = std::find(r.begin(), r.end(), target_);
    if (it == r.end()) return std::nullopt;
    return q::nth(static_cast<std::size_t>(it - r.begin()) + 1, c);
  }

  std::vector<Query> basic_candidates() const {
    std::vector<Query> out;
    out.push_back(q::cls(cls_));
    if (auto vid = g_.literal(target_, Predicate::HAS_VIEW_ID)) out.push_back(q::conj({q::cls(cls_), q::view_id(*vid)}));
    std::vector<Predicate> flags;
    for (Predicate f : kSynthesisFlags) {
      if (g_.has(target_, f)) flags.push_back(f);
    }
    for (std::size_t mask = 1; mask < (std::size_t{1} << flags.size()); ++mask) {
      std::vector<Query> terms{q::cls(cls_)};
      for (std::size_t i = 0; i < flags.size(); ++i) {
        if (mask & (std::size_t{1} << i)) terms.push_back(q::flag(flags[i]));
      }
      out.push_back(q::conj(std::move(terms)));
    }
    return out;
  }

  bool usable(const std::string& s) const { return !is_blank(s) && !personal_.contains(s); }

  std::vector<Query> anchors(const std::string& entity) const {
    std::vector<Query> out;
    if (auto t = g_.literal(entity, Predicate::HAS_TEXT); t && usable(*t)) out.push_back(q::text(*t));
    if (auto t = g_.literal(entity, Predicate::HAS_CONTENT_DESCRIPTION); t && usable(*t))
      out.push_back(q::content_desc(*t));
    if (auto v = g_.literal(entity, Predicate::HAS_VIEW_ID)) out.push_back(q::view_id(*v));
    return out;
  }

  std::vector<std::pair<Predicate, std::string>> related(const std::string& entity) const {
    std::vector<std::pair<Predicate, std::string>> out;
    for (const Triple* t : g_.outgoing(entity)) {
      if (is_relation(t->predicate) && t->kind == ObjectKind::Entity) out.emplace_back(t->predicate, t->object);
    }
    return out;
  }

  // Descriptions of `entity` whose Rel chain is exactly `depth` long.
  std::vector<Query> anchored_candidates(const std::string& entity, int depth) const {
    std::vector<Query> out;
    auto own_class = g_.literal(entity, Predicate::HAS_CLASS_NAME);
    if (!own_class) return out;
    for (const auto& [pred, other] : related(entity)) {
      std::vector<Query> inners = depth == 1 ? anchors(other) : anchored_candidates(other, depth - 1);
      for (Query& inner : inners) out.push_back(q::conj({q::cls(*own_class), q::rel(pred, std::move(inner))}));
    }
    return out;
  }

  const UiSnapshotGraph& g_;
  std::string target_;
  const std::set<std::string>& personal_;
  std::string cls_;
};

}  // namespace

Query synthesize_alternative(const UiSnapshotGraph& graph, std::string_view target,
                             const std::set<std::string>& personal) {
  Query result = Synthesizer(graph, target, personal).run();
  for (const StringRef& r : string_refs(result)) {
    if (personal.contains(r.value)) throw SynthesisError("internal: synthesized query references personal string");
  }
  return result;
}

// -- description ----------------------------------------------------------------

namespace {

std::string describe_clause(const Query& query);

std::string describe_subject(const Query& query) {
  std::string cls = "element";
  std::vector<std::string> clauses;
  auto take = [&](const Query& t) {
    if (auto* p = std::get_if<q::PropertyEq>(&t.node); p && p->predicate == Predicate::HAS_CLASS_NAME) {
      cls = p->value;
    } else {
      clauses.push_back(describe_clause(t));
    }
  };
  if (auto* c = std::get_if<q::Conj>(&query.node)) {
    for (const auto& t : c->terms) take(t);
  } else {
    take(query);
  }
  std::string out = "the " + cls;
  for (std::size_t i = 0; i < clauses.size(); ++i) out += (i == 0 ? " that " : " and ") + clauses[i];
  return out;
}

std::string describe_clause(const Query& query) {
  return std::visit(
      overloaded{
          [](const q::PropertyEq& n) -> std::string {
            switch (n.predicate) {
              case Predicate::HAS_TEXT: return "has text \"" + n.value + "\"";
              case Predicate::HAS_CONTENT_DESCRIPTION: return "has description \"" + n.value + "\"";
              case Predicate::HAS_VIEW_ID: return "has view id \"" + n.value + "\"";
              default: return "is a " + n.value;
            }
          },
          [](const q::HiddenPropertyEq& n) -> std::string {
            return n.predicate == Predicate::HAS_TEXT ? "has hidden text" : "has hidden description";
          },
          [](const q::Flag& n) -> std::string {
            switch (n.predicate) {
              case Predicate::IS_CLICKABLE: return "is clickable";
              case Predicate::IS_SCROLLABLE: return "is scrollable";
              case Predicate::IS_FOCUSED: return "is focused";
              default: return "is enabled";
            }
          },
          [](const q::Conj& n) -> std::string {
            std::string out;
            for (std::size_t i = 0; i < n.terms.size(); ++i) out += (i ? " and " : "") + describe_clause(n.terms[i]);
            return out;
          },
          [](const q::Rel& n) -> std::string {
            std::string inner = describe_subject(*n.inner);
            switch (n.predicate) {
              case Predicate::HAS_PARENT: return "is inside " + inner;
              case Predicate::HAS_CHILD: return "contains " + inner;
              case Predicate::ABOVE: return "is above " + inner;
              case Predicate::BELOW: return "is below " + inner;
              case Predicate::LEFT: return "is left of " + inner;
              default: return "is right of " + inner;
            }
          },
          [](const q::Nth& n) -> std::string {
            return "is match #" + std::to_string(n.index) + " of " + describe_subject(*n.inner);
          },
      },
      query.node);
}

}  // namespace

std::string describe_query(const Query& query) {
  if (auto* n = std::get_if<q::Nth>(&query.node)) {
    std::string inner = describe_subject(*n->inner);
    static const char* kOrd[] = {"first", "second", "third", "fourth", "fifth"};
    std::string ord = n->index <= 5 ? kOrd[n->index - 1] : "#" + std::to_string(n->index);
    return inner.replace(0, 3, "the " + ord);
  }
  return describe_subject(query);
}

}  // namespace pinalite
