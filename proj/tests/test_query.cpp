#include <gtest/gtest.h>

#include <random>

#include "pinalite/errors.hpp"
#include "pinalite/query.hpp"
#include "query_oracle.hpp"
#include "test_support.hpp"

using namespace pinalite;
using nlohmann::json;
using fixtures::QueryGen;
using fixtures::oracle_eval;
using fixtures::preorder;

namespace {

Screen screen_of(json root) { return load_screen({{"package", "com.example.bank"}, {"activity", ".Choose"}, {"root", root}}); }

json el(const std::string& cls, std::vector<int> b, json extra = json::object()) {
  json j = {{"class", cls}, {"bounds", b}};
  j.update(extra);
  return j;
}

Screen bank_screen() {
  json panel = el("LinearLayout", {0, 200, 1080, 560}, {{"view_id", "account_panel"}});
  panel["children"] = {el("TitleView", {0, 200, 1080, 320}, {{"text", "Choose Bank account"}}),
                       el("TextView", {0, 320, 1080, 440}, {{"id", "acct0"}, {"text", "Checking Account (...4421)"}, {"clickable", true}}),
                       el("TextView", {0, 440, 1080, 560}, {{"id", "acct1"}, {"text", "Savings Account (...9034)"}, {"clickable", true}})};
  json root = el("FrameLayout", {0, 0, 1080, 800});
  root["children"] = {el("TextView", {0, 0, 1080, 120}, {{"text", "Select the account to pay from"}}), panel,
                      el("Button", {0, 600, 1080, 720}, {{"text", "Continue"}, {"clickable", true}})};
  return screen_of(root);
}

}  // namespace

TEST(QueryEvaluate, AgreesWithBruteForceOracle) {
  std::mt19937_64 rng(2024);
  QueryGen gen(99);
  std::size_t graphs = 0, queries = 0, nonempty = 0;
  for (; graphs < 120; ++graphs) {
    UiElement tree = fixtures::random_tree(rng, 30);
    UiSnapshotGraph g = build_graph(tree, fixtures::kTestContext);
    auto nodes = preorder(tree);
    for (int k = 0; k < 6; ++k, ++queries) {
      Query q = gen.gen(3);
      std::vector<std::string> expected;
      for (const auto* e : oracle_eval(q, nodes)) expected.push_back(e->element_id);
      ASSERT_EQ(evaluate(q, g), expected) << serialize_query(q) << " on graph " << graphs;
      if (!expected.empty()) ++nonempty;
    }
  }
  EXPECT_GE(queries, 500u);
  // Guard against a generator that only produces empty results.
  EXPECT_GT(nonempty, queries / 4);
}

TEST(QueryEvaluate, NthIsElementOfInner) {
  std::mt19937_64 rng(7);
  QueryGen gen(8);
  for (int i = 0; i < 200; ++i) {
    UiSnapshotGraph g = build_graph(fixtures::random_tree(rng, 25), fixtures::kTestContext);
    Query inner = gen.gen(2);
    auto all = evaluate(inner, g);
    for (std::size_t k = 1; k <= 4; ++k) {
      auto got = evaluate(q::nth(k, inner), g);
      if (k <= all.size()) EXPECT_EQ(got, std::vector<std::string>{all[k - 1]});
      else EXPECT_TRUE(got.empty());
    }
  }
}

TEST(QueryEvaluate, Examples) {
  json root = el("LinearLayout", {0, 0, 100, 500});
  root["children"] = {el("TextView", {0, 0, 100, 100}, {{"text", "a"}}), el("Button", {0, 100, 100, 200}, {{"text", "next"}, {"clickable", true}}),
                      el("TextView", {0, 200, 100, 300}, {{"text", "b"}, {"clickable", true}}), el("TextView", {0, 300, 100, 400})};
  UiSnapshotGraph g = build_graph(screen_of(root));
  EXPECT_EQ(evaluate(q::flag(Predicate::IS_CLICKABLE), g), (std::vector<std::string>{"e3", "e4"}));
  EXPECT_EQ(evaluate(parse_query(R"((conj (class "Button") (text "next")))"), g), std::vector<std::string>{"e3"});
  EXPECT_EQ(evaluate(q::nth(2, q::cls("TextView")), g), std::vector<std::string>{"e4"});
  EXPECT_TRUE(evaluate(q::hidden(Predicate::HAS_TEXT, std::string(128, 'a')), g).empty());
}

TEST(QueryParse, RoundTripGeneratedAsts) {
  QueryGen gen(1234);
  for (int i = 0; i < 1500; ++i) {
    Query q = i % 2 ? gen.gen(4) : gen.gen_wild(4);
    std::string text = serialize_query(q);
    Query back = parse_query(text);
    ASSERT_EQ(back, q) << text;
    ASSERT_EQ(serialize_query(back), text);
  }
}

TEST(QueryParse, Examples) {
  Query a = parse_query(R"((conj (class "Button") (text "next")))");
  EXPECT_EQ(a, q::conj({q::cls("Button"), q::text("next")}));
  Query b = parse_query(R"((nth 1 (conj (class "TextView") (below (text "Choose Bank account")))))");
  EXPECT_EQ(b, q::nth(1, q::conj({q::cls("TextView"), q::rel(Predicate::BELOW, q::text("Choose Bank account"))})));
  EXPECT_EQ(serialize_query(q::flag(Predicate::IS_CLICKABLE)), "(clickable)");
  EXPECT_EQ(serialize_query(q::hidden(Predicate::HAS_TEXT, "ab12")), R"((hidden-text "ab12"))");
  EXPECT_EQ(serialize_query(q::text("say \"hi\" \\")), R"((text "say \"hi\" \\"))");
  EXPECT_EQ(parse_query("  ( conj  (class \"A\")\n(enabled) ) "), q::conj({q::cls("A"), q::flag(Predicate::IS_ENABLED)}));
}

TEST(QueryParse, Errors) {
  for (std::string bad : {"(text)", "(text \"a\"", "(frobnicate \"x\")", "(conj (class \"A\"))", "(nth 0 (class \"A\"))",
                          "(nth -1 (class \"A\"))", "(text \"a\") trailing", "", "(below)", "(text \"unterminated)"}) {
    EXPECT_THROW(parse_query(bad), Error) << bad;
  }
  try {
    parse_query("(conj (class \"A\") (bogus))");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("19"), std::string::npos) << e.what();
  }
}

TEST(QueryValidate, Restrictions) {
  EXPECT_THROW(validate_query(Query{q::Flag{Predicate::HAS_TEXT}}), ValidationError);
  EXPECT_THROW(validate_query(Query{q::Conj{{q::cls("A")}}}), ValidationError);
  EXPECT_THROW(validate_query(q::rel(Predicate::HAS_TEXT, q::cls("A"))), ValidationError);
  EXPECT_THROW(validate_query(Query{q::PropertyEq{Predicate::IS_CLICKABLE, "x"}}), ValidationError);
  EXPECT_THROW(validate_query(Query{q::HiddenPropertyEq{Predicate::HAS_CLASS_NAME, "ab"}}), ValidationError);
  EXPECT_NO_THROW(validate_query(parse_query(R"((nth 2 (left (child (view-id "x")))))")));
}

TEST(StringRefs, PathsAndFilter) {
  EXPECT_EQ(string_refs(parse_query(R"((conj (class "Button") (text "next")))")).size(), 1u);
  EXPECT_TRUE(string_refs(parse_query("(conj (clickable) (enabled))")).empty());
  Query q = parse_query(R"((nth 1 (conj (class "TextView") (below (text "Choose Bank account")))))");
  auto refs = string_refs(q);
  ASSERT_EQ(refs.size(), 1u);
  EXPECT_EQ(refs[0].value, "Choose Bank account");
  EXPECT_EQ(refs[0].path, (QueryPath{0, 1, 0}));
  const Query* at = query_at(q, refs[0].path);
  ASSERT_NE(at, nullptr);
  EXPECT_EQ(*at, q::text("Choose Bank account"));
  EXPECT_EQ(query_at(q, {0, 7}), nullptr);
  EXPECT_FALSE(contains_hidden(q));
  EXPECT_TRUE(contains_hidden(q::conj({q::cls("A"), q::hidden(Predicate::HAS_TEXT, "ab")})));
  EXPECT_EQ(string_refs(parse_query(R"((conj (content-desc "menu") (hidden-text "ab") (text "x")))")).size(), 2u);
}

TEST(Synthesis, BankAccountRow) {
  UiSnapshotGraph g = build_graph(bank_screen());
  std::set<std::string> personal = {"Checking Account (...4421)", "Savings Account (...9034)"};
  Query alt = synthesize_alternative(g, "acct0", personal);
  EXPECT_EQ(serialize_query(alt), R"((nth 1 (conj (class "TextView") (below (text "Choose Bank account")))))");
  Query alt1 = synthesize_alternative(g, "acct1", personal);
  EXPECT_EQ(evaluate(alt1, g), std::vector<std::string>{"acct1"});
}

TEST(Synthesis, ViewIdAndClassForms) {
  UiSnapshotGraph g = build_graph(bank_screen());
  EXPECT_EQ(serialize_query(synthesize_alternative(g, "e3", {})), R"((view-id "account_panel"))");
  Query button = synthesize_alternative(g, "e7", {"Continue"});
  EXPECT_EQ(evaluate(button, g), std::vector<std::string>{"e7"});
  EXPECT_EQ(serialize_query(button), R"((class "Button"))");
}

TEST(Synthesis, UniqueAndPersonalFreeOnRandomGraphs) {
  std::mt19937_64 rng(31337);
  std::size_t checked = 0;
  for (int i = 0; i < 150; ++i) {
    UiElement tree = fixtures::random_tree(rng, 30);
    UiSnapshotGraph g = build_graph(tree, fixtures::kTestContext);
    std::set<std::string> personal;
    for (const char* s : {"Alice", "Home", "4.25", "icon"})
      if (std::bernoulli_distribution(0.5)(rng)) personal.insert(s);
    for (const auto& target : g.entities()) {
      Query alt;
      try {
        alt = synthesize_alternative(g, target, personal);
      } catch (const SynthesisError&) {
        continue;
      }
      ++checked;
      ASSERT_EQ(evaluate(alt, g), std::vector<std::string>{target}) << serialize_query(alt);
      for (const auto& ref : string_refs(alt)) EXPECT_FALSE(personal.contains(ref.value)) << serialize_query(alt);
      EXPECT_FALSE(contains_hidden(alt));
    }
  }
  EXPECT_GT(checked, 1000u);
}

TEST(Synthesis, DeterministicAndUnknownTarget) {
  UiSnapshotGraph g = build_graph(bank_screen());
  EXPECT_EQ(synthesize_alternative(g, "acct1", {"Savings Account (...9034)"}),
            synthesize_alternative(g, "acct1", {"Savings Account (...9034)"}));
  EXPECT_THROW(synthesize_alternative(g, "nope", {}), Error);
}

TEST(DescribeQuery, Readable) {
  EXPECT_NE(describe_query(parse_query(R"((conj (class "Button") (text "next")))")).find("next"), std::string::npos);
  EXPECT_NE(describe_query(q::hidden(Predicate::HAS_TEXT, "ab")).find("hidden"), std::string::npos);
}
