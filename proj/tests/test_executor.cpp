#include <gtest/gtest.h>

#include "pinalite/errors.hpp"
#include "pinalite/executor.hpp"
#include "pinalite/harness.hpp"
#include "test_support.hpp"

using namespace pinalite;
using nlohmann::json;

namespace {

SyntheticAppSpec load_spec(const std::string& name) {
  return SyntheticAppSpec::load_file(fixtures::data_dir() / "apps" / (name + ".json"));
}

std::vector<std::string> task_targets(const SyntheticAppSpec& spec) {
  std::vector<std::string> out;
  for (const auto& e : spec.task["events"])
    if (e.contains("target")) out.push_back(e["target"]);
  return out;
}

const UiElement* find_by_text(const UiElement& root, const std::string& text) {
  const UiElement* hit = nullptr;
  visit_elements(root, [&](const UiElement& e) {
    if (!hit && e.text && e.text->value == text) hit = &e;
  });
  return hit;
}

/// Shared bank script produced through a real classify/obfuscate round.
struct SharedBank {
  SyntheticAppSpec spec = load_spec("banking");
  Population pop = gen_population(spec, 5, 9);
  AggregationService service{ServerConfig{}, seeded_salt(9)};
  Script recorded;
  SharedScript shared;
  ObfuscationReport report;

  SharedBank() {
    for (const auto& u : pop.users) {
      AggregationClient c(local_transport(service), u.user);
      for (const auto& [n, s] : u.screens) ingest_screen(c, s);
    }
    AggregationClient author(local_transport(service), pop.users[0].user);
    recorded = record_from_trace(task_trace(spec, pop.users[0]));
    report = classify(recorded, author);
    shared = obfuscate(recorded, report).shared;
  }

  ExecutorOptions inputs_for(std::size_t user) const {
    ExecutorOptions o;
    for (const auto& [path, op] : all_operations(shared.body))
      if (op->text_arg && op->text_arg->hidden) o.inputs[op->text_arg->value] = pop.users[user].typed.at(path[0]);
    return o;
  }
};

}  // namespace

TEST(Replay, RecordReplayIdentityOnAllApps) {
  for (const std::string name : {"banking", "coffee", "ride"}) {
    SyntheticAppSpec spec = load_spec(name);
    Population pop = gen_population(spec, 5, 3);
    for (const auto& world : pop.users) {
      Script s = record_from_trace(task_trace(spec, world));
      ExecutionResult r = execute(s, app_for(spec, world));
      ASSERT_TRUE(r.trace.completed) << name << " " << trace_to_jsonl(r.trace);
      EXPECT_EQ(r.trace.element_sequence(), task_targets(spec)) << name;
      for (const auto& ev : r.trace.events) {
        EXPECT_TRUE(ev.rebuilt.empty());
        EXPECT_FALSE(ev.used_alt);
      }
    }
  }
}

TEST(Rebuild, ConsumerAccountAndParameterValues) {
  SharedBank b;
  const Script before = b.shared.body;
  const UserWorld& consumer = b.pop.users[1];
  ExecutionResult r = execute(b.shared.body, app_for(b.spec, consumer), b.inputs_for(1));
  ASSERT_TRUE(r.trace.completed) << trace_to_jsonl(r.trace);
  EXPECT_EQ(b.shared.body, before);  // input untouched

  const Screen& choose = consumer.screens.at("choose_account");
  const std::string checking = find_element(choose.root, "account_0")->text->value;
  const Operation* op = top_level_op(r.rebuilt, 4);
  ASSERT_NE(op, nullptr);
  EXPECT_NE(serialize_query(*op->target_query).find(checking), std::string::npos);
  EXPECT_FALSE(contains_hidden(*op->target_query));

  std::vector<Label> menu;
  for (const auto& c : find_parent(choose.root, "account_0")->children)
    if (c.class_name == "TextView" && c.element_id != "e0" && c.clickable) menu.push_back(*c.text);
  ASSERT_EQ(r.rebuilt.parameters.size(), 1u);
  EXPECT_EQ(r.rebuilt.parameters[0].possible_values, menu);

  for (const auto& [path, o] : all_operations(r.rebuilt)) {
    if (!targets_element(o->kind)) continue;
    EXPECT_FALSE(contains_hidden(*o->target_query)) << format_path(path);
    EXPECT_FALSE(o->text_arg && o->text_arg->hidden);
  }

  ExecutorOptions no_alt;
  no_alt.use_alt_queries = false;
  ExecutionResult again = execute(r.rebuilt, app_for(b.spec, consumer), no_alt);
  ASSERT_TRUE(again.trace.completed) << trace_to_jsonl(again.trace);
  for (const auto& ev : again.trace.events) EXPECT_FALSE(ev.used_alt);
  EXPECT_EQ(again.trace.element_sequence(), r.trace.element_sequence());
}

TEST(Rebuild, ParameterChoiceAfterRegeneration) {
  SharedBank b;
  const UserWorld& consumer = b.pop.users[2];
  ExecutorOptions o = b.inputs_for(2);
  const std::string savings = find_element(consumer.screens.at("choose_account").root, "account_1")->text->value;
  o.parameter_choices["account"] = savings;
  ExecutionResult r = execute(b.shared.body, app_for(b.spec, consumer), o);
  ASSERT_TRUE(r.trace.completed) << trace_to_jsonl(r.trace);
  auto seq = r.trace.element_sequence();
  EXPECT_EQ(seq[4], "account_1");
}

TEST(Rebuild, NeedsInputForHiddenTypedText) {
  SharedBank b;
  ExecutionResult r = execute(b.shared.body, app_for(b.spec, b.pop.users[1]));
  EXPECT_FALSE(r.trace.completed);
  ASSERT_TRUE(r.trace.events.back().failure.has_value());
  EXPECT_EQ(*r.trace.events.back().failure, FailureKind::NEEDS_INPUT);
}

TEST(Rebuild, StaleRebuildFallsBackToAlt) {
  SharedBank b;
  ExecutionResult first = execute(b.shared.body, app_for(b.spec, b.pop.users[1]), b.inputs_for(1));
  ASSERT_TRUE(first.trace.completed);
  // The consumer's accounts change: user 3's screens stand in for the new state.
  ExecutorOptions o;
  o.inputs = b.inputs_for(1).inputs;
  ExecutionResult later = execute(first.rebuilt, app_for(b.spec, b.pop.users[3]), o);
  ASSERT_TRUE(later.trace.completed) << trace_to_jsonl(later.trace);
  EXPECT_TRUE(later.trace.events[4].used_alt);
}

TEST(Failures, NoMatchAmbiguousWrongScreen) {
  SharedBank b;
  const UserWorld& consumer = b.pop.users[1];
  SimulatedApp app = app_for(b.spec, consumer);

  Script no_alt = b.shared.body;
  operation_at(no_alt, {4})->alt_query.reset();
  ExecutionResult r1 = execute(no_alt, app, b.inputs_for(1));
  ASSERT_TRUE(r1.trace.events.back().failure);
  EXPECT_EQ(*r1.trace.events.back().failure, FailureKind::NO_MATCH);
  EXPECT_EQ(r1.trace.events.size(), 5u);

  Script ambiguous = b.shared.body;
  operation_at(ambiguous, {4})->alt_query =
      parse_query(R"((conj (class "TextView") (below (text "Choose Bank account"))))");
  ExecutionResult r2 = execute(ambiguous, app, b.inputs_for(1));
  ASSERT_TRUE(r2.trace.events.back().failure);
  EXPECT_EQ(*r2.trace.events.back().failure, FailureKind::AMBIGUOUS);

  // Ride: the saved place leads to the structurally different surge prompt.
  SyntheticAppSpec ride = load_spec("ride");
  Population pop = gen_population(ride, 2, 4);
  Script s = record_from_trace(task_trace(ride, pop.users[0]));
  SimulatedApp surge = app_for(ride, pop.users[0]);
  for (auto& t : surge.transitions)
    if (t.to == "options") t.to = "surge";
  ExecutionResult r3 = execute(s, surge);
  ASSERT_TRUE(r3.trace.events.back().failure);
  EXPECT_EQ(*r3.trace.events.back().failure, FailureKind::WRONG_SCREEN);
  EXPECT_LT(*r3.trace.events.back().similarity, kSameScreenThreshold);
}

TEST(ScreenMatch, Properties) {
  SyntheticAppSpec ride = load_spec("ride");
  Population pop = gen_population(ride, 3, 5);
  const auto& a = pop.users[0].screens;
  const auto& b = pop.users[1].screens;
  UiSnapshotGraph home_a = build_graph(a.at("home")), home_b = build_graph(b.at("home"));
  EXPECT_DOUBLE_EQ(structural_similarity(home_a, home_a), 1.0);
  EXPECT_TRUE(screen_match(home_a, home_a).same_screen);
  // Different personal texts, same structure.
  EXPECT_DOUBLE_EQ(structural_similarity(home_a, home_b), 1.0);
  UiSnapshotGraph options = build_graph(a.at("options")), surge = build_graph(a.at("surge"));
  EXPECT_EQ(options.context(), surge.context());
  ScreenMatch m = screen_match(surge, options);
  EXPECT_FALSE(m.same_screen);
  EXPECT_LT(m.similarity, 0.6);
  for (const auto& [n1, s1] : a)
    for (const auto& [n2, s2] : b) {
      double x = structural_similarity(build_graph(s1), build_graph(s2));
      EXPECT_GE(x, 0.0);
      EXPECT_LE(x, 1.0);
      EXPECT_DOUBLE_EQ(x, structural_similarity(build_graph(s2), build_graph(s1)));
      if (s1.context != s2.context) EXPECT_FALSE(screen_match(build_graph(s1), build_graph(s2)).same_screen);
    }
  // Hidden labels do not change structure.
  Screen hidden = a.at("home");
  hidden.root.children[0].children[0].text = Label::hashed(std::string(128, 'f'));
  EXPECT_DOUBLE_EQ(structural_similarity(build_graph(hidden), home_a), 1.0);
}

TEST(Substitute, ParameterValues) {
  SyntheticAppSpec coffee = load_spec("coffee");
  Population pop = gen_population(coffee, 1, 1);
  Script s = record_from_trace(task_trace(coffee, pop.users[0]));
  ASSERT_EQ(s.parameters.size(), 1u);
  EXPECT_EQ(s.parameters[0].name, "size");
  EXPECT_EQ(substitute_parameter(s, "size", "Grande"), s);
  Script venti = substitute_parameter(s, "size", "Venti");
  const Operation* op = top_level_op(venti, 2);
  auto hits = evaluate(*op->target_query, build_graph(*op->snapshot));
  ASSERT_EQ(hits.size(), 1u);
  EXPECT_EQ(find_element(op->snapshot->root, hits[0])->text->value, "Venti");
  EXPECT_THROW(substitute_parameter(s, "size", "Trenta"), ValidationError);
  EXPECT_THROW(substitute_parameter(s, "milk", "Oat"), ValidationError);

  ExecutorOptions o;
  o.parameter_choices["size"] = "Venti";
  ExecutionResult r = execute(s, app_for(coffee, pop.users[0]), o);
  ASSERT_TRUE(r.trace.completed);
  const UiElement* venti_row = find_by_text(pop.users[0].screens.at("product").root, "Venti");
  EXPECT_EQ(r.trace.element_sequence()[2], venti_row->element_id);
}

TEST(Conditionals, ExtractBranchAndUnboundVariable) {
  SyntheticAppSpec coffee = load_spec("coffee");
  Population pop = gen_population(coffee, 1, 1);
  const UserWorld& w = pop.users[0];
  const UiElement* total = find_by_text(w.screens.at("cart").root, "$4.95");
  ASSERT_NE(total, nullptr);

  DemoTrace t;
  auto ev = [&](ActionKind k, const std::string& screen, const std::string& target) {
    DemoEvent e;
    e.action = k;
    e.screen = w.screens.at(screen);
    e.target = target;
    return e;
  };
  t.events = {ev(ActionKind::CLICK, "home", "order_now"), ev(ActionKind::CLICK, "menu", "latte"),
              ev(ActionKind::CLICK, "product", "add_to_order"), ev(ActionKind::EXTRACT_VALUE, "cart", total->element_id)};
  t.events.back().variable_name = "total";
  Script s = record_from_trace(t);
  Conditional c;
  c.condition.comparison = {Comparator::EQ, Variable{"total"}, Label::plain("$4.95")};
  DemoTrace place{"place", {ev(ActionKind::CLICK, "cart", "place_order")}};
  c.then_blocks.push_back(record_from_trace(place).blocks[0]);
  Operation wait;
  wait.kind = ActionKind::PAUSE;
  wait.wait_for_user = true;
  c.else_blocks = std::vector<Block>{Block{wait}};
  s.blocks.push_back(Block{c});
  ASSERT_TRUE(validate(s).empty());

  ExecutionResult r = execute(s, app_for(coffee, w));
  ASSERT_TRUE(r.trace.completed) << trace_to_jsonl(r.trace);
  EXPECT_EQ(r.variables.at("total"), "$4.95");
  EXPECT_EQ(r.trace.element_sequence().back(), "place_order");

  std::get<Conditional>(s.blocks.back().node).condition.comparison.op = Comparator::NE;
  ExecutionResult r2 = execute(s, app_for(coffee, w));
  ASSERT_TRUE(r2.trace.completed);
  EXPECT_EQ(r2.trace.events.back().kind, ActionKind::PAUSE);

  std::get<Conditional>(s.blocks.back().node).condition.comparison.lhs = Variable{"ghost"};
  EXPECT_THROW(execute(s, app_for(coffee, w)), ExecutionError);
}

TEST(Launch, WrongPackage) {
  SyntheticAppSpec coffee = load_spec("coffee");
  Population pop = gen_population(coffee, 1, 1);
  Script s;
  s.name = "launch";
  Operation launch;
  launch.kind = ActionKind::LAUNCH;
  launch.app = AppContext{"com.example.other", ".Main"};
  s.blocks.push_back(Block{launch});
  ExecutionResult r = execute(s, app_for(coffee, pop.users[0]));
  ASSERT_TRUE(r.trace.events.back().failure);
  EXPECT_EQ(*r.trace.events.back().failure, FailureKind::WRONG_SCREEN);
  std::get<Operation>(s.blocks[0].node).app = AppContext{"com.example.coffee", ".MainActivity"};
  EXPECT_TRUE(execute(s, app_for(coffee, pop.users[0])).trace.completed);
}

TEST(SimulatedAppDoc, ValidationAndJsonl) {
  json doc = {{"package", "p"}, {"initial", "a"},
              {"screens", {{"a", {{"package", "p"}, {"activity", ".A"}, {"root", {{"class", "B"}, {"id", "go"}, {"bounds", {0, 0, 1, 1}}}}}}}},
              {"transitions", {{{"from", "a"}, {"element", "go"}, {"to", "a"}}}}};
  SimulatedApp app = SimulatedApp::from_json(doc);
  EXPECT_NO_THROW(app.validate());
  EXPECT_EQ(app.next("a", "go", ActionKind::CLICK), std::optional<std::string>("a"));
  EXPECT_FALSE(app.next("a", "go", ActionKind::LONG_CLICK).has_value());
  json bad = doc;
  bad["initial"] = "zzz";
  EXPECT_THROW(SimulatedApp::from_json(bad).validate(), ValidationError);
  bad = doc;
  bad["transitions"][0]["element"] = "nope";
  EXPECT_THROW(SimulatedApp::from_json(bad).validate(), ValidationError);
  bad = doc;
  bad["transitions"][0]["action"] = "SWIPE";
  EXPECT_THROW(SimulatedApp::from_json(bad), ParseError);

  SyntheticAppSpec spec = load_spec("banking");
  Population pop = gen_population(spec, 1, 1);
  ExecutionResult r = execute(record_from_trace(task_trace(spec, pop.users[0])), app_for(spec, pop.users[0]));
  std::string jsonl = trace_to_jsonl(r.trace);
  EXPECT_EQ(static_cast<std::size_t>(std::count(jsonl.begin(), jsonl.end(), '\n')), r.trace.events.size());
  for (std::size_t pos = 0, next; (next = jsonl.find('\n', pos)) != std::string::npos; pos = next + 1)
    EXPECT_NO_THROW(json::parse(jsonl.substr(pos, next - pos)));
}
