#include <gtest/gtest.h>

#include <regex>

#include "pinalite/errors.hpp"
#include "pinalite/harness.hpp"
#include "pinalite/obfuscator.hpp"
#include "test_support.hpp"

using namespace pinalite;
using nlohmann::json;

namespace {

/// Bank fixture: 5 users ingest their screens into an in-process server;
/// user 0 records the bill-payment task.
struct BankWorld {
  SyntheticAppSpec spec = SyntheticAppSpec::load_file(fixtures::data_dir() / "apps" / "banking.json");
  Population pop = gen_population(spec, 5, 42);
  Salt salt = seeded_salt(42);
  AggregationService service{ServerConfig{}, salt};
  std::shared_ptr<std::vector<std::string>> wire = std::make_shared<std::vector<std::string>>();
  std::unique_ptr<AggregationClient> author;
  Script script;

  BankWorld() {
    for (const auto& u : pop.users) {
      AggregationClient c(local_transport(service), u.user);
      for (const auto& [name, screen] : u.screens) ingest_screen(c, screen);
    }
    author = std::make_unique<AggregationClient>(capturing_transport(local_transport(service), wire), pop.users[0].user);
    script = record_from_trace(task_trace(spec, pop.users[0]));
  }

  const UserWorld& me() const { return pop.users[0]; }
  std::vector<std::string> personal_strings() const {
    std::vector<std::string> out;
    for (const auto& [k, personal] : me().truth)
      if (personal) out.push_back(k.second);
    for (const auto& [i, text] : me().typed)
      if (me().typed_personal.at(i)) out.push_back(text);
    return out;
  }
};

/// Independent walk over the serialized script document: every string slot
/// that could carry screen text, as a multiset.
std::multiset<std::string> document_strings(const Script& s) {
  std::multiset<std::string> out;
  json doc = json::parse(serialize_script(s));
  static const std::regex lit(R"(\((?:text|content-desc) "((?:[^"\\]|\\.)*)\"\))");
  auto unescape = [](std::string v) {
    std::string r;
    for (std::size_t i = 0; i < v.size(); ++i) r += (v[i] == '\\' && i + 1 < v.size()) ? v[++i] : v[i];
    return r;
  };
  auto add = [&](const std::string& v) {
    if (!is_blank(v)) out.insert(v);
  };
  auto walk_el = [&](auto& self, const json& e) -> void {
    for (const char* k : {"text", "content_desc"})
      if (e.contains(k) && e[k].is_string()) add(e[k]);
    for (const auto& c : e["children"]) self(self, c);
  };
  auto walk_cond = [&](auto& self, const json& c) -> void {
    for (const char* k : {"and", "or"})
      if (c.contains(k))
        for (const auto& x : c[k]) self(self, x);
    for (const char* k : {"lhs", "rhs"})
      if (c.contains(k) && c[k].contains("lit") && c[k]["lit"].is_string()) add(c[k]["lit"]);
  };
  auto walk_blocks = [&](auto& self, const json& blocks) -> void {
    for (const auto& b : blocks) {
      if (b["type"] == "if") {
        walk_cond(walk_cond, b["condition"]);
        self(self, b["then"]);
        if (b.contains("else") && b["else"].is_array()) self(self, b["else"]);
        continue;
      }
      if (b.contains("target_query") && b["target_query"].is_string()) {
        std::string q = b["target_query"];
        for (std::sregex_iterator it(q.begin(), q.end(), lit), end; it != end; ++it) add(unescape((*it)[1]));
      }
      if (b.contains("text_arg") && b["text_arg"].is_string()) add(b["text_arg"]);
      if (b.contains("snapshot") && b["snapshot"].is_object()) walk_el(walk_el, b["snapshot"]["root"]);
    }
  };
  walk_blocks(walk_blocks, doc["blocks"]);
  for (const auto& p : doc["parameters"])
    for (const auto& v : p["possible_values"])
      if (v.is_string()) add(v);
  return out;
}

Script with_condition(Script s) {
  Conditional c;
  c.condition.comparison = {Comparator::EQ, Variable{"account"}, Label::plain("Secret Literal 77x")};
  Operation wait;
  wait.kind = ActionKind::PAUSE;
  wait.duration_s = 1;
  c.then_blocks.push_back(Block{wait});
  s.blocks.push_back(Block{c});
  return s;
}

}  // namespace

TEST(Scan, CoversEverySlotOfAnIndependentWalk) {
  BankWorld w;
  Script s = with_condition(w.script);
  std::multiset<std::string> scanned;
  for (const auto& loc : scan(s)) scanned.insert(loc.content);
  EXPECT_EQ(scanned, document_strings(s));
}

TEST(Scan, KindsAndParameterLocations) {
  BankWorld w;
  auto locs = scan(with_condition(w.script));
  std::map<LocationKind, int> kinds;
  for (const auto& l : locs) ++kinds[l.kind];
  EXPECT_GT(kinds[LocationKind::SNAPSHOT_TEXT], 30);
  EXPECT_EQ(kinds[LocationKind::PARAMETER_VALUE], 2);  // checking + savings rows
  EXPECT_EQ(kinds[LocationKind::CONDITION_LITERAL], 1);
  // text_arg counts as a query-string location.
  EXPECT_TRUE(std::any_of(locs.begin(), locs.end(), [](const EntryLocation& l) {
    return l.kind == LocationKind::QUERY_STRING && std::holds_alternative<TextArgSlot>(l.detail);
  }));
}

TEST(Classify, VerdictsDedupAndNoPlaintextOnWire) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  const AppContext choose = w.me().screens.at("choose_account").context;
  const ClassifiedEntry* header = r.find(choose, "Choose Bank account");
  ASSERT_NE(header, nullptr);
  EXPECT_TRUE(header->verdict.is_public);
  EXPECT_EQ(header->verdict.f, 5u);

  std::string account = w.me().values.at("checking");
  const ClassifiedEntry* acct = nullptr;
  for (const auto& e : r.entries)
    if (e.content.find(account) != std::string::npos && e.context == choose) acct = &e;
  ASSERT_NE(acct, nullptr);
  EXPECT_FALSE(acct->final_public());
  EXPECT_EQ(acct->verdict.f, 1u);
  // Query string + snapshot text + parameter value of the same (context, content).
  EXPECT_GE(acct->locations.size(), 3u);

  std::set<std::pair<AppContext, std::string>> keys;
  std::size_t id = 0;
  for (const auto& e : r.entries) {
    EXPECT_EQ(e.entry_id, ++id);
    EXPECT_TRUE(keys.insert({e.context, e.content}).second);
    EXPECT_EQ(e.salted_hash, salted_hash(client_hash_pair(e.context, e.content), w.salt).hex());
  }
  EXPECT_EQ(r.public_count() + r.personal_count(), r.entries.size());

  for (const auto& body : *w.wire)
    for (const auto& secret : w.personal_strings()) EXPECT_EQ(count_occurrences(body, secret), 0u) << secret;
}

TEST(Classify, FailsClosedWhenServerUnreachable) {
  BankWorld w;
  AggregationClient dead(http_transport("http://127.0.0.1:1"), w.me().user);
  EXPECT_THROW(classify(w.script, dead), ServerUnavailable);
}

TEST(Overrides, ApplyClearAndErrors) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  const auto& first = r.entries.front();
  const bool verdict = first.verdict.is_public;
  apply_override(r, first.entry_id, !verdict);
  EXPECT_EQ(r.find(first.entry_id)->final_public(), !verdict);
  apply_override(r, first.entry_id, !verdict);  // idempotent
  EXPECT_EQ(r.find(first.entry_id)->final_public(), !verdict);
  apply_override(r, first.entry_id, std::nullopt);
  EXPECT_EQ(r.find(first.entry_id)->final_public(), verdict);
  EXPECT_THROW(apply_override(r, 9999, true), ValidationError);
  EXPECT_THROW(apply_overrides(r, {{"abc", true}}), ValidationError);
  EXPECT_THROW(apply_overrides(r, {{"1", "yes"}}), ValidationError);
  apply_overrides(r, {{"1", nullptr}, {"2", true}});
  EXPECT_TRUE(r.find(2)->final_public());

  json j = report_to_json(r, w.script);
  EXPECT_EQ(j["entries"].size(), r.entries.size());
  EXPECT_TRUE(j["entries"][1].contains("override"));
  EXPECT_FALSE(j["entries"][0].contains("override"));
  EXPECT_EQ(j["counts"]["public"].get<std::size_t>(), r.public_count());
}

TEST(Obfuscate, NoPersonalBytesAndHashesMatchServer) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  ObfuscationResult out = obfuscate(w.script, r);
  EXPECT_TRUE(out.warnings.empty());
  std::string text = serialize_shared(out.shared);
  for (const auto& secret : w.personal_strings()) EXPECT_EQ(count_occurrences(text, secret), 0u) << secret;

  std::set<std::string> report_hashes;
  for (const auto& e : r.entries)
    if (!e.final_public()) report_hashes.insert(e.salted_hash);
  for (const auto& h : hidden_hashes(out.shared.body)) EXPECT_TRUE(report_hashes.contains(h)) << h;

  for (const auto& [path, op] : all_operations(out.shared.body)) {
    if (!targets_element(op->kind)) continue;
    ASSERT_TRUE(op->alt_query.has_value()) << format_path(path);
    EXPECT_FALSE(contains_hidden(*op->alt_query));
  }
  // Public header survives; deterministic output.
  EXPECT_NE(text.find("Choose Bank account"), std::string::npos);
  EXPECT_EQ(serialize_shared(obfuscate(w.script, r).shared), text);
  // The shared document parses back.
  EXPECT_EQ(deserialize_shared(text), out.shared);
}

TEST(Obfuscate, AllPublicIsIdentityModuloAltQueries) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  for (const auto& e : r.entries) apply_override(r, e.entry_id, true);
  ObfuscationResult out = obfuscate(w.script, r);
  Script stripped = out.shared.body;
  for (auto& b : stripped.blocks)
    if (auto* op = std::get_if<Operation>(&b.node)) op->alt_query.reset();
  EXPECT_EQ(stripped, w.script);
}

TEST(Obfuscate, UnmaskingOneEntryChangesOnlyItsSlots) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  std::string before = serialize_shared(obfuscate(w.script, r).shared);
  const ClassifiedEntry* target = nullptr;
  for (const auto& e : r.entries)
    if (!e.final_public() && e.locations.size() == 1 && e.locations[0].kind == LocationKind::SNAPSHOT_TEXT) target = &e;
  ASSERT_NE(target, nullptr);
  std::string content = target->content, hash = target->salted_hash;
  apply_override(r, target->entry_id, true);
  std::string after = serialize_shared(obfuscate(w.script, r).shared);
  EXPECT_NE(before, after);
  EXPECT_EQ(count_occurrences(after, content), 1u);
  EXPECT_EQ(count_occurrences(after, hash), 0u);
}

TEST(Obfuscate, StaleReportRefused) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  Script changed = with_condition(w.script);
  EXPECT_THROW(obfuscate(changed, r), ValidationError);
}

TEST(Obfuscate, ConditionLiteralHiddenWhenPersonal) {
  BankWorld w;
  Script s = with_condition(w.script);
  ObfuscationReport r = classify(s, *w.author);
  std::string text = serialize_shared(obfuscate(s, r).shared);
  EXPECT_EQ(text.find("Secret Literal 77x"), std::string::npos);
}

TEST(LeakSweep, CatchesPlaintextLeftBehind) {
  BankWorld w;
  ObfuscationReport r = classify(w.script, *w.author);
  ObfuscationResult out = obfuscate(w.script, r);
  EXPECT_NO_THROW(leak_sweep(out.shared, r));

  // Sneak a personal string into the script name and into a snapshot label.
  std::string secret = w.me().values.at("checking");
  const ClassifiedEntry* e = nullptr;
  for (const auto& x : r.entries)
    if (!x.final_public() && x.content.find(secret) != std::string::npos) e = &x;
  ASSERT_NE(e, nullptr);
  SharedScript bad = out.shared;
  bad.body.name = "pay from " + e->content;
  EXPECT_THROW(leak_sweep(bad, r), LeakError);

  SharedScript bad2 = out.shared;
  auto* op = operation_at(bad2.body, {4});
  ASSERT_NE(op, nullptr);
  op->alt_query = q::conj({q::cls("TextView"), q::text(e->content)});
  EXPECT_THROW(leak_sweep(bad2, r), LeakError);
}
