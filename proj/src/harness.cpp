#include "pinalite/harness.hpp"

#include <cstdio>
#include <fstream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "pinalite/errors.hpp"
#include "pinalite/server.hpp"

namespace pinalite {

using nlohmann::json;
using nlohmann::ordered_json;

SyntheticAppSpec SyntheticAppSpec::from_json(const json& j) {
  SyntheticAppSpec s;
  try {
    s.name = j.at("name").get<std::string>();
    s.package = j.at("package").get<std::string>();
    s.initial = j.at("initial").get<std::string>();
    s.screens = j.at("screens");
    s.transitions = j.value("transitions", json::array());
    s.task = j.at("task");
  } catch (const json::exception& e) {
    throw ParseError(std::string("app spec: ") + e.what());
  }
  if (!s.screens.is_object() || !s.screens.contains(s.initial))
    throw ValidationError("app spec: initial screen '" + s.initial + "' not defined");
  return s;
}

SyntheticAppSpec SyntheticAppSpec::load_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open app spec " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ParseError(path.string() + ": not valid JSON");
  return from_json(j);
}

Salt seeded_salt(std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x5A17C0FFEEULL);
  std::array<unsigned char, Salt::kSize> bytes{};
  for (auto& b : bytes) b = static_cast<unsigned char>(rng() & 0xFF);
  return Salt::from_bytes(bytes);
}

// ---------------------------------------------------------------------------
// Population

namespace {

const std::vector<std::string> kFirst = {"Alice", "Bruno", "Chen", "Dana", "Elif", "Farah", "Gus", "Hana",
                                         "Ivan", "Jonas", "Keiko", "Luis", "Mira", "Nadia", "Omar", "Priya",
                                         "Quinn", "Rosa", "Sven", "Tariq", "Uma", "Viktor", "Wen", "Yara"};
const std::vector<std::string> kLast = {"Abbott", "Brennan", "Castillo", "Dubois", "Eriksen", "Fontaine",
                                        "Gallagher", "Hoffmann", "Iverson", "Jablonski", "Kowalski", "Lindqvist",
                                        "Moreau", "Nakamura", "Okafor", "Petrov", "Quintero", "Rasmussen"};
const std::vector<std::string> kStreets = {"Maple", "Oak", "Birch", "Cedar", "Willow", "Juniper", "Alder",
                                           "Spruce", "Magnolia", "Hawthorn", "Linden", "Sycamore"};
const std::vector<std::string> kSuffixes = {"St", "Ave", "Rd", "Blvd", "Ln"};
const std::vector<std::string> kPlaces = {"Gym",    "Studio", "Office",  "Mom's",  "Dad's",   "Lake House",
                                          "Beach",  "Campus", "Clinic",  "Dojo",   "Cabin",   "Workshop",
                                          "Garage", "Pool",   "Library", "Church", "Stadium", "Bakery"};
const std::vector<std::string> kMonths = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                          "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  std::string pick(const std::vector<std::string>& pool) {
    return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng_)];
  }
  int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }

  std::string digits(int n) {
    std::string out;
    for (int i = 0; i < n; ++i) out += static_cast<char>('0' + uniform(0, 9));
    return out;
  }

  std::string money() {
    int dollars = uniform(1, 9999);
    std::string d = std::to_string(dollars);
    if (d.size() > 3) d.insert(d.size() - 3, ",");
    return "$" + d + "." + digits(2);
  }

  std::string expand(const std::string& tmpl) {
    static const std::regex kPlaceholder(R"(\{([a-z]+)([0-9]*)\})");
    std::string out;
    auto begin = std::sregex_iterator(tmpl.begin(), tmpl.end(), kPlaceholder);
    std::size_t last = 0;
    for (auto it = begin; it != std::sregex_iterator(); ++it) {
      const auto& m = *it;
      out += tmpl.substr(last, static_cast<std::size_t>(m.position()) - last);
      last = static_cast<std::size_t>(m.position() + m.length());
      const std::string kind = m[1];
      const int n = m[2].length() ? std::stoi(m[2]) : 0;
      if (kind == "d") {
        out += digits(std::max(1, n));
      } else if (kind == "first") {
        out += pick(kFirst);
      } else if (kind == "last") {
        out += pick(kLast);
      } else if (kind == "money") {
        out += money();
      } else if (kind == "points") {
        out += std::to_string(uniform(10, 2999));
      } else if (kind == "street") {
        out += std::to_string(uniform(1, 9899)) + " " + pick(kStreets) + " " + pick(kSuffixes);
      } else if (kind == "store") {
        out += pick(kStreets) + " & " + pick(kStreets);
      } else if (kind == "place") {
        out += pick(kPlaces);
      } else if (kind == "date") {
        out += pick(kMonths) + " " + std::to_string(uniform(1, 28)) + ", 20" + std::to_string(uniform(20, 26));
      } else {
        throw ValidationError("app spec: unknown placeholder '{" + kind + "}'");
      }
    }
    out += tmpl.substr(last);
    return out;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  std::mt19937_64 rng_;
};

UserId seeded_user(std::mt19937_64& rng) {
  char buf[37];
  std::uint64_t a = rng(), b = rng();
  std::snprintf(buf, sizeof buf, "%08llx-%04llx-4%03llx-%04llx-%012llx", (unsigned long long)(a >> 32),
                (unsigned long long)((a >> 16) & 0xFFFF), (unsigned long long)(a & 0xFFF),
                (unsigned long long)(0x8000 | ((b >> 48) & 0x3FFF)), (unsigned long long)(b & 0xFFFFFFFFFFFFULL));
  return UserId::parse(buf);
}

void collect_public(const json& el, std::set<std::string>& out) {
  for (const char* field : {"text", "content_desc"}) {
    if (!el.contains(field)) continue;
    const json& f = el[field];
    if (f.is_string()) out.insert(f.get<std::string>());
    if (f.is_object() && f.contains("public")) out.insert(f["public"].get<std::string>());
  }
  for (const auto& c : el.value("children", json::array())) collect_public(c, out);
}

int leaf_rows(const json& el) {
  const json children = el.value("children", json::array());
  if (children.empty()) return 1;
  int sum = 0, max = 0;
  for (const auto& c : children) {
    int r = leaf_rows(c);
    sum += r;
    max = std::max(max, r);
  }
  return el.value("layout", std::string()) == "horizontal" ? max : sum;
}

constexpr int kRowHeight = 120;
constexpr int kScreenWidth = 1080;

class WorldBuilder {
 public:
  WorldBuilder(const SyntheticAppSpec& spec, UserWorld& world, std::size_t index, Sampler& sampler,
               std::set<std::string>& taken, const std::set<std::string>& public_strings)
      : spec_(spec), world_(world), index_(index), sampler_(sampler), taken_(taken), public_(public_strings) {}

  void build() {
    for (const auto& [name, sj] : spec_.screens.items()) {
      ctx_ = AppContext{spec_.package, sj.at("activity").get<std::string>()};
      screen_ = name;
      json root = element(sj.at("root"), "root", 0, 0, kScreenWidth);
      world_.screens.emplace(name, load_screen(json{{"package", ctx_.package_name},
                                                    {"activity", ctx_.activity_name},
                                                    {"root", root}}));
    }
    const json& events = spec_.task.at("events");
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (!events[i].contains("typed_text")) continue;
      const json& t = events[i]["typed_text"];
      bool personal = false;
      world_.typed[i] = field(t, "task.events[" + std::to_string(i) + "]", &personal);
      world_.typed_personal[i] = personal;
    }
  }

 private:
  std::string personal_value(const std::string& key, const std::string& tmpl) {
    if (auto it = world_.values.find(key); it != world_.values.end()) return it->second;
    for (int attempt = 0; attempt < 200; ++attempt) {
      std::string v = sampler_.expand(tmpl);
      if (taken_.contains(v) || public_.contains(v)) continue;
      taken_.insert(v);
      world_.values[key] = v;
      return v;
    }
    throw Error("app spec: template '" + tmpl + "' keeps colliding across users");
  }

  std::string field(const json& f, const std::string& path, bool* personal) {
    if (f.is_string()) return f.get<std::string>();
    if (f.is_object() && f.contains("public")) return f["public"].get<std::string>();
    if (f.is_object() && f.contains("personal")) {
      *personal = true;
      return personal_value(f.value("key", path), f["personal"].get<std::string>());
    }
    throw ValidationError("app spec: " + path + ": expected string, {public} or {personal}");
  }

  json element(const json& tmpl, const std::string& path, int left, int top, int right) {
    json el = json::object();
    for (const char* key : {"id", "class", "view_id", "clickable", "scrollable", "focused", "enabled"}) {
      if (tmpl.contains(key)) el[key] = tmpl[key];
    }
    for (const char* key : {"text", "content_desc"}) {
      if (!tmpl.contains(key)) continue;
      bool personal = false;
      std::string value = field(tmpl[key], screen_ + "." + path + "." + key, &personal);
      el[key] = value;
      auto [it, inserted] = world_.truth.emplace(std::make_pair(ctx_, value), personal);
      if (!inserted && it->second != personal)
        throw ValidationError("app spec: '" + value + "' is both public and personal on " + screen_);
    }
    const json children = tmpl.value("children", json::array());
    const bool horizontal = tmpl.value("layout", std::string()) == "horizontal";
    int bottom = top + kRowHeight * leaf_rows(tmpl);
    json out_children = json::array();
    int y = top;
    std::vector<const json*> visible;
    for (const auto& c : children) {
      auto hidden = c.value("hidden_for_users", std::vector<std::size_t>{});
      if (std::find(hidden.begin(), hidden.end(), index_) != hidden.end()) continue;
      if (c.contains("shown_to_users")) {
        auto shown = c["shown_to_users"].get<std::vector<std::size_t>>();
        if (std::find(shown.begin(), shown.end(), index_) == shown.end()) continue;
      }
      visible.push_back(&c);
    }
    for (std::size_t i = 0; i < visible.size(); ++i) {
      const json& c = *visible[i];
      std::string cpath = path + ".children[" + std::to_string(i) + "]";
      if (horizontal) {
        int w = (right - left) / static_cast<int>(visible.size());
        out_children.push_back(element(c, cpath, left + static_cast<int>(i) * w, top, left + static_cast<int>(i + 1) * w));
      } else {
        out_children.push_back(element(c, cpath, left, y, right));
        y += kRowHeight * leaf_rows(c);
      }
    }
    if (!horizontal && !visible.empty()) bottom = std::max(y, top + kRowHeight);
    el["bounds"] = {left, top, right, bottom};
    if (!out_children.empty()) el["children"] = std::move(out_children);
    return el;
  }

  const SyntheticAppSpec& spec_;
  UserWorld& world_;
  std::size_t index_;
  Sampler& sampler_;
  std::set<std::string>& taken_;
  const std::set<std::string>& public_;
  AppContext ctx_;
  std::string screen_;
};

}  // namespace

Population gen_population(const SyntheticAppSpec& spec, std::size_t n_users, std::uint64_t seed) {
  if (n_users == 0) throw ValidationError("gen_population: n_users must be >= 1");
  Sampler sampler(seed);
  std::set<std::string> public_strings;
  for (const auto& [name, sj] : spec.screens.items()) collect_public(sj.at("root"), public_strings);
  std::set<std::string> taken;
  Population pop;
  for (std::size_t i = 0; i < n_users; ++i) {
    UserWorld world{seeded_user(sampler.rng()), {}, {}, {}, {}, {}};
    WorldBuilder(spec, world, i, sampler, taken, public_strings).build();
    pop.users.push_back(std::move(world));
  }
  return pop;
}

SimulatedApp app_for(const SyntheticAppSpec& spec, const UserWorld& world) {
  SimulatedApp app;
  app.package = spec.package;
  app.initial = spec.initial;
  app.screens = world.screens;
  for (const auto& t : spec.transitions) {
    SimulatedApp::Transition tr;
    tr.from = t.at("from").get<std::string>();
    tr.element = t.at("element").get<std::string>();
    tr.action = action_kind_from_string(t.value("action", std::string("CLICK"))).value_or(ActionKind::CLICK);
    tr.to = t.at("to").get<std::string>();
    // Elements hidden for this user simply have no transition.
    if (world.screens.contains(tr.from) && find_element(world.screens.at(tr.from).root, tr.element))
      app.transitions.push_back(std::move(tr));
  }
  app.validate();
  return app;
}

DemoTrace task_trace(const SyntheticAppSpec& spec, const UserWorld& world) {
  DemoTrace trace;
  trace.name = spec.task.value("name", spec.name);
  const json& events = spec.task.at("events");
  for (std::size_t i = 0; i < events.size(); ++i) {
    const json& e = events[i];
    DemoEvent ev;
    auto kind = action_kind_from_string(e.at("action").get<std::string>());
    if (!kind) throw ValidationError("task.events[" + std::to_string(i) + "].action: unknown kind");
    ev.action = *kind;
    if (e.contains("screen")) ev.screen = world.screens.at(e["screen"].get<std::string>());
    ev.target = e.value("target", std::string());
    if (auto it = world.typed.find(i); it != world.typed.end()) ev.typed_text = it->second;
    ev.menu_choice = e.value("menu_choice", false);
    if (e.contains("parameter")) ev.parameter_name = e["parameter"].get<std::string>();
    if (e.contains("variable")) ev.variable_name = e["variable"].get<std::string>();
    if (e.contains("duration_s")) ev.duration_s = e["duration_s"].get<double>();
    if (ev.action == ActionKind::LAUNCH) ev.app = world.screens.at(spec.initial).context;
    trace.events.push_back(std::move(ev));
  }
  return trace;
}

void write_population(const SyntheticAppSpec& spec, const Population& pop, const std::filesystem::path& dir) {
  auto write = [](const std::filesystem::path& path, const ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out << j.dump(2) << "\n";
  };
  ordered_json truth = ordered_json::object();
  for (std::size_t u = 0; u < pop.users.size(); ++u) {
    const UserWorld& world = pop.users[u];
    const auto udir = dir / ("user" + std::to_string(u));
    std::filesystem::create_directories(udir / "screens");
    ordered_json app;
    app["package"] = spec.package;
    app["initial"] = spec.initial;
    app["screens"] = ordered_json::object();
    for (const auto& [name, screen] : world.screens) {
      write(udir / "screens" / (name + ".json"), screen_to_json(screen));
      app["screens"][name] = "screens/" + name + ".json";
    }
    app["transitions"] = ordered_json::array();
    for (const auto& t : app_for(spec, world).transitions)
      app["transitions"].push_back(
          {{"from", t.from}, {"element", t.element}, {"action", std::string(to_string(t.action))}, {"to", t.to}});
    write(udir / "app.json", app);

    ordered_json trace;
    trace["name"] = spec.task.value("name", spec.name);
    trace["events"] = ordered_json::array();
    const json& events = spec.task.at("events");
    for (std::size_t i = 0; i < events.size(); ++i) {
      ordered_json e;
      for (const auto& [k, v] : events[i].items()) {
        if (k == "screen") e["screen_file"] = "screens/" + v.get<std::string>() + ".json";
        else if (k != "typed_text") e[k] = v;
      }
      if (auto it = world.typed.find(i); it != world.typed.end()) e["typed_text"] = it->second;
      if (e.value("action", std::string()) == "LAUNCH") {
        const AppContext& ctx = world.screens.at(spec.initial).context;
        e["app"] = {{"package", ctx.package_name}, {"activity", ctx.activity_name}};
      }
      trace["events"].push_back(std::move(e));
    }
    write(udir / "trace.json", trace);

    ordered_json rows = ordered_json::array();
    for (const auto& [key, personal] : world.truth)
      rows.push_back({{"package", key.first.package_name},
                      {"activity", key.first.activity_name},
                      {"content", key.second},
                      {"personal", personal}});
    truth[world.user.str()] = std::move(rows);
  }
  write(dir / "truth.json", truth);
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

std::vector<std::unique_ptr<AggregationClient>> ingest_population(const Population& pop, Transport transport) {
  std::vector<std::unique_ptr<AggregationClient>> clients;
  for (const auto& u : pop.users) {
    clients.push_back(std::make_unique<AggregationClient>(transport, u.user));
    for (const auto& [name, screen] : u.screens) ingest_screen(*clients.back(), screen);
  }
  return clients;
}

bool truth_of(const UserWorld& author, const ClassifiedEntry& e) {
  if (auto it = author.truth.find({e.context, e.content}); it != author.truth.end()) return it->second;
  // Typed text never shows up on a screen; its label comes from the task spec.
  for (const auto& loc : e.locations) {
    if (!std::holds_alternative<TextArgSlot>(loc.detail) || loc.block.size() != 1) continue;
    if (auto it = author.typed_personal.find(loc.block[0]); it != author.typed_personal.end()) return it->second;
  }
  return true;
}

}  // namespace

EvalResult run_eval(const SyntheticAppSpec& spec, std::size_t n_users, double t, std::uint64_t seed) {
  Population pop = gen_population(spec, n_users, seed);
  ServerConfig config;
  config.t = t;
  config.quota_entries_per_day = 1'000'000;
  config.quota_queries_per_day = 1'000'000;
  AggregationService service(config, seeded_salt(seed));
  auto clients = ingest_population(pop, local_transport(service));

  const UserWorld& author = pop.users.front();
  Script script = record_from_trace(task_trace(spec, author));
  ObfuscationReport report = classify(script, *clients.front());

  EvalResult r;
  r.app = spec.name;
  for (const auto& e : report.entries) {
    EvalRow row;
    row.entry_id = e.entry_id;
    row.context = e.context;
    row.content = e.content;
    row.truth_personal = truth_of(author, e);
    row.classified_personal = !e.verdict.is_public;
    row.verdict = e.verdict;
    ++r.n;
    r.n_personal += row.truth_personal;
    if (row.classified_personal) {
      row.truth_personal ? ++r.tp : ++r.fp;
    } else {
      row.truth_personal ? ++r.fn : ++r.tn;
    }
    r.rows.push_back(std::move(row));
  }
  r.recall = r.tp + r.fn == 0 ? 1.0 : double(r.tp) / double(r.tp + r.fn);
  r.precision = r.tp + r.fp == 0 ? 1.0 : double(r.tp) / double(r.tp + r.fp);
  r.accuracy = r.n == 0 ? 1.0 : double(r.tp + r.tn) / double(r.n);
  return r;
}

std::string format_eval_table(const std::vector<EvalResult>& results) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-12s %5s %10s %8s %10s %9s\n", "app", "n", "n_personal", "recall", "precision",
                "accuracy");
  out << line;
  for (const auto& r : results) {
    std::snprintf(line, sizeof line, "%-12s %5zu %10zu %8.3f %10.3f %9.3f\n", r.app.c_str(), r.n, r.n_personal, r.recall,
                  r.precision, r.accuracy);
    out << line;
  }
  return out.str();
}

ordered_json eval_to_json(const std::vector<EvalResult>& results) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : results) {
    ordered_json j;
    j["app"] = r.app;
    j["n"] = r.n;
    j["n_personal"] = r.n_personal;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["tn"] = r.tn;
    j["fn"] = r.fn;
    j["recall"] = r.recall;
    j["precision"] = r.precision;
    j["accuracy"] = r.accuracy;
    ordered_json rows = ordered_json::array();
    for (const auto& row : r.rows) {
      rows.push_back({{"entry_id", row.entry_id},
                      {"activity", row.context.activity_name},
                      {"content", row.content},
                      {"truth_personal", row.truth_personal},
                      {"classified_personal", row.classified_personal},
                      {"f", row.verdict.f},
                      {"g", row.verdict.g},
                      {"p_value", row.verdict.p_value}});
    }
    j["rows"] = std::move(rows);
    arr.push_back(std::move(j));
  }
  return arr;
}

// ---------------------------------------------------------------------------
// Attacks and scans

namespace {

void query_hashes(const Query& q, std::vector<std::string>& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, q::HiddenPropertyEq>) {
          out.push_back(n.salted_hash);
        } else if constexpr (std::is_same_v<T, q::Conj>) {
          for (const auto& t : n.terms) query_hashes(t, out);
        } else if constexpr (std::is_same_v<T, q::Rel> || std::is_same_v<T, q::Nth>) {
          query_hashes(*n.inner, out);
        }
      },
      q.node);
}

void condition_hashes(const Condition& c, std::vector<std::string>& out) {
  for (const Operand* o : {&c.comparison.lhs, &c.comparison.rhs}) {
    if (const auto* l = std::get_if<Label>(o); l && l->hidden && c.kind == Condition::Kind::Compare) out.push_back(l->value);
  }
  for (const auto& sub : c.operands) condition_hashes(sub, out);
}

void block_hashes(const std::vector<Block>& blocks, std::vector<std::string>& out) {
  for (const Block& b : blocks) {
    if (const auto* op = std::get_if<Operation>(&b.node)) {
      if (op->target_query) query_hashes(*op->target_query, out);
      if (op->text_arg && op->text_arg->hidden) out.push_back(op->text_arg->value);
      if (op->snapshot) {
        visit_elements(op->snapshot->root, [&](const UiElement& el) {
          if (el.text && el.text->hidden) out.push_back(el.text->value);
          if (el.content_description && el.content_description->hidden) out.push_back(el.content_description->value);
        });
      }
    } else {
      const auto& c = std::get<Conditional>(b.node);
      condition_hashes(c.condition, out);
      block_hashes(c.then_blocks, out);
      if (c.else_blocks) block_hashes(*c.else_blocks, out);
    }
  }
}

std::set<AppContext> script_contexts(const Script& s) {
  std::set<AppContext> out{kScriptContext};
  for (const auto& [path, op] : all_operations(s)) {
    if (op->snapshot) out.insert(op->snapshot->context);
    if (op->app) out.insert(*op->app);
  }
  return out;
}

std::string json_escaped(std::string_view s) {
  std::string d = json(std::string(s)).dump();
  return d.substr(1, d.size() - 2);
}

}  // namespace

std::vector<std::string> hidden_hashes(const Script& s) {
  std::vector<std::string> out;
  block_hashes(s.blocks, out);
  for (const auto& p : s.parameters) {
    for (const auto& v : p.possible_values) {
      if (v.hidden) out.push_back(v.value);
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::size_t dictionary_attack_sim(const SharedScript& shared, const std::vector<std::string>& candidate_pool) {
  const auto hidden = hidden_hashes(shared.body);
  const std::set<std::string> targets(hidden.begin(), hidden.end());
  if (targets.empty() || candidate_pool.empty()) return 0;
  std::array<unsigned char, Salt::kSize> zero{};
  const Salt guess = Salt::from_bytes(zero);
  const auto contexts = script_contexts(shared.body);
  std::size_t hits = 0;
  for (const std::string& candidate : candidate_pool) {
    hits += targets.contains(sha512_hex(candidate));
    for (const AppContext& ctx : contexts) {
      ClientHash h = client_hash_pair(ctx, candidate);
      hits += targets.contains(h.hex());
      hits += targets.contains(salted_hash(h, guess).hex());
    }
  }
  return hits;
}

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return 0;
  std::size_t count = 0;
  std::set<std::string> forms{std::string(needle), json_escaped(needle)};
  for (const std::string& form : forms) {
    for (std::size_t pos = haystack.find(form); pos != std::string_view::npos; pos = haystack.find(form, pos + 1))
      ++count;
  }
  return count;
}

// ---------------------------------------------------------------------------
// End to end

E2EResult e2e_scenario(const SyntheticAppSpec& spec, std::uint64_t seed, const std::filesystem::path& work_dir,
                       const E2EOptions& options) {
  E2EResult r;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) r.failures.push_back(what);
    return ok;
  };
  if (options.n_users < 2 || options.consumer == 0 || options.consumer >= options.n_users)
    throw ValidationError("e2e: need >= 2 users and a consumer other than the author");

  Population pop = gen_population(spec, options.n_users, seed);
  const UserWorld& author = pop.users.front();
  const UserWorld& consumer = pop.users[options.consumer];

  std::filesystem::create_directories(work_dir);
  ServerConfig config;
  config.persistence_path = work_dir / "state.jsonl";
  std::filesystem::remove(config.persistence_path);
  AggregationService service(config, seeded_salt(seed));
  auto log = std::make_shared<std::vector<std::string>>();
  auto clients = ingest_population(pop, capturing_transport(local_transport(service), log));

  // Author side.
  r.recorded = record_from_trace(task_trace(spec, author));
  check(validate(r.recorded).empty(), "recorded script has validation findings");
  r.report = classify(r.recorded, *clients.front());
  ObfuscationResult shared = obfuscate(r.recorded, r.report);
  r.warnings = shared.warnings;
  r.shared_text = serialize_shared(shared.shared);
  service.persist();
  {
    std::ifstream in(config.persistence_path);
    r.state_file.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  r.payloads = *log;

  // Planted strings: everything personal the author saw or typed.
  std::set<std::string> planted;
  for (const auto& [key, personal] : author.truth) {
    if (personal) planted.insert(key.second);
  }
  for (const auto& [i, text] : author.typed) {
    if (author.typed_personal.at(i)) planted.insert(text);
  }
  r.planted.assign(planted.begin(), planted.end());
  for (const std::string& p : r.planted) {
    std::size_t hits = count_occurrences(r.shared_text, p) + count_occurrences(r.state_file, p);
    for (const auto& payload : r.payloads) hits += count_occurrences(payload, p);
    if (hits) r.failures.push_back("planted string found in output: " + p);
    r.leak_hits += hits;
  }

  // Every synthesized alternative identifies its target without personal strings.
  std::map<AppContext, std::set<std::string>> personal;
  for (const auto& e : r.report.entries) {
    if (!e.final_public()) personal[e.context].insert(e.content);
  }
  for (const auto& [path, op] : all_operations(shared.shared.body)) {
    if (!targets_element(op->kind)) continue;
    const Operation* original = operation_at(r.recorded, path);
    if (!check(op->alt_query.has_value(), "operation " + format_path(path) + " has no alt_query")) continue;
    UiSnapshotGraph g = build_graph(*original->snapshot);
    check(evaluate(*op->alt_query, g) == evaluate(*original->target_query, g),
          "alt_query of " + format_path(path) + " does not identify the recorded target");
    for (const StringRef& ref : string_refs(*op->alt_query))
      check(!personal[original->snapshot->context].contains(ref.value),
            "alt_query of " + format_path(path) + " references a personal string");
  }

  // Author replay reproduces the demonstration.
  SimulatedApp author_app = app_for(spec, author);
  r.replay = execute(r.recorded, author_app);
  std::vector<std::string> demo;
  for (const auto& e : spec.task.at("events")) {
    if (e.contains("target")) demo.push_back(e["target"].get<std::string>());
  }
  check(r.replay.trace.completed && r.replay.trace.element_sequence() == demo, "author replay diverges from demo");

  // Consumer side: typed secrets come from the consumer, keyed by the author's hash.
  SimulatedApp consumer_app = app_for(spec, consumer);
  ExecutorOptions opts;
  for (const auto& [path, op] : all_operations(shared.shared.body)) {
    if (op->kind == ActionKind::SET_TEXT && op->text_arg && op->text_arg->hidden && path.size() == 1) {
      if (auto it = consumer.typed.find(path[0]); it != consumer.typed.end()) opts.inputs[op->text_arg->value] = it->second;
    }
  }
  Script shared_copy = shared.shared.body;
  r.consumer = execute(shared.shared.body, consumer_app, opts);
  check(shared_copy == shared.shared.body, "shared script mutated by execution");
  check(r.consumer.trace.completed, "consumer run failed: " + trace_to_jsonl(r.consumer.trace));
  check(hidden_hashes(r.consumer.rebuilt).empty() || !r.consumer.trace.completed, "rebuilt script keeps hidden slots");

  // Parameters take the consumer's own menu.
  const auto& events = spec.task.at("events");
  for (std::size_t i = 0; i < events.size(); ++i) {
    if (!events[i].value("menu_choice", false)) continue;
    const Screen& screen = consumer.screens.at(events[i].at("screen").get<std::string>());
    const std::string target = events[i].at("target").get<std::string>();
    const UiElement* el = find_element(screen.root, target);
    const UiElement* parent = find_parent(screen.root, target);
    std::vector<std::string> menu;
    if (el && parent) {
      for (const auto& sib : parent->children) {
        if (sib.class_name == el->class_name && sib.text) menu.push_back(sib.text->value);
      }
    }
    r.consumer_menu = menu;
    for (const auto& p : r.consumer.rebuilt.parameters) {
      if (p.bound_op != i) continue;
      std::vector<std::string> got;
      for (const auto& v : p.possible_values) got.push_back(v.hidden ? "<hidden>" : v.value);
      check(got == menu, "parameter '" + p.name + "' does not list the consumer's menu");
    }
  }

  // Rebuilt script runs on plain equality alone.
  ExecutorOptions plain = opts;
  plain.use_alt_queries = false;
  r.rerun = execute(r.consumer.rebuilt, consumer_app, plain);
  bool alt_used = std::any_of(r.rerun.trace.events.begin(), r.rerun.trace.events.end(),
                              [](const TraceEvent& e) { return e.used_alt; });
  check(r.rerun.trace.completed && !alt_used, "rebuilt script does not re-run without alt queries");

  std::vector<std::string> pool = options.attack_pool;
  pool.insert(pool.end(), r.planted.begin(), r.planted.end());
  r.attack_matches = dictionary_attack_sim(shared.shared, pool);
  check(r.attack_matches == 0, "dictionary attack matched hidden hashes");

  r.pass = r.failures.empty();
  return r;
}

}  // namespace pinalite
