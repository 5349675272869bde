#include "pinalite/server.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "pinalite/errors.hpp"

namespace pinalite {

using nlohmann::json;

namespace {

constexpr std::int64_t kWindowSeconds = 24 * 60 * 60;
constexpr std::string_view kStateFormat = "pinalite-state/1";

int kind_index(RequestKind k) { return k == RequestKind::Ingest ? 0 : 1; }

const char* kind_name(RequestKind k) { return k == RequestKind::Ingest ? "ingest" : "uniqueness"; }

}  // namespace

// ---------------------------------------------------------------------------

void ServerConfig::validate() const {
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("t must lie in (0, 1)");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("alpha must lie in (0, 1)");
  if (quota_entries_per_day == 0 || quota_queries_per_day == 0) throw ValidationError("quotas must be positive");
}

ServerConfig ServerConfig::from_json(const json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw ValidationError("config: expected object");
  ServerConfig c;
  try {
    c.t = j.value("t", c.t);
    c.alpha = j.value("alpha", c.alpha);
    c.quota_entries_per_day = j.value("quota_entries_per_day", c.quota_entries_per_day);
    c.quota_queries_per_day = j.value("quota_queries_per_day", c.quota_queries_per_day);
    auto resolve = [&](const char* key) -> std::filesystem::path {
      if (!j.contains(key)) return {};
      std::filesystem::path p = j.at(key).get<std::string>();
      return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };
    c.persistence_path = resolve("persistence_path");
    c.salt_file = resolve("salt_file");
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

std::filesystem::path ServerConfig::resolved_salt_file() const {
  if (!salt_file.empty()) return salt_file;
  if (const char* env = std::getenv("PINALITE_SALT_FILE"); env && *env) return env;
  std::filesystem::path dir = persistence_path.empty() ? std::filesystem::path(".") : persistence_path.parent_path();
  return dir / "salt.key";
}

double exact_binomial_tail(std::uint64_t f, std::uint64_t g, double t) {
  if (f > g) throw ValidationError("exact_binomial_tail: need 0 <= F <= G");
  if (!(t > 0.0 && t < 1.0)) throw ValidationError("exact_binomial_tail: t must lie in (0, 1)");
  if (f == 0) return 1.0;
  const double n = static_cast<double>(g);
  const double lt = std::log(t);
  const double l1t = std::log1p(-t);
  std::vector<double> logs;
  logs.reserve(g - f + 1);
  for (std::uint64_t k = f; k <= g; ++k) {
    const double kk = static_cast<double>(k);
    logs.push_back(std::lgamma(n + 1) - std::lgamma(kk + 1) - std::lgamma(n - kk + 1) + kk * lt + (n - kk) * l1t);
  }
  double m = *std::max_element(logs.begin(), logs.end());
  double sum = 0.0;
  for (double v : logs) sum += std::exp(v - m);
  return std::clamp(std::exp(m + std::log(sum)), 0.0, 1.0);
}

UniquenessVerdict make_verdict(std::uint64_t f, std::uint64_t g, double t, double alpha) {
  UniquenessVerdict v;
  v.f = f;
  v.g = g;
  if (g == 0) return v;
  v.p_value = exact_binomial_tail(f, g, t);
  v.is_public = v.p_value < alpha;
  return v;
}

// ---------------------------------------------------------------------------

AggregationService::Clock AggregationService::system_clock() {
  return [] {
    return std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
  };
}

AggregationService::AggregationService(ServerConfig config, const Salt& salt, Clock clock)
    : config_(std::move(config)), salt_(salt), clock_(std::move(clock)) {
  config_.validate();
}

std::unique_ptr<AggregationService> AggregationService::open(const ServerConfig& config, Clock clock) {
  config.validate();
  Salt salt = Salt::load_or_create(config.resolved_salt_file());
  auto service = std::make_unique<AggregationService>(config, salt, std::move(clock));
  service->restore();
  return service;
}

AnomalyDecision AggregationService::check_locked(const std::string& user, RequestKind kind, std::size_t items) {
  if (blocked_.contains(user)) return {AnomalyDecision::Kind::Block, 0};
  const std::int64_t now = clock_();
  Window& w = windows_[{user, kind_index(kind)}];
  while (!w.events.empty() && w.events.front().first <= now - kWindowSeconds) w.events.pop_front();
  std::uint64_t used = 0;
  for (const auto& e : w.events) used += e.second;
  const std::uint64_t total = used + items;
  w.events.emplace_back(now, items);

  const std::uint64_t quota = kind == RequestKind::Ingest ? config_.quota_entries_per_day : config_.quota_queries_per_day;
  if (total > 3 * quota) {
    blocked_.insert(user);
    return {AnomalyDecision::Kind::Block, 0};
  }
  if (total > quota) {
    long retry = static_cast<long>(w.events.front().first + kWindowSeconds - now);
    return {AnomalyDecision::Kind::Reject, std::max(1L, retry)};
  }
  return {AnomalyDecision::Kind::Allow, 0};
}

AnomalyDecision AggregationService::anomaly_check(const UserId& user, RequestKind kind, std::size_t items) {
  std::lock_guard lock(mu_);
  return check_locked(user.str(), kind, items);
}

bool AggregationService::is_blocked(const UserId& user) const {
  std::lock_guard lock(mu_);
  return blocked_.contains(user.str());
}

namespace {

void enforce(const AnomalyDecision& d, RequestKind kind) {
  switch (d.kind) {
    case AnomalyDecision::Kind::Allow:
      return;
    case AnomalyDecision::Kind::Reject:
      throw ServerRejected(429, std::string(kind_name(kind)) + " quota exceeded", d.retry_after_s);
    case AnomalyDecision::Kind::Block:
      throw ServerRejected(403, "client blocked");
  }
}

}  // namespace

IngestAck AggregationService::ingest(const UserId& user, const ClientHash& context_hash,
                                     const std::vector<ClientHash>& pair_hashes) {
  if (pair_hashes.empty()) throw ValidationError("pair_hashes must not be empty");
  const std::string ctx = salted_hash(context_hash, salt_).hex();
  std::vector<std::string> pairs;
  pairs.reserve(pair_hashes.size());
  for (const auto& p : pair_hashes) pairs.push_back(salted_hash(p, salt_).hex());

  std::lock_guard lock(mu_);
  enforce(check_locked(user.str(), RequestKind::Ingest, pair_hashes.size()), RequestKind::Ingest);
  IngestAck ack;
  context_users_[ctx].insert(user.str());
  for (const auto& p : pairs) {
    if (entry_users_[p].insert(user.str()).second) {
      ++ack.new_additions;
    } else {
      ++ack.duplicates;
    }
  }
  return ack;
}

std::vector<UniquenessResult> AggregationService::uniqueness(const UserId& user,
                                                             const std::vector<UniquenessQuery>& queries) {
  std::vector<std::pair<std::string, SaltedHash>> salted;
  salted.reserve(queries.size());
  for (const auto& q : queries) salted.emplace_back(salted_hash(q.context_hash, salt_).hex(), salted_hash(q.pair_hash, salt_));

  std::lock_guard lock(mu_);
  enforce(check_locked(user.str(), RequestKind::Uniqueness, queries.size()), RequestKind::Uniqueness);
  std::vector<UniquenessResult> out;
  out.reserve(queries.size());
  static const UserSet kEmpty;
  for (const auto& [ctx, pair] : salted) {
    auto c = context_users_.find(ctx);
    auto e = entry_users_.find(pair.hex());
    const UserSet& cu = c == context_users_.end() ? kEmpty : c->second;
    const UserSet& eu = e == entry_users_.end() ? kEmpty : e->second;
    // Count only pair users also seen in this context so F <= G holds even
    // when a client pairs a hash with the wrong context.
    std::uint64_t f = 0;
    for (const auto& u : eu) f += cu.contains(u);
    out.push_back({pair, make_verdict(f, cu.size(), config_.t, config_.alpha)});
  }
  return out;
}

std::size_t AggregationService::entry_count() const {
  std::lock_guard lock(mu_);
  return entry_users_.size();
}

std::size_t AggregationService::context_count() const {
  std::lock_guard lock(mu_);
  return context_users_.size();
}

void AggregationService::persist() const {
  std::lock_guard lock(mu_);
  persist_locked();
}

void AggregationService::persist_locked() const {
  if (config_.persistence_path.empty()) return;
  const auto& path = config_.persistence_path;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw Error("cannot write state file " + tmp.string());
    std::size_t records = 0;
    auto emit = [&](const json& j) {
      out << j.dump() << '\n';
      ++records;
    };
    emit({{"kind", "header"}, {"format", kStateFormat}});
    for (const auto& [hash, users] : context_users_) emit({{"kind", "context"}, {"salted_hash", hash}, {"users", users}});
    for (const auto& [hash, users] : entry_users_) emit({{"kind", "entry"}, {"salted_hash", hash}, {"users", users}});
    for (const auto& [key, window] : windows_) {
      if (window.events.empty()) continue;
      json events = json::array();
      for (const auto& [ts, n] : window.events) events.push_back({ts, n});
      emit({{"kind", "quota"}, {"user", key.first}, {"request", key.second == 0 ? "ingest" : "uniqueness"}, {"events", events}});
    }
    for (const auto& u : blocked_) emit({{"kind", "blocked"}, {"user", u}});
    out << json{{"kind", "end"}, {"records", records}}.dump() << '\n';
    out.flush();
    if (!out) throw Error("short write on state file " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

void AggregationService::restore() {
  std::lock_guard lock(mu_);
  context_users_.clear();
  entry_users_.clear();
  windows_.clear();
  blocked_.clear();
  const auto& path = config_.persistence_path;
  if (path.empty() || !std::filesystem::exists(path)) return;

  std::ifstream in(path);
  if (!in) throw Error("cannot read state file " + path.string());
  auto corrupt = [&](std::size_t line, const std::string& why) {
    return Error("corrupt state file " + path.string() + " line " + std::to_string(line) + ": " + why);
  };
  std::string line;
  std::size_t lineno = 0;
  std::size_t records = 0;
  bool ended = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (ended) throw corrupt(lineno, "data after end record");
    json j;
    try {
      j = json::parse(line);
      const std::string kind = j.at("kind").get<std::string>();
      if (lineno == 1) {
        if (kind != "header" || j.at("format").get<std::string>() != kStateFormat) throw corrupt(lineno, "bad header");
      } else if (kind == "context" || kind == "entry") {
        auto hash = j.at("salted_hash").get<std::string>();
        if (!Digest::is_valid_hex(hash)) throw corrupt(lineno, "bad hash");
        auto& target = kind == "context" ? context_users_ : entry_users_;
        for (const auto& u : j.at("users")) target[hash].insert(UserId::parse(u.get<std::string>()).str());
      } else if (kind == "quota") {
        std::string req = j.at("request").get<std::string>();
        if (req != "ingest" && req != "uniqueness") throw corrupt(lineno, "bad request kind");
        Window& w = windows_[{UserId::parse(j.at("user").get<std::string>()).str(), req == "ingest" ? 0 : 1}];
        for (const auto& e : j.at("events")) w.events.emplace_back(e.at(0).get<std::int64_t>(), e.at(1).get<std::uint64_t>());
      } else if (kind == "blocked") {
        blocked_.insert(UserId::parse(j.at("user").get<std::string>()).str());
      } else if (kind == "end") {
        if (j.at("records").get<std::size_t>() != records) throw corrupt(lineno, "record count mismatch");
        ended = true;
        continue;
      } else {
        throw corrupt(lineno, "unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw corrupt(lineno, e.what());
    } catch (const ValidationError& e) {
      throw corrupt(lineno, e.what());
    }
    ++records;
  }
  if (!ended) throw corrupt(lineno, "truncated (no end record)");
}

// ---------------------------------------------------------------------------
// HTTP routing

namespace {

HttpResponse json_response(int status, const json& body) {
  HttpResponse r;
  r.status = status;
  r.body = body.dump();
  r.headers["Content-Type"] = "application/json";
  return r;
}

HttpResponse error_response(int status, const std::string& message) {
  return json_response(status, {{"error", message}});
}

UserId parse_user(const json& body) {
  if (!body.contains("user_id") || !body["user_id"].is_string()) throw ValidationError("user_id: missing");
  return UserId::parse(body["user_id"].get<std::string>());
}

ClientHash parse_hash(const json& j, const std::string& field) {
  if (!j.is_string()) throw ValidationError(field + ": expected hex string");
  try {
    return ClientHash::from_hex(j.get<std::string>());
  } catch (const ValidationError& e) {
    throw ValidationError(field + ": " + e.what());
  }
}

HttpResponse route(AggregationService& service, const std::string& method, const std::string& path,
                   const std::string& body) {
  if (path == "/v1/health") {
    if (method != "GET") return error_response(405, "method not allowed");
    return json_response(200, {{"status", "ok"}, {"entries", service.entry_count()}, {"contexts", service.context_count()}});
  }
  if (path != "/v1/ingest" && path != "/v1/uniqueness") return error_response(404, "not found");
  if (method != "POST") return error_response(405, "method not allowed");

  json req = json::parse(body, nullptr, false);
  if (req.is_discarded() || !req.is_object()) throw ValidationError("body: expected JSON object");
  UserId user = parse_user(req);

  if (path == "/v1/ingest") {
    ClientHash ctx = parse_hash(req.value("context_hash", json()), "context_hash");
    if (!req.contains("pair_hashes") || !req["pair_hashes"].is_array()) throw ValidationError("pair_hashes: expected array");
    std::vector<ClientHash> pairs;
    for (std::size_t i = 0; i < req["pair_hashes"].size(); ++i)
      pairs.push_back(parse_hash(req["pair_hashes"][i], "pair_hashes[" + std::to_string(i) + "]"));
    IngestAck ack = service.ingest(user, ctx, pairs);
    return json_response(200, {{"new", ack.new_additions}, {"duplicate", ack.duplicates}});
  }

  if (!req.contains("queries") || !req["queries"].is_array()) throw ValidationError("queries: expected array");
  std::vector<UniquenessQuery> queries;
  for (std::size_t i = 0; i < req["queries"].size(); ++i) {
    const json& q = req["queries"][i];
    const std::string at = "queries[" + std::to_string(i) + "]";
    if (!q.is_object()) throw ValidationError(at + ": expected object");
    queries.push_back({parse_hash(q.value("context_hash", json()), at + ".context_hash"),
                       parse_hash(q.value("pair_hash", json()), at + ".pair_hash")});
  }
  json results = json::array();
  for (const auto& r : service.uniqueness(user, queries)) {
    results.push_back({{"salted_pair_hash", r.salted_pair_hash.hex()},
                       {"f", r.verdict.f},
                       {"g", r.verdict.g},
                       {"p_value", r.verdict.p_value},
                       {"public", r.verdict.is_public}});
  }
  return json_response(200, {{"results", results}});
}

}  // namespace

HttpResponse handle_request(AggregationService& service, const std::string& method, const std::string& path,
                            const std::string& body) {
  try {
    return route(service, method, path, body);
  } catch (const ServerRejected& e) {
    HttpResponse r = error_response(e.status(), e.what());
    if (e.retry_after_s() > 0) r.headers["Retry-After"] = std::to_string(e.retry_after_s());
    return r;
  } catch (const ValidationError& e) {
    return error_response(400, e.what());
  }
}

struct HttpServer::Impl {
  explicit Impl(AggregationService& s) : service(s) {}
  AggregationService& service;
  httplib::Server server;
  std::thread thread;
};

HttpServer::HttpServer(AggregationService& service) : impl_(std::make_unique<Impl>(service)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    HttpResponse r = handle_request(impl_->service, req.method, req.path, req.body);
    res.status = r.status;
    for (const auto& [k, v] : r.headers) {
      if (k != "Content-Type") res.set_header(k, v);
    }
    res.set_content(r.body, "application/json");
  };
  impl_->server.Get("/v1/.*", handler);
  impl_->server.Post("/v1/.*", handler);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) throw Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// ---------------------------------------------------------------------------
// Client

Transport http_transport(const std::string& base_url) {
  auto client = std::make_shared<httplib::Client>(base_url);
  if (!client->is_valid()) throw ServerUnavailable("invalid server url '" + base_url + "'");
  client->set_connection_timeout(5);
  client->set_read_timeout(30);
  auto mu = std::make_shared<std::mutex>();
  return [client, mu, base_url](const std::string& method, const std::string& path, const std::string& body) {
    std::lock_guard lock(*mu);
    httplib::Result res = method == "GET" ? client->Get(path) : client->Post(path, body, "application/json");
    if (!res) throw ServerUnavailable("server " + base_url + " unreachable: " + httplib::to_string(res.error()));
    HttpResponse out;
    out.status = res->status;
    out.body = res->body;
    for (const auto& [k, v] : res->headers) out.headers[k] = v;
    return out;
  };
}

Transport local_transport(AggregationService& service) {
  return [&service](const std::string& method, const std::string& path, const std::string& body) {
    return handle_request(service, method, path, body);
  };
}

Transport capturing_transport(Transport inner, std::shared_ptr<std::vector<std::string>> log) {
  return [inner = std::move(inner), log](const std::string& method, const std::string& path, const std::string& body) {
    log->push_back(body);
    return inner(method, path, body);
  };
}

json AggregationClient::call(const std::string& method, const std::string& path, const json& body) {
  HttpResponse r = transport_(method, path, method == "GET" ? std::string() : body.dump());
  json parsed = json::parse(r.body, nullptr, false);
  if (r.status != 200) {
    long retry = 0;
    if (auto it = r.headers.find("Retry-After"); it != r.headers.end()) retry = std::atol(it->second.c_str());
    std::string msg = parsed.is_object() && parsed.contains("error") ? parsed["error"].get<std::string>() : r.body;
    throw ServerRejected(r.status, "server rejected request (" + std::to_string(r.status) + "): " + msg, retry);
  }
  if (parsed.is_discarded()) throw ServerUnavailable("server sent a malformed response");
  return parsed;
}

IngestAck AggregationClient::ingest(const ClientHash& context_hash, const std::vector<ClientHash>& pair_hashes) {
  json pairs = json::array();
  for (const auto& p : pair_hashes) pairs.push_back(p.hex());
  json r = call("POST", "/v1/ingest", {{"user_id", user_.str()}, {"context_hash", context_hash.hex()}, {"pair_hashes", pairs}});
  try {
    return {r.at("new").get<std::size_t>(), r.at("duplicate").get<std::size_t>()};
  } catch (const json::exception&) {
    throw ServerUnavailable("server sent a malformed ingest ack");
  }
}

std::vector<UniquenessResult> AggregationClient::uniqueness(const std::vector<UniquenessQuery>& queries) {
  if (queries.empty()) return {};
  json qs = json::array();
  for (const auto& q : queries) qs.push_back({{"context_hash", q.context_hash.hex()}, {"pair_hash", q.pair_hash.hex()}});
  json r = call("POST", "/v1/uniqueness", {{"user_id", user_.str()}, {"queries", qs}});
  std::vector<UniquenessResult> out;
  try {
    const json& results = r.at("results");
    if (results.size() != queries.size()) throw ServerUnavailable("server answered a different number of queries");
    for (const auto& x : results) {
      UniquenessVerdict v;
      v.f = x.at("f").get<std::uint64_t>();
      v.g = x.at("g").get<std::uint64_t>();
      v.p_value = x.at("p_value").get<double>();
      v.is_public = x.at("public").get<bool>();
      out.push_back({SaltedHash::from_hex(x.at("salted_pair_hash").get<std::string>()), v});
    }
  } catch (const json::exception&) {
    throw ServerUnavailable("server sent a malformed uniqueness response");
  } catch (const ValidationError&) {
    throw ServerUnavailable("server sent a malformed salted hash");
  }
  return out;
}

json AggregationClient::health() { return call("GET", "/v1/health", json()); }

IngestAck ingest_screen(AggregationClient& client, const Screen& screen) {
  std::vector<ClientHash> pairs;
  for (const InfoEntry& e : extract_entries(build_graph(screen))) pairs.push_back(client_hash_pair(e.context, e.content));
  if (pairs.empty()) return {};
  return client.ingest(client_hash_context(screen.context), pairs);
}

}  // namespace pinalite
