#include <gtest/gtest.h>

#include <boost/multiprecision/cpp_int.hpp>
#include <chrono>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "pinalite/errors.hpp"
#include "pinalite/server.hpp"
#include "test_support.hpp"

using namespace pinalite;
using nlohmann::json;
using boost::multiprecision::cpp_rational;

namespace {

// Exact tail with rational t = num/den; only converted to double at the end.
double rational_tail(unsigned f, unsigned g, unsigned num, unsigned den) {
  cpp_rational t(num, den), sum = 0, binom = 1;
  for (unsigned k = 0; k <= g; ++k) {
    if (k > 0) binom = binom * (g - k + 1) / k;
    if (k < f) continue;
    cpp_rational term = binom;
    for (unsigned i = 0; i < k; ++i) term *= t;
    for (unsigned i = 0; i < g - k; ++i) term *= (1 - t);
    sum += term;
  }
  return static_cast<double>(sum);
}

Salt fixed_salt(unsigned char v) {
  std::array<unsigned char, Salt::kSize> b{};
  b.fill(v);
  return Salt::from_bytes(b);
}

ClientHash pair(const std::string& content, const AppContext& ctx = fixtures::kTestContext) {
  return client_hash_pair(ctx, content);
}
ClientHash ctx_hash(const AppContext& ctx = fixtures::kTestContext) { return client_hash_context(ctx); }

std::vector<UserId> users(std::size_t n) {
  std::vector<UserId> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(UserId::generate());
  return out;
}

UniquenessVerdict verdict_of(AggregationService& s, const std::string& content, const AppContext& ctx = fixtures::kTestContext) {
  return s.uniqueness(UserId::generate(), {{ctx_hash(ctx), pair(content, ctx)}})[0].verdict;
}

struct FakeClock {
  std::int64_t now = 1'700'000'000;
  AggregationService::Clock fn() {
    return [this] { return now; };
  }
};

}  // namespace

TEST(BinomialTail, AcceptanceValues) {
  EXPECT_NEAR(exact_binomial_tail(5, 5, 0.5), 0.03125, 1e-12);
  EXPECT_NEAR(exact_binomial_tail(4, 5, 0.5), 0.1875, 1e-12);
  EXPECT_NEAR(exact_binomial_tail(0, 5, 0.5), 1.0, 1e-12);
  EXPECT_NEAR(exact_binomial_tail(10, 10, 0.5), 1.0 / 1024, 1e-12);
}

TEST(BinomialTail, AgreesWithExactRationalOracle) {
  const std::vector<std::pair<unsigned, unsigned>> ts = {{1, 2}, {1, 10}, {3, 10}, {9, 10}, {1, 3}};
  for (auto [num, den] : ts) {
    for (unsigned g = 0; g <= 64; g += (g < 12 ? 1 : 7)) {
      for (unsigned f = 0; f <= g; ++f) {
        double want = rational_tail(f, g, num, den);
        double got = exact_binomial_tail(f, g, double(num) / den);
        EXPECT_NEAR(got, want, 1e-12 + 1e-9 * want) << f << "/" << g << " t=" << num << "/" << den;
      }
    }
  }
}

TEST(BinomialTail, Errors) {
  EXPECT_THROW(exact_binomial_tail(6, 5, 0.5), ValidationError);
  EXPECT_THROW(exact_binomial_tail(1, 5, 0.0), ValidationError);
  EXPECT_THROW(exact_binomial_tail(1, 5, 1.5), ValidationError);
}

TEST(Verdict, MinimumEvidenceBound) {
  for (std::uint64_t g = 0; g <= 4; ++g)
    for (std::uint64_t f = 0; f <= g; ++f) EXPECT_FALSE(make_verdict(f, g, 0.5, 0.05).is_public) << f << "/" << g;
  EXPECT_TRUE(make_verdict(5, 5, 0.5, 0.05).is_public);
  UniquenessVerdict none = make_verdict(0, 0, 0.5, 0.05);
  EXPECT_FALSE(none.is_public);
  EXPECT_EQ(none.p_value, 1.0);
  EXPECT_FALSE(none.h().has_value());
  EXPECT_DOUBLE_EQ(*make_verdict(4, 5, 0.5, 0.05).h(), 0.8);
}

TEST(Verdict, FlipsExactlyAsClosedFormPredicts) {
  // F stalls at 5 while G grows: public iff rational tail < alpha.
  for (unsigned g = 5; g <= 20; ++g) {
    bool expected = rational_tail(5, g, 1, 2) < 0.05;
    EXPECT_EQ(make_verdict(5, g, 0.5, 0.05).is_public, expected) << g;
  }
}

TEST(Service, IngestIdempotentAndCounts) {
  AggregationService s(ServerConfig{}, fixed_salt(1));
  auto us = users(5);
  for (const auto& u : us) {
    IngestAck a = s.ingest(u, ctx_hash(), {pair("next"), pair("Hello")});
    EXPECT_EQ(a.new_additions, 2u);
    EXPECT_EQ(a.duplicates, 0u);
  }
  IngestAck again = s.ingest(us[0], ctx_hash(), {pair("next"), pair("Hello")});
  EXPECT_EQ(again.new_additions, 0u);
  EXPECT_EQ(again.duplicates, 2u);
  s.ingest(us[0], ctx_hash(), {pair("mine")});

  auto v = verdict_of(s, "next");
  EXPECT_EQ(v.f, 5u);
  EXPECT_EQ(v.g, 5u);
  EXPECT_TRUE(v.is_public);
  auto mine = verdict_of(s, "mine");
  EXPECT_EQ(mine.f, 1u);
  EXPECT_FALSE(mine.is_public);
  auto unknown = verdict_of(s, "next", {"com.other", ".X"});
  EXPECT_EQ(unknown.g, 0u);
  EXPECT_EQ(unknown.p_value, 1.0);
  EXPECT_EQ(s.context_count(), 1u);
  EXPECT_EQ(s.entry_count(), 3u);
  EXPECT_THROW(s.ingest(us[0], ctx_hash(), {}), ValidationError);
}

TEST(Service, SaltedHashReturnedAndSaltDependent) {
  AggregationService a(ServerConfig{}, fixed_salt(1));
  AggregationService b(ServerConfig{}, fixed_salt(2));
  UserId u = UserId::generate();
  auto ra = a.uniqueness(u, {{ctx_hash(), pair("x")}})[0];
  auto rb = b.uniqueness(u, {{ctx_hash(), pair("x")}})[0];
  EXPECT_EQ(ra.salted_pair_hash, salted_hash(pair("x"), fixed_salt(1)));
  EXPECT_NE(ra.salted_pair_hash, rb.salted_pair_hash);
  EXPECT_NE(ra.salted_pair_hash.hex(), pair("x").hex());
}

TEST(Service, FNeverExceedsGUnderRandomIngest) {
  AggregationService s(ServerConfig{}, fixed_salt(3));
  std::mt19937_64 rng(17);
  const std::vector<AppContext> ctxs = {{"a", ".A"}, {"a", ".B"}, {"b", ".A"}};
  const std::vector<std::string> contents = {"x", "y", "z", "w"};
  auto us = users(12);
  std::map<std::pair<int, int>, UniquenessVerdict> last;
  for (int step = 0; step < 400; ++step) {
    const auto& u = us[rng() % us.size()];
    int c = rng() % ctxs.size();
    std::vector<ClientHash> ps;
    for (std::size_t k = 0; k < contents.size(); ++k)
      if (rng() % 2) ps.push_back(pair(contents[k], ctxs[c]));
    if (ps.empty()) continue;
    s.ingest(u, ctx_hash(ctxs[c]), ps);
    for (int ci = 0; ci < 3; ++ci) {
      for (int k = 0; k < 4; ++k) {
        auto v = verdict_of(s, contents[k], ctxs[ci]);
        ASSERT_LE(v.f, v.g);
        auto& prev = last[{ci, k}];
        ASSERT_GE(v.f, prev.f);  // monotone
        ASSERT_GE(v.g, prev.g);
        prev = v;
      }
    }
  }
}

TEST(Service, QuotaRejectRetryAfterAndBlock) {
  ServerConfig cfg;
  cfg.quota_queries_per_day = 1000;
  cfg.quota_entries_per_day = 10;
  FakeClock clock;
  AggregationService s(cfg, fixed_salt(4), clock.fn());
  UserId u = UserId::generate();

  for (int i = 0; i < 1000; ++i) ASSERT_EQ(s.anomaly_check(u, RequestKind::Uniqueness, 1).kind, AnomalyDecision::Kind::Allow);
  clock.now += 3600;
  auto reject = s.anomaly_check(u, RequestKind::Uniqueness, 1);  // 1001st
  EXPECT_EQ(reject.kind, AnomalyDecision::Kind::Reject);
  EXPECT_EQ(reject.retry_after_s, 86400 - 3600);
  for (int i = 1002; i <= 3000; ++i) ASSERT_EQ(s.anomaly_check(u, RequestKind::Uniqueness, 1).kind, AnomalyDecision::Kind::Reject);
  EXPECT_EQ(s.anomaly_check(u, RequestKind::Uniqueness, 1).kind, AnomalyDecision::Kind::Block);  // 3001st
  EXPECT_TRUE(s.is_blocked(u));
  clock.now += 2 * 86400;
  EXPECT_EQ(s.anomaly_check(u, RequestKind::Uniqueness, 1).kind, AnomalyDecision::Kind::Block);

  // Entries: 10 per day through the real ingest path; window slides.
  UserId v = UserId::generate();
  std::vector<ClientHash> ten;
  for (int i = 0; i < 10; ++i) ten.push_back(pair("c" + std::to_string(i)));
  s.ingest(v, ctx_hash(), ten);
  try {
    s.ingest(v, ctx_hash(), {pair("one more")});
    FAIL();
  } catch (const ServerRejected& e) {
    EXPECT_EQ(e.status(), 429);
    EXPECT_GT(e.retry_after_s(), 0);
  }
  clock.now += 86401;
  EXPECT_NO_THROW(s.ingest(v, ctx_hash(), {pair("next day")}));
}

TEST(Service, BlockedIngestIs403) {
  ServerConfig cfg;
  cfg.quota_entries_per_day = 2;
  AggregationService s(cfg, fixed_salt(5));
  UserId u = UserId::generate();
  std::vector<ClientHash> seven;
  for (int i = 0; i < 7; ++i) seven.push_back(pair("c" + std::to_string(i)));
  try {
    s.ingest(u, ctx_hash(), seven);
    FAIL();
  } catch (const ServerRejected& e) {
    EXPECT_EQ(e.status(), 403);
  }
  EXPECT_EQ(s.context_count(), 0u);  // rejected requests leave no trace
}

TEST(Persistence, RoundTripAndCorruption) {
  auto dir = fixtures::scratch_dir("persist");
  ServerConfig cfg;
  cfg.persistence_path = dir / "state.jsonl";
  cfg.salt_file = dir / "salt.key";
  cfg.quota_entries_per_day = 3;
  std::vector<UserId> us = users(6);
  UserId blocked = UserId::generate();
  std::map<std::string, UniquenessVerdict> before;
  {
    auto s = AggregationService::open(cfg);
    for (std::size_t i = 0; i < us.size(); ++i) s->ingest(us[i], ctx_hash(), {pair("shared"), pair("u" + std::to_string(i))});
    EXPECT_THROW(s->ingest(blocked, ctx_hash(), std::vector<ClientHash>(10, pair("spam"))), ServerRejected);
    for (std::string c : {"shared", "u0", "u5", "never"}) before[c] = verdict_of(*s, c);
    s->persist();
  }
  std::string state;
  {
    std::ifstream in(cfg.persistence_path);
    std::stringstream ss;
    ss << in.rdbuf();
    state = ss.str();
  }
  EXPECT_EQ(state.find("shared"), std::string::npos);
  EXPECT_EQ(state.find(pair("shared").hex()), std::string::npos);  // only salted hashes stored
  {
    auto s = AggregationService::open(cfg);
    for (const auto& [c, v] : before) EXPECT_EQ(verdict_of(*s, c), v) << c;
    EXPECT_TRUE(s->is_blocked(blocked));
    // Quota window survives: us[0] already used 2 of 3.
    EXPECT_THROW(s->ingest(us[0], ctx_hash(), {pair("a"), pair("b")}), ServerRejected);
  }
  // Truncation and garbage refuse to start.
  std::ofstream(cfg.persistence_path, std::ios::trunc) << state.substr(0, state.size() / 2);
  EXPECT_THROW(AggregationService::open(cfg), Error);
  std::ofstream(cfg.persistence_path, std::ios::trunc) << "garbage\n";
  EXPECT_THROW(AggregationService::open(cfg), Error);
  std::filesystem::remove(cfg.persistence_path);
  auto fresh = AggregationService::open(cfg);
  EXPECT_EQ(fresh->entry_count(), 0u);
  std::filesystem::remove_all(dir);
}

TEST(Config, ParseAndValidate) {
  ServerConfig c = ServerConfig::from_json({{"t", 0.3}, {"persistence_path", "s.jsonl"}}, "/srv");
  EXPECT_EQ(c.t, 0.3);
  EXPECT_EQ(c.persistence_path, std::filesystem::path("/srv/s.jsonl"));
  EXPECT_EQ(c.resolved_salt_file(), std::filesystem::path("/srv/salt.key"));
  EXPECT_THROW(ServerConfig::from_json({{"t", 1.0}}), ValidationError);
  EXPECT_THROW(ServerConfig::from_json({{"alpha", 0}}), ValidationError);
  EXPECT_THROW(ServerConfig::from_json({{"t", "x"}}), ValidationError);
  ::setenv("PINALITE_SALT_FILE", "/tmp/elsewhere.key", 1);
  EXPECT_EQ(c.resolved_salt_file(), std::filesystem::path("/tmp/elsewhere.key"));
  ::unsetenv("PINALITE_SALT_FILE");
}

TEST(Routes, StatusCodes) {
  AggregationService s(ServerConfig{}, fixed_salt(6));
  EXPECT_EQ(handle_request(s, "GET", "/v1/health", "").status, 200);
  EXPECT_EQ(handle_request(s, "GET", "/v1/nope", "").status, 404);
  EXPECT_EQ(handle_request(s, "GET", "/v1/ingest", "").status, 405);
  EXPECT_EQ(handle_request(s, "POST", "/v1/ingest", "{").status, 400);
  json bad_hex = {{"user_id", UserId::generate().str()}, {"context_hash", "XYZ"}, {"pair_hashes", {ctx_hash().hex()}}};
  EXPECT_EQ(handle_request(s, "POST", "/v1/ingest", bad_hex.dump()).status, 400);
  json bad_user = {{"user_id", "bob"}, {"context_hash", ctx_hash().hex()}, {"pair_hashes", {pair("a").hex()}}};
  EXPECT_EQ(handle_request(s, "POST", "/v1/ingest", bad_user.dump()).status, 400);
}

TEST(Http, RealPortRoundTripAndWireCapture) {
  ServerConfig cfg;
  cfg.quota_entries_per_day = 50;
  AggregationService service(cfg, fixed_salt(7));
  HttpServer server(service);
  int port = server.start("127.0.0.1", 0);
  ASSERT_GT(port, 0);
  const std::string url = "http://127.0.0.1:" + std::to_string(port);

  auto log = std::make_shared<std::vector<std::string>>();
  Screen screen = load_screen({{"package", "com.example.bank"},
                               {"activity", ".Home"},
                               {"root", {{"class", "L"}, {"bounds", {0, 0, 10, 10}}, {"children", {{{"class", "T"}, {"text", "Balance $1,234.56 for Zelda"}, {"bounds", {0, 0, 10, 5}}}, {{"class", "T"}, {"content_desc", "Profile"}, {"bounds", {0, 5, 10, 10}}}}}}}});
  std::vector<std::unique_ptr<AggregationClient>> clients;
  for (int i = 0; i < 5; ++i) {
    clients.push_back(std::make_unique<AggregationClient>(capturing_transport(http_transport(url), log), UserId::generate()));
    IngestAck ack = ingest_screen(*clients.back(), screen);
    EXPECT_EQ(ack.new_additions, 2u);
  }
  EXPECT_EQ(ingest_screen(*clients[0], screen).new_additions, 0u);
  for (const auto& body : *log) {
    EXPECT_EQ(body.find("Zelda"), std::string::npos);
    EXPECT_EQ(body.find("Profile"), std::string::npos);
  }
  auto res = clients[1]->uniqueness({{client_hash_context(screen.context), client_hash_pair(screen.context, "Profile")}});
  ASSERT_EQ(res.size(), 1u);
  EXPECT_EQ(res[0].verdict.f, 5u);
  EXPECT_TRUE(res[0].verdict.is_public);
  json health = clients[0]->health();
  EXPECT_EQ(health["status"], "ok");
  EXPECT_EQ(health["entries"], 2);

  // Over quota surfaces as ServerRejected with the HTTP status.
  std::vector<ClientHash> many;
  for (int i = 0; i < 60; ++i) many.push_back(pair("n" + std::to_string(i)));
  try {
    clients[2]->ingest(ctx_hash(), many);
    FAIL();
  } catch (const ServerRejected& e) {
    EXPECT_EQ(e.status(), 429);
  }

  // Concurrent clients: counts stay exact.
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&] {
      AggregationClient c(http_transport(url), UserId::generate());
      c.ingest(ctx_hash({"com.example.c", ".C"}), {pair("same", {"com.example.c", ".C"})});
    });
  for (auto& t : threads) t.join();
  auto v = clients[3]->uniqueness({{ctx_hash({"com.example.c", ".C"}), pair("same", {"com.example.c", ".C"})}});
  EXPECT_EQ(v[0].verdict.f, 8u);
  EXPECT_EQ(v[0].verdict.g, 8u);
  server.stop();

  AggregationClient dead(http_transport(url), UserId::generate());
  EXPECT_THROW(dead.health(), ServerUnavailable);
}
