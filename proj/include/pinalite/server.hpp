#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "pinalite/privacy_hash.hpp"

namespace pinalite {

struct ServerConfig {
  double t = 0.5;
  double alpha = 0.05;
  std::uint64_t quota_entries_per_day = 10000;
  std::uint64_t quota_queries_per_day = 1000;
  /// Empty means in-memory only.
  std::filesystem::path persistence_path;
  /// Empty means $PINALITE_SALT_FILE, falling back to "<state dir>/salt.key".
  std::filesystem::path salt_file;

  void validate() const;
  /// Keys as the field names; relative paths resolve against `base_dir`.
  static ServerConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
  std::filesystem::path resolved_salt_file() const;
};

/// P(X >= f) for X ~ Binomial(g, t), summed in log space.
double exact_binomial_tail(std::uint64_t f, std::uint64_t g, double t);

struct UniquenessVerdict {
  std::uint64_t f = 0;
  std::uint64_t g = 0;
  double p_value = 1.0;
  bool is_public = false;

  /// F/G, undefined when nobody saw the context.
  std::optional<double> h() const { return g == 0 ? std::nullopt : std::optional<double>(double(f) / double(g)); }
  bool operator==(const UniquenessVerdict&) const = default;
};

UniquenessVerdict make_verdict(std::uint64_t f, std::uint64_t g, double t, double alpha);

struct IngestAck {
  std::size_t new_additions = 0;
  std::size_t duplicates = 0;
};

struct UniquenessQuery {
  ClientHash context_hash;
  ClientHash pair_hash;
};

struct UniquenessResult {
  SaltedHash salted_pair_hash;
  UniquenessVerdict verdict;
};

enum class RequestKind { Ingest, Uniqueness };

struct AnomalyDecision {
  enum class Kind { Allow, Reject, Block };
  Kind kind = Kind::Allow;
  long retry_after_s = 0;
};

/// Unique-user bookkeeping behind the HTTP API. Thread-safe.
class AggregationService {
 public:
  /// Seconds since the epoch; injectable so tests can move through the quota window.
  using Clock = std::function<std::int64_t()>;
  static Clock system_clock();

  AggregationService(ServerConfig config, const Salt& salt, Clock clock = system_clock());

  /// Loads or creates the salt, then restores persisted state if any.
  static std::unique_ptr<AggregationService> open(const ServerConfig& config, Clock clock = system_clock());

  /// Throws ServerRejected (429 over quota, 403 blocked) or ValidationError.
  IngestAck ingest(const UserId& user, const ClientHash& context_hash, const std::vector<ClientHash>& pair_hashes);
  std::vector<UniquenessResult> uniqueness(const UserId& user, const std::vector<UniquenessQuery>& queries);

  /// Records `items` units of `kind` against the user's 24 h window and decides.
  /// Rejected attempts still count, so a client hammering past the limit ends up blocked.
  AnomalyDecision anomaly_check(const UserId& user, RequestKind kind, std::size_t items);
  bool is_blocked(const UserId& user) const;

  std::size_t entry_count() const;
  std::size_t context_count() const;
  const ServerConfig& config() const { return config_; }

  /// Write-to-temp then rename; no-op without persistence_path.
  void persist() const;
  /// Missing file → empty state; malformed or truncated file → Error.
  void restore();

 private:
  struct Window {
    std::deque<std::pair<std::int64_t, std::uint64_t>> events;
  };
  using UserSet = std::set<std::string>;

  AnomalyDecision check_locked(const std::string& user, RequestKind kind, std::size_t items);
  void persist_locked() const;

  ServerConfig config_;
  Salt salt_;
  Clock clock_;
  mutable std::mutex mu_;
  std::map<std::string, UserSet> context_users_;
  std::map<std::string, UserSet> entry_users_;
  std::map<std::pair<std::string, int>, Window> windows_;
  std::set<std::string> blocked_;
};

// -- HTTP -----------------------------------------------------------------------

struct HttpResponse {
  int status = 200;
  std::string body;
  std::map<std::string, std::string> headers;
};

/// Routes one request against the service; shared by the socket server and
/// the in-process transport.
HttpResponse handle_request(AggregationService& service, const std::string& method, const std::string& path,
                            const std::string& body);

/// Serves the /v1 API on a background thread.
class HttpServer {
 public:
  explicit HttpServer(AggregationService& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// port 0 picks a free port. Returns the bound port.
  int start(const std::string& host, int port);
  /// Blocks until stop() from another thread (or a signal handler).
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// -- client ---------------------------------------------------------------------

/// (method, path, body) → response. Throws ServerUnavailable when the peer is unreachable.
using Transport = std::function<HttpResponse(const std::string&, const std::string&, const std::string&)>;

Transport http_transport(const std::string& base_url);
Transport local_transport(AggregationService& service);
/// Appends every request body to `log` before forwarding.
Transport capturing_transport(Transport inner, std::shared_ptr<std::vector<std::string>> log);

class AggregationClient {
 public:
  AggregationClient(Transport transport, UserId user) : transport_(std::move(transport)), user_(std::move(user)) {}

  IngestAck ingest(const ClientHash& context_hash, const std::vector<ClientHash>& pair_hashes);
  std::vector<UniquenessResult> uniqueness(const std::vector<UniquenessQuery>& queries);
  nlohmann::json health();
  const UserId& user() const { return user_; }

 private:
  nlohmann::json call(const std::string& method, const std::string& path, const nlohmann::json& body);

  Transport transport_;
  UserId user_;
};

/// Hashes every text entry of the screen locally and uploads only the hashes.
/// Screens without entries upload nothing and return an empty ack.
IngestAck ingest_screen(AggregationClient& client, const Screen& screen);

}  // namespace pinalite
