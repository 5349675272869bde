#pragma once

#include <filesystem>
#include <memory>
#include <condition_variable>
#include <mutex>
#include <optional>
#include <string>

#include "json.hpp"
#include "pinalite/obfuscator.hpp"
#include "pinalite/server.hpp"

namespace pinalite {

/// obfuscate() and write the serialized shared script to `out`. Used by both
/// `share` and review confirmation so the two produce identical files.
ObfuscationResult write_shared(const Script& s, const ObfuscationReport& report, const std::filesystem::path& out);

/// Author-side review state behind the review UI:
///   GET  /api/report          report with verdicts, overrides, locations
///   POST /api/toggle          {"entry_id": n, "public": bool|null} → updated entry
///   POST /api/confirm         obfuscate + write → {"shared_path", "counts"}
///   GET  /api/script-preview  readable steps with per-slot classification
/// Toggles after confirmation are refused (409); a second confirm is a no-op.
class ReviewSession {
 public:
  ReviewSession(Script script, ObfuscationReport report, std::filesystem::path shared_path);

  HttpResponse handle(const std::string& method, const std::string& path, const std::string& body);

  bool confirmed() const;
  /// Blocks until confirmation succeeded.
  void wait_confirmed() const;
  std::optional<ObfuscationResult> result() const;
  ObfuscationReport report() const;

  nlohmann::ordered_json preview() const;

 private:
  nlohmann::ordered_json entry_json(const ClassifiedEntry& e) const;

  const Script script_;
  const std::filesystem::path shared_path_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  ObfuscationReport report_;
  std::optional<ObfuscationResult> result_;
};

/// Loopback-only HTTP front for a ReviewSession. `static_dir`, when given, is
/// served at "/" (the review UI bundle).
class ReviewServer {
 public:
  explicit ReviewServer(ReviewSession& session, std::optional<std::filesystem::path> static_dir = std::nullopt);
  ~ReviewServer();
  ReviewServer(const ReviewServer&) = delete;
  ReviewServer& operator=(const ReviewServer&) = delete;

  /// Binds 127.0.0.1 (port 0 = any free port) and serves in the background.
  int start(int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace pinalite
