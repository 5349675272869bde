#include "pinalite/review.hpp"

#include <fstream>
#include <thread>

#include "httplib.h"
#include "pinalite/errors.hpp"

namespace pinalite {

using nlohmann::json;
using nlohmann::ordered_json;

ObfuscationResult write_shared(const Script& s, const ObfuscationReport& report, const std::filesystem::path& out) {
  ObfuscationResult result = obfuscate(s, report);
  const std::string text = serialize_shared(result.shared);
  std::ofstream f(out, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + out.string());
  f << text;
  if (!f.flush()) throw Error("cannot write " + out.string());
  return result;
}

namespace {

HttpResponse reply(int status, const ordered_json& body) { return {status, body.dump(2), {}}; }

HttpResponse error_reply(int status, const std::string& message) {
  return reply(status, ordered_json{{"error", message}});
}

void collect_steps(const std::vector<Block>& blocks, BlockPath prefix, std::vector<std::pair<BlockPath, const Block*>>& out) {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    BlockPath path = prefix;
    path.push_back(i);
    out.emplace_back(path, &blocks[i]);
    if (const auto* c = std::get_if<Conditional>(&blocks[i].node)) {
      BlockPath then_path = path;
      then_path.push_back(0);
      collect_steps(c->then_blocks, then_path, out);
      if (c->else_blocks) {
        BlockPath else_path = path;
        else_path.push_back(1);
        collect_steps(*c->else_blocks, else_path, out);
      }
    }
  }
}

}  // namespace

ReviewSession::ReviewSession(Script script, ObfuscationReport report, std::filesystem::path shared_path)
    : script_(std::move(script)), shared_path_(std::move(shared_path)), report_(std::move(report)) {}

bool ReviewSession::confirmed() const {
  std::lock_guard lock(mu_);
  return result_.has_value();
}

void ReviewSession::wait_confirmed() const {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [this] { return result_.has_value(); });
}

std::optional<ObfuscationResult> ReviewSession::result() const {
  std::lock_guard lock(mu_);
  return result_;
}

ObfuscationReport ReviewSession::report() const {
  std::lock_guard lock(mu_);
  return report_;
}

ordered_json ReviewSession::entry_json(const ClassifiedEntry& e) const {
  ObfuscationReport one{report_.script_name, {e}};
  return report_to_json(one, script_)["entries"][0];
}

ordered_json ReviewSession::preview() const {
  std::lock_guard lock(mu_);
  std::vector<std::pair<BlockPath, const Block*>> steps;
  collect_steps(script_.blocks, {}, steps);

  ordered_json out;
  out["script"] = script_.name;
  ordered_json jsteps = ordered_json::array();
  for (const auto& [path, block] : steps) {
    ordered_json step;
    step["block"] = format_path(path);
    step["depth"] = path.size() / 2;
    if (const auto* op = std::get_if<Operation>(&block->node)) {
      step["kind"] = std::string(to_string(op->kind));
      step["text"] = describe_operation(*op);
    } else {
      step["kind"] = "IF";
      step["text"] = "If condition holds";
    }
    ordered_json slots = ordered_json::array();
    for (const auto& e : report_.entries) {
      for (const auto& loc : e.locations) {
        if (loc.block != path) continue;
        // Parameters are keyed by their bound op; condition literals by the conditional.
        if ((loc.kind == LocationKind::CONDITION_LITERAL) != std::holds_alternative<Conditional>(block->node)) continue;
        const bool pub = e.final_public();
        slots.push_back({{"entry_id", e.entry_id},
                         {"slot", loc.describe(script_)},
                         {"kind", std::string(to_string(loc.kind))},
                         {"display", pub ? e.content : std::string("hidden text")},
                         {"content", e.content},
                         {"state", pub ? "public" : "personal"},
                         {"overridden", e.override_public.has_value()}});
      }
    }
    step["slots"] = std::move(slots);
    jsteps.push_back(std::move(step));
  }
  out["steps"] = std::move(jsteps);
  out["counts"] = {{"public", report_.public_count()}, {"personal", report_.personal_count()}};
  out["confirmed"] = result_.has_value();
  return out;
}

HttpResponse ReviewSession::handle(const std::string& method, const std::string& path, const std::string& body) {
  if (path == "/api/report" || path == "/api/script-preview") {
    if (method != "GET") return error_reply(405, "method not allowed");
    if (path == "/api/script-preview") return reply(200, preview());
    std::lock_guard lock(mu_);
    ordered_json j = report_to_json(report_, script_);
    j["confirmed"] = result_.has_value();
    return reply(200, j);
  }
  if (path == "/api/toggle") {
    if (method != "POST") return error_reply(405, "method not allowed");
    json req;
    try {
      req = json::parse(body);
    } catch (const json::exception&) {
      return error_reply(400, "body is not JSON");
    }
    if (!req.is_object() || !req.contains("entry_id") || !req["entry_id"].is_number_unsigned())
      return error_reply(400, "entry_id: expected a positive integer");
    std::optional<bool> value;
    if (req.contains("public") && req["public"].is_boolean()) {
      value = req["public"].get<bool>();
    } else if (req.contains("public") && !req["public"].is_null()) {
      return error_reply(400, "public: expected true, false or null");
    }
    const auto id = req["entry_id"].get<std::size_t>();

    std::lock_guard lock(mu_);
    if (result_) return error_reply(409, "already confirmed; toggles are locked");
    ClassifiedEntry* e = report_.find(id);
    if (!e) return error_reply(404, "no entry " + std::to_string(id));
    // No "public" key: flip the current decision.
    if (!req.contains("public")) value = !e->final_public();
    apply_override(report_, id, value);
    return reply(200, entry_json(*e));
  }
  if (path == "/api/confirm") {
    if (method != "POST") return error_reply(405, "method not allowed");
    std::lock_guard lock(mu_);
    ordered_json j;
    j["shared_path"] = shared_path_.string();
    if (result_) {
      j["notice"] = "already confirmed; nothing changed";
    } else {
      try {
        result_ = write_shared(script_, report_, shared_path_);
      } catch (const LeakError& e) {
        return error_reply(422, e.what());
      } catch (const Error& e) {
        return error_reply(500, e.what());
      }
      cv_.notify_all();
    }
    j["counts"] = {{"public", report_.public_count()}, {"personal", report_.personal_count()}};
    j["warnings"] = result_->warnings;
    return reply(200, j);
  }
  return error_reply(404, "no route " + path);
}

struct ReviewServer::Impl {
  explicit Impl(ReviewSession& s) : session(s) {}
  ReviewSession& session;
  httplib::Server server;
  std::thread thread;
};

ReviewServer::ReviewServer(ReviewSession& session, std::optional<std::filesystem::path> static_dir)
    : impl_(std::make_unique<Impl>(session)) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    HttpResponse r = impl_->session.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body, "application/json");
  };
  impl_->server.Get("/api/.*", handler);
  impl_->server.Post("/api/.*", handler);
  if (static_dir && !impl_->server.set_mount_point("/", static_dir->string()))
    throw ValidationError("review UI directory not found: " + static_dir->string());
}

ReviewServer::~ReviewServer() { stop(); }

int ReviewServer::start(int port) {
  const std::string host = "127.0.0.1";
  int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void ReviewServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace pinalite
