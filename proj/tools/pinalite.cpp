// pinalite command line: server, ingestion, recording, sharing, replay, evaluation.
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "pinalite/errors.hpp"
#include "pinalite/executor.hpp"
#include "pinalite/harness.hpp"
#include "pinalite/obfuscator.hpp"
#include "pinalite/review.hpp"
#include "pinalite/script.hpp"
#include "pinalite/server.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace pinalite;

namespace {

constexpr const char* kDefaultServerUrl = "http://127.0.0.1:8750";

enum Exit { kOk = 0, kValidation = 1, kServerIo = 2, kLeak = 3 };

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text) || !out.flush()) throw Error("cannot write " + path.string());
}

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

fs::path home_dir() {
  if (const char* h = std::getenv("PINALITE_HOME"); h && *h) return h;
  if (const char* h = std::getenv("HOME"); h && *h) return fs::path(h) / ".pinalite";
  return ".pinalite";
}

/// Per-device client settings; the user id is created once and kept until reset.
struct ClientConfig {
  std::string server_url = kDefaultServerUrl;
  UserId user_id = UserId::generate();
  fs::path storage_dir;

  static fs::path file(const fs::path& dir) { return dir / "config.json"; }

  static ClientConfig load_or_create(const fs::path& dir) {
    ClientConfig c;
    c.storage_dir = dir;
    if (fs::exists(file(dir))) {
      json j = read_json(file(dir));
      c.server_url = j.value("server_url", c.server_url);
      c.user_id = UserId::parse(j.at("user_id").get<std::string>());
    } else {
      c.save();
    }
    if (const char* url = std::getenv("PINALITE_SERVER_URL"); url && *url) c.server_url = url;
    return c;
  }

  void save() const {
    fs::create_directories(storage_dir);
    ordered_json j;
    j["server_url"] = server_url;
    j["user_id"] = user_id.str();
    write_file(file(storage_dir), j.dump(2) + "\n");
  }
};

int run_serve(const std::string& config_path, const std::string& host, int port) {
  ServerConfig config;
  if (!config_path.empty()) {
    config = ServerConfig::from_json(read_json(config_path), fs::path(config_path).parent_path());
  } else {
    config.persistence_path = home_dir() / "server" / "state.jsonl";
    fs::create_directories(config.persistence_path.parent_path());
  }
  config.validate();
  auto service = AggregationService::open(config);
  HttpServer server(*service);
  const int bound = server.start(host, port);
  std::cout << "serving on http://" << host << ":" << bound << std::endl;

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  auto last_save = std::chrono::steady_clock::now();
  while (!g_stop) {
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (std::chrono::steady_clock::now() - last_save > std::chrono::seconds(30)) {
      service->persist();
      last_save = std::chrono::steady_clock::now();
    }
  }
  server.stop();
  service->persist();
  std::cout << "stopped; " << service->entry_count() << " entries persisted" << std::endl;
  return kOk;
}

int run_ingest(const ClientConfig& cfg, const std::string& dir, const std::string& user) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw ValidationError("no screen files in " + dir);

  AggregationClient client(http_transport(cfg.server_url), user.empty() ? cfg.user_id : UserId::parse(user));
  IngestAck total;
  for (const auto& f : files) {
    IngestAck ack = ingest_screen(client, load_screen_file(f.string()));
    total.new_additions += ack.new_additions;
    total.duplicates += ack.duplicates;
  }
  std::cout << "screens " << files.size() << " new " << total.new_additions << " duplicate " << total.duplicates
            << std::endl;
  return kOk;
}

int report_findings(const std::vector<Finding>& findings) {
  for (const auto& f : findings) std::cerr << f.location << ": " << f.message << "\n";
  return findings.empty() ? kOk : kValidation;
}

int run_record(const std::string& trace_path, const std::string& out) {
  DemoTrace trace = load_trace(read_json(trace_path), fs::path(trace_path).parent_path().string());
  Script s = record_from_trace(trace);
  if (int rc = report_findings(validate(s)); rc != kOk) return rc;
  write_file(out, serialize_script(s));
  std::cout << "recorded " << s.blocks.size() << " blocks, " << s.parameters.size() << " parameters -> " << out
            << std::endl;
  return kOk;
}

struct ShareArgs {
  std::string script, out, overrides, report;
  bool serve_review = false;
  int review_port = 0;
  std::string review_ui;
};

int run_share(const ClientConfig& cfg, const ShareArgs& a) {
  Script s = deserialize_script(read_file(a.script));
  if (int rc = report_findings(validate(s)); rc != kOk) return rc;
  AggregationClient client(http_transport(cfg.server_url), cfg.user_id);
  ObfuscationReport report = classify(s, client);
  if (!a.overrides.empty()) apply_overrides(report, read_json(a.overrides));

  ObfuscationResult result;
  if (a.serve_review) {
    ReviewSession session(s, report, a.out);
    std::optional<fs::path> ui;
    if (!a.review_ui.empty()) ui = a.review_ui;
    ReviewServer server(session, ui);
    const int port = server.start(a.review_port);
    std::cout << "review at http://127.0.0.1:" << port << "/  (waiting for confirmation)" << std::endl;
    session.wait_confirmed();
    server.stop();
    report = session.report();
    result = *session.result();
  } else {
    result = write_shared(s, report, a.out);
  }
  if (!a.report.empty()) write_file(a.report, report_to_json(report, s).dump(2) + "\n");
  for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "shared -> " << a.out << " (public " << report.public_count() << ", hidden " << report.personal_count()
            << ")" << std::endl;
  return kOk;
}

std::pair<std::string, std::string> split_kv(const std::string& kv, const char* what) {
  auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0) throw ValidationError(std::string(what) + ": expected name=value, got '" + kv + "'");
  return {kv.substr(0, eq), kv.substr(eq + 1)};
}

struct RunArgs {
  std::string script, app, trace_out, rebuilt_out;
  std::vector<std::string> params, inputs;
  bool no_alt = false;
};

int run_run(const RunArgs& a) {
  Script s = deserialize_any(read_file(a.script));
  SimulatedApp app = SimulatedApp::load_file(a.app);
  ExecutorOptions opts;
  opts.use_alt_queries = !a.no_alt;
  for (const auto& p : a.params) opts.parameter_choices.insert(split_kv(p, "--param"));
  for (const auto& i : a.inputs) opts.inputs.insert(split_kv(i, "--input"));

  ExecutionResult r = execute(s, app, opts);
  const std::string jsonl = trace_to_jsonl(r.trace);
  if (a.trace_out.empty()) std::cout << jsonl;
  else write_file(a.trace_out, jsonl);
  if (!a.rebuilt_out.empty()) write_file(a.rebuilt_out, serialize_script(r.rebuilt));
  if (!r.trace.completed) {
    const auto& last = r.trace.events.back();
    std::cerr << "run stopped at blocks[" << format_path(last.op) << "]: "
              << (last.failure ? std::string(to_string(*last.failure)) : std::string("failed")) << " " << last.note
              << "\n";
    return kValidation;
  }
  return kOk;
}

int run_eval_cmd(const std::vector<std::string>& specs, std::size_t users, double t, std::uint64_t seed, bool as_json) {
  std::vector<EvalResult> results;
  for (const auto& path : specs) results.push_back(run_eval(SyntheticAppSpec::load_file(path), users, t, seed));
  if (as_json) std::cout << eval_to_json(results).dump(2) << std::endl;
  else std::cout << format_eval_table(results);
  return kOk;
}

int run_gen(const std::string& spec_path, std::size_t users, std::uint64_t seed, const std::string& out) {
  SyntheticAppSpec spec = SyntheticAppSpec::load_file(spec_path);
  Population pop = gen_population(spec, users, seed);
  fs::create_directories(out);
  write_population(spec, pop, out);
  std::cout << "wrote " << users << " users to " << out << std::endl;
  return kOk;
}

int guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const LeakError& e) {
    std::cerr << "leak: " << e.what() << "\n";
    return kLeak;
  } catch (const ServerRejected& e) {
    std::cerr << "server rejected (" << e.status() << "): " << e.what() << "\n";
    return kServerIo;
  } catch (const ServerUnavailable& e) {
    std::cerr << "server unavailable: " << e.what() << "\n";
    return kServerIo;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kValidation;
  } catch (const ValidationError& e) {
    std::cerr << "invalid: " << e.what() << "\n";
    return kValidation;
  } catch (const RecordingError& e) {
    std::cerr << "recording failed: " << e.what() << "\n";
    return kValidation;
  } catch (const SynthesisError& e) {
    std::cerr << "synthesis failed: " << e.what() << "\n";
    return kValidation;
  } catch (const ExecutionError& e) {
    std::cerr << "execution failed: " << e.what() << "\n";
    return kValidation;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kServerIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kServerIo;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pinalite: privacy-preserving sharing of recorded app automation scripts"};
  app.require_subcommand(1);
  std::string server_flag;
  app.add_option("--server", server_flag, "aggregation server URL (overrides PINALITE_SERVER_URL)");

  auto* serve = app.add_subcommand("serve", "run the aggregation server");
  std::string config_path, host = "127.0.0.1";
  int port = 8750;
  serve->add_option("--config", config_path, "server config JSON")->check(CLI::ExistingFile);
  serve->add_option("--port", port, "listen port (0 = any)");
  serve->add_option("--host", host, "listen address");

  auto* ingest = app.add_subcommand("ingest", "hash and upload screen files");
  std::string screens_dir, ingest_user;
  ingest->add_option("--screens", screens_dir, "directory of screen JSON files")->required();
  ingest->add_option("--user", ingest_user, "user UUID (default: this device's id)");

  auto* record = app.add_subcommand("record", "turn a demonstration trace into a script");
  std::string trace_path, record_out;
  record->add_option("--trace", trace_path)->required()->check(CLI::ExistingFile);
  record->add_option("--out", record_out)->required();

  auto* share = app.add_subcommand("share", "classify, review and obfuscate a script");
  ShareArgs sa;
  share->add_option("--script", sa.script)->required()->check(CLI::ExistingFile);
  share->add_option("--out", sa.out)->required();
  share->add_option("--overrides", sa.overrides, "JSON map entry_id -> public (true/false/null)")->check(CLI::ExistingFile);
  share->add_option("--report", sa.report, "write the classification report here");
  share->add_flag("--serve-review", sa.serve_review, "serve the review endpoint and wait for confirmation");
  share->add_option("--review-port", sa.review_port, "review endpoint port (0 = any)");
  share->add_option("--review-ui", sa.review_ui, "static review UI directory");

  auto* run = app.add_subcommand("run", "execute a script against a simulated app");
  RunArgs ra;
  run->add_option("--script", ra.script)->required()->check(CLI::ExistingFile);
  run->add_option("--app", ra.app)->required()->check(CLI::ExistingFile);
  run->add_option("--param", ra.params, "name=value parameter choice");
  run->add_option("--input", ra.inputs, "hidden-hash=text for hidden typed text");
  run->add_option("--trace-out", ra.trace_out, "write the JSONL trace here instead of stdout");
  run->add_option("--rebuilt-out", ra.rebuilt_out, "write the locally rebuilt script here");
  run->add_flag("--no-alt", ra.no_alt, "ignore alternative queries");

  auto* eval = app.add_subcommand("eval", "precision/recall on synthetic apps");
  std::vector<std::string> specs;
  std::size_t users = 5;
  double t = 0.5;
  std::uint64_t seed = 1;
  bool as_json = false;
  eval->add_option("--spec", specs, "synthetic app spec (repeatable)")->required()->check(CLI::ExistingFile);
  eval->add_option("--users", users)->check(CLI::PositiveNumber);
  eval->add_option("--t", t)->check(CLI::Range(0.0, 1.0));
  eval->add_option("--seed", seed);
  eval->add_flag("--json", as_json);

  auto* gen = app.add_subcommand("gen-population", "write per-user screens, apps and traces");
  std::string gen_spec, gen_out;
  std::size_t gen_users = 5;
  std::uint64_t gen_seed = 1;
  gen->add_option("--spec", gen_spec)->required()->check(CLI::ExistingFile);
  gen->add_option("--users", gen_users)->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed);
  gen->add_option("--out", gen_out)->required();

  auto* uid = app.add_subcommand("user-id", "print (or --reset) this device's anonymous user id");
  bool reset = false;
  uid->add_flag("--reset", reset);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kValidation;
  }

  auto client_config = [&] {
    ClientConfig c = ClientConfig::load_or_create(home_dir());
    if (!server_flag.empty()) c.server_url = server_flag;
    return c;
  };

  return guarded([&]() -> int {
    if (*serve) return run_serve(config_path, host, port);
    if (*ingest) return run_ingest(client_config(), screens_dir, ingest_user);
    if (*record) return run_record(trace_path, record_out);
    if (*share) return run_share(client_config(), sa);
    if (*run) return run_run(ra);
    if (*eval) return run_eval_cmd(specs, users, t, seed, as_json);
    if (*gen) return run_gen(gen_spec, gen_users, gen_seed, gen_out);
    if (*uid) {
      ClientConfig c = client_config();
      if (reset) {
        c.user_id = UserId::generate();
        c.save();
      }
      std::cout << c.user_id.str() << std::endl;
      return kOk;
    }
    return kValidation;
  });
}
