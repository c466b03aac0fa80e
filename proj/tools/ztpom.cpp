// ztpom command line. Every subcommand is translated into a gateway request
// and sent either to an in-process service (state kept in a local directory)
// or, with --server, to a running `ztpom serve`.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "ztpom/error.hpp"
#include "ztpom/gateway.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace ztpom;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitDomain = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::string server;
  std::string state_dir;
  bool json_out = false;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual Response call(const std::string& method, const std::string& target, const json& body) = 0;
  virtual bool local() const = 0;
};

class LocalBackend : public Backend {
 public:
  explicit LocalBackend(GatewayConfig cfg) : service_(std::move(cfg)) {}
  Response call(const std::string& method, const std::string& target, const json& body) override {
    return service_.handle(make_request(method, target, body.is_null() ? "" : body.dump()));
  }
  bool local() const override { return true; }
  Service& service() { return service_; }

 private:
  Service service_;
};

class RemoteBackend : public Backend {
 public:
  explicit RemoteBackend(const std::string& url) : client_(url) { client_.set_read_timeout(30, 0); }
  Response call(const std::string& method, const std::string& target, const json& body) override {
    const std::string text = body.is_null() ? "" : body.dump();
    httplib::Result res;
    if (method == "GET") {
      res = client_.Get(target);
    } else if (method == "DELETE") {
      res = client_.Delete(target);
    } else {
      res = client_.Post(target, text, "application/json");
    }
    if (!res) throw Error(Errc::io, "request failed: " + httplib::to_string(res.error()));
    Response r;
    r.status = res->status;
    r.body = res->body.empty() ? json::object() : json::parse(res->body, nullptr, false);
    if (r.body.is_discarded()) throw Error(Errc::io, "server sent a non-JSON reply");
    return r;
  }
  bool local() const override { return false; }

 private:
  httplib::Client client_;
};

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  json doc = json::parse(read_text(path), nullptr, false);
  if (doc.is_discarded()) throw Error(Errc::syntax, path + ": not valid JSON");
  return doc;
}

std::string encode(std::string_view s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
      out += static_cast<char>(c);
    } else {
      out += '%';
      out += hex[c >> 4];
      out += hex[c & 15];
    }
  }
  return out;
}

// --config, then $ZTPOM_CONFIG, then ./ztpom.json when present.
std::string config_path(const Options& opt) {
  if (!opt.config.empty()) return opt.config;
  if (const char* env = std::getenv("ZTPOM_CONFIG"); env != nullptr && *env != '\0') return env;
  if (std::filesystem::exists("ztpom.json")) return "ztpom.json";
  return {};
}

GatewayConfig make_config(const Options& opt) {
  GatewayConfig cfg;
  if (const std::string path = config_path(opt); !path.empty()) {
    cfg = load_config(path);
  } else {
    apply_env(cfg);
  }
  if (!opt.state_dir.empty()) cfg.persistence_dir = opt.state_dir;
  return cfg;
}

std::unique_ptr<Backend> connect(const Options& opt) {
  if (!opt.server.empty()) return std::make_unique<RemoteBackend>(opt.server);
  GatewayConfig cfg = make_config(opt);
  if (cfg.persistence_dir.empty()) cfg.persistence_dir = ".ztpom";
  cfg.autosnapshot = true;
  return std::make_unique<LocalBackend>(std::move(cfg));
}

// Thrown for a non-2xx reply; carries the server's error body.
struct Failed {
  json body;
};

json expect_ok(const Response& r) {
  if (r.status >= 300) throw Failed{r.body};
  return r.body;
}

void print_deployment(const json& d) {
  std::cout << d.value("id", "") << "  " << d.value("blueprint_id", "") << " v" << d.value("version", 0) << "  "
            << d.value("state", "") << "\n";
  if (d.contains("node_states")) {
    for (auto it = d["node_states"].begin(); it != d["node_states"].end(); ++it) {
      std::cout << "  " << it.key() << "  " << it->get<std::string>();
      if (d.contains("placements") && d["placements"].contains(it.key())) {
        std::cout << "  @" << d["placements"][it.key()].get<std::string>();
      }
      std::cout << "\n";
    }
  }
  if (d.contains("epochs")) {
    for (auto it = d["epochs"].begin(); it != d["epochs"].end(); ++it) {
      std::cout << "  chain " << it.key() << " epoch " << it->dump() << "\n";
    }
  }
}

// Runs protocol rounds until the deployment leaves its transient states.
json settle(Backend& b, const std::string& id, int max_rounds) {
  json d = expect_ok(b.call("GET", "/deployments/" + encode(id), nullptr));
  for (int i = 0; i < max_rounds; ++i) {
    const std::string state = d.value("state", "");
    if (state != "PROVISIONING" && state != "UPDATING" && state != "DEGRADED") break;
    expect_ok(b.call("POST", "/sim/advance", json{{"ticks", 1}}));
    d = expect_ok(b.call("GET", "/deployments/" + encode(id), nullptr));
  }
  return d;
}

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  CLI::App app{"ztpom: zero-touch provisioning, chaining and brokering over a multi-domain fabric"};
  app.require_subcommand(1);
  app.add_option("--config", opt.config, "Gateway config file (JSON); default $ZTPOM_CONFIG, then ./ztpom.json");
  app.add_option("--server", opt.server, "Talk to a running server, e.g. http://127.0.0.1:8080");
  app.add_option("--state-dir", opt.state_dir, "Local state directory (default .ztpom)");
  app.add_flag("--json", opt.json_out, "Machine-readable JSON output");

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  std::string listen;
  serve_cmd->add_option("--listen", listen, "host:port");

  auto* deploy_cmd = app.add_subcommand("deploy", "Register a blueprint and deploy it");
  std::string deploy_file;
  int wait_rounds = -1;
  std::string owner;
  deploy_cmd->add_option("file", deploy_file, "Blueprint file")->required();
  deploy_cmd->add_option("--owner", owner, "Deployment owner (requester for trust)");
  deploy_cmd->add_option("--wait", wait_rounds, "Protocol rounds to run afterwards (local default 100)");

  auto* status_cmd = app.add_subcommand("status", "Show one deployment or list all");
  std::string status_id;
  status_cmd->add_option("id", status_id);

  auto* rechain_cmd = app.add_subcommand("rechain", "Reorder a chain's functions");
  std::string rechain_id, rechain_chain;
  std::vector<std::string> order;
  rechain_cmd->add_option("id", rechain_id)->required();
  rechain_cmd->add_option("--chain", rechain_chain, "Chain id (optional for single-chain blueprints)");
  rechain_cmd->add_option("--order", order, "New function order, e.g. f2,f1")->required()->delimiter(',');
  rechain_cmd->add_option("--wait", wait_rounds, "Protocol rounds to run afterwards");

  auto* update_cmd = app.add_subcommand("update", "Move a deployment to another blueprint version");
  std::string update_id, update_target;
  update_cmd->add_option("id", update_id)->required();
  update_cmd->add_option("version", update_target, "Registered version number, or a blueprint file")->required();
  update_cmd->add_option("--wait", wait_rounds, "Protocol rounds to run afterwards");

  auto* teardown_cmd = app.add_subcommand("teardown", "Tear a deployment down");
  std::string teardown_id;
  teardown_cmd->add_option("id", teardown_id)->required();

  auto* rules_cmd = app.add_subcommand("rules", "Print a deployment's flow rules");
  std::string rules_id;
  rules_cmd->add_option("id", rules_id)->required();

  auto* events_cmd = app.add_subcommand("events", "Print the event feed");
  std::uint64_t since = 0;
  events_cmd->add_option("--since", since);

  app.add_subcommand("topo", "Show the fabric and its reservations");

  auto* cat_cmd = app.add_subcommand("catalogue", "Marketplace catalogue");
  auto* cat_list = cat_cmd->add_subcommand("list", "Search offers");
  std::string f_type, f_region, f_provider;
  double f_max_price = -1;
  cat_list->add_option("--service-type", f_type);
  cat_list->add_option("--region", f_region);
  cat_list->add_option("--provider", f_provider);
  cat_list->add_option("--max-price", f_max_price);
  auto* cat_publish = cat_cmd->add_subcommand("publish", "Publish an offer from a file");
  std::string offer_file;
  cat_publish->add_option("file", offer_file)->required();
  auto* cat_cert = cat_cmd->add_subcommand("cert", "Register a certificate fingerprint");
  std::string cert_party, cert_fp;
  cat_cert->add_option("party", cert_party)->required();
  cat_cert->add_option("fingerprint", cert_fp)->required();
  auto* cat_broker = cat_cmd->add_subcommand("broker", "Rank offers for a request file");
  std::string request_file;
  cat_broker->add_option("file", request_file)->required();
  cat_cmd->require_subcommand(0, 1);

  auto* trust_cmd = app.add_subcommand("trust", "Pairwise trust");
  trust_cmd->require_subcommand(1);
  auto* trust_confirm = trust_cmd->add_subcommand("confirm", "Confirm trust in a peer");
  std::string party_a, party_b;
  trust_confirm->add_option("party", party_a)->required();
  trust_confirm->add_option("peer", party_b)->required();
  auto* trust_status = trust_cmd->add_subcommand("status", "Show the trust record of a pair");
  trust_status->add_option("a", party_a)->required();
  trust_status->add_option("b", party_b)->required();

  auto* sim_cmd = app.add_subcommand("sim", "Data-plane scenarios and protocol clock");
  sim_cmd->require_subcommand(1);
  auto* sim_run = sim_cmd->add_subcommand("run", "Run a scenario script");
  std::string script_file;
  sim_run->add_option("file", script_file)->required();
  auto* sim_advance = sim_cmd->add_subcommand("advance", "Run protocol rounds");
  std::int64_t ticks = 1;
  sim_advance->add_option("ticks", ticks);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (e.get_exit_code() == 0) return kExitOk;
    std::cerr << app.help();
    return kExitUsage;
  }

  const bool as_json = opt.json_out;
  auto emit = [&](const json& body, const std::function<void()>& human) {
    if (as_json) {
      std::cout << body.dump(2) << "\n";
    } else {
      human();
    }
  };

  try {
    if (*serve_cmd) {
      GatewayConfig cfg = make_config(opt);
      if (!listen.empty()) {
        const GatewayConfig parsed = config_from_json(json{{"listen", listen}});
        cfg.host = parsed.host;
        cfg.port = parsed.port;
      }
      Service service(std::move(cfg));
      serve(service);
      return kExitOk;
    }

    std::unique_ptr<Backend> backend = connect(opt);
    Backend& b = *backend;
    const int rounds = wait_rounds >= 0 ? wait_rounds : (b.local() ? 100 : 0);

    if (*deploy_cmd) {
      json body{{"blueprint", read_json(deploy_file)}};
      if (!owner.empty()) body["owner"] = owner;
      json d = expect_ok(b.call("POST", "/deployments", body));
      if (rounds > 0) d = settle(b, d["id"].get<std::string>(), rounds);
      emit(d, [&] {
        std::cout << d["id"].get<std::string>() << "\n";
        std::cout << "state " << d.value("state", "") << "\n";
      });
    } else if (*status_cmd) {
      if (status_id.empty()) {
        const json list = expect_ok(b.call("GET", "/deployments", nullptr));
        emit(list, [&] {
          for (const auto& d : list) {
            std::cout << d["id"].get<std::string>() << "  " << d["blueprint_id"].get<std::string>() << " v"
                      << d["version"] << "  " << d["state"].get<std::string>() << "\n";
          }
        });
      } else {
        const json d = expect_ok(b.call("GET", "/deployments/" + encode(status_id), nullptr));
        emit(d, [&] { print_deployment(d); });
      }
    } else if (*rechain_cmd) {
      json body{{"order", order}};
      if (!rechain_chain.empty()) body["chain"] = rechain_chain;
      json d = expect_ok(b.call("POST", "/deployments/" + encode(rechain_id) + "/rechain", body));
      if (rounds > 0) d = settle(b, rechain_id, rounds);
      emit(d, [&] { print_deployment(d); });
    } else if (*update_cmd) {
      json version;
      if (!update_target.empty() && update_target.find_first_not_of("0123456789") == std::string::npos) {
        version = std::stoll(update_target);
      } else {
        const json ref = expect_ok(b.call("POST", "/blueprints", read_json(update_target)));
        version = ref["version"];
      }
      json d = expect_ok(b.call("POST", "/deployments/" + encode(update_id) + "/update", json{{"version", version}}));
      if (rounds > 0) d = settle(b, update_id, rounds);
      emit(d, [&] { print_deployment(d); });
    } else if (*teardown_cmd) {
      const json d = expect_ok(b.call("DELETE", "/deployments/" + encode(teardown_id), nullptr));
      emit(d, [&] { std::cout << d["id"].get<std::string>() << " " << d["state"].get<std::string>() << "\n"; });
    } else if (*rules_cmd) {
      const json r = expect_ok(b.call("GET", "/deployments/" + encode(rules_id) + "/rules", nullptr));
      emit(r, [&] {
        for (const auto& c : r["rules"]) {
          std::cout << "# " << c["chain"].get<std::string>() << " epoch " << c["epoch"] << "\n"
                    << c["text"].get<std::string>();
        }
      });
    } else if (*events_cmd) {
      const json r = expect_ok(b.call("GET", "/events?since=" + std::to_string(since), nullptr));
      emit(r, [&] {
        for (const auto& e : r["events"]) {
          std::cout << e["seq"] << " t=" << e["tick"] << " " << e["type"].get<std::string>();
          if (!e.value("deployment", "").empty()) std::cout << " " << e["deployment"].get<std::string>();
          if (!e.value("node", "").empty()) std::cout << "/" << e["node"].get<std::string>();
          if (e.contains("detail") && !e["detail"].empty()) std::cout << " " << e["detail"].dump();
          std::cout << "\n";
        }
      });
    } else if (app.got_subcommand("topo")) {
      const json r = expect_ok(b.call("GET", "/topology", nullptr));
      emit(r, [&] {
        for (const auto& d : r["topology"]["domains"]) {
          std::cout << "domain " << d["id"].get<std::string>() << " (" << d["kind"].get<std::string>() << ")\n";
        }
        for (const auto& l : r["links"]) {
          std::cout << "link " << l["id"].get<std::string>() << " committed " << l["committed_mbps"] << " residual "
                    << l["residual_mbps"] << " vlans " << l["vlans"].dump() << "\n";
        }
      });
    } else if (*cat_cmd) {
      if (*cat_publish) {
        const json r = expect_ok(b.call("POST", "/catalogue/offers", read_json(offer_file)));
        emit(r, [&] { std::cout << r["offer_id"].get<std::string>() << "\n"; });
      } else if (*cat_cert) {
        const json r = expect_ok(b.call("POST", "/catalogue/certs", json{{"party", cert_party}, {"fingerprint", cert_fp}}));
        emit(r, [&] { std::cout << r["party"].get<std::string>() << " " << r["fingerprint"].get<std::string>() << "\n"; });
      } else if (*cat_broker) {
        const json r = expect_ok(b.call("POST", "/broker", read_json(request_file)));
        emit(r, [&] {
          for (const auto& m : r["matches"]) {
            std::cout << m["offer"]["offer_id"].get<std::string>() << "  " << m["offer"]["provider_id"].get<std::string>()
                      << "  score " << m["score"] << "\n";
          }
          if (r["matches"].empty()) std::cout << "no offer (" << r.value("binding", "") << "): " << r.value("detail", "") << "\n";
        });
      } else {
        std::string q;
        auto add = [&](const char* key, const std::string& v) {
          if (!v.empty()) q += (q.empty() ? "?" : "&") + std::string(key) + "=" + encode(v);
        };
        add("service_type", f_type);
        add("region", f_region);
        add("provider", f_provider);
        if (f_max_price >= 0) add("max_price", json(f_max_price).dump());
        const json r = expect_ok(b.call("GET", "/catalogue" + q, nullptr));
        emit(r, [&] {
          for (const auto& e : r) {
            std::cout << e["offer_id"].get<std::string>() << "  " << e["provider_id"].get<std::string>() << "  "
                      << e["service_type"].get<std::string>() << "  " << e["region"].get<std::string>() << "  "
                      << e["price_per_hour"] << "/h\n";
          }
        });
      }
    } else if (*trust_cmd) {
      json r;
      if (*trust_confirm) {
        r = expect_ok(b.call("POST", "/trust/" + encode(party_a) + "/confirm", json{{"peer", party_b}}));
      } else {
        r = expect_ok(b.call("GET", "/trust/" + encode(party_a) + "/" + encode(party_b), nullptr));
      }
      emit(r, [&] {
        std::cout << r["party_a"].get<std::string>() << " <-> " << r["party_b"].get<std::string>() << "  "
                  << (r["established"].get<bool>() ? "established" : "pending") << "\n";
      });
    } else if (*sim_cmd) {
      if (*sim_run) {
        const json r = expect_ok(b.call("POST", "/sim/run", read_json(script_file)));
        emit(r, [&] {
          std::cout << "seed " << r["seed"] << "\n";
          for (const auto& f : r["results"]) {
            std::cout << "flow " << f["flow_id"] << " chain " << f["chain_id"].get<std::string>() << " delivered "
                      << f["delivered"] << " lost " << f["lost"].size() << "\n";
          }
        });
      } else {
        const json r = expect_ok(b.call("POST", "/sim/advance", json{{"ticks", ticks}}));
        emit(r, [&] {
          std::cout << "now " << r["now"] << "\n";
          for (const auto& e : r["events"]) std::cout << "  " << e["type"].get<std::string>() << "\n";
        });
      }
    }
  } catch (const Failed& f) {
    if (as_json) {
      std::cout << f.body.dump(2) << "\n";
    } else {
      std::cerr << "error: " << f.body.value("error", "unknown") << ": " << f.body.value("message", "") << "\n";
    }
    return kExitDomain;
  } catch (const Error& e) {
    std::cerr << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return kExitDomain;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDomain;
  }
  return kExitOk;
}
