#include "ztpom/gateway.hpp"

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <httplib.h>

#include "ztpom/dataplane.hpp"
#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"
#include "ztpom/sfc.hpp"

namespace ztpom {

using json = nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kSnapshotFile = "snapshot.json";
constexpr const char* kSnapshotFormat = "ztpom-snapshot/1";

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t parse_seed(std::string_view text, std::string_view what) {
  std::uint64_t v = 0;
  if (text.empty()) throw Error(Errc::invalid, std::string(what) + ": empty seed");
  for (char c : text) {
    if (c < '0' || c > '9') throw Error(Errc::invalid, std::string(what) + ": seed must be an unsigned integer");
    v = v * 10 + static_cast<std::uint64_t>(c - '0');
  }
  return v;
}

int hex_value(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  return -1;
}

std::string url_decode(std::string_view s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '+') {
      out += ' ';
    } else if (s[i] == '%' && i + 2 < s.size() && hex_value(s[i + 1]) >= 0 && hex_value(s[i + 2]) >= 0) {
      out += static_cast<char>(hex_value(s[i + 1]) * 16 + hex_value(s[i + 2]));
      i += 2;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<std::string> split_path(std::string_view path) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < path.size()) {
    if (path[i] == '/') {
      ++i;
      continue;
    }
    std::size_t j = path.find('/', i);
    if (j == std::string_view::npos) j = path.size();
    out.push_back(url_decode(path.substr(i, j - i)));
    i = j;
  }
  return out;
}

Response ok(json body, int status = 200) { return {status, std::move(body)}; }

Response error_response(Errc code, const std::string& message) {
  return {http_status(code), json{{"error", to_string(code)}, {"message", message}}};
}

json body_json(const Request& req) {
  if (req.body.empty()) return json::object();
  return jsonio::parse_document(req.body);
}

json summary(const Deployment& d) {
  return json{{"id", d.id},
              {"blueprint_id", d.blueprint.id},
              {"version", d.blueprint.version},
              {"state", to_string(d.state)}};
}

json deployment_view(const Deployment& d) {
  json out = to_json(d);
  json epochs = json::object();
  for (const auto& chain : d.blueprint.chains) {
    if (const ChainPlan* p = d.plan(chain.id)) epochs[chain.id] = p->epoch;
  }
  out["epochs"] = epochs;
  return out;
}

ServiceRequest filter_from_query(const std::map<std::string, std::string>& q) {
  ServiceRequest r;
  auto get = [&](const char* key) -> std::optional<std::string> {
    auto it = q.find(key);
    if (it == q.end()) return std::nullopt;
    return it->second;
  };
  auto number = [&](const char* key) -> std::optional<double> {
    auto v = get(key);
    if (!v) return std::nullopt;
    try {
      std::size_t used = 0;
      double d = std::stod(*v, &used);
      if (used == v->size()) return d;
    } catch (const std::exception&) {
    }
    throw Error(Errc::invalid, std::string(key) + ": expected a number, got '" + *v + "'");
  };
  r.requester = get("requester").value_or("");
  r.service_type = get("service_type");
  r.region = get("region");
  if (auto p = get("provider")) r.allowed_providers = {*p};
  r.max_price = number("max_price");
  if (auto t = number("min_tier")) r.min_tier = static_cast<int>(*t);
  r.min_bandwidth_mbps = number("min_bandwidth_mbps");
  r.user_domain = get("user_domain");
  return r;
}

std::atomic<httplib::Server*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (httplib::Server* s = g_server.load()) s->stop();
}

}  // namespace

int http_status(Errc code) noexcept {
  switch (code) {
    case Errc::syntax:
    case Errc::invalid: return 400;
    case Errc::invalid_token: return 401;
    case Errc::wrong_provider: return 403;
    case Errc::not_found: return 404;
    case Errc::precondition:
    case Errc::wrong_state:
    case Errc::conflict:
    case Errc::duplicate_session: return 409;
    case Errc::no_feasible_path:
    case Errc::insufficient_residual:
    case Errc::vlan_exhausted:
    case Errc::unknown_image:
    case Errc::capacity_exceeded:
    case Errc::unresolved_placeholder:
    case Errc::no_offer:
    case Errc::separation_violation: return 422;
    case Errc::io: return 500;
  }
  return 500;
}

Request make_request(std::string method, std::string_view target, std::string body) {
  Request r;
  r.method = std::move(method);
  r.body = std::move(body);
  const std::size_t q = target.find('?');
  r.path = std::string(target.substr(0, q));
  if (q == std::string_view::npos) return r;
  std::string_view rest = target.substr(q + 1);
  while (!rest.empty()) {
    const std::size_t amp = rest.find('&');
    std::string_view pair = rest.substr(0, amp);
    const std::size_t eq = pair.find('=');
    if (!pair.empty()) {
      r.query[url_decode(pair.substr(0, eq))] = eq == std::string_view::npos ? "" : url_decode(pair.substr(eq + 1));
    }
    if (amp == std::string_view::npos) break;
    rest = rest.substr(amp + 1);
  }
  return r;
}

// --- config -----------------------------------------------------------------

void apply_env(GatewayConfig& cfg) {
  if (const char* seed = std::getenv("ZTPOM_SEED"); seed != nullptr && *seed != '\0') {
    cfg.env_seed = parse_seed(seed, "ZTPOM_SEED");
    cfg.seed = *cfg.env_seed;
  }
}

GatewayConfig config_from_json(const json& doc, const fs::path& base) {
  const std::string path = "config";
  jsonio::expect_object(doc, path);
  GatewayConfig cfg;
  auto resolve = [&](const std::string& p) { return p.empty() || fs::path(p).is_absolute() ? p : (base / p).string(); };
  if (auto listen = jsonio::opt_string(doc, "listen", path)) {
    const std::size_t colon = listen->rfind(':');
    if (colon == std::string::npos) jsonio::fail(jsonio::child(path, "listen"), "expected host:port");
    cfg.host = listen->substr(0, colon);
    try {
      cfg.port = std::stoi(listen->substr(colon + 1));
    } catch (const std::exception&) {
      jsonio::fail(jsonio::child(path, "listen"), "bad port");
    }
  }
  cfg.heartbeat_interval = jsonio::opt_int(doc, "heartbeat_interval_ticks", path).value_or(cfg.heartbeat_interval);
  cfg.miss_threshold = static_cast<int>(jsonio::opt_int(doc, "miss_threshold", path).value_or(cfg.miss_threshold));
  if (cfg.miss_threshold < 1) jsonio::fail(jsonio::child(path, "miss_threshold"), "must be >= 1");
  if (cfg.heartbeat_interval < 1) jsonio::fail(jsonio::child(path, "heartbeat_interval_ticks"), "must be >= 1");
  cfg.lambda = jsonio::opt_number(doc, "broker_lambda", path).value_or(cfg.lambda);
  if (auto seed = jsonio::opt_int(doc, "seed", path)) {
    if (*seed < 0) jsonio::fail(jsonio::child(path, "seed"), "must be >= 0");
    cfg.seed = static_cast<std::uint64_t>(*seed);
  }
  cfg.persistence_dir = resolve(jsonio::opt_string(doc, "persistence_dir", path).value_or(""));
  cfg.topology_path = resolve(jsonio::opt_string(doc, "topology", path).value_or(""));
  cfg.catalogue_path = resolve(jsonio::opt_string(doc, "catalogue", path).value_or(""));
  cfg.owner = jsonio::opt_string(doc, "owner", path).value_or(cfg.owner);
  if (const json* sim = jsonio::find(doc, "simulate_agents")) cfg.simulate_agents = jsonio::get_bool(doc, "simulate_agents", path), (void)sim;
  if (const json* agents = jsonio::find(doc, "agents")) {
    const std::string here = jsonio::child(path, "agents");
    jsonio::expect_object(*agents, here);
    if (const json* d = jsonio::find(*agents, "default")) {
      cfg.agent_defaults = agent_config_from_json(*d, jsonio::child(here, "default"));
    }
    if (const json* providers = jsonio::find(*agents, "providers")) {
      jsonio::expect_object(*providers, jsonio::child(here, "providers"));
      for (auto it = providers->begin(); it != providers->end(); ++it) {
        cfg.agent_providers[it.key()] =
            agent_config_from_json(*it, jsonio::child(jsonio::child(here, "providers"), it.key()), cfg.agent_defaults);
      }
    }
  }
  for (const auto* p : {&cfg.topology_path, &cfg.catalogue_path}) {
    if (!p->empty() && !fs::is_regular_file(*p)) throw Error(Errc::io, "config: cannot read '" + *p + "'");
  }
  return cfg;
}

GatewayConfig load_config(const fs::path& path) {
  GatewayConfig cfg;
  try {
    cfg = config_from_json(jsonio::parse_document(read_file(path)), path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
  apply_env(cfg);
  return cfg;
}

// --- service ----------------------------------------------------------------

namespace {

FabricTopology load_topology(const GatewayConfig& cfg) {
  if (cfg.topology_path.empty()) return {};
  try {
    return FabricTopology::load(read_file(cfg.topology_path));
  } catch (const Error& e) {
    throw Error(e.code(), cfg.topology_path + ": " + e.what());
  }
}

Marketplace load_catalogue(const GatewayConfig& cfg) {
  Marketplace m(cfg.lambda);
  if (cfg.catalogue_path.empty()) return m;
  try {
    m.load_seed(jsonio::parse_document(read_file(cfg.catalogue_path)));
  } catch (const Error& e) {
    throw Error(e.code(), cfg.catalogue_path + ": " + e.what());
  }
  return m;
}

ProvisionerConfig provisioner_config(const GatewayConfig& cfg) {
  ProvisionerConfig p;
  p.heartbeat_interval = cfg.heartbeat_interval;
  p.miss_threshold = cfg.miss_threshold;
  p.owner = cfg.owner;
  p.server_endpoint = "http://" + cfg.host + ":" + std::to_string(cfg.port);
  return p;
}

}  // namespace

Service::Service(GatewayConfig cfg) : Service(cfg, load_topology(cfg), load_catalogue(cfg)) {
  if (!cfg_.persistence_dir.empty() && fs::exists(snapshot_path())) restore(snapshot_path());
}

Service::Service(GatewayConfig cfg, FabricTopology fabric, Marketplace market)
    : cfg_(std::move(cfg)),
      fabric_(std::move(fabric)),
      market_(std::move(market)),
      prov_(fabric_, market_, provisioner_config(cfg_)),
      fleet_(cfg_.agent_defaults, cfg_.agent_providers, provisioner_config(cfg_).server_endpoint) {}

fs::path Service::snapshot_path() const { return fs::path(cfg_.persistence_dir) / kSnapshotFile; }

json Service::state_json() const {
  std::lock_guard lock(mu_);
  return json{{"format", kSnapshotFormat},
              {"fabric", {{"topology", fabric_.to_json()}, {"state", fabric_.state_json()}}},
              {"marketplace", market_.state_json()},
              {"provisioner", prov_.state_json()},
              {"fleet", fleet_.state_json()},
              {"fleet_cursor", fleet_cursor_}};
}

fs::path Service::snapshot() {
  std::lock_guard lock(mu_);
  if (cfg_.persistence_dir.empty()) throw Error(Errc::precondition, "no persistence directory configured");
  const fs::path target = snapshot_path();
  const fs::path tmp = target.string() + ".tmp";
  std::error_code ec;
  fs::create_directories(cfg_.persistence_dir, ec);
  if (ec) throw Error(Errc::io, "cannot create '" + cfg_.persistence_dir + "': " + ec.message());
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write '" + tmp.string() + "'");
    out << state_json().dump(1) << '\n';
    out.flush();
    if (!out) throw Error(Errc::io, "write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, target, ec);
  if (ec) throw Error(Errc::io, "cannot rename '" + tmp.string() + "' to '" + target.string() + "': " + ec.message());
  return target;
}

void Service::restore(const fs::path& path) {
  std::lock_guard lock(mu_);
  if (!fs::exists(path)) throw Error(Errc::io, "snapshot '" + path.string() + "' does not exist");
  try {
    const json doc = jsonio::parse_document(read_file(path));
    if (jsonio::get_string(doc, "format", "") != kSnapshotFormat) {
      throw Error(Errc::invalid, "unsupported snapshot format");
    }
    const json& fabric = jsonio::require(doc, "fabric", "");
    FabricTopology restored_fabric = FabricTopology::from_json(jsonio::require(fabric, "topology", "fabric"));
    restored_fabric.restore_state(jsonio::require(fabric, "state", "fabric"));
    Marketplace restored_market(market_.lambda());
    restored_market.restore_state(jsonio::require(doc, "marketplace", ""));
    // The provisioner and fleet are restored against scratch copies first so
    // a bad document leaves the running state untouched.
    Provisioner scratch(restored_fabric, restored_market, prov_.config());
    scratch.restore_state(jsonio::require(doc, "provisioner", ""));
    Fleet scratch_fleet;
    scratch_fleet.restore_state(jsonio::require(doc, "fleet", ""));

    fabric_ = std::move(restored_fabric);
    market_ = std::move(restored_market);
    prov_.restore_state(doc["provisioner"]);
    fleet_.restore_state(doc["fleet"]);
    fleet_cursor_ = doc.value("fleet_cursor", std::uint64_t{0});
  } catch (const Error& e) {
    throw Error(Errc::io, "corrupt snapshot '" + path.string() + "': " + e.what());
  } catch (const std::exception& e) {
    throw Error(Errc::io, "corrupt snapshot '" + path.string() + "': " + e.what());
  }
}

Response Service::handle(const Request& req) {
  std::lock_guard lock(mu_);
  ++depth_;
  Response r;
  try {
    r = route(req);
    if (depth_ == 1 && cfg_.autosnapshot && req.method != "GET" && r.status < 300 && !cfg_.persistence_dir.empty()) {
      snapshot();
    }
  } catch (const Error& e) {
    r = error_response(e.code(), e.what());
  } catch (const json::exception& e) {
    r = error_response(Errc::invalid, e.what());
  } catch (const std::exception& e) {
    r = {500, json{{"error", "internal"}, {"message", e.what()}}};
  }
  --depth_;
  return r;
}

void Service::feed_fleet() {
  const auto fresh = prov_.events_since(fleet_cursor_);
  if (fresh.empty()) return;
  fleet_cursor_ = fresh.back().seq;
  if (cfg_.simulate_agents) fleet_.observe(fresh);
}

void Service::round(std::int64_t now) {
  prov_.set_time(now);
  feed_fleet();
  if (cfg_.simulate_agents) {
    LocalTransport transport(*this);
    fleet_.step(now, transport);
  }
  prov_.tick(now);
  feed_fleet();
}

std::vector<Event> Service::advance(std::int64_t ticks) {
  std::lock_guard lock(mu_);
  if (ticks < 0) throw Error(Errc::invalid, "ticks must be >= 0");
  const std::uint64_t since = prov_.events().empty() ? 0 : prov_.events().back().seq;
  for (std::int64_t i = 0; i < ticks; ++i) round(prov_.now() + 1);
  return prov_.events_since(since);
}

json Service::probe_flows(const Deployment& d, int count) {
  FabricTopology scratch = fabric_;
  Simulator sim(scratch, cfg_.seed);
  sim.set_release_handler([](const ChainPlan&) {});
  for (const auto& p : d.chain_plans) sim.install(p);
  for (const auto& p : d.chain_plans) {
    FlowSpec flow;
    flow.chain_id = p.chain_id;
    flow.count = count;
    sim.inject(flow);
  }
  // Long enough for every packet to drain: each one is bounded by the hop
  // limit times the slowest link or function.
  return results_json(sim.run_until(1'000'000'000));
}

Response Service::route(const Request& req) {
  const auto seg = split_path(req.path);
  const std::string& m = req.method;
  auto n = seg.size();
  auto is = [&](std::initializer_list<const char*> parts) {
    if (parts.size() != n) return false;
    std::size_t i = 0;
    for (const char* p : parts) {
      if (*p != '*' && seg[i] != p) return false;
      ++i;
    }
    return true;
  };
  auto query_int = [&](const char* key, std::int64_t fallback) {
    auto it = req.query.find(key);
    if (it == req.query.end()) return fallback;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(it->second, &used);
      if (used == it->second.size()) return static_cast<std::int64_t>(v);
    } catch (const std::exception&) {
    }
    throw Error(Errc::invalid, std::string(key) + ": expected an integer, got '" + it->second + "'");
  };

  // --- blueprints ---
  if (m == "GET" && is({"blueprints"})) {
    json out = json::array();
    for (const auto& ref : prov_.blueprints()) out.push_back({{"id", ref.id}, {"version", ref.version}});
    return ok(out);
  }
  if (m == "POST" && is({"blueprints"})) {
    const auto ref = prov_.register_blueprint(parse_blueprint(req.body));
    json out{{"id", ref.id}, {"version", ref.version}};
    if (const ChangeSet* cs = prov_.last_changes(ref.id); cs && cs->to_version == ref.version) {
      out["changes"] = to_json(*cs);
    }
    return ok(out, 201);
  }
  if (m == "GET" && is({"blueprints", "*"})) {
    std::optional<std::int64_t> version;
    if (req.query.count("version") != 0) version = query_int("version", 0);
    return ok(to_json(prov_.blueprint(seg[1], version)));
  }

  // --- deployments ---
  if (m == "GET" && is({"deployments"})) {
    json out = json::array();
    for (const auto& id : prov_.deployment_ids()) out.push_back(summary(prov_.deployment(id)));
    return ok(out);
  }
  if (m == "POST" && is({"deployments"})) {
    const json body = body_json(req);
    std::string bp_id;
    if (const json* doc = jsonio::find(body, "blueprint")) {
      Blueprint bp = blueprint_from_json(*doc);
      bp_id = bp.id;
      std::optional<std::int64_t> stored;
      for (const auto& ref : prov_.blueprints()) {
        if (ref.id == bp.id) stored = ref.version;
      }
      if (!stored || *stored < bp.version) {
        prov_.register_blueprint(bp);
      } else if (*stored == bp.version && !(prov_.blueprint(bp.id) == bp)) {
        throw Error(Errc::conflict, "blueprint '" + bp.id + "' version " + std::to_string(bp.version) +
                                        " is already registered with different content");
      } else if (*stored > bp.version) {
        throw Error(Errc::precondition, "blueprint '" + bp.id + "' is registered at newer version " +
                                            std::to_string(*stored));
      }
    } else {
      bp_id = jsonio::get_string(body, "blueprint_id", "");
    }
    const Deployment& planned = prov_.plan_deployment(bp_id, jsonio::opt_string(body, "owner", ""));
    return ok(deployment_view(prov_.start_provisioning(planned.id)), 201);
  }
  if (m == "GET" && is({"deployments", "*"})) return ok(deployment_view(prov_.deployment(seg[1])));
  if (m == "DELETE" && is({"deployments", "*"})) return ok(deployment_view(prov_.teardown(seg[1])));
  if (m == "POST" && is({"deployments", "*", "update"})) {
    const json body = body_json(req);
    return ok(deployment_view(prov_.request_update(seg[1], jsonio::get_int(body, "version", ""))));
  }
  if (m == "POST" && is({"deployments", "*", "rechain"})) {
    const json body = body_json(req);
    const Deployment& d = prov_.deployment(seg[1]);
    std::string chain;
    if (auto c = jsonio::opt_string(body, "chain", "")) {
      chain = *c;
    } else if (d.blueprint.chains.size() == 1) {
      chain = d.blueprint.chains.front().id;
    } else {
      jsonio::fail("chain", "required when the deployment has " + std::to_string(d.blueprint.chains.size()) + " chains");
    }
    return ok(deployment_view(prov_.rechain(seg[1], chain, jsonio::get_string_list(body, "order", ""))));
  }
  if (m == "GET" && is({"deployments", "*", "rules"})) {
    const Deployment& d = prov_.deployment(seg[1]);
    json out = json::array();
    for (const auto& p : d.chain_plans) {
      out.push_back({{"chain", p.chain_id}, {"epoch", p.epoch}, {"text", render_rules(p)}});
    }
    return ok(json{{"deployment", d.id}, {"rules", out}});
  }
  if (m == "GET" && is({"deployments", "*", "flows"})) {
    const Deployment& d = prov_.deployment(seg[1]);
    const std::int64_t count = query_int("count", 10);
    if (count < 1 || count > 10000) throw Error(Errc::invalid, "count: must be in [1, 10000]");
    return ok(json{{"deployment", d.id}, {"seed", cfg_.seed}, {"flows", probe_flows(d, static_cast<int>(count))}});
  }

  // --- agent protocol ---
  if (m == "POST" && is({"agent", "hello"})) {
    const json body = body_json(req);
    Hello h{jsonio::get_string(body, "deployment", ""), jsonio::get_string(body, "node", ""),
            jsonio::get_string(body, "provider", "")};
    return ok(to_json(prov_.handle_discovery(h)));
  }
  if (m == "GET" && is({"agent", "recipe"})) {
    auto token = req.query.find("token");
    if (token == req.query.end()) throw Error(Errc::invalid_token, "missing token");
    return ok(to_json(prov_.handle_fetch(token->second)));
  }
  if (m == "POST" && is({"agent", "status"})) {
    const json body = body_json(req);
    StatusReport report;
    report.phase = phase_from(jsonio::get_string(body, "phase", ""));
    if (const json* payload = jsonio::find(body, "payload")) report.payload = *payload;
    const Directive d = prov_.handle_status(jsonio::get_string(body, "token", ""), report);
    return ok(json{{"directive", to_string(d)}});
  }

  // --- marketplace ---
  if (m == "GET" && is({"catalogue"})) {
    json out = json::array();
    for (const auto& e : market_.search(filter_from_query(req.query))) out.push_back(to_json(e));
    return ok(out);
  }
  if (m == "POST" && is({"catalogue", "offers"})) {
    return ok(json{{"offer_id", market_.publish_offer(entry_from_json(body_json(req)))}}, 201);
  }
  if (m == "POST" && is({"catalogue", "certs"})) {
    const json body = body_json(req);
    const std::string party = jsonio::get_string(body, "party", "");
    market_.register_cert(party, jsonio::get_string(body, "fingerprint", ""));
    return ok(json{{"party", party}, {"fingerprint", *market_.cert(party)}}, 201);
  }
  if (m == "POST" && is({"catalogue", "providers"})) {
    ProviderProfile p = profile_from_json(body_json(req));
    const std::string id = p.provider_id;
    market_.register_profile(std::move(p));
    return ok(json{{"provider_id", id}}, 201);
  }
  if (m == "POST" && is({"broker"})) {
    ServiceRequest sr = request_from_json(body_json(req));
    if (sr.requester.empty()) sr.requester = cfg_.owner;
    const BrokerExplanation ex = market_.explain(sr, fabric_);
    json matches = json::array();
    for (const auto& match : ex.matches) matches.push_back(to_json(match));
    json out{{"matches", matches}};
    if (ex.matches.empty()) out["binding"] = ex.binding, out["detail"] = ex.detail;
    return ok(out);
  }
  if (m == "POST" && is({"trust", "*", "confirm"})) {
    const json body = body_json(req);
    return ok(to_json(market_.confirm_trust(seg[1], jsonio::get_string(body, "peer", ""))));
  }
  if (m == "GET" && is({"trust", "*", "*"})) return ok(to_json(market_.trust_status(seg[1], seg[2])));

  // --- fabric, simulation, events ---
  if (m == "GET" && is({"topology"})) {
    json links = json::array();
    for (const auto& l : fabric_.links()) {
      links.push_back({{"id", l.id},
                       {"committed_mbps", fabric_.committed(l.id)},
                       {"residual_mbps", fabric_.residual(l.id)},
                       {"vlans", fabric_.vlans(l.id)}});
    }
    return ok(json{{"topology", fabric_.to_json()}, {"links", links}});
  }
  if (m == "POST" && is({"sim", "run"})) {
    const ScenarioOutcome outcome =
        run_scenario(body_json(req), FabricTopology::from_json(fabric_.to_json()), cfg_.seed, cfg_.env_seed);
    return ok(json{{"seed", outcome.seed},
                   {"snapshots", outcome.snapshots},
                   {"results", results_json(outcome.final_results)}});
  }
  if (m == "POST" && is({"sim", "advance"})) {
    const json body = body_json(req);
    json events = json::array();
    for (const auto& e : advance(jsonio::opt_int(body, "ticks", "").value_or(1))) events.push_back(to_json(e));
    return ok(json{{"now", prov_.now()}, {"events", events}});
  }
  if (m == "POST" && is({"snapshot"})) return ok(json{{"path", snapshot().string()}});
  if (m == "GET" && is({"events"})) {
    const std::int64_t since = query_int("since", 0);
    if (since < 0) throw Error(Errc::invalid, "since: must be >= 0");
    json events = json::array();
    std::uint64_t next = static_cast<std::uint64_t>(since);
    for (const auto& e : prov_.events_since(static_cast<std::uint64_t>(since))) {
      events.push_back(to_json(e));
      next = e.seq;
    }
    return ok(json{{"events", events}, {"next", next}});
  }

  return error_response(Errc::not_found, "no route for " + m + " " + req.path);
}

WireReply LocalTransport::send(std::string_view method, std::string_view target, const json& body) {
  const std::string text = body.is_null() ? std::string() : body.dump();
  Response r = service_.handle(make_request(std::string(method), target, text));
  return {r.status, json::parse(r.body.dump())};
}

void serve(Service& service) {
  httplib::Server server;
  auto adapt = [&service](const httplib::Request& hreq, httplib::Response& hres) {
    Request req;
    req.method = hreq.method;
    req.path = hreq.path;
    req.body = hreq.body;
    for (const auto& [k, v] : hreq.params) req.query[k] = v;
    Response r = service.handle(req);
    hres.status = r.status;
    hres.set_content(r.body.dump(2) + "\n", "application/json");
  };
  server.Get(".*", adapt);
  server.Post(".*", adapt);
  server.Delete(".*", adapt);

  const auto& cfg = service.config();
  if (!server.bind_to_port(cfg.host, cfg.port)) {
    throw Error(Errc::io, "cannot bind " + cfg.host + ":" + std::to_string(cfg.port));
  }
  g_server.store(&server);
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cout << "listening on " << cfg.host << ":" << cfg.port << std::endl;
  server.listen_after_bind();
  g_server.store(nullptr);
  if (!cfg.persistence_dir.empty()) std::cout << "snapshot written to " << service.snapshot().string() << std::endl;
}

}  // namespace ztpom
