// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fail.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "ztpom/dataplane.hpp"
#include "ztpom/gateway.hpp"
#include "ztpom/provisioner.hpp"

using namespace ztpom;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

class Check {
 public:
  void expect(bool ok, const std::string& what) {
    ++checks_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  void note(std::string s) { notes_ = std::move(s); }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream out;
    if (ok()) {
      out << checks_ << " checks";
      if (!notes_.empty()) out << ", " << notes_;
      return out.str();
    }
    out << failed_ << "/" << checks_ << " checks failed";
    for (const auto& f : failures_) out << "; " << f;
    return out.str();
  }

 private:
  int checks_ = 0;
  int failed_ = 0;
  std::vector<std::string> failures_;
  std::string notes_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string ms(double seconds) { return std::to_string(static_cast<int>(seconds * 1000)) + " ms"; }

template <class T>
std::string str(const T& v) {
  std::ostringstream out;
  out << v;
  return out.str();
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (const auto& s : v) out += (out.empty() ? "" : ",") + s;
  return out;
}

// A random chain over an existing topology: source, sink and every
// function land in random domains.
struct RandomChain {
  ChainSpec spec;
  Placements placements;
};

RandomChain random_chain(std::mt19937_64& rng, const FabricTopology& t, const std::string& id, int max_len,
                         std::uint8_t tag) {
  const int n = static_cast<int>(t.domains().size());
  std::uniform_int_distribution<int> dom(0, n - 1);
  std::uniform_int_distribution<int> len(1, max_len);
  RandomChain c;
  c.spec.id = id;
  c.spec.source = {oracle::domain_name(dom(rng)), oracle::mac(tag, 0, 1)};
  c.spec.sink = {oracle::domain_name(dom(rng)), oracle::mac(tag, 0, 2)};
  c.spec.qos.min_bandwidth_mbps = std::uniform_int_distribution<int>(1, 4)(rng) * 25.0;
  const int k = len(rng);
  for (int i = 0; i < k; ++i) {
    const std::string f = "f" + std::to_string(i);
    c.spec.functions.push_back(f);
    c.placements[f] = {oracle::domain_name(dom(rng)), oracle::mac(tag, 1, static_cast<std::uint8_t>(i)),
                       std::uniform_int_distribution<int>(0, 4)(rng) * 0.5};
  }
  return c;
}

// --- AC1 --------------------------------------------------------------------

void ac1(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(1001);
  int feasible = 0;
  for (int trial = 0; trial < 500; ++trial) {
    auto t = oracle::random_topology(rng, 10, 20, trial % 2 == 0);
    oracle::random_load(t, rng, 5);
    const auto q = oracle::random_qos(rng);
    const int n = static_cast<int>(t.domains().size());
    const std::string src = oracle::domain_name(std::uniform_int_distribution<int>(0, n - 1)(rng));
    std::string dst = oracle::domain_name(std::uniform_int_distribution<int>(0, n - 1)(rng));
    if (dst == src) dst = oracle::domain_name((std::stoi(src.substr(1)) + 1) % n);
    const auto ref = oracle::best_path(t, src, dst, q);
    const std::string label = "trial " + std::to_string(trial);
    try {
      const Path p = t.compute_path(src, dst, q);
      c.expect(ref.has_value(), label + ": path found where enumeration has none");
      if (!ref) continue;
      ++feasible;
      c.expect(p.links == ref->links, label + ": links " + join(p.links) + " vs " + join(ref->links));
      c.expect(p.domains == ref->domains, label + ": domain sequence differs");
      c.expect(p.total_latency_ms == ref->latency, label + ": latency differs");
    } catch (const NoPathError&) {
      c.expect(!ref.has_value(), label + ": no path reported but enumeration found " + join(ref->links));
    }
  }
  const double took = seconds_since(t0);
  c.expect(took < 30, "took " + ms(took));
  c.expect(feasible > 100, "only " + std::to_string(feasible) + " feasible trials");
  c.note("500 topologies, " + std::to_string(feasible) + " feasible, " + ms(took));
}

// --- AC2 --------------------------------------------------------------------

void ac2(Check& c) {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2002);
  int compiled = 0;
  int packets = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    auto t = oracle::random_topology(rng, 8, 14, true);
    const RandomChain rc = random_chain(rng, t, "c", 5, 1);
    const std::string label = "scenario " + std::to_string(trial);
    ChainPlan plan;
    try {
      plan = compile_chain(rc.spec, rc.placements, t);
    } catch (const Error&) {
      continue;
    }
    ++compiled;
    const auto walk = oracle::walk_rules(plan, t);
    c.expect(walk.delivered && walk.functions == rc.spec.functions, label + ": rule walk " + walk.stuck);

    Simulator sim(t, static_cast<std::uint64_t>(trial));
    sim.install(plan);
    FlowSpec flow{"c", 4, 0, 3, 2};
    sim.inject(flow);
    const auto results = sim.run_until(100'000);
    c.expect(results.size() == 1, label + ": one flow result");
    if (results.size() != 1) continue;
    const FlowResult& r = results[0];
    c.expect(r.delivered == 4, label + ": delivered " + std::to_string(r.delivered));
    for (const auto& loss : r.lost) c.expect(loss.reason != "no-rule", label + ": no-rule loss at " + loss.domain);
    c.expect(r.lost.empty(), label + ": packets lost");
    for (const auto& p : r.packets) {
      ++packets;
      c.expect(p.trace == rc.spec.functions, label + ": trace " + join(p.trace));
      c.expect(p.final_dst == rc.spec.sink.mac, label + ": final dst " + p.final_dst.str());
      c.expect(p.links == walk.links, label + ": link sequence differs from rule walk");
      c.expect(p.latency_ms == oracle::expected_latency(plan, t), label + ": latency");
    }
  }
  const double took = seconds_since(t0);
  c.expect(took < 60, "took " + ms(took));
  c.expect(compiled > 900, "only " + std::to_string(compiled) + " scenarios compiled");
  c.note("1000 scenarios, " + std::to_string(compiled) + " compiled, " + std::to_string(packets) + " packets, " +
         ms(took));
}

// --- AC3 --------------------------------------------------------------------

// Recomputes per-link bandwidth and tag usage from the plans alone.
struct Usage {
  std::map<std::string, double> committed;
  std::map<std::string, std::set<int>> tags;
};

Usage usage_of(const std::vector<ChainPlan>& plans) {
  Usage u;
  for (const auto& p : plans) {
    for (const auto& s : p.segments) {
      for (const auto& l : s.links) {
        u.committed[l.link_id] += p.bandwidth_mbps;
        u.tags[l.link_id].insert(l.vlan);
      }
    }
  }
  return u;
}

void ac3(Check& c) {
  std::mt19937_64 rng(3003);
  int ops = 0;
  int failed_ops = 0;
  int rechains = 0;
  for (int run = 0; run < 6; ++run) {
    auto t = oracle::random_topology(rng, 6, 10, true, 6);
    std::vector<ChainPlan> held;
    int next = 0;
    for (int step = 0; step < 60; ++step, ++ops) {
      const std::string label = "run " + std::to_string(run) + " op " + std::to_string(step);
      const auto before = t.allocation_state();
      const int kind = std::uniform_int_distribution<int>(0, 5)(rng);
      try {
        if (kind <= 2 || held.empty()) {
          const auto rc = random_chain(rng, t, "c" + std::to_string(next), 4, static_cast<std::uint8_t>(next));
          ++next;
          held.push_back(compile_chain(rc.spec, rc.placements, t));
        } else if (kind <= 4) {
          auto& victim = held[std::uniform_int_distribution<std::size_t>(0, held.size() - 1)(rng)];
          ChainSpec spec;
          spec.id = victim.chain_id;
          spec.source = victim.source;
          spec.sink = victim.sink;
          spec.qos.min_bandwidth_mbps = victim.bandwidth_mbps;
          Placements placements;
          for (const auto& h : victim.hops) {
            spec.functions.push_back(h.node_id);
            placements[h.node_id] = {h.domain, h.mac, h.fn_delay_ms};
          }
          std::shuffle(spec.functions.begin(), spec.functions.end(), rng);
          const ChainUpdate u = rechain(victim, spec, placements, t);
          ++rechains;
          // Both epochs coexist until cutover; check separation now, then
          // break the old one.
          std::vector<ChainPlan> both = held;
          both.push_back(u.new_plan);
          c.expect(audit_separation(both).empty(), label + ": old and new epochs share a tag");
          release_chain(victim, t);
          victim = u.new_plan;
        } else {
          const auto i = std::uniform_int_distribution<std::size_t>(0, held.size() - 1)(rng);
          release_chain(held[i], t);
          held.erase(held.begin() + static_cast<std::ptrdiff_t>(i));
        }
      } catch (const Error& e) {
        ++failed_ops;
        c.expect(t.allocation_state() == before, label + ": failed op changed allocations (" + e.what() + ")");
      }
      c.expect(audit_separation(held).empty(), label + ": audit_separation not empty");
      const Usage u = usage_of(held);
      for (const auto& l : t.links()) {
        const double expect = u.committed.count(l.id) ? u.committed.at(l.id) : 0.0;
        c.expect(t.committed(l.id) <= l.capacity_mbps, label + ": " + l.id + " over capacity");
        c.expect(std::abs(t.committed(l.id) - expect) < 1e-9, label + ": " + l.id + " committed mismatch");
        const std::set<int> tags = u.tags.count(l.id) ? u.tags.at(l.id) : std::set<int>{};
        c.expect(t.vlans(l.id) == tags, label + ": " + l.id + " tag set mismatch");
        for (int v : t.vlans(l.id)) c.expect(l.vlan_pool.contains(v), label + ": tag outside pool on " + l.id);
      }
      for (const auto& p : held) {
        for (const auto& h : p.hops) c.expect(h.access_vlan >= 1 && h.access_vlan <= 4094, label + ": access tag");
      }
    }
    for (const auto& p : held) release_chain(p, t);
    for (const auto& l : t.links()) {
      c.expect(t.committed(l.id) == 0 && t.vlans(l.id).empty(), "run " + std::to_string(run) + ": leak on " + l.id);
    }
  }
  c.expect(ops >= 200, "only " + std::to_string(ops) + " ops");
  c.expect(failed_ops > 0, "no failing op exercised the rollback path");
  c.note(std::to_string(ops) + " ops, " + std::to_string(rechains) + " rechains, " + std::to_string(failed_ops) +
         " rejected");
}

// --- AC4 --------------------------------------------------------------------

void ac4(Check& c) {
  const json script = oracle::fixture_json("sc15.json");
  const json chain = script.at("actions").at(0).at("chain");
  const ChainSpec spec = chain_from_json(chain);
  Placements placements;
  for (const auto& [node, p] : script.at("actions").at(0).at("placements").items()) {
    placements[node] = {p.at("domain"), MacAddress::parse(p.at("mac").get<std::string>()), p.at("fn_delay_ms")};
  }
  FabricTopology t = oracle::t3();
  const auto bare = t.allocation_state();
  Simulator sim(t, 15);
  const ChainPlan old_plan = compile_chain(spec, placements, t);
  sim.install(old_plan);
  sim.inject({"edit", 10, 0, 2, 0});
  ChainSpec reordered = spec;
  reordered.functions = {"transform", "capture", "view"};
  const ChainUpdate u = rechain(old_plan, reordered, placements, t);
  sim.install(u.new_plan);
  sim.cutover(u, 10);
  const auto results = sim.run_until(200);
  c.expect(results.size() == 1, "one flow");
  const FlowResult& r = results.at(0);
  c.expect(r.delivered == 10 && r.lost.empty(), "lost packets: delivered " + std::to_string(r.delivered));
  const std::vector<std::string> before{"capture", "transform", "view"};
  for (const auto& p : r.packets) {
    const bool pre = p.inject_tick < 10;
    c.expect(p.epoch == (pre ? 1 : 2), "packet " + std::to_string(p.seq) + " epoch " + std::to_string(p.epoch));
    c.expect(p.trace == (pre ? before : reordered.functions), "packet " + std::to_string(p.seq) + " trace");
    c.expect(p.final_dst == spec.sink.mac, "packet " + std::to_string(p.seq) + " final dst");
  }
  c.expect(!sim.installed(old_plan.key()), "old plan still installed");
  c.expect(!t.has_lease(old_plan.key()), "old plan still holds fabric resources");
  c.expect(t.has_lease(u.new_plan.key()), "new plan lost its lease");
  release_chain(u.new_plan, t);
  c.expect(t.allocation_state() == bare, "fabric not back to bare after final release");

  // The recorded script, driven through the scenario runner with the
  // environment seed applied.
  GatewayConfig cfg;
  ::setenv("ZTPOM_SEED", "9090", 1);
  apply_env(cfg);
  ::unsetenv("ZTPOM_SEED");
  json jittered = script;
  jittered["actions"][2]["jitter"] = 3;
  const auto a = run_scenario(jittered, oracle::t3(), 15, cfg.env_seed);
  const auto b = run_scenario(jittered, oracle::t3(), 15, cfg.env_seed);
  c.expect(a.seed == 9090, "environment seed not applied");
  c.expect(results_json(a.final_results).dump() == results_json(b.final_results).dump(), "replay differs");
  c.expect(a.final_results.at(0).delivered == 10 && a.final_results.at(0).lost.empty(), "jittered replay lost");
  const auto plain = run_scenario(script, oracle::t3(), 1, std::nullopt);
  c.expect(results_json(plain.final_results) == results_json(results), "runner disagrees with direct replay");
  c.note("10 packets, cutover at tick 10");
}

// --- AC5 --------------------------------------------------------------------

const std::vector<std::string> kTypes{"alpha", "beta", "gamma", "delta"};

// Three providers in three domains of a random connected topology; every
// service type is offered by at least one trusted provider.
json random_catalogue(std::mt19937_64& rng, const FabricTopology& t) {
  json doc;
  doc["certs"] = {{"ztpom", oracle::fingerprint(rng)}};
  doc["providers"] = json::array();
  doc["offers"] = json::array();
  doc["trust"] = json::array();
  for (std::size_t i = 0; i < t.domains().size() && i < 3; ++i) {
    const std::string p = t.domains()[i].providers.at(0);
    doc["certs"][p] = oracle::fingerprint(rng);
    std::ostringstream prefix;
    prefix << "02:0" << i << ":00:00";
    doc["providers"].push_back({{"provider_id", p},
                                {"domain_id", t.domains()[i].id},
                                {"image_map", {{"img", "img-" + p}}},
                                {"address_block", "10." + std::to_string(i) + ".0.0/16"},
                                {"mac_prefix", prefix.str()},
                                {"capacity", {{"vcpu", 512}, {"mem_gb", 4096}}}});
    doc["trust"].push_back({"ztpom", p});
  }
  const auto providers = doc["providers"].size();
  for (std::size_t k = 0; k < kTypes.size(); ++k) {
    for (std::size_t i = 0; i < providers; ++i) {
      if (i != k % providers && std::uniform_int_distribution<int>(0, 1)(rng) == 0) continue;
      const std::string p = doc["providers"][i]["provider_id"];
      doc["offers"].push_back({{"offer_id", p + "-" + kTypes[k]},
                               {"provider_id", p},
                               {"service_type", kTypes[k]},
                               {"region", "r"},
                               {"price_per_hour", std::uniform_int_distribution<int>(1, 9)(rng) * 0.25}});
    }
  }
  return doc;
}

Blueprint random_blueprint(std::mt19937_64& rng, const FabricTopology& t, int n) {
  Blueprint bp;
  bp.id = "bp";
  bp.name = "random";
  for (int i = 0; i < n; ++i) {
    NodeSpec node;
    node.id = "n" + std::to_string(i);
    node.service_type = kTypes[std::uniform_int_distribution<std::size_t>(0, kTypes.size() - 1)(rng)];
    node.image_ref = "img";
    bp.nodes.push_back(node);
  }
  const int domains = static_cast<int>(t.domains().size());
  ChainSpec chain;
  chain.id = "main";
  chain.source = {oracle::domain_name(std::uniform_int_distribution<int>(0, domains - 1)(rng)), oracle::mac(9, 9, 1)};
  chain.sink = {oracle::domain_name(std::uniform_int_distribution<int>(0, domains - 1)(rng)), oracle::mac(9, 9, 2)};
  chain.qos.min_bandwidth_mbps = 10;
  for (const auto& node : bp.nodes) {
    if (std::uniform_int_distribution<int>(0, 1)(rng) == 0) chain.functions.push_back(node.id);
  }
  if (chain.functions.empty()) chain.functions.push_back(bp.nodes.front().id);
  bp.chains.push_back(chain);
  return bp;
}

GatewayConfig service_config() {
  GatewayConfig cfg;
  cfg.seed = 15;
  cfg.agent_defaults.deploy_delay_ticks = 1;
  return cfg;
}

void ac5(Check& c) {
  std::mt19937_64 rng(5005);
  int worst_margin = 1 << 20;
  for (int run = 0; run < 100; ++run) {
    const std::string label = "run " + std::to_string(run);
    auto t = oracle::random_topology(rng, 5, 8, true);
    while (t.domains().size() < 3) t = oracle::random_topology(rng, 5, 8, true);
    Marketplace market(0.1);
    market.load_seed(random_catalogue(rng, t));
    const int n = std::uniform_int_distribution<int>(1, 8)(rng);
    const Blueprint bp = random_blueprint(rng, t, n);
    GatewayConfig cfg = service_config();
    cfg.agent_defaults.deploy_delay_ticks = std::uniform_int_distribution<int>(0, 1)(rng);
    Service svc(cfg, t, market);
    const Response r = svc.handle(make_request("POST", "/deployments", json{{"blueprint", to_json(bp)}}.dump()));
    c.expect(r.status == 201, label + ": deploy returned " + std::to_string(r.status) + " " + r.body.dump());
    if (r.status != 201) continue;
    const std::string dep = r.body.at("id");
    int rounds = 0;
    while (svc.provisioner().deployment(dep).state != DeploymentState::ACTIVE && rounds < n + 10) {
      svc.advance(1);
      ++rounds;
    }
    c.expect(svc.provisioner().deployment(dep).state == DeploymentState::ACTIVE,
             label + ": not ACTIVE after " + std::to_string(rounds) + " rounds");
    c.expect(rounds <= n + 2, label + ": N=" + std::to_string(n) + " took " + std::to_string(rounds) + " rounds");
    worst_margin = std::min(worst_margin, n + 2 - rounds);
    c.expect(svc.provisioner().live_sessions(dep) == static_cast<std::size_t>(n), label + ": sessions");
  }
  c.note("100 runs, smallest slack to N+2 is " + std::to_string(worst_margin) + " rounds");
}

// --- AC6 --------------------------------------------------------------------

struct SilenceOutcome {
  std::int64_t last_heartbeat = -1;
  std::int64_t degraded_at = -1;
  std::int64_t lost_event_at = -1;
  DeploymentState final_state = DeploymentState::DRAFT;
  json deployment;
};

SilenceOutcome silence(const std::string& node, const GatewayConfig& cfg, Check& c, const std::string& label) {
  Service svc(cfg, oracle::t3(), [] {
    Marketplace m(0.1);
    m.load_seed(oracle::fixture_json("catalogue.json"));
    return m;
  }());
  AgentConfig quiet = cfg.agent_defaults;
  quiet.fail_mode = FailMode::silent_after;
  quiet.silent_after_tick = 6;
  svc.fleet().set_node_config("dep-1", node, quiet);
  const auto r = svc.handle(make_request("POST", "/deployments", json{{"blueprint", oracle::fixture_json("video.json")}}.dump()));
  c.expect(r.status == 201, label + ": deploy failed");
  SilenceOutcome out;
  for (int i = 0; i < 60; ++i) {
    for (const auto& e : svc.advance(1)) {
      if (e.type == "NodeLost" && out.lost_event_at < 0) out.lost_event_at = e.tick;
      if (e.type == "DeploymentState" && e.detail.at("to") == "DEGRADED" && out.degraded_at < 0) {
        out.degraded_at = e.tick;
      }
    }
  }
  for (const auto& a : svc.fleet().agents()) {
    if (a.node_id() == node && a.config().fail_mode == FailMode::silent_after && !a.heartbeats().empty()) {
      out.last_heartbeat = a.heartbeats().back();
    }
  }
  out.final_state = svc.provisioner().deployment("dep-1").state;
  out.deployment = to_json(svc.provisioner().deployment("dep-1"));
  return out;
}

void ac6(Check& c) {
  for (int threshold : {1, 2, 3, 5}) {
    GatewayConfig cfg = service_config();
    cfg.miss_threshold = threshold;
    cfg.heartbeat_interval = 5;
    const std::string label = "threshold " + std::to_string(threshold);
    const auto o = silence("transform", cfg, c, label);
    c.expect(o.last_heartbeat == 6, label + ": last heartbeat " + std::to_string(o.last_heartbeat));
    const std::int64_t expected = o.last_heartbeat + cfg.heartbeat_interval * threshold;
    c.expect(o.lost_event_at == expected,
             label + ": lost at " + std::to_string(o.lost_event_at) + ", expected " + std::to_string(expected));
    c.expect(o.degraded_at == expected, label + ": DEGRADED at " + std::to_string(o.degraded_at));
    c.expect(o.final_state == DeploymentState::ACTIVE, label + ": final " + std::string(to_string(o.final_state)));
    c.expect(o.deployment.at("placements").at("transform") == "csp-c", label + ": transform not moved to csp-c");
    const json& plan = o.deployment.at("chain_plans").at(0);
    c.expect(plan.at("epoch") == 2, label + ": chain not recompiled");
    c.expect(plan.at("hops").at(1).at("domain") == "C", label + ": recompiled hop not in C");
  }
  GatewayConfig cfg = service_config();
  const auto o = silence("capture", cfg, c, "no alternative");
  c.expect(o.lost_event_at == 6 + 15, "no alternative: lost at " + std::to_string(o.lost_event_at));
  c.expect(o.final_state == DeploymentState::FAILED, "no alternative: final " + std::string(to_string(o.final_state)));
  c.note("thresholds 1,2,3,5 recover; capture loss fails");
}

// --- AC7 --------------------------------------------------------------------

void ac7(Check& c) {
  std::mt19937_64 rng(7007);
  const std::vector<std::string> regions{"r1", "r2", "r3"};
  int nonempty = 0;
  for (int trial = 0; trial < 300; ++trial) {
    const std::string label = "trial " + std::to_string(trial);
    auto t = oracle::random_topology(rng, 8, 12, trial % 3 != 0);
    oracle::random_load(t, rng, 3);
    Marketplace m(std::uniform_int_distribution<int>(0, 4)(rng) * 0.05);
    m.register_cert("user", oracle::fingerprint(rng));
    std::vector<std::string> providers;
    for (const auto& d : t.domains()) {
      for (const auto& p : d.providers) {
        providers.push_back(p);
        m.register_cert(p, oracle::fingerprint(rng));
        const int mode = std::uniform_int_distribution<int>(0, 3)(rng);
        if (mode >= 1) m.confirm_trust("user", p);
        if (mode >= 2) m.confirm_trust(p, "user");
      }
    }
    // A provider with no domain is never reachable.
    m.register_cert("floating", oracle::fingerprint(rng));
    m.confirm_trust("user", "floating");
    m.confirm_trust("floating", "user");
    providers.push_back("floating");
    const int count = std::uniform_int_distribution<int>(1, 100)(rng);
    for (int i = 0; i < count; ++i) {
      CatalogEntry e;
      e.offer_id = "o" + std::to_string(i);
      e.provider_id = providers[std::uniform_int_distribution<std::size_t>(0, providers.size() - 1)(rng)];
      e.service_type = std::uniform_int_distribution<int>(0, 1)(rng) ? "x" : "y";
      e.region = regions[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
      e.price_per_hour = std::uniform_int_distribution<int>(1, 20)(rng) * 0.25;
      e.availability_tier = std::uniform_int_distribution<int>(1, 4)(rng);
      e.min_bandwidth_mbps = std::uniform_int_distribution<int>(0, 2)(rng) * 50.0;
      e.max_bandwidth_mbps = e.min_bandwidth_mbps + std::uniform_int_distribution<int>(1, 10)(rng) * 100.0;
      m.publish_offer(e);
    }
    ServiceRequest r;
    r.requester = "user";
    if (std::uniform_int_distribution<int>(0, 4)(rng)) r.service_type = "x";
    if (std::uniform_int_distribution<int>(0, 1)(rng)) r.user_domain = oracle::domain_name(0);
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.min_tier = 2;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.max_price = 3.0;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.max_latency_ms = 6;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.min_bandwidth_mbps = 250;
    if (std::uniform_int_distribution<int>(0, 3)(rng) == 0) r.allowed_regions = {"r1", "r3"};
    if (std::uniform_int_distribution<int>(0, 4)(rng) == 0) r.excluded_providers = {providers.front()};

    std::map<std::string, std::string> domains;
    for (const auto& p : providers) {
      if (auto d = t.domain_of_provider(p)) domains[p] = *d;
    }
    const auto got = m.broker(r, t);
    const auto ref = oracle::brute_force_broker(m, r, t, m.lambda(), domains);
    if (!got.empty()) ++nonempty;
    c.expect(got.size() == ref.size(),
             label + ": " + std::to_string(got.size()) + " matches vs " + std::to_string(ref.size()));
    for (std::size_t i = 0; i < std::min(got.size(), ref.size()); ++i) {
      c.expect(got[i].offer.offer_id == ref[i].offer_id, label + ": rank " + std::to_string(i));
      c.expect(got[i].score == ref[i].score, label + ": score at rank " + std::to_string(i));
    }
    for (const auto& match : got) {
      c.expect(m.trusted("user", match.offer.provider_id), label + ": untrusted " + match.offer.provider_id);
      c.expect(domains.count(match.offer.provider_id) != 0, label + ": unplaced provider returned");
      if (r.user_domain && domains.count(match.offer.provider_id) && domains[match.offer.provider_id] != *r.user_domain) {
        QoSDemand q;
        q.max_latency_ms = r.max_latency_ms;
        q.min_bandwidth_mbps = r.min_bandwidth_mbps.value_or(0);
        c.expect(oracle::best_path(t, *r.user_domain, domains[match.offer.provider_id], q).has_value(),
                 label + ": unreachable provider " + match.offer.provider_id);
      }
    }
  }
  c.note("300 catalogues, " + std::to_string(nonempty) + " with matches");
}

// --- AC8 --------------------------------------------------------------------

void ac8(Check& c) {
  std::mt19937_64 rng(8008);
  for (int trial = 0; trial < 100; ++trial) {
    Marketplace m;
    const std::vector<std::string> parties{"p0", "p1", "p2", "p3"};
    for (const auto& p : parties) m.register_cert(p, oracle::fingerprint(rng));
    std::set<std::pair<std::string, std::string>> confirmed;
    for (int step = 0; step < 20; ++step) {
      const auto a = parties[std::uniform_int_distribution<std::size_t>(0, 3)(rng)];
      const auto b = parties[std::uniform_int_distribution<std::size_t>(0, 3)(rng)];
      if (a == b) continue;
      const auto first = m.confirm_trust(a, b);
      const auto again = m.confirm_trust(a, b);
      c.expect(first == again, "confirm_trust not idempotent");
      confirmed.insert({a, b});
    }
    for (const auto& a : parties) {
      for (const auto& b : parties) {
        if (a == b) continue;
        const bool expect = confirmed.count({a, b}) && confirmed.count({b, a});
        c.expect(m.trusted(a, b) == expect, "trust " + a + "/" + b + " disagrees with confirmations");
        c.expect(m.trusted(a, b) == m.trusted(b, a), "trust not symmetric");
        c.expect(m.trust_status(a, b) == m.trust_status(b, a), "status not symmetric");
      }
    }
  }

  FabricTopology t = oracle::t3();
  Marketplace market(0.1);
  market.load_seed(oracle::fixture_json("catalogue.json"));
  Provisioner prov(t, market);
  prov.register_blueprint(parse_blueprint(oracle::read_fixture("video.json")));
  c.expect(prov.plan_deployment("video").state == DeploymentState::PLANNED, "baseline plan");
  market.register_cert("csp-a", std::string(64, 'e'));
  auto blocked = [&](const std::string& stage) {
    try {
      prov.plan_deployment("video");
      c.expect(false, stage + ": planning not blocked");
    } catch (const Error& e) {
      c.expect(e.code() == Errc::no_offer, stage + ": wrong error " + e.what());
    }
  };
  blocked("after re-registration");
  market.confirm_trust("ztpom", "csp-a");
  blocked("after one-sided confirmation");
  market.confirm_trust("csp-a", "ztpom");
  c.expect(prov.plan_deployment("video").placements.at("capture") == "csp-a", "re-confirmed plan");
  c.note("100 random trust graphs plus end-to-end planning");
}

// --- AC9 --------------------------------------------------------------------

json deployment_view(Service& svc) {
  json out = json::object();
  for (const auto& id : svc.provisioner().deployment_ids()) out[id] = to_json(svc.provisioner().deployment(id));
  return json{{"deployments", out}, {"fabric", svc.fabric().state_json()}, {"market", svc.marketplace().state_json()}};
}

void ac9(Check& c) {
  json script = oracle::fixture_json("sc15.json");
  script["actions"][2]["jitter"] = 4;
  for (std::uint64_t seed : {1u, 15u, 77u}) {
    const auto a = run_scenario(script, oracle::t3(), 0, seed);
    const auto b = run_scenario(script, oracle::t3(), 0, seed);
    c.expect(results_json(a.final_results).dump() == results_json(b.final_results).dump(),
             "seed " + std::to_string(seed) + ": results differ");
    c.expect(a.snapshots.dump() == b.snapshots.dump(), "seed " + std::to_string(seed) + ": snapshots differ");
  }

  const fs::path dir = fs::temp_directory_path() / ("ztpom-acceptance-" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  GatewayConfig cfg = service_config();
  cfg.persistence_dir = dir.string();
  auto make = [&] {
    Marketplace m(0.1);
    m.load_seed(oracle::fixture_json("catalogue.json"));
    return std::make_unique<Service>(cfg, oracle::t3(), m);
  };
  auto send = [](Service& s, const std::string& method, const std::string& target, const json& body) {
    return s.handle(make_request(method, target, body.is_null() ? "" : body.dump()));
  };
  auto rest = [&](Service& s) {
    s.advance(4);
    send(s, "POST", "/deployments/dep-1/rechain", {{"order", {"transform", "capture", "view"}}});
    s.advance(3);
    send(s, "POST", "/deployments", {{"blueprint_id", "video"}});
    s.advance(6);
  };

  auto straight = make();
  send(*straight, "POST", "/deployments", {{"blueprint", oracle::fixture_json("video.json")}});
  straight->advance(2);
  straight->snapshot();
  rest(*straight);
  const json expect = deployment_view(*straight);

  auto resumed = make();
  resumed->restore(straight->snapshot_path());
  fs::remove_all(dir);
  rest(*resumed);
  const json got = deployment_view(*resumed);
  c.expect(got == expect, "restored run diverges: " + json::diff(expect, got).dump().substr(0, 300));
  c.expect(got.at("deployments").at("dep-1").at("state") == "ACTIVE", "dep-1 not ACTIVE");
  c.expect(got.at("deployments").at("dep-2").at("state") == "ACTIVE", "dep-2 not ACTIVE");
  c.note("3 seeds replayed, snapshot at round 2 resumed");
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<void(Check&)>>> criteria{
      {"AC1 path computation matches enumeration", ac1},
      {"AC2 chains deliver in order", ac2},
      {"AC3 tag separation under random ops", ac3},
      {"AC4 make-before-break cutover", ac4},
      {"AC5 provisioning liveness", ac5},
      {"AC6 failure reconfiguration", ac6},
      {"AC7 broker soundness", ac7},
      {"AC8 trust protocol", ac8},
      {"AC9 determinism and persistence", ac9},
  };
  int failed = 0;
  for (const auto& [name, run] : criteria) {
    Check c;
    try {
      run(c);
    } catch (const std::exception& e) {
      c.expect(false, std::string("exception: ") + e.what());
    }
    std::cout << (c.ok() ? "PASS " : "FAIL ") << name << " (" << c.summary() << ")" << std::endl;
    if (!c.ok()) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
