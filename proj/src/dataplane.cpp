#include "ztpom/dataplane.hpp"

#include <algorithm>
#include <array>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;

namespace {

constexpr int kMaxHops = 1024;

}  // namespace

bool Simulator::Event::after(const Event& o) const {
  if (time != o.time) return time > o.time;
  if (domain != o.domain) return domain > o.domain;
  if (flow != o.flow) return flow > o.flow;
  if (seq != o.seq) return seq > o.seq;
  return order > o.order;
}

Simulator::Simulator(FabricTopology& fabric, std::uint64_t seed)
    : fabric_(fabric), rng_(seed), release_([this](const ChainPlan& plan) { release_chain(plan, fabric_); }) {}

std::optional<std::int64_t> Simulator::active_epoch(const std::string& chain_id) const {
  auto it = active_.find(chain_id);
  if (it == active_.end()) return std::nullopt;
  return plans_.at(it->second).epoch;
}

std::vector<ChainPlan> Simulator::installed_plans() const {
  std::vector<ChainPlan> out;
  for (const auto& [key, plan] : plans_) out.push_back(plan);
  return out;
}

std::vector<FlowRule> Simulator::rules_at(const std::string& domain) const {
  std::vector<FlowRule> out;
  auto it = tables_.find(domain);
  if (it == tables_.end()) return out;
  for (const auto& [match, installed] : it->second) out.push_back(installed.rule);
  return out;
}

std::size_t Simulator::in_flight() const { return packets_.size(); }

void Simulator::install(const ChainPlan& plan) {
  const std::string key = plan.key();
  if (plans_.count(key) != 0) return;

  for (const auto& rule : plan.rules) {
    if (fabric_.find_domain(rule.at_domain) == nullptr) {
      throw Error(Errc::not_found, "plan '" + key + "' has rules for unknown domain '" + rule.at_domain + "'");
    }
  }

  std::vector<ChainPlan> candidate = installed_plans();
  candidate.push_back(plan);
  for (const auto& v : audit_separation(candidate)) {
    if (v.plan_a == key || v.plan_b == key) throw Error(Errc::separation_violation, v.message);
  }

  auto active = active_.find(plan.chain_id);
  const std::string* active_key = active == active_.end() ? nullptr : &active->second;

  for (const auto& rule : plan.rules) {
    const auto& table = tables_[rule.at_domain];
    auto hit = table.find(rule.match);
    if (hit == table.end()) continue;
    const bool same_chain_entry =
        rule.classifier && hit->second.rule.classifier && plans_.at(hit->second.plan).chain_id == plan.chain_id;
    if (!same_chain_entry) {
      throw Error(Errc::separation_violation, "rule '" + rule.render() + "' of '" + key +
                                                  "' collides with plan '" + hit->second.plan + "'");
    }
  }

  for (const auto& rule : plan.rules) {
    if (rule.classifier) {
      classifiers_[key].push_back({rule, key});
    } else {
      tables_[rule.at_domain][rule.match] = {rule, key};
    }
  }

  auto add_host = [&](const std::string& domain, MacAddress mac, Host::Kind kind, std::string node, double delay) {
    Host& h = hosts_[{domain, mac}];
    if (h.refs == 0) {
      h.kind = kind;
      h.node_id = std::move(node);
      h.fn_delay_ms = delay;
    }
    ++h.refs;
  };
  for (const auto& hop : plan.hops) add_host(hop.domain, hop.mac, Host::Kind::function, hop.node_id, hop.fn_delay_ms);
  add_host(plan.sink.domain, plan.sink.mac, Host::Kind::sink, "", 0);
  add_host(plan.source.domain, plan.source.mac, Host::Kind::source, "", 0);

  plans_.emplace(key, plan);
  if (active_key == nullptr) {
    active_[plan.chain_id] = key;
    for (const auto& entry : classifiers_[key]) tables_[entry.rule.at_domain][entry.rule.match] = entry;
  }
}

void Simulator::uninstall(const std::string& plan_key) {
  auto it = plans_.find(plan_key);
  if (it == plans_.end()) throw Error(Errc::not_found, "plan '" + plan_key + "' is not installed");
  const ChainPlan plan = it->second;

  for (auto& [domain, table] : tables_) {
    for (auto rule = table.begin(); rule != table.end();) {
      rule = rule->second.plan == plan_key ? table.erase(rule) : std::next(rule);
    }
  }
  classifiers_.erase(plan_key);

  auto drop_host = [&](const std::string& domain, MacAddress mac) {
    auto h = hosts_.find({domain, mac});
    if (h != hosts_.end() && --h->second.refs <= 0) hosts_.erase(h);
  };
  for (const auto& hop : plan.hops) drop_host(hop.domain, hop.mac);
  drop_host(plan.sink.domain, plan.sink.mac);
  drop_host(plan.source.domain, plan.source.mac);

  auto active = active_.find(plan.chain_id);
  if (active != active_.end() && active->second == plan_key) active_.erase(active);
  retiring_.erase(plan_key);
  plans_.erase(it);
}

std::uint64_t Simulator::inject(const FlowSpec& spec) {
  if (active_.count(spec.chain_id) == 0) {
    throw Error(Errc::not_found, "chain '" + spec.chain_id + "' is not installed");
  }
  if (spec.count < 1) throw Error(Errc::invalid, "flow packet count must be >= 1");
  if (spec.gap_ticks < 0 || spec.jitter_ticks < 0) throw Error(Errc::invalid, "flow gap and jitter must be >= 0");
  if (spec.start_tick < now_) {
    throw Error(Errc::precondition, "flow start tick " + std::to_string(spec.start_tick) + " is in the past");
  }
  const std::uint64_t id = next_flow_++;
  Flow& flow = flows_[id];
  flow.spec = spec;
  flow.result.flow_id = id;
  flow.result.chain_id = spec.chain_id;
  flow.result.requested = spec.count;

  const ChainPlan& plan = plans_.at(active_.at(spec.chain_id));
  for (int seq = 0; seq < spec.count; ++seq) {
    std::int64_t tick = spec.start_tick + seq * spec.gap_ticks;
    if (spec.jitter_ticks > 0) {
      tick += std::uniform_int_distribution<std::int64_t>(0, spec.jitter_ticks)(rng_);
    }
    Event e;
    e.time = static_cast<double>(tick);
    e.domain = plan.source.domain;
    e.flow = id;
    e.seq = seq;
    e.kind = EventKind::inject;
    e.ingress = Ingress::from_host(plan.source.mac);
    schedule(std::move(e));
  }
  return id;
}

void Simulator::cutover(const ChainUpdate& update, std::int64_t at) {
  const std::string old_key = update.old_plan.key();
  const std::string new_key = update.new_plan.key();
  if (!installed(old_key) || !installed(new_key)) {
    throw Error(Errc::not_found, "unknown update for chain '" + update.chain_id + "' (epochs " +
                                     std::to_string(update.old_epoch) + "->" + std::to_string(update.new_epoch) +
                                     " not both installed)");
  }
  if (at < now_) {
    throw Error(Errc::precondition, "cutover tick " + std::to_string(at) + " is in the past (now " +
                                        std::to_string(now_) + ")");
  }
  Event e;
  e.time = static_cast<double>(at);
  e.kind = EventKind::cutover;
  e.old_plan = old_key;
  e.new_plan = new_key;
  schedule(std::move(e));
}

void Simulator::schedule(Event e) {
  e.order = next_order_++;
  queue_.push(std::move(e));
}

std::vector<FlowResult> Simulator::run_until(std::int64_t tick) {
  if (tick < now_) {
    throw Error(Errc::precondition, "run_until tick " + std::to_string(tick) + " precedes now " + std::to_string(now_));
  }
  while (!queue_.empty() && queue_.top().time <= static_cast<double>(tick)) {
    const Event e = queue_.top();
    queue_.pop();
    process(e);
  }
  now_ = tick;
  return results();
}

void Simulator::process(const Event& e) {
  switch (e.kind) {
    case EventKind::cutover: process_cutover(e); break;
    case EventKind::inject: {
      Packet p;
      p.flow = e.flow;
      p.seq = e.seq;
      p.inject_tick = static_cast<std::int64_t>(e.time);
      auto plan = active_.find(flows_.at(e.flow).spec.chain_id);
      if (plan != active_.end()) {
        p.dst = plans_.at(plan->second).original_dst_mac;
      } else {
        p.dst = {};
      }
      const std::uint64_t id = next_packet_++;
      packets_.emplace(id, std::move(p));
      ++flows_.at(e.flow).result.injected;
      Event arrive = e;
      arrive.kind = EventKind::arrive;
      arrive.packet = id;
      process_arrival(arrive);
      break;
    }
    case EventKind::arrive: process_arrival(e); break;
  }
}

void Simulator::process_arrival(const Event& e) {
  Packet& p = packets_.at(e.packet);
  if (!e.link.empty()) link_leave(e.link, p.flow);
  if (++p.hops > kMaxHops) {
    finish(e.packet, PacketLoss{p.seq, "ttl", e.domain});
    return;
  }
  auto table = tables_.find(e.domain);
  const Match key{e.ingress, p.vlan, p.dst};
  if (table == tables_.end() || table->second.find(key) == table->second.end()) {
    finish(e.packet, PacketLoss{p.seq, "no-rule", e.domain});
    return;
  }
  const InstalledRule& rule = table->second.at(key);
  if (p.plan.empty()) {
    p.plan = rule.plan;
    ++plan_in_flight_[p.plan];
  }
  for (const auto& action : rule.rule.actions) {
    switch (action.kind) {
      case Action::Kind::set_vlan: p.vlan = action.vlan; break;
      case Action::Kind::set_dst_mac: p.dst = action.mac; break;
      case Action::Kind::output: {
        if (action.out_link) {
          const LinkSpec& link = fabric_.link(*action.out_link);
          p.latency += link.latency_ms;
          p.links.push_back(link.id);
          flows_.at(p.flow).links_used.insert(link.id);
          link_enter(link.id, p.flow);
          Event next;
          next.time = e.time + link.latency_ms;
          next.domain = link.other(e.domain);
          next.flow = p.flow;
          next.seq = p.seq;
          next.kind = EventKind::arrive;
          next.packet = e.packet;
          next.ingress = Ingress::from_link(link.id);
          next.link = link.id;
          schedule(std::move(next));
          return;
        }
        auto host = hosts_.find({e.domain, p.dst});
        if (host == hosts_.end() || host->second.kind == Host::Kind::source) {
          finish(e.packet, PacketLoss{p.seq, "no-host", e.domain});
          return;
        }
        if (host->second.kind == Host::Kind::sink) {
          finish(e.packet, std::nullopt);
          return;
        }
        p.trace.push_back(host->second.node_id);
        p.latency += host->second.fn_delay_ms;
        Event next;
        next.time = e.time + host->second.fn_delay_ms;
        next.domain = e.domain;
        next.flow = p.flow;
        next.seq = p.seq;
        next.kind = EventKind::arrive;
        next.packet = e.packet;
        next.ingress = Ingress::from_host(p.dst);
        schedule(std::move(next));
        return;
      }
    }
  }
  finish(e.packet, PacketLoss{p.seq, "no-output", e.domain});
}

void Simulator::finish(std::uint64_t packet_id, const std::optional<PacketLoss>& loss) {
  auto it = packets_.find(packet_id);
  Packet p = std::move(it->second);
  packets_.erase(it);
  FlowResult& r = flows_.at(p.flow).result;
  if (loss) {
    r.lost.push_back(*loss);
  } else {
    PacketRecord rec;
    rec.seq = p.seq;
    rec.epoch = plans_.count(p.plan) ? plans_.at(p.plan).epoch : 0;
    rec.inject_tick = p.inject_tick;
    rec.delivered_at = static_cast<double>(p.inject_tick) + p.latency;
    rec.trace = std::move(p.trace);
    rec.links = std::move(p.links);
    rec.latency_ms = p.latency;
    rec.final_dst = p.dst;
    r.packets.push_back(std::move(rec));
    ++r.delivered;
  }
  if (!p.plan.empty()) {
    auto& count = plan_in_flight_[p.plan];
    if (count > 0) --count;
    if (count == 0) {
      plan_in_flight_.erase(p.plan);
      if (retiring_.count(p.plan) != 0) retire(p.plan);
    }
  }
}

void Simulator::process_cutover(const Event& e) {
  if (!installed(e.new_plan)) return;
  const std::string chain = plans_.at(e.new_plan).chain_id;
  auto active = active_.find(chain);
  if (active != active_.end() && active->second == e.new_plan) return;
  if (active != active_.end()) {
    for (const auto& entry : classifiers_[active->second]) {
      auto& table = tables_[entry.rule.at_domain];
      auto hit = table.find(entry.rule.match);
      if (hit != table.end() && hit->second.plan == active->second) table.erase(hit);
    }
  }
  active_[chain] = e.new_plan;
  for (const auto& entry : classifiers_[e.new_plan]) tables_[entry.rule.at_domain][entry.rule.match] = entry;
  if (installed(e.old_plan) && e.old_plan != e.new_plan) {
    retiring_.insert(e.old_plan);
    if (plan_in_flight_.count(e.old_plan) == 0) retire(e.old_plan);
  }
}

void Simulator::retire(const std::string& plan_key) {
  if (!installed(plan_key)) return;
  const ChainPlan plan = plans_.at(plan_key);
  uninstall(plan_key);
  if (release_) release_(plan);
}

void Simulator::link_enter(const std::string& link, std::uint64_t flow) {
  auto& load = link_load_[link];
  ++load[flow];
  int& peak = link_peak_[link];
  peak = std::max(peak, static_cast<int>(load.size()));
}

void Simulator::link_leave(const std::string& link, std::uint64_t flow) {
  auto& load = link_load_[link];
  auto it = load.find(flow);
  if (it != load.end() && --it->second <= 0) load.erase(it);
}

std::vector<FlowResult> Simulator::results() const {
  std::vector<FlowResult> out;
  for (const auto& [id, flow] : flows_) {
    FlowResult r = flow.result;
    std::sort(r.packets.begin(), r.packets.end(),
              [](const PacketRecord& a, const PacketRecord& b) { return a.seq < b.seq; });
    std::sort(r.lost.begin(), r.lost.end(), [](const PacketLoss& a, const PacketLoss& b) { return a.seq < b.seq; });
    for (const auto& link : flow.links_used) {
      auto peak = link_peak_.find(link);
      r.link_peak_flows[link] = peak == link_peak_.end() ? 0 : peak->second;
    }
    out.push_back(std::move(r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON + scenarios

json to_json(const FlowResult& r) {
  json packets = json::array();
  for (const auto& p : r.packets) {
    packets.push_back({{"seq", p.seq},
                       {"epoch", p.epoch},
                       {"inject_tick", p.inject_tick},
                       {"delivered_at", p.delivered_at},
                       {"trace", p.trace},
                       {"links", p.links},
                       {"latency_ms", p.latency_ms},
                       {"final_dst", p.final_dst.str()}});
  }
  json lost = json::array();
  for (const auto& l : r.lost) lost.push_back({{"seq", l.seq}, {"reason", l.reason}, {"domain", l.domain}});
  return json{{"flow_id", r.flow_id},     {"chain_id", r.chain_id}, {"requested", r.requested},
              {"injected", r.injected},   {"delivered", r.delivered}, {"packets", packets},
              {"lost", lost},             {"link_peak_flows", r.link_peak_flows}};
}

json results_json(const std::vector<FlowResult>& results) {
  json out = json::array();
  for (const auto& r : results) out.push_back(to_json(r));
  return out;
}

namespace {

Placements placements_from(const json& obj, const std::string& path) {
  Placements out;
  jsonio::expect_object(obj, path);
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string here = jsonio::child(path, it.key());
    HostPlacement hp;
    hp.domain = jsonio::get_string(*it, "domain", here);
    hp.mac = MacAddress::parse(jsonio::get_string(*it, "mac", here));
    hp.fn_delay_ms = jsonio::opt_number(*it, "fn_delay_ms", here).value_or(0.0);
    out[it.key()] = hp;
  }
  return out;
}

}  // namespace

ScenarioOutcome run_scenario(const json& script, FabricTopology fabric, std::uint64_t default_seed,
                             std::optional<std::uint64_t> seed_override) {
  const json* actions = &script;
  ScenarioOutcome outcome;
  outcome.seed = default_seed;
  if (script.is_object()) {
    if (auto seed = jsonio::opt_int(script, "seed", "")) outcome.seed = static_cast<std::uint64_t>(*seed);
    actions = &jsonio::require(script, "actions", "");
  }
  if (seed_override) outcome.seed = *seed_override;
  jsonio::expect_array(*actions, "actions");

  Simulator sim(fabric, outcome.seed);
  std::map<std::string, ChainSpec> specs;
  std::map<std::string, Placements> placements;
  std::map<std::string, ChainPlan> current;
  std::map<std::string, ChainUpdate> updates;
  outcome.snapshots = json::array();

  auto chain_of = [&](const json& a, const std::string& path) {
    std::string id = jsonio::get_string(a, "chain", path);
    if (current.count(id) == 0) jsonio::fail(jsonio::child(path, "chain"), "unknown chain '" + id + "'");
    return id;
  };

  for (std::size_t i = 0; i < actions->size(); ++i) {
    const json& a = (*actions)[i];
    const std::string path = jsonio::child("actions", i);
    const std::string op = jsonio::get_string(a, "op", path);
    if (op == "compile") {
      ChainSpec spec = chain_from_json(jsonio::require(a, "chain", path), jsonio::child(path, "chain"));
      Placements pl = placements_from(jsonio::require(a, "placements", path), jsonio::child(path, "placements"));
      current[spec.id] = compile_chain(spec, pl, fabric);
      specs[spec.id] = spec;
      placements[spec.id] = pl;
    } else if (op == "rechain") {
      const std::string id = chain_of(a, path);
      ChainSpec spec = specs.at(id);
      if (const json* s = jsonio::find(a, "spec")) spec = chain_from_json(*s, jsonio::child(path, "spec"));
      if (jsonio::find(a, "order")) spec.functions = jsonio::get_string_list(a, "order", path);
      if (const json* p = jsonio::find(a, "placements")) {
        placements[id] = placements_from(*p, jsonio::child(path, "placements"));
      }
      ChainUpdate update = rechain(current.at(id), spec, placements.at(id), fabric);
      current[id] = update.new_plan;
      specs[id] = spec;
      updates[id] = std::move(update);
    } else if (op == "install") {
      sim.install(current.at(chain_of(a, path)));
    } else if (op == "inject") {
      FlowSpec flow;
      flow.chain_id = chain_of(a, path);
      flow.count = static_cast<int>(jsonio::opt_int(a, "count", path).value_or(1));
      flow.start_tick = jsonio::opt_int(a, "start", path).value_or(sim.now());
      flow.gap_ticks = jsonio::opt_int(a, "gap", path).value_or(1);
      flow.jitter_ticks = jsonio::opt_int(a, "jitter", path).value_or(0);
      sim.inject(flow);
    } else if (op == "cutover") {
      const std::string id = chain_of(a, path);
      if (updates.count(id) == 0) jsonio::fail(path, "no pending rechain for chain '" + id + "'");
      sim.cutover(updates.at(id), jsonio::get_int(a, "at", path));
    } else if (op == "run_until") {
      const std::int64_t tick = jsonio::get_int(a, "tick", path);
      outcome.final_results = sim.run_until(tick);
      outcome.snapshots.push_back({{"tick", tick}, {"flows", results_json(outcome.final_results)}});
    } else {
      jsonio::fail(jsonio::child(path, "op"), "unknown op '" + op + "'");
    }
  }
  return outcome;
}

}  // namespace ztpom
