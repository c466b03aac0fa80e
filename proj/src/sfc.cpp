#include "ztpom/sfc.hpp"

#include <set>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;

std::string Ingress::str() const { return kind == Kind::link ? link : "host:" + host.str(); }

std::string FlowRule::render() const {
  std::string out = "@" + at_domain + " match(in=" + match.ingress.str() + ",vlan=" +
                    std::to_string(match.vlan) + ",dst=" + match.dst.str() + ") -> ";
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (i != 0) out += ',';
    const Action& a = actions[i];
    switch (a.kind) {
      case Action::Kind::set_vlan: out += "set_vlan(" + std::to_string(a.vlan) + ")"; break;
      case Action::Kind::set_dst_mac: out += "set_dst(" + a.mac.str() + ")"; break;
      case Action::Kind::output: out += "out(" + a.out_link.value_or("local") + ")"; break;
    }
  }
  return out;
}

std::vector<std::string> ChainPlan::function_order() const {
  std::vector<std::string> out;
  for (const auto& h : hops) out.push_back(h.node_id);
  return out;
}

std::string render_rules(const ChainPlan& plan) {
  std::string out;
  for (const auto& r : plan.rules) out += r.render() + "\n";
  return out;
}

namespace {

struct Handoff {
  Ingress ingress;
  int vlan = 0;
  MacAddress dst;
};

void emit_segment_rules(ChainPlan& plan, std::size_t s) {
  const std::size_t k = plan.hops.size();
  const bool last = s == k;
  const Segment& seg = plan.segments[s];

  Handoff prev;
  if (s == 0) {
    prev = {Ingress::from_host(plan.source.mac), 0, plan.original_dst_mac};
  } else {
    const Hop& h = plan.hops[s - 1];
    prev = {Ingress::from_host(h.mac), h.access_vlan, h.mac};
  }
  const MacAddress seg_dst = last ? prev.dst : plan.hops[s].mac;

  std::vector<Action> arrival;
  if (last) {
    arrival = {Action::set_vlan(0), Action::set_dst(plan.original_dst_mac), Action::output(std::nullopt)};
  } else {
    arrival = {Action::set_vlan(plan.hops[s].access_vlan), Action::output(std::nullopt)};
  }

  FlowRule first;
  first.at_domain = seg.from_domain;
  first.match = {prev.ingress, prev.vlan, prev.dst};
  first.classifier = s == 0;

  if (seg.links.empty()) {
    if (last) {
      first.actions = arrival;
    } else {
      first.actions = {Action::set_vlan(plan.hops[s].access_vlan), Action::set_dst(seg_dst),
                       Action::output(std::nullopt)};
    }
    plan.rules.push_back(std::move(first));
    return;
  }

  first.actions.push_back(Action::set_vlan(seg.links.front().vlan));
  if (seg_dst != prev.dst) first.actions.push_back(Action::set_dst(seg_dst));
  first.actions.push_back(Action::output(seg.links.front().link_id));
  plan.rules.push_back(std::move(first));

  for (std::size_t j = 0; j < seg.links.size(); ++j) {
    const SegmentLink& in = seg.links[j];
    FlowRule r;
    r.at_domain = in.to;
    r.match = {Ingress::from_link(in.link_id), in.vlan, seg_dst};
    if (j + 1 < seg.links.size()) {
      const SegmentLink& out = seg.links[j + 1];
      r.actions = {Action::set_vlan(out.vlan), Action::output(out.link_id)};
    } else {
      r.actions = arrival;
    }
    plan.rules.push_back(std::move(r));
  }
}

std::string stop_name(const ChainPlan& plan, std::size_t index) {
  if (index == 0) return "source";
  if (index == plan.hops.size() + 1) return "sink";
  return plan.hops[index - 1].node_id;
}

}  // namespace

ChainPlan compile_chain(const ChainSpec& spec, const Placements& placements, FabricTopology& fabric,
                        std::int64_t epoch) {
  if (spec.functions.empty()) throw Error(Errc::precondition, "chain '" + spec.id + "' has no functions");
  if (fabric.find_domain(spec.source.domain) == nullptr) {
    throw Error(Errc::not_found, "chain '" + spec.id + "': unknown source domain '" + spec.source.domain + "'");
  }
  if (fabric.find_domain(spec.sink.domain) == nullptr) {
    throw Error(Errc::not_found, "chain '" + spec.id + "': unknown sink domain '" + spec.sink.domain + "'");
  }

  ChainPlan plan;
  plan.chain_id = spec.id;
  plan.epoch = epoch;
  plan.source = spec.source;
  plan.sink = spec.sink;
  plan.original_dst_mac = spec.sink.mac;
  plan.bandwidth_mbps = spec.qos.min_bandwidth_mbps;

  std::set<std::string> seen;
  for (const auto& f : spec.functions) {
    if (!seen.insert(f).second) throw Error(Errc::precondition, "chain '" + spec.id + "' repeats '" + f + "'");
    auto it = placements.find(f);
    if (it == placements.end()) {
      throw Error(Errc::precondition, "chain '" + spec.id + "': function '" + f + "' is not placed");
    }
    if (fabric.find_domain(it->second.domain) == nullptr) {
      throw Error(Errc::not_found, "function '" + f + "' placed in unknown domain '" + it->second.domain + "'");
    }
    plan.hops.push_back({f, it->second.domain, it->second.mac, 0, it->second.fn_delay_ms});
  }
  if (fabric.has_lease(plan.key())) throw Error(Errc::conflict, "plan '" + plan.key() + "' is already active");

  std::vector<std::string> stops{spec.source.domain};
  for (const auto& h : plan.hops) stops.push_back(h.domain);
  stops.push_back(spec.sink.domain);

  Lease lease{plan.key(), {}, {}, {}};
  try {
    for (std::size_t s = 0; s + 1 < stops.size(); ++s) {
      Segment seg;
      seg.from_domain = stops[s];
      seg.to_domain = stops[s + 1];
      if (seg.from_domain != seg.to_domain) {
        const std::string label = "segment " + std::to_string(s) + " (" + stop_name(plan, s) + "->" +
                                  stop_name(plan, s + 1) + ")";
        Path path;
        try {
          path = fabric.compute_path(seg.from_domain, seg.to_domain, spec.qos);
        } catch (const NoPathError& e) {
          throw NoPathError(e.binding(), "chain '" + spec.id + "' " + label + ": " + e.what());
        }
        const Reservation r = fabric.commit_path(path, spec.qos.min_bandwidth_mbps);
        lease.reservations.push_back(r.id);
        seg.reservation = r.id;
        seg.latency_ms = path.total_latency_ms;
        seg.jitter_ms = path.total_jitter_ms;
        for (std::size_t i = 0; i < path.links.size(); ++i) {
          const int vlan = fabric.allocate_vlan(path.links[i]);
          lease.link_vlans.emplace_back(path.links[i], vlan);
          seg.links.push_back({path.links[i], path.domains[i], path.domains[i + 1], vlan,
                               fabric.link(path.links[i]).vlan_pool});
        }
      }
      plan.segments.push_back(std::move(seg));
    }
    for (auto& h : plan.hops) {
      h.access_vlan = fabric.allocate_access_vlan(h.domain);
      lease.access_vlans.emplace_back(h.domain, h.access_vlan);
    }
    for (std::size_t s = 0; s < plan.segments.size(); ++s) emit_segment_rules(plan, s);
    fabric.adopt_lease(lease);
  } catch (...) {
    fabric.unwind(lease);
    throw;
  }
  return plan;
}

void release_chain(const ChainPlan& plan, FabricTopology& fabric) { fabric.release_lease(plan.key()); }

ChainUpdate rechain(const ChainPlan& active, const ChainSpec& new_spec, const Placements& placements,
                    FabricTopology& fabric) {
  if (new_spec.id != active.chain_id) {
    throw Error(Errc::precondition, "rechain of '" + active.chain_id + "' given spec '" + new_spec.id + "'");
  }
  ChainUpdate update;
  update.chain_id = active.chain_id;
  update.old_epoch = active.epoch;
  update.new_epoch = active.epoch + 1;
  update.old_plan = active;
  update.new_plan = compile_chain(new_spec, placements, fabric, active.epoch + 1);
  return update;
}

std::vector<Violation> audit_separation(std::span<const ChainPlan> plans) {
  std::vector<Violation> out;
  std::map<std::pair<std::string, int>, std::string> claims;

  auto claim = [&](const std::string& port, int vlan, const std::string& owner) {
    auto [it, fresh] = claims.emplace(std::make_pair(port, vlan), owner);
    if (!fresh) {
      out.push_back({Violation::Kind::shared_vlan, port, vlan, it->second, owner,
                     "(" + port + ", vlan " + std::to_string(vlan) + ") claimed by both '" + it->second +
                         "' and '" + owner + "'"});
    }
  };
  auto pool_violation = [&](const std::string& port, int vlan, const std::string& owner, const std::string& why) {
    out.push_back({Violation::Kind::pool, port, vlan, owner, owner,
                   "plan '" + owner + "': vlan " + std::to_string(vlan) + " on " + port + " " + why});
  };

  for (const auto& plan : plans) {
    const std::string owner = plan.key();
    std::map<std::string, VlanRange> pools;
    for (const auto& seg : plan.segments) {
      for (const auto& l : seg.links) {
        pools[l.link_id] = l.pool;
        const std::string port = "link:" + l.link_id;
        if (!l.pool.contains(l.vlan)) pool_violation(port, l.vlan, owner, "is outside the link pool");
        claim(port, l.vlan, owner);
      }
    }
    for (const auto& h : plan.hops) {
      const std::string port = "access:" + h.domain;
      if (!kAccessVlanRange.contains(h.access_vlan)) pool_violation(port, h.access_vlan, owner, "is not a legal tag");
      claim(port, h.access_vlan, owner);
    }
    for (const auto& rule : plan.rules) {
      std::optional<int> vlan;
      for (const auto& a : rule.actions) {
        if (a.kind == Action::Kind::set_vlan) vlan = a.vlan;
        if (a.kind != Action::Kind::output || !vlan) continue;
        if (a.out_link) {
          auto pool = pools.find(*a.out_link);
          const std::string port = "link:" + *a.out_link;
          if (pool == pools.end()) {
            pool_violation(port, *vlan, owner, "targets a link outside the plan");
          } else if (!pool->second.contains(*vlan)) {
            pool_violation(port, *vlan, owner, "is outside the egress pool");
          }
        } else if (*vlan != 0 && !kAccessVlanRange.contains(*vlan)) {
          pool_violation("access:" + rule.at_domain, *vlan, owner, "is not a legal local tag");
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json ingress_json(const Ingress& in) {
  return in.kind == Ingress::Kind::link ? json{{"link", in.link}} : json{{"host", in.host.str()}};
}

Ingress ingress_from(const json& j) {
  if (j.contains("link")) return Ingress::from_link(j.at("link").get<std::string>());
  return Ingress::from_host(MacAddress::parse(j.at("host").get<std::string>()));
}

json action_json(const Action& a) {
  switch (a.kind) {
    case Action::Kind::set_vlan: return {{"set_vlan", a.vlan}};
    case Action::Kind::set_dst_mac: return {{"set_dst", a.mac.str()}};
    case Action::Kind::output: return {{"output", a.out_link ? json(*a.out_link) : json("local")}};
  }
  return {};
}

Action action_from(const json& j) {
  if (j.contains("set_vlan")) return Action::set_vlan(j.at("set_vlan").get<int>());
  if (j.contains("set_dst")) return Action::set_dst(MacAddress::parse(j.at("set_dst").get<std::string>()));
  const std::string out = j.at("output").get<std::string>();
  return Action::output(out == "local" ? std::nullopt : std::optional<std::string>(out));
}

json endpoint_json(const Endpoint& e) { return {{"domain", e.domain}, {"mac", e.mac.str()}}; }
Endpoint endpoint_from(const json& j) {
  return {j.at("domain").get<std::string>(), MacAddress::parse(j.at("mac").get<std::string>())};
}

}  // namespace

json to_json(const FlowRule& r) {
  json actions = json::array();
  for (const auto& a : r.actions) actions.push_back(action_json(a));
  return json{{"at_domain", r.at_domain},
              {"match", {{"ingress", ingress_json(r.match.ingress)}, {"vlan", r.match.vlan}, {"dst", r.match.dst.str()}}},
              {"actions", actions},
              {"classifier", r.classifier},
              {"text", r.render()}};
}

json to_json(const ChainPlan& p) {
  json hops = json::array();
  for (const auto& h : p.hops) {
    hops.push_back({{"node_id", h.node_id},
                    {"domain", h.domain},
                    {"mac", h.mac.str()},
                    {"access_vlan", h.access_vlan},
                    {"fn_delay_ms", h.fn_delay_ms}});
  }
  json segs = json::array();
  for (const auto& s : p.segments) {
    json links = json::array();
    for (const auto& l : s.links) {
      links.push_back({{"link", l.link_id}, {"from", l.from}, {"to", l.to}, {"vlan", l.vlan},
                       {"pool", {l.pool.lo, l.pool.hi}}});
    }
    segs.push_back({{"from", s.from_domain},
                    {"to", s.to_domain},
                    {"links", links},
                    {"latency_ms", s.latency_ms},
                    {"jitter_ms", s.jitter_ms},
                    {"reservation", s.reservation ? json(*s.reservation) : json(nullptr)}});
  }
  json rules = json::array();
  for (const auto& r : p.rules) rules.push_back(to_json(r));
  return json{{"chain_id", p.chain_id},
              {"epoch", p.epoch},
              {"source", endpoint_json(p.source)},
              {"sink", endpoint_json(p.sink)},
              {"hops", hops},
              {"segments", segs},
              {"rules", rules},
              {"original_dst_mac", p.original_dst_mac.str()},
              {"bandwidth_mbps", p.bandwidth_mbps}};
}

ChainPlan plan_from_json(const json& j) {
  try {
    ChainPlan p;
    p.chain_id = j.at("chain_id").get<std::string>();
    p.epoch = j.at("epoch").get<std::int64_t>();
    p.source = endpoint_from(j.at("source"));
    p.sink = endpoint_from(j.at("sink"));
    for (const auto& h : j.at("hops")) {
      p.hops.push_back({h.at("node_id").get<std::string>(), h.at("domain").get<std::string>(),
                        MacAddress::parse(h.at("mac").get<std::string>()), h.at("access_vlan").get<int>(),
                        h.at("fn_delay_ms").get<double>()});
    }
    for (const auto& s : j.at("segments")) {
      Segment seg;
      seg.from_domain = s.at("from").get<std::string>();
      seg.to_domain = s.at("to").get<std::string>();
      seg.latency_ms = s.at("latency_ms").get<double>();
      seg.jitter_ms = s.at("jitter_ms").get<double>();
      if (!s.at("reservation").is_null()) seg.reservation = s.at("reservation").get<std::uint64_t>();
      for (const auto& l : s.at("links")) {
        seg.links.push_back({l.at("link").get<std::string>(), l.at("from").get<std::string>(),
                             l.at("to").get<std::string>(), l.at("vlan").get<int>(),
                             {l.at("pool").at(0).get<int>(), l.at("pool").at(1).get<int>()}});
      }
      p.segments.push_back(std::move(seg));
    }
    for (const auto& r : j.at("rules")) {
      FlowRule rule;
      rule.at_domain = r.at("at_domain").get<std::string>();
      rule.match = {ingress_from(r.at("match").at("ingress")), r.at("match").at("vlan").get<int>(),
                    MacAddress::parse(r.at("match").at("dst").get<std::string>())};
      for (const auto& a : r.at("actions")) rule.actions.push_back(action_from(a));
      rule.classifier = r.value("classifier", false);
      p.rules.push_back(std::move(rule));
    }
    p.original_dst_mac = MacAddress::parse(j.at("original_dst_mac").get<std::string>());
    p.bandwidth_mbps = j.at("bandwidth_mbps").get<double>();
    return p;
  } catch (const json::exception& e) {
    throw Error(Errc::invalid, std::string("malformed chain plan: ") + e.what());
  }
}

json to_json(const Violation& v) {
  return json{{"kind", v.kind == Violation::Kind::shared_vlan ? "shared-vlan" : "pool"},
              {"port", v.port},
              {"vlan", v.vlan},
              {"plan_a", v.plan_a},
              {"plan_b", v.plan_b},
              {"message", v.message}};
}

}  // namespace ztpom
