#pragma once

// Service-function chain compiler. A chain is stitched together from one
// fabric path per segment (source -> f1 -> ... -> fk -> sink); every link on
// a segment carries its own VLAN tag, and every function hop gets a
// host-facing access tag in its domain. Flow rules rewrite the VLAN at each
// boundary and the destination MAC at the start of each segment; the sink's
// domain restores the original destination MAC.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ztpom/blueprint.hpp"
#include "ztpom/fabric.hpp"
#include "ztpom/mac.hpp"

namespace ztpom {

// Where a chain function runs.
struct HostPlacement {
  std::string domain;
  MacAddress mac;
  double fn_delay_ms = 0;

  bool operator==(const HostPlacement&) const = default;
};

using Placements = std::map<std::string, HostPlacement>;

struct Hop {
  std::string node_id;
  std::string domain;
  MacAddress mac;
  int access_vlan = 0;
  double fn_delay_ms = 0;

  bool operator==(const Hop&) const = default;
};

struct SegmentLink {
  std::string link_id;
  std::string from;
  std::string to;
  int vlan = 0;
  VlanRange pool;

  bool operator==(const SegmentLink&) const = default;
};

struct Segment {
  std::string from_domain;
  std::string to_domain;
  std::vector<SegmentLink> links;  // empty when both ends share a domain
  double latency_ms = 0;
  double jitter_ms = 0;
  std::optional<std::uint64_t> reservation;

  bool operator==(const Segment&) const = default;
};

// A packet enters a domain switch either from a link or from a local host
// port (identified by the host's MAC).
struct Ingress {
  enum class Kind { link, host };
  Kind kind = Kind::link;
  std::string link;
  MacAddress host;

  static Ingress from_link(std::string link_id) { return {Kind::link, std::move(link_id), {}}; }
  static Ingress from_host(MacAddress mac) { return {Kind::host, {}, mac}; }
  std::string str() const;

  auto operator<=>(const Ingress&) const = default;
};

struct Match {
  Ingress ingress;
  int vlan = 0;  // 0 = untagged
  MacAddress dst;

  auto operator<=>(const Match&) const = default;
};

struct Action {
  enum class Kind { set_vlan, set_dst_mac, output };
  Kind kind = Kind::output;
  int vlan = 0;
  MacAddress mac;
  std::optional<std::string> out_link;  // nullopt = local delivery

  static Action set_vlan(int v) { return {Kind::set_vlan, v, {}, std::nullopt}; }
  static Action set_dst(MacAddress m) { return {Kind::set_dst_mac, 0, m, std::nullopt}; }
  static Action output(std::optional<std::string> link) { return {Kind::output, 0, {}, std::move(link)}; }

  bool operator==(const Action&) const = default;
};

struct FlowRule {
  std::string at_domain;
  Match match;
  std::vector<Action> actions;
  bool classifier = false;  // source-side entry rule; swapped at cutover

  // "@<domain> match(in=<port>,vlan=<v>,dst=<mac>) -> set_vlan(<v>),set_dst(<mac>),out(<link>)"
  std::string render() const;

  bool operator==(const FlowRule&) const = default;
};

struct ChainPlan {
  std::string chain_id;
  std::int64_t epoch = 1;
  Endpoint source;
  Endpoint sink;
  std::vector<Hop> hops;
  std::vector<Segment> segments;  // hops.size() + 1
  std::vector<FlowRule> rules;
  MacAddress original_dst_mac;
  double bandwidth_mbps = 0;

  // Unique handle of this plan on the fabric: "<chain>#<epoch>".
  std::string key() const { return chain_id + "#" + std::to_string(epoch); }
  std::vector<std::string> function_order() const;

  bool operator==(const ChainPlan&) const = default;
};

// Make-before-break re-chaining: new_plan is compiled and holds its own
// resources while old_plan stays installed until the data plane confirms
// cutover.
struct ChainUpdate {
  std::string chain_id;
  std::int64_t old_epoch = 0;
  std::int64_t new_epoch = 0;
  ChainPlan old_plan;
  ChainPlan new_plan;
  bool make_before_break = true;
};

struct Violation {
  enum class Kind { shared_vlan, pool };
  Kind kind = Kind::shared_vlan;
  std::string port;  // "link:<id>" or "access:<domain>"
  int vlan = 0;
  std::string plan_a;
  std::string plan_b;
  std::string message;
};

// Allocates resources on `fabric` under lease plan.key(); all-or-nothing.
ChainPlan compile_chain(const ChainSpec& spec, const Placements& placements, FabricTopology& fabric,
                        std::int64_t epoch = 1);

void release_chain(const ChainPlan& plan, FabricTopology& fabric);

ChainUpdate rechain(const ChainPlan& active, const ChainSpec& new_spec, const Placements& placements,
                    FabricTopology& fabric);

std::vector<Violation> audit_separation(std::span<const ChainPlan> plans);

std::string render_rules(const ChainPlan& plan);

nlohmann::json to_json(const ChainPlan& plan);
ChainPlan plan_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const FlowRule& rule);
nlohmann::json to_json(const Violation& violation);

}  // namespace ztpom
