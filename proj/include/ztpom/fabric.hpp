#pragma once

// Multi-domain exchange fabric: domains joined by links that carry
// latency/jitter/capacity attributes and a per-link VLAN pool. Computes
// QoS-feasible inter-domain paths and tracks bandwidth and VLAN commitments.
//
// Mutations (commit/release/allocate) are not synchronized; the owner
// serializes them. compute_path is const and safe to call concurrently.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ztpom/blueprint.hpp"
#include "ztpom/error.hpp"

namespace ztpom {

enum class DomainKind { csp, nren, campus, ocx };

std::string_view to_string(DomainKind kind) noexcept;
DomainKind domain_kind_from_string(std::string_view text);

struct Domain {
  std::string id;
  DomainKind kind = DomainKind::csp;
  std::vector<std::string> providers;  // attached provider ids

  bool operator==(const Domain&) const = default;
};

struct VlanRange {
  int lo = 2;
  int hi = 4094;

  bool contains(int vlan) const noexcept { return vlan >= lo && vlan <= hi; }
  bool operator==(const VlanRange&) const = default;
};

inline constexpr VlanRange kAccessVlanRange{2, 4094};

struct LinkSpec {
  std::string id;
  std::array<std::string, 2> endpoints;
  double latency_ms = 0;
  double jitter_ms = 0;
  double capacity_mbps = 0;
  VlanRange vlan_pool;

  bool touches(std::string_view domain) const { return endpoints[0] == domain || endpoints[1] == domain; }
  const std::string& other(std::string_view domain) const {
    return endpoints[0] == domain ? endpoints[1] : endpoints[0];
  }

  bool operator==(const LinkSpec&) const = default;
};

// domains.size() == links.size() + 1; domains[i] and domains[i+1] are the
// endpoints of links[i].
struct Path {
  std::vector<std::string> links;
  std::vector<std::string> domains;
  double total_latency_ms = 0;
  double total_jitter_ms = 0;
  double bottleneck_mbps = 0;

  std::size_t hops() const { return links.size(); }
  bool operator==(const Path&) const = default;
};

struct Reservation {
  std::uint64_t id = 0;
  std::vector<std::string> links;
  double bandwidth_mbps = 0;

  bool operator==(const Reservation&) const = default;
};

enum class Binding { unreachable, latency, jitter, bandwidth };
std::string_view to_string(Binding binding) noexcept;

class NoPathError : public Error {
 public:
  NoPathError(Binding binding, const std::string& message)
      : Error(Errc::no_feasible_path, message), binding_(binding) {}
  Binding binding() const noexcept { return binding_; }

 private:
  Binding binding_;
};

// Everything a chain plan holds on the fabric, released as one unit.
struct Lease {
  std::string key;
  std::vector<std::uint64_t> reservations;
  std::vector<std::pair<std::string, int>> link_vlans;    // (link id, vlan)
  std::vector<std::pair<std::string, int>> access_vlans;  // (domain id, vlan)

  bool operator==(const Lease&) const = default;
};

// Comparable view of every commitment on the fabric.
struct AllocationState {
  std::map<std::string, double> committed_mbps;  // links with nonzero commitment
  std::map<std::string, std::set<int>> link_vlans;
  std::map<std::string, std::set<int>> access_vlans;
  std::set<std::string> leases;

  bool operator==(const AllocationState&) const = default;
};

class FabricTopology {
 public:
  FabricTopology() = default;
  // Validates: unique ids, known distinct endpoints, sane QoS fields, pools
  // within [2, 4094].
  FabricTopology(std::vector<Domain> domains, std::vector<LinkSpec> links);

  static FabricTopology load(std::string_view doc);
  static FabricTopology from_json(const nlohmann::json& doc);
  nlohmann::json to_json() const;  // topology only, no reservations

  const std::vector<Domain>& domains() const { return domains_; }
  const std::vector<LinkSpec>& links() const { return links_; }
  const Domain* find_domain(std::string_view id) const;
  const LinkSpec* find_link(std::string_view id) const;
  const LinkSpec& link(std::string_view id) const;  // throws not_found
  std::optional<std::string> domain_of_provider(std::string_view provider_id) const;

  double committed(std::string_view link_id) const;
  double residual(std::string_view link_id) const;

  // Minimum-latency simple path meeting every bound in `qos`; ties by hop
  // count, then domain-id sequence, then link-id sequence. A bandwidth of 0
  // disables the residual check. Throws NoPathError naming the constraint
  // violated by the best unconstrained candidate.
  Path compute_path(std::string_view src, std::string_view dst, const QoSDemand& qos) const;

  // Rebuilds aggregates from link fields; throws invalid if the link
  // sequence is not a simple path starting at `src`.
  Path make_path(std::string_view src, const std::vector<std::string>& links) const;

  Reservation commit_path(const Path& path, double bandwidth_mbps);
  void release(const Reservation& reservation);
  void release(std::uint64_t reservation_id);
  bool reservation_active(std::uint64_t reservation_id) const;

  int allocate_vlan(std::string_view link_id);  // lowest free
  void claim_vlan(std::string_view link_id, int vlan);
  void release_vlan(std::string_view link_id, int vlan);
  const std::set<int>& vlans(std::string_view link_id) const;

  // Host-facing tags inside one domain, drawn from kAccessVlanRange.
  int allocate_access_vlan(std::string_view domain_id);
  void release_access_vlan(std::string_view domain_id, int vlan);

  void adopt_lease(Lease lease);
  void release_lease(std::string_view key);
  bool has_lease(std::string_view key) const;
  // Releases whatever a partially built lease holds (used for rollback).
  void unwind(const Lease& lease);

  AllocationState allocation_state() const;

  nlohmann::json state_json() const;
  void restore_state(const nlohmann::json& state);

 private:
  std::size_t domain_index(std::string_view id) const;

  std::vector<Domain> domains_;  // sorted by id
  std::vector<LinkSpec> links_;  // sorted by id
  std::map<std::string, std::size_t, std::less<>> link_index_;
  std::map<std::string, std::size_t, std::less<>> domain_index_;
  std::vector<std::vector<std::size_t>> adjacency_;  // domain -> link indices

  std::map<std::uint64_t, Reservation> reservations_;
  std::map<std::string, std::map<std::uint64_t, double>, std::less<>> link_commitments_;
  std::map<std::string, std::set<int>, std::less<>> link_vlans_;
  std::map<std::string, std::set<int>, std::less<>> access_vlans_;
  std::map<std::string, Lease, std::less<>> leases_;
  std::uint64_t next_reservation_ = 1;
};

nlohmann::json to_json(const Path& path);

}  // namespace ztpom
