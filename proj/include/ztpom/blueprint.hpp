#pragma once

// Application blueprints ("recipes"): the declarative topology and service
// chains the provisioning server holds, plus per-provider recipe adaptation
// and version diffs.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ztpom/mac.hpp"

namespace ztpom {

struct Endpoint {
  std::string domain;
  MacAddress mac;

  bool operator==(const Endpoint&) const = default;
};

// Unset latency/jitter bounds mean "unbounded".
struct QoSDemand {
  std::optional<double> max_latency_ms;
  std::optional<double> max_jitter_ms;
  double min_bandwidth_mbps = 1.0;

  bool operator==(const QoSDemand&) const = default;
};

// Allow-lists; an empty list places no restriction.
struct PlacementConstraint {
  std::vector<std::string> regions;
  std::vector<std::string> providers;

  bool operator==(const PlacementConstraint&) const = default;
};

struct NodeSpec {
  std::string id;
  std::string service_type;
  std::string image_ref;
  int vcpu = 1;
  double mem_gb = 1.0;
  std::map<std::string, std::string> params;
  PlacementConstraint placement;

  bool operator==(const NodeSpec&) const = default;
};

// Strictly linear chain: traffic from source visits functions in order,
// then reaches sink.
struct ChainSpec {
  std::string id;
  Endpoint source;
  std::vector<std::string> functions;
  Endpoint sink;
  QoSDemand qos;

  bool operator==(const ChainSpec&) const = default;
};

struct Blueprint {
  std::string id;
  std::string name;
  std::int64_t version = 1;
  std::vector<NodeSpec> nodes;
  std::vector<ChainSpec> chains;

  const NodeSpec* find_node(std::string_view node_id) const;
  const ChainSpec* find_chain(std::string_view chain_id) const;
  std::optional<std::size_t> ordinal(std::string_view node_id) const;

  bool operator==(const Blueprint&) const = default;
};

struct Finding {
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<Finding> findings;

  bool ok() const { return findings.empty(); }
  std::string summary() const;
};

struct Capacity {
  int vcpu = 0;
  double mem_gb = 0.0;

  bool operator==(const Capacity&) const = default;
};

struct ProviderProfile {
  std::string provider_id;
  std::string domain_id;
  std::map<std::string, std::string> image_map;
  std::string address_block;  // IPv4 CIDR, e.g. "10.1.0.0/24"
  std::array<std::uint8_t, 4> mac_prefix{};
  std::map<std::string, double> fn_delay_ms;  // by service_type
  Capacity capacity;
  std::map<std::string, std::string> params;  // placeholder defaults

  double fn_delay(std::string_view service_type) const;

  bool operator==(const ProviderProfile&) const = default;
};

struct NodeRecipe {
  std::string node_id;
  std::string provider_id;
  std::string concrete_image;
  MacAddress assigned_mac;
  std::string assigned_addr;
  std::map<std::string, std::string> resolved_params;
  std::vector<std::string> steps;

  bool operator==(const NodeRecipe&) const = default;
};

// Edit script between two versions of one blueprint. node_order and
// chain_order carry the target ordering so applying it reproduces the
// new blueprint exactly.
struct ChangeSet {
  std::string blueprint_id;
  std::int64_t from_version = 0;
  std::int64_t to_version = 0;
  std::string name;
  std::vector<NodeSpec> added;
  std::vector<std::string> removed;
  std::vector<NodeSpec> modified;
  std::vector<ChainSpec> chain_updates;
  std::vector<std::string> removed_chains;
  std::vector<std::string> node_order;
  std::vector<std::string> chain_order;

  bool nodes_unchanged() const { return added.empty() && removed.empty() && modified.empty(); }

  bool operator==(const ChangeSet&) const = default;
};

// --- documents -------------------------------------------------------------

Blueprint parse_blueprint(std::string_view doc);
Blueprint blueprint_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const Blueprint& bp);
std::string serialize_blueprint(const Blueprint& bp);

nlohmann::json to_json(const ChainSpec& chain);
ChainSpec chain_from_json(const nlohmann::json& doc, std::string_view path = "");
nlohmann::json to_json(const QoSDemand& qos);
QoSDemand qos_from_json(const nlohmann::json& doc, std::string_view path = "");

ProviderProfile profile_from_json(const nlohmann::json& doc, std::string_view path = "");
nlohmann::json to_json(const ProviderProfile& profile);

nlohmann::json to_json(const NodeRecipe& recipe);
NodeRecipe recipe_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const ChangeSet& changes);
ChangeSet changeset_from_json(const nlohmann::json& doc);

// --- operations ------------------------------------------------------------

ValidationReport validate(const Blueprint& bp);

// MAC layout: 4-byte provider prefix, low byte of dep_seq, low byte of the
// node ordinal.
MacAddress assign_mac(const std::array<std::uint8_t, 4>& prefix, std::int64_t dep_seq,
                      std::size_t ordinal);

// Host address for (dep_seq, ordinal) inside an IPv4 block; skips the
// network and broadcast addresses.
std::string assign_address(std::string_view block, std::int64_t dep_seq, std::size_t ordinal);

// Uses the node's position in bp.nodes as its ordinal.
NodeRecipe adapt_recipe(const Blueprint& bp, std::string_view node_id,
                        const ProviderProfile& profile, std::int64_t dep_seq);
NodeRecipe adapt_recipe(const Blueprint& bp, std::string_view node_id,
                        const ProviderProfile& profile, std::int64_t dep_seq,
                        std::size_t ordinal);

ChangeSet diff_blueprints(const Blueprint& old_bp, const Blueprint& new_bp);
Blueprint apply_changes(const Blueprint& base, const ChangeSet& changes);

// Substitutes ${key} references using `bindings`, recursively. Throws
// Error(unresolved_placeholder) naming the first missing key.
std::string resolve_placeholders(std::string_view text,
                                 const std::map<std::string, std::string>& bindings);

}  // namespace ztpom
