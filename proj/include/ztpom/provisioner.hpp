#pragma once

// The provisioning server: blueprint registry, deployment planning through
// the marketplace broker, the agent bootstrap protocol (hello / fetch /
// status), heartbeat monitoring and reconfiguration.
//
// Not internally synchronized. The gateway funnels every call through one
// lock, which gives the serialized command-processor behaviour.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ztpom/blueprint.hpp"
#include "ztpom/fabric.hpp"
#include "ztpom/marketplace.hpp"
#include "ztpom/sfc.hpp"

namespace ztpom {

enum class DeploymentState { DRAFT, PLANNED, PROVISIONING, ACTIVE, UPDATING, DEGRADED, FAILED, TORN_DOWN };
enum class NodeState { PENDING, RECIPE_SENT, DEPLOYING, READY, LOST, FAILED };

std::string_view to_string(DeploymentState s) noexcept;
std::string_view to_string(NodeState s) noexcept;
DeploymentState deployment_state_from(std::string_view s);
NodeState node_state_from(std::string_view s);

// The transition table. UPDATING -> DEGRADED covers a node lost mid-update.
bool legal_transition(DeploymentState from, DeploymentState to) noexcept;

struct BlueprintRef {
  std::string id;
  std::int64_t version = 0;
};

struct Deployment {
  std::string id;
  std::string owner;
  Blueprint blueprint;  // the version this deployment runs
  DeploymentState state = DeploymentState::DRAFT;
  std::int64_t dep_seq = 0;
  std::map<std::string, std::string> placements;  // node -> provider
  std::map<std::string, std::string> offers;      // node -> offer
  std::map<std::string, NodeState> node_states;
  std::map<std::string, std::size_t> ordinals;    // stable for the deployment's lifetime
  std::map<std::string, std::vector<std::string>> excluded;  // providers a node was lost on
  std::vector<ChainPlan> chain_plans;

  const ChainPlan* plan(std::string_view chain_id) const;
  bool all_ready() const;
};

struct AgentSession {
  std::string token;  // empty after restore until the agent re-attaches
  std::string deployment_id;
  std::string node_id;
  std::string provider_id;
  std::int64_t last_heartbeat = 0;
  int missed = 0;
};

struct Hello {
  std::string deployment_id;
  std::string node_id;
  std::string provider_id;
};

struct HelloReply {
  std::string token;
  std::string server;
  NodeState node_state = NodeState::RECIPE_SENT;
};

enum class Phase { ready, failed, metrics };
enum class Directive { none, redeploy, teardown };
std::string_view to_string(Phase p) noexcept;
std::string_view to_string(Directive d) noexcept;
Phase phase_from(std::string_view s);

struct StatusReport {
  Phase phase = Phase::metrics;
  nlohmann::json payload = nlohmann::json::object();
};

struct Event {
  std::uint64_t seq = 0;
  std::int64_t tick = 0;
  std::string type;
  std::string deployment;
  std::string node;
  nlohmann::json detail = nlohmann::json::object();
};

nlohmann::json to_json(const Event& e);

struct ProvisionerConfig {
  std::int64_t heartbeat_interval = 5;
  int miss_threshold = 3;
  std::string owner = "ztpom";
  std::string server_endpoint = "local";
};

class Provisioner {
 public:
  Provisioner(FabricTopology& fabric, Marketplace& market, ProvisionerConfig cfg = {});

  const ProvisionerConfig& config() const { return cfg_; }

  // --- blueprints ---
  BlueprintRef register_blueprint(const Blueprint& bp);
  const Blueprint& blueprint(std::string_view id, std::optional<std::int64_t> version = std::nullopt) const;
  const ChangeSet* last_changes(std::string_view id) const;
  std::vector<BlueprintRef> blueprints() const;

  // --- deployments ---
  const Deployment& plan_deployment(std::string_view blueprint_id, std::optional<std::string> owner = std::nullopt);
  const Deployment& start_provisioning(std::string_view dep_id);
  const Deployment& request_update(std::string_view dep_id, std::int64_t version);
  // Reorders one chain: registers the next blueprint version and applies it.
  const Deployment& rechain(std::string_view dep_id, std::string_view chain_id,
                            const std::vector<std::string>& order);
  const Deployment& teardown(std::string_view dep_id);
  const Deployment& deployment(std::string_view dep_id) const;
  std::vector<std::string> deployment_ids() const;

  // --- agent protocol ---
  HelloReply handle_discovery(const Hello& hello);
  NodeRecipe handle_fetch(const std::string& token);
  Directive handle_status(const std::string& token, const StatusReport& report);

  // --- time and monitoring ---
  // Moves the logical clock without evaluating heartbeats; messages handled
  // afterwards are stamped with `now`.
  void set_time(std::int64_t now);
  std::vector<Event> tick(std::int64_t now);
  std::int64_t now() const { return now_; }

  std::vector<AgentSession> sessions() const;
  std::size_t live_sessions(std::string_view dep_id) const;

  const std::vector<Event>& events() const { return events_; }
  std::vector<Event> events_since(std::uint64_t seq) const;

  // Everything except session tokens.
  nlohmann::json state_json() const;
  void restore_state(const nlohmann::json& state);

 private:
  struct Stored {
    std::optional<Blueprint> previous;
    Blueprint latest;
    std::optional<ChangeSet> changes;
  };

  Deployment& find(std::string_view dep_id);
  void transition(Deployment& d, DeploymentState to);
  void set_node(Deployment& d, const std::string& node, NodeState to);
  void emit(std::string type, const std::string& dep, const std::string& node = "",
              nlohmann::json detail = nlohmann::json::object());

  ServiceRequest request_for(const Deployment& d, const NodeSpec& node) const;
  // Picks the best brokered offer whose provider can host the node.
  // Throws Error(no_offer) naming the node and binding constraint.
  std::vector<OfferMatch> candidates(const Deployment& d, const NodeSpec& node,
                                const std::map<std::string, Capacity>& extra_use) const;
  std::map<std::string, Capacity> provider_usage(const std::string& skip_dep = "") const;
  Placements chain_placements(const Deployment& d, const ChainSpec& chain) const;
  HostPlacement host_for(const Deployment& d, const std::string& node) const;

  void retire_session(const std::string& dep, const std::string& node);
  void lose_node(Deployment& d, const std::string& node);
  bool replace_node(Deployment& d, const std::string& node);
  void maybe_activate(Deployment& d);
  std::string new_token();

  FabricTopology& fabric_;
  Marketplace& market_;
  ProvisionerConfig cfg_;
  std::int64_t now_ = 0;
  std::int64_t next_dep_ = 1;
  std::map<std::string, Stored> registry_;
  std::map<std::string, Deployment> deployments_;
  std::map<std::pair<std::string, std::string>, AgentSession> sessions_;  // (dep, node)
  std::map<std::string, std::pair<std::string, std::string>> tokens_;     // live token -> (dep, node)
  std::set<std::string> retired_tokens_;
  std::vector<Event> events_;
  std::uint64_t next_event_ = 1;
};

nlohmann::json to_json(const Deployment& d);
Deployment deployment_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const HelloReply& reply);

}  // namespace ztpom
