#pragma once

// Simulated provider-side ZTP client. Each agent drives one node through
// hello -> recipe fetch -> deploy -> READY and then heartbeats, talking to
// the server only through wire messages (method, target, JSON body).

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ztpom/blueprint.hpp"
#include "ztpom/provisioner.hpp"

namespace ztpom {

struct WireReply {
  int status = 0;
  nlohmann::json body;

  bool ok() const { return status >= 200 && status < 300; }
};

class Transport {
 public:
  virtual ~Transport() = default;
  virtual WireReply send(std::string_view method, std::string_view target, const nlohmann::json& body) = 0;
};

enum class FailMode { none, fail_on_deploy, silent_after };

struct AgentConfig {
  std::string provider_id;
  std::int64_t deploy_delay_ticks = 0;
  FailMode fail_mode = FailMode::none;
  std::int64_t silent_after_tick = 0;  // last tick a heartbeat may be sent, for silent_after
  std::int64_t heartbeat_every_ticks = 1;

  bool operator==(const AgentConfig&) const = default;
};

nlohmann::json to_json(const AgentConfig& cfg);
AgentConfig agent_config_from_json(const nlohmann::json& doc, std::string_view path = "",
                                   const AgentConfig& defaults = {});

enum class AgentState { BOOT, DISCOVERED, FETCHED, DEPLOYING, READY, STOPPED, ERROR };
std::string_view to_string(AgentState s) noexcept;

// One request the agent sent during a step, with the server's reply.
struct WireMessage {
  std::int64_t tick = 0;
  std::string method;
  std::string target;
  nlohmann::json body;
  int status = 0;
  nlohmann::json reply;
};

class Agent {
 public:
  Agent(AgentConfig cfg, std::string deployment_id, std::string node_id, std::string registry);

  // Sends at most one message. READY is never sent before
  // fetch tick + max(1, deploy_delay_ticks).
  std::vector<WireMessage> step(std::int64_t now, Transport& transport);

  AgentState state() const { return state_; }
  const AgentConfig& config() const { return cfg_; }
  void reconfigure(AgentConfig cfg) { cfg_ = std::move(cfg); }
  const std::string& deployment_id() const { return deployment_; }
  const std::string& node_id() const { return node_; }
  const std::string& registry() const { return registry_; }
  const std::string& error() const { return error_; }
  const std::optional<NodeRecipe>& recipe() const { return recipe_; }
  // Steps "applied" from the recipe, in order.
  const std::vector<std::string>& applied() const { return applied_; }
  std::optional<std::int64_t> fetch_tick() const { return fetch_tick_; }
  std::optional<std::int64_t> ready_tick() const { return ready_tick_; }
  const std::vector<std::int64_t>& heartbeats() const { return heartbeats_; }
  std::optional<Directive> last_directive() const { return directive_; }

  // Without the session token; a restored agent re-attaches with a hello.
  nlohmann::json state_json() const;
  static Agent from_json(const nlohmann::json& doc);

 private:
  WireMessage exchange(std::int64_t now, Transport& t, std::string method, std::string target,
                       nlohmann::json body);
  bool lost_token(const WireMessage& m);
  void fail(const WireMessage& m);
  void apply_directive(const WireMessage& m);

  AgentConfig cfg_;
  std::string deployment_;
  std::string node_;
  std::string registry_;
  AgentState state_ = AgentState::BOOT;
  std::string token_;
  std::string error_;
  std::optional<NodeRecipe> recipe_;
  std::vector<std::string> applied_;
  std::optional<std::int64_t> last_step_;
  std::optional<std::int64_t> fetch_tick_;
  std::optional<std::int64_t> ready_at_;
  std::optional<std::int64_t> ready_tick_;
  std::optional<std::int64_t> last_heartbeat_;
  std::vector<std::int64_t> heartbeats_;
  std::optional<Directive> directive_;
};

// Spawns an agent for every node the server marks PENDING and steps them all.
class Fleet {
 public:
  explicit Fleet(AgentConfig defaults = {}, std::map<std::string, AgentConfig> per_provider = {},
                 std::string registry = "local");

  void set_provider_config(const std::string& provider, AgentConfig cfg);
  // Applied to the next agent spawned for (deployment, node).
  void set_node_config(const std::string& deployment, const std::string& node, AgentConfig cfg);

  void observe(const std::vector<Event>& events);
  Agent& spawn(const std::string& deployment, const std::string& node, const std::string& provider);
  std::vector<WireMessage> step(std::int64_t now, Transport& transport);

  const std::vector<Agent>& agents() const { return agents_; }
  // Most recently spawned agent for the node.
  Agent* find(std::string_view deployment, std::string_view node);

  nlohmann::json state_json() const;
  void restore_state(const nlohmann::json& state);

 private:
  AgentConfig defaults_;
  std::map<std::string, AgentConfig> per_provider_;
  std::map<std::pair<std::string, std::string>, AgentConfig> per_node_;
  std::string registry_;
  std::vector<Agent> agents_;
};

}  // namespace ztpom
