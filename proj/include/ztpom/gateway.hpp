#pragma once

// Service shell: one process holding the fabric, marketplace, provisioner
// and (optionally) a fleet of simulated agents, exposed as HTTP/JSON
// routes. Every route is a thin adapter over a module operation; all
// requests are serialized through one lock.

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "ztpom/agent.hpp"
#include "ztpom/fabric.hpp"
#include "ztpom/marketplace.hpp"
#include "ztpom/provisioner.hpp"

namespace ztpom {

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::int64_t heartbeat_interval = 5;
  int miss_threshold = 3;
  double lambda = 0.1;
  std::uint64_t seed = 1;
  std::optional<std::uint64_t> env_seed;  // ZTPOM_SEED, when set
  std::string persistence_dir;
  std::string topology_path;
  std::string catalogue_path;
  std::string owner = "ztpom";
  bool simulate_agents = true;
  bool autosnapshot = false;  // write a snapshot after every mutating request
  AgentConfig agent_defaults;
  std::map<std::string, AgentConfig> agent_providers;
};

// Relative paths resolve against the config file's directory. Applies
// ZTPOM_SEED.
GatewayConfig load_config(const std::filesystem::path& path);
GatewayConfig config_from_json(const nlohmann::json& doc, const std::filesystem::path& base = {});
void apply_env(GatewayConfig& cfg);

struct Request {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct Response {
  int status = 200;
  nlohmann::json body;
};

int http_status(Errc code) noexcept;
// "/a/b?x=1&y=%20" -> path + decoded query.
Request make_request(std::string method, std::string_view target, std::string body = {});

class Service {
 public:
  // Loads topology and catalogue from the configured paths, then restores
  // the snapshot in persistence_dir if one exists.
  explicit Service(GatewayConfig cfg);
  Service(GatewayConfig cfg, FabricTopology fabric, Marketplace market);
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  Response handle(const Request& req);

  // Runs protocol rounds: clock advance, agent steps, heartbeat evaluation.
  std::vector<Event> advance(std::int64_t ticks);

  std::filesystem::path snapshot_path() const;
  std::filesystem::path snapshot();  // atomic write; returns the path
  nlohmann::json state_json() const;
  void restore(const std::filesystem::path& path);

  const GatewayConfig& config() const { return cfg_; }
  FabricTopology& fabric() { return fabric_; }
  Marketplace& marketplace() { return market_; }
  Provisioner& provisioner() { return prov_; }
  Fleet& fleet() { return fleet_; }

 private:
  class Loopback;

  Response route(const Request& req);
  void round(std::int64_t now);
  void feed_fleet();
  nlohmann::json probe_flows(const Deployment& d, int count);

  GatewayConfig cfg_;
  mutable std::recursive_mutex mu_;
  int depth_ = 0;
  FabricTopology fabric_;
  Marketplace market_;
  Provisioner prov_;
  Fleet fleet_;
  std::uint64_t fleet_cursor_ = 0;
};

// In-process transport for agents: requests and replies pass through their
// serialized text form.
class LocalTransport : public Transport {
 public:
  explicit LocalTransport(Service& service) : service_(service) {}
  WireReply send(std::string_view method, std::string_view target, const nlohmann::json& body) override;

 private:
  Service& service_;
};

// Blocks serving HTTP until SIGINT/SIGTERM; writes a final snapshot when a
// persistence directory is configured. Throws Error(io) if the bind fails.
void serve(Service& service);

}  // namespace ztpom
