#pragma once

// Deterministic discrete-event data plane. Installs compiled chain rules
// into per-domain match/action tables, injects packet flows at the chain
// source, and walks every packet hop by hop: link traversal costs the
// link's latency, a function visit costs the hop's processing delay.
//
// One simulated tick is one millisecond. Events at the same instant are
// processed in (time, domain id, flow id, seq) order; control events
// (cutovers) use an empty domain id so they run first.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <queue>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "ztpom/fabric.hpp"
#include "ztpom/sfc.hpp"

namespace ztpom {

struct FlowSpec {
  std::string chain_id;
  int count = 1;
  std::int64_t start_tick = 0;
  std::int64_t gap_ticks = 1;
  // Each injection is delayed by a seeded uniform draw in [0, jitter_ticks].
  std::int64_t jitter_ticks = 0;
};

struct PacketRecord {
  int seq = 0;
  std::int64_t epoch = 0;
  std::int64_t inject_tick = 0;
  double delivered_at = 0;
  std::vector<std::string> trace;
  std::vector<std::string> links;
  double latency_ms = 0;
  MacAddress final_dst;

  bool operator==(const PacketRecord&) const = default;
};

struct PacketLoss {
  int seq = 0;
  std::string reason;  // "no-rule", "no-host", "ttl"
  std::string domain;

  bool operator==(const PacketLoss&) const = default;
};

struct FlowResult {
  std::uint64_t flow_id = 0;
  std::string chain_id;
  int requested = 0;
  int injected = 0;
  int delivered = 0;
  std::vector<PacketRecord> packets;  // delivered, in seq order
  std::vector<PacketLoss> lost;
  std::map<std::string, int> link_peak_flows;  // links this flow used

  bool operator==(const FlowResult&) const = default;
};

class Simulator {
 public:
  using ReleaseHandler = std::function<void(const ChainPlan&)>;

  // The fabric supplies link latencies and, by default, receives the
  // release of retired plans.
  explicit Simulator(FabricTopology& fabric, std::uint64_t seed = 0);

  // Called with the old plan once a cutover has drained it. Default:
  // release_chain(plan, fabric).
  void set_release_handler(ReleaseHandler handler) { release_ = std::move(handler); }

  void install(const ChainPlan& plan);
  bool installed(const std::string& plan_key) const { return plans_.count(plan_key) != 0; }
  std::optional<std::int64_t> active_epoch(const std::string& chain_id) const;
  std::vector<ChainPlan> installed_plans() const;
  std::vector<FlowRule> rules_at(const std::string& domain) const;

  std::uint64_t inject(const FlowSpec& flow);
  void cutover(const ChainUpdate& update, std::int64_t at);
  // Removes a plan's rules without a cutover (chain teardown). Does not
  // call the release handler.
  void uninstall(const std::string& plan_key);

  std::vector<FlowResult> run_until(std::int64_t tick);
  std::vector<FlowResult> results() const;
  std::int64_t now() const { return now_; }
  std::size_t in_flight() const;

 private:
  struct Packet {
    std::uint64_t flow = 0;
    int seq = 0;
    int vlan = 0;
    MacAddress dst;
    std::string plan;  // classifier that admitted it
    std::int64_t inject_tick = 0;
    double latency = 0;
    int hops = 0;
    std::vector<std::string> trace;
    std::vector<std::string> links;
  };

  enum class EventKind { cutover, inject, arrive };

  struct Event {
    double time = 0;
    std::string domain;
    std::uint64_t flow = 0;
    int seq = 0;
    std::uint64_t order = 0;
    EventKind kind = EventKind::arrive;
    std::uint64_t packet = 0;
    Ingress ingress;
    std::string link;  // link traversed to get here, if any
    std::string old_plan;
    std::string new_plan;

    bool after(const Event& o) const;
  };
  struct EventAfter {
    bool operator()(const Event& a, const Event& b) const { return a.after(b); }
  };

  struct InstalledRule {
    FlowRule rule;
    std::string plan;
  };

  struct Host {
    enum class Kind { function, sink, source };
    Kind kind = Kind::function;
    std::string node_id;
    double fn_delay_ms = 0;
    int refs = 0;
  };

  struct Flow {
    FlowSpec spec;
    FlowResult result;
    std::set<std::string> links_used;
  };

  void schedule(Event e);
  void process(const Event& e);
  void process_arrival(const Event& e);
  void process_cutover(const Event& e);
  void finish(std::uint64_t packet_id, const std::optional<PacketLoss>& loss);
  void retire(const std::string& plan_key);
  void link_enter(const std::string& link, std::uint64_t flow);
  void link_leave(const std::string& link, std::uint64_t flow);

  FabricTopology& fabric_;
  std::mt19937_64 rng_;
  ReleaseHandler release_;
  std::int64_t now_ = 0;
  std::uint64_t next_order_ = 0;
  std::uint64_t next_packet_ = 1;
  std::uint64_t next_flow_ = 1;

  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::map<std::string, ChainPlan> plans_;
  std::map<std::string, std::string> active_;            // chain -> plan key
  std::set<std::string> retiring_;                       // plan keys awaiting drain
  std::map<std::string, std::size_t> plan_in_flight_;
  std::map<std::string, std::map<Match, InstalledRule>> tables_;      // domain -> rules
  std::map<std::string, std::vector<InstalledRule>> classifiers_;     // plan -> entry rules
  std::map<std::pair<std::string, MacAddress>, Host> hosts_;
  std::map<std::uint64_t, Packet> packets_;
  std::map<std::uint64_t, Flow> flows_;
  std::map<std::string, std::map<std::uint64_t, int>> link_load_;
  std::map<std::string, int> link_peak_;
};

nlohmann::json to_json(const FlowResult& result);
nlohmann::json results_json(const std::vector<FlowResult>& results);

// Scenario scripts: a JSON list of timed actions (or {"seed", "actions"}).
// Supported ops: compile, rechain, install, inject, cutover, run_until.
// Plans created by compile/rechain are referenced by chain id.
struct ScenarioOutcome {
  std::uint64_t seed = 0;
  nlohmann::json snapshots;  // one entry per run_until
  std::vector<FlowResult> final_results;
};

// Seed precedence: `seed_override` (the ZTPOM_SEED environment value), then
// the script's "seed" key, then `default_seed`.
ScenarioOutcome run_scenario(const nlohmann::json& script, FabricTopology fabric, std::uint64_t default_seed,
                             std::optional<std::uint64_t> seed_override = std::nullopt);

}  // namespace ztpom
