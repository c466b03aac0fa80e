#include "ztpom/provisioner.hpp"

#include <algorithm>
#include <array>
#include <random>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;

namespace {

constexpr std::array kDeploymentStates{"DRAFT",    "PLANNED",  "PROVISIONING", "ACTIVE",
                                       "UPDATING", "DEGRADED", "FAILED",       "TORN_DOWN"};
constexpr std::array kNodeStates{"PENDING", "RECIPE_SENT", "DEPLOYING", "READY", "LOST", "FAILED"};

// Chain plans are leased on the shared fabric, so their ids carry the
// deployment id.
std::string scoped_id(const std::string& dep, const std::string& chain) { return dep + "/" + chain; }

ChainSpec scoped(const Deployment& d, const ChainSpec& chain) {
  ChainSpec out = chain;
  out.id = scoped_id(d.id, chain.id);
  return out;
}

bool uses(const ChainSpec& chain, const std::string& node) {
  return std::find(chain.functions.begin(), chain.functions.end(), node) != chain.functions.end();
}

const ChainSpec* spec_of(const Deployment& d, const ChainPlan& plan) {
  for (const auto& c : d.blueprint.chains) {
    if (scoped_id(d.id, c.id) == plan.chain_id) return &c;
  }
  return nullptr;
}

bool is_live(DeploymentState s) { return s != DeploymentState::TORN_DOWN; }

}  // namespace

std::string_view to_string(DeploymentState s) noexcept { return kDeploymentStates[static_cast<std::size_t>(s)]; }
std::string_view to_string(NodeState s) noexcept { return kNodeStates[static_cast<std::size_t>(s)]; }

DeploymentState deployment_state_from(std::string_view s) {
  for (std::size_t i = 0; i < kDeploymentStates.size(); ++i) {
    if (s == kDeploymentStates[i]) return static_cast<DeploymentState>(i);
  }
  throw Error(Errc::invalid, "unknown deployment state '" + std::string(s) + "'");
}

NodeState node_state_from(std::string_view s) {
  for (std::size_t i = 0; i < kNodeStates.size(); ++i) {
    if (s == kNodeStates[i]) return static_cast<NodeState>(i);
  }
  throw Error(Errc::invalid, "unknown node state '" + std::string(s) + "'");
}

bool legal_transition(DeploymentState from, DeploymentState to) noexcept {
  using S = DeploymentState;
  if (to == S::TORN_DOWN) return from != S::TORN_DOWN;
  switch (from) {
    case S::DRAFT: return to == S::PLANNED;
    case S::PLANNED: return to == S::PROVISIONING;
    case S::PROVISIONING: return to == S::ACTIVE || to == S::FAILED;
    case S::ACTIVE: return to == S::UPDATING || to == S::DEGRADED;
    case S::UPDATING: return to == S::ACTIVE || to == S::DEGRADED;
    case S::DEGRADED: return to == S::ACTIVE || to == S::FAILED;
    case S::FAILED:
    case S::TORN_DOWN: return false;
  }
  return false;
}

std::string_view to_string(Phase p) noexcept {
  switch (p) {
    case Phase::ready: return "READY";
    case Phase::failed: return "FAILED";
    case Phase::metrics: return "metrics";
  }
  return "?";
}

std::string_view to_string(Directive d) noexcept {
  switch (d) {
    case Directive::none: return "none";
    case Directive::redeploy: return "redeploy";
    case Directive::teardown: return "teardown";
  }
  return "?";
}

Phase phase_from(std::string_view s) {
  if (s == "READY") return Phase::ready;
  if (s == "FAILED") return Phase::failed;
  if (s == "metrics") return Phase::metrics;
  throw Error(Errc::invalid, "phase: expected READY, FAILED or metrics, got '" + std::string(s) + "'");
}

const ChainPlan* Deployment::plan(std::string_view chain_id) const {
  const std::string key = scoped_id(id, std::string(chain_id));
  for (const auto& p : chain_plans) {
    if (p.chain_id == key) return &p;
  }
  return nullptr;
}

bool Deployment::all_ready() const {
  if (node_states.size() != blueprint.nodes.size()) return false;
  return std::all_of(node_states.begin(), node_states.end(),
                     [](const auto& kv) { return kv.second == NodeState::READY; });
}

json to_json(const Event& e) {
  return json{{"seq", e.seq},           {"tick", e.tick}, {"type", e.type},
              {"deployment", e.deployment}, {"node", e.node}, {"detail", e.detail}};
}

// ---------------------------------------------------------------------------

Provisioner::Provisioner(FabricTopology& fabric, Marketplace& market, ProvisionerConfig cfg)
    : fabric_(fabric), market_(market), cfg_(std::move(cfg)) {
  if (cfg_.heartbeat_interval < 1) throw Error(Errc::invalid, "heartbeat_interval must be >= 1");
  if (cfg_.miss_threshold < 1) throw Error(Errc::invalid, "miss_threshold must be >= 1");
}

void Provisioner::emit(std::string type, const std::string& dep, const std::string& node, json detail) {
  Event e;
  e.seq = next_event_++;
  e.tick = now_;
  e.type = std::move(type);
  e.deployment = dep;
  e.node = node;
  e.detail = std::move(detail);
  events_.push_back(std::move(e));
}

std::vector<Event> Provisioner::events_since(std::uint64_t seq) const {
  auto it = std::upper_bound(events_.begin(), events_.end(), seq,
                             [](std::uint64_t s, const Event& e) { return s < e.seq; });
  return {it, events_.end()};
}

// --- blueprints ------------------------------------------------------------

BlueprintRef Provisioner::register_blueprint(const Blueprint& bp) {
  if (auto report = validate(bp); !report.ok()) throw Error(Errc::invalid, report.summary());
  auto it = registry_.find(bp.id);
  if (it == registry_.end()) {
    registry_.emplace(bp.id, Stored{std::nullopt, bp, std::nullopt});
  } else {
    Stored& s = it->second;
    if (bp.version <= s.latest.version) {
      throw Error(Errc::precondition, "blueprint '" + bp.id + "' version " + std::to_string(bp.version) +
                                          " not greater than stored version " + std::to_string(s.latest.version));
    }
    s.changes = diff_blueprints(s.latest, bp);
    s.previous = std::move(s.latest);
    s.latest = bp;
  }
  emit("BlueprintRegistered", "", "", {{"blueprint", bp.id}, {"version", bp.version}});
  return {bp.id, bp.version};
}

const Blueprint& Provisioner::blueprint(std::string_view id, std::optional<std::int64_t> version) const {
  auto it = registry_.find(std::string(id));
  if (it == registry_.end()) throw Error(Errc::not_found, "unknown blueprint '" + std::string(id) + "'");
  const Stored& s = it->second;
  if (!version || *version == s.latest.version) return s.latest;
  if (s.previous && s.previous->version == *version) return *s.previous;
  throw Error(Errc::not_found, "blueprint '" + std::string(id) + "' version " + std::to_string(*version) +
                                   " is not stored (latest " + std::to_string(s.latest.version) + ")");
}

const ChangeSet* Provisioner::last_changes(std::string_view id) const {
  auto it = registry_.find(std::string(id));
  if (it == registry_.end() || !it->second.changes) return nullptr;
  return &*it->second.changes;
}

std::vector<BlueprintRef> Provisioner::blueprints() const {
  std::vector<BlueprintRef> out;
  for (const auto& [id, s] : registry_) out.push_back({id, s.latest.version});
  return out;
}

// --- placement helpers ------------------------------------------------------

ServiceRequest Provisioner::request_for(const Deployment& d, const NodeSpec& node) const {
  ServiceRequest req;
  req.requester = d.owner;
  req.service_type = node.service_type;
  req.allowed_regions = node.placement.regions;
  req.allowed_providers = node.placement.providers;
  if (auto ex = d.excluded.find(node.id); ex != d.excluded.end()) req.excluded_providers = ex->second;
  for (const auto& chain : d.blueprint.chains) {
    if (!uses(chain, node.id)) continue;
    req.min_bandwidth_mbps = std::max(req.min_bandwidth_mbps.value_or(0), chain.qos.min_bandwidth_mbps);
    if (!req.user_domain) req.user_domain = chain.source.domain;
  }
  return req;
}

std::map<std::string, Capacity> Provisioner::provider_usage(const std::string& skip_dep) const {
  std::map<std::string, Capacity> use;
  for (const auto& [id, d] : deployments_) {
    if (id == skip_dep || !is_live(d.state)) continue;
    for (const auto& [node, provider] : d.placements) {
      const NodeSpec* spec = d.blueprint.find_node(node);
      use[provider].vcpu += spec->vcpu;
      use[provider].mem_gb += spec->mem_gb;
    }
  }
  return use;
}

std::vector<OfferMatch> Provisioner::candidates(const Deployment& d, const NodeSpec& node,
                                           const std::map<std::string, Capacity>& use) const {
  const ServiceRequest req = request_for(d, node);
  BrokerExplanation found = market_.explain(req, fabric_);
  if (found.matches.empty()) {
    throw Error(Errc::no_offer, "no offer for node '" + node.id + "': " + found.binding + " constraint: " + found.detail);
  }
  std::vector<OfferMatch> out;
  std::string why;
  for (auto& m : found.matches) {
    const ProviderProfile* profile = market_.profile(m.offer.provider_id);
    if (profile == nullptr) {
      why = "provider '" + m.offer.provider_id + "' has no profile";
      continue;
    }
    Capacity used;
    if (auto it = use.find(profile->provider_id); it != use.end()) used = it->second;
    if (used.vcpu + node.vcpu > profile->capacity.vcpu || used.mem_gb + node.mem_gb > profile->capacity.mem_gb) {
      why = "provider '" + profile->provider_id + "' lacks capacity";
      continue;
    }
    try {
      adapt_recipe(d.blueprint, node.id, *profile, d.dep_seq, d.ordinals.at(node.id));
    } catch (const Error& err) {
      why = "provider '" + profile->provider_id + "': " + err.what();
      continue;
    }
    out.push_back(std::move(m));
  }
  if (out.empty()) throw Error(Errc::no_offer, "no offer for node '" + node.id + "': hosting constraint: " + why);
  return out;
}

HostPlacement Provisioner::host_for(const Deployment& d, const std::string& node) const {
  const std::string& provider = d.placements.at(node);
  const ProviderProfile* profile = market_.profile(provider);
  if (profile == nullptr) throw Error(Errc::not_found, "provider '" + provider + "' has no profile");
  auto domain = market_.provider_domain(provider, fabric_);
  if (!domain) throw Error(Errc::not_found, "provider '" + provider + "' is not attached to the fabric");
  HostPlacement hp;
  hp.domain = *domain;
  hp.mac = assign_mac(profile->mac_prefix, d.dep_seq, d.ordinals.at(node));
  hp.fn_delay_ms = profile->fn_delay(d.blueprint.find_node(node)->service_type);
  return hp;
}

Placements Provisioner::chain_placements(const Deployment& d, const ChainSpec& chain) const {
  Placements out;
  for (const auto& f : chain.functions) out[f] = host_for(d, f);
  return out;
}

// --- state changes ----------------------------------------------------------

Deployment& Provisioner::find(std::string_view dep_id) {
  auto it = deployments_.find(std::string(dep_id));
  if (it == deployments_.end()) throw Error(Errc::not_found, "unknown deployment '" + std::string(dep_id) + "'");
  return it->second;
}

const Deployment& Provisioner::deployment(std::string_view dep_id) const {
  auto it = deployments_.find(std::string(dep_id));
  if (it == deployments_.end()) throw Error(Errc::not_found, "unknown deployment '" + std::string(dep_id) + "'");
  return it->second;
}

std::vector<std::string> Provisioner::deployment_ids() const {
  std::vector<std::string> out;
  for (const auto& [id, d] : deployments_) out.push_back(id);
  return out;
}

void Provisioner::transition(Deployment& d, DeploymentState to) {
  if (!legal_transition(d.state, to)) {
    throw Error(Errc::wrong_state, "deployment '" + d.id + "': illegal transition " + std::string(to_string(d.state)) +
                                       " -> " + std::string(to_string(to)));
  }
  const DeploymentState from = d.state;
  d.state = to;
  emit("DeploymentState", d.id, "", {{"from", to_string(from)}, {"to", to_string(to)}});
}

void Provisioner::set_node(Deployment& d, const std::string& node, NodeState to) {
  json detail{{"to", to_string(to)}, {"provider", d.placements.at(node)}};
  if (auto it = d.node_states.find(node); it != d.node_states.end()) detail["from"] = to_string(it->second);
  d.node_states[node] = to;
  emit("NodeState", d.id, node, std::move(detail));
}

void Provisioner::maybe_activate(Deployment& d) {
  const bool settling = d.state == DeploymentState::PROVISIONING || d.state == DeploymentState::UPDATING ||
                        d.state == DeploymentState::DEGRADED;
  if (settling && d.all_ready() && d.chain_plans.size() == d.blueprint.chains.size()) {
    transition(d, DeploymentState::ACTIVE);
  }
}

std::string Provisioner::new_token() {
  static thread_local std::random_device rd;
  static constexpr char kHex[] = "0123456789abcdef";
  std::string token;
  do {
    token.clear();
    for (int i = 0; i < 8; ++i) {
      std::uint32_t word = rd();
      for (int n = 0; n < 4; ++n, word >>= 8) {
        token += kHex[(word >> 4) & 0xf];
        token += kHex[word & 0xf];
      }
    }
  } while (tokens_.count(token) != 0 || retired_tokens_.count(token) != 0);
  return token;
}

void Provisioner::retire_session(const std::string& dep, const std::string& node) {
  auto it = sessions_.find({dep, node});
  if (it == sessions_.end()) return;
  if (!it->second.token.empty()) {
    tokens_.erase(it->second.token);
    retired_tokens_.insert(it->second.token);
  }
  sessions_.erase(it);
}

// --- deployments ------------------------------------------------------------

const Deployment& Provisioner::plan_deployment(std::string_view blueprint_id, std::optional<std::string> owner) {
  const Blueprint& bp = blueprint(blueprint_id);
  if (bp.nodes.size() > 256) throw Error(Errc::invalid, "a deployment holds at most 256 nodes");

  Deployment d;
  d.id = "dep-" + std::to_string(next_dep_);
  d.owner = owner.value_or(cfg_.owner);
  d.blueprint = bp;
  d.dep_seq = next_dep_;
  for (std::size_t i = 0; i < bp.nodes.size(); ++i) d.ordinals[bp.nodes[i].id] = i;

  auto use = provider_usage();
  for (const auto& node : bp.nodes) {
    const OfferMatch best = candidates(d, node, use).front();
    d.placements[node.id] = best.offer.provider_id;
    d.offers[node.id] = best.offer.offer_id;
    use[best.offer.provider_id].vcpu += node.vcpu;
    use[best.offer.provider_id].mem_gb += node.mem_gb;
  }

  std::vector<ChainPlan> compiled;
  try {
    for (const auto& chain : bp.chains) {
      compiled.push_back(compile_chain(scoped(d, chain), chain_placements(d, chain), fabric_, 1));
    }
  } catch (...) {
    for (const auto& p : compiled) release_chain(p, fabric_);
    throw;
  }
  d.chain_plans = std::move(compiled);

  ++next_dep_;
  Deployment& stored = deployments_.emplace(d.id, std::move(d)).first->second;
  emit("DeploymentCreated", stored.id, "",
       {{"blueprint", stored.blueprint.id}, {"version", stored.blueprint.version}, {"owner", stored.owner}});
  for (const auto& p : stored.chain_plans) {
    emit("ChainCompiled", stored.id, "", {{"chain", p.chain_id}, {"epoch", p.epoch}});
  }
  transition(stored, DeploymentState::PLANNED);
  return stored;
}

const Deployment& Provisioner::start_provisioning(std::string_view dep_id) {
  Deployment& d = find(dep_id);
  if (d.state != DeploymentState::PLANNED) {
    throw Error(Errc::wrong_state,
                "deployment '" + d.id + "' is " + std::string(to_string(d.state)) + ", expected PLANNED");
  }
  transition(d, DeploymentState::PROVISIONING);
  for (const auto& node : d.blueprint.nodes) set_node(d, node.id, NodeState::PENDING);
  return d;
}

const Deployment& Provisioner::request_update(std::string_view dep_id, std::int64_t version) {
  Deployment& d = find(dep_id);
  if (d.state != DeploymentState::ACTIVE) {
    throw Error(Errc::wrong_state,
                "deployment '" + d.id + "' is " + std::string(to_string(d.state)) + ", expected ACTIVE");
  }
  if (version <= d.blueprint.version) {
    throw Error(Errc::precondition, "deployment '" + d.id + "' already runs version " +
                                        std::to_string(d.blueprint.version));
  }
  const Blueprint& target = blueprint(d.blueprint.id, version);
  const ChangeSet cs = diff_blueprints(d.blueprint, target);

  Deployment next = d;
  next.blueprint = target;
  std::size_t next_ordinal = 0;
  for (const auto& [node, ord] : d.ordinals) next_ordinal = std::max(next_ordinal, ord + 1);
  for (const auto& node : cs.removed) {
    next.placements.erase(node);
    next.offers.erase(node);
    next.node_states.erase(node);
    next.ordinals.erase(node);
    next.excluded.erase(node);
  }
  std::set<std::string> churn;  // added or modified nodes that go through the pipeline again
  for (const auto& n : cs.added) {
    if (next_ordinal > 255) throw Error(Errc::invalid, "deployment '" + d.id + "' ran out of node ordinals");
    next.ordinals[n.id] = next_ordinal++;
    churn.insert(n.id);
  }
  for (const auto& n : cs.modified) churn.insert(n.id);

  auto use = provider_usage(d.id);
  for (const auto& [node, provider] : next.placements) {
    if (churn.count(node) != 0) continue;
    const NodeSpec* spec = next.blueprint.find_node(node);
    use[provider].vcpu += spec->vcpu;
    use[provider].mem_gb += spec->mem_gb;
  }
  for (const auto& node : next.blueprint.nodes) {
    if (churn.count(node.id) == 0) continue;
    const OfferMatch best = candidates(next, node, use).front();
    next.placements[node.id] = best.offer.provider_id;
    next.offers[node.id] = best.offer.offer_id;
    use[best.offer.provider_id].vcpu += node.vcpu;
    use[best.offer.provider_id].mem_gb += node.mem_gb;
  }

  std::set<std::string> updated_chains;
  for (const auto& c : cs.chain_updates) updated_chains.insert(c.id);

  std::vector<ChainPlan> fresh;     // compiled by this update
  std::vector<ChainPlan> replaced;  // old plans to release on success
  std::vector<ChainPlan> final_plans;
  try {
    for (const auto& chain : next.blueprint.chains) {
      const ChainPlan* old = d.plan(chain.id);
      const bool touched = updated_chains.count(chain.id) != 0 ||
                           std::any_of(chain.functions.begin(), chain.functions.end(),
                                       [&](const std::string& f) { return churn.count(f) != 0; });
      if (old != nullptr && !touched) {
        final_plans.push_back(*old);
        continue;
      }
      ChainPlan plan = old != nullptr
                           ? ztpom::rechain(*old, scoped(next, chain), chain_placements(next, chain), fabric_).new_plan
                           : compile_chain(scoped(next, chain), chain_placements(next, chain), fabric_, 1);
      fresh.push_back(plan);
      if (old != nullptr) replaced.push_back(*old);
      final_plans.push_back(std::move(plan));
    }
  } catch (...) {
    for (const auto& p : fresh) release_chain(p, fabric_);
    throw;
  }
  for (const auto& old : d.chain_plans) {
    const bool kept = std::any_of(final_plans.begin(), final_plans.end(),
                                  [&](const ChainPlan& p) { return p.chain_id == old.chain_id; });
    if (!kept) replaced.push_back(old);
  }

  // Committed from here on. New epochs are in place before old ones go.
  for (const auto& p : fresh) {
    auto old_it = std::find_if(replaced.begin(), replaced.end(),
                               [&](const ChainPlan& o) { return o.chain_id == p.chain_id; });
    const ChainPlan* old = old_it == replaced.end() ? nullptr : &*old_it;
    emit("ChainCompiled", d.id, "", {{"chain", p.chain_id}, {"epoch", p.epoch}});
    if (old != nullptr) {
      emit("ChainRechained", d.id, "", {{"chain", p.chain_id}, {"old_epoch", old->epoch}, {"new_epoch", p.epoch}});
    }
  }
  for (const auto& old : replaced) {
    release_chain(old, fabric_);
    emit("ChainReleased", d.id, "", {{"chain", old.chain_id}, {"epoch", old.epoch}});
  }
  for (const auto& node : cs.removed) {
    retire_session(d.id, node);
    emit("NodeRemoved", d.id, node, {{"provider", d.placements.at(node)}});
  }
  for (const auto& node : churn) retire_session(d.id, node);

  const std::int64_t from_version = d.blueprint.version;
  next.chain_plans = std::move(final_plans);
  d = std::move(next);
  transition(d, DeploymentState::UPDATING);
  emit("UpdateStarted", d.id, "", {{"from_version", from_version}, {"to_version", d.blueprint.version}});
  for (const auto& node : d.blueprint.nodes) {
    if (churn.count(node.id) != 0) set_node(d, node.id, NodeState::PENDING);
  }
  maybe_activate(d);
  return d;
}

const Deployment& Provisioner::rechain(std::string_view dep_id, std::string_view chain_id,
                                       const std::vector<std::string>& order) {
  Deployment& d = find(dep_id);
  if (d.state != DeploymentState::ACTIVE) {
    throw Error(Errc::wrong_state,
                "deployment '" + d.id + "' is " + std::string(to_string(d.state)) + ", expected ACTIVE");
  }
  Blueprint next = d.blueprint;
  auto chain = std::find_if(next.chains.begin(), next.chains.end(),
                            [&](const ChainSpec& c) { return c.id == chain_id; });
  if (chain == next.chains.end()) {
    throw Error(Errc::not_found, "deployment '" + d.id + "' has no chain '" + std::string(chain_id) + "'");
  }
  chain->functions = order;
  next.version = std::max(blueprint(d.blueprint.id).version, d.blueprint.version) + 1;
  if (auto report = validate(next); !report.ok()) throw Error(Errc::invalid, report.summary());
  register_blueprint(next);
  return request_update(dep_id, next.version);
}

const Deployment& Provisioner::teardown(std::string_view dep_id) {
  Deployment& d = find(dep_id);
  if (d.state == DeploymentState::TORN_DOWN) throw Error(Errc::wrong_state, "deployment '" + d.id + "' is TORN_DOWN");
  for (const auto& p : d.chain_plans) {
    release_chain(p, fabric_);
    emit("ChainReleased", d.id, "", {{"chain", p.chain_id}, {"epoch", p.epoch}});
  }
  d.chain_plans.clear();
  for (const auto& [node, state] : d.node_states) retire_session(d.id, node);
  transition(d, DeploymentState::TORN_DOWN);
  return d;
}

// --- agent protocol ---------------------------------------------------------

HelloReply Provisioner::handle_discovery(const Hello& hello) {
  Deployment& d = find(hello.deployment_id);
  const bool settling = d.state == DeploymentState::PROVISIONING || d.state == DeploymentState::UPDATING ||
                        d.state == DeploymentState::DEGRADED;
  // Agents whose session survived a restore may re-attach to an ACTIVE one.
  const bool reattach_ok = settling || d.state == DeploymentState::ACTIVE;
  if (!reattach_ok) {
    throw Error(Errc::wrong_state, "deployment '" + d.id + "' is " + std::string(to_string(d.state)) +
                                       " and not accepting agents");
  }
  auto state = d.node_states.find(hello.node_id);
  if (state == d.node_states.end()) {
    throw Error(Errc::not_found, "unknown node '" + hello.node_id + "' in deployment '" + d.id + "'");
  }
  const std::string& placed = d.placements.at(hello.node_id);
  if (placed != hello.provider_id) {
    throw Error(Errc::wrong_provider, "node '" + hello.node_id + "' is placed at '" + placed + "', not '" +
                                          hello.provider_id + "'");
  }
  const auto key = std::make_pair(d.id, hello.node_id);
  if (auto s = sessions_.find(key); s != sessions_.end()) {
    if (!s->second.token.empty()) {
      throw Error(Errc::duplicate_session, "node '" + hello.node_id + "' already has a live session");
    }
    // Session restored from a snapshot: the agent re-attaches.
    s->second.token = new_token();
    tokens_[s->second.token] = key;
    emit("AgentReattached", d.id, hello.node_id, {{"provider", hello.provider_id}});
    return {s->second.token, cfg_.server_endpoint, state->second};
  }
  if (!settling) {
    throw Error(Errc::wrong_state, "deployment '" + d.id + "' is " + std::string(to_string(d.state)) +
                                       " and not accepting agents");
  }
  if (state->second != NodeState::PENDING) {
    throw Error(Errc::wrong_state, "node '" + hello.node_id + "' is " + std::string(to_string(state->second)) +
                                       ", expected PENDING");
  }
  AgentSession s{new_token(), d.id, hello.node_id, hello.provider_id, now_, 0};
  tokens_[s.token] = key;
  const std::string token = s.token;
  sessions_[key] = std::move(s);
  set_node(d, hello.node_id, NodeState::RECIPE_SENT);
  return {token, cfg_.server_endpoint, NodeState::RECIPE_SENT};
}

NodeRecipe Provisioner::handle_fetch(const std::string& token) {
  auto t = tokens_.find(token);
  if (t == tokens_.end()) throw Error(Errc::invalid_token, "invalid session token");
  const auto [dep, node] = t->second;
  Deployment& d = find(dep);
  const NodeState state = d.node_states.at(node);
  if (state != NodeState::RECIPE_SENT) {
    throw Error(Errc::wrong_state,
                "node '" + node + "' is " + std::string(to_string(state)) + ", recipe already fetched");
  }
  const ProviderProfile* profile = market_.profile(d.placements.at(node));
  if (profile == nullptr) throw Error(Errc::not_found, "provider '" + d.placements.at(node) + "' has no profile");
  NodeRecipe recipe = adapt_recipe(d.blueprint, node, *profile, d.dep_seq, d.ordinals.at(node));
  AgentSession& s = sessions_.at({dep, node});
  s.last_heartbeat = now_;
  s.missed = 0;
  set_node(d, node, NodeState::DEPLOYING);
  return recipe;
}

Directive Provisioner::handle_status(const std::string& token, const StatusReport& report) {
  if (retired_tokens_.count(token) != 0) return Directive::teardown;
  auto t = tokens_.find(token);
  if (t == tokens_.end()) throw Error(Errc::invalid_token, "invalid session token");
  const auto [dep, node] = t->second;
  Deployment& d = find(dep);
  AgentSession& s = sessions_.at({dep, node});
  s.last_heartbeat = now_;
  s.missed = 0;

  switch (report.phase) {
    case Phase::metrics: return Directive::none;
    case Phase::ready: {
      const NodeState state = d.node_states.at(node);
      if (state == NodeState::READY) return Directive::none;
      if (state != NodeState::DEPLOYING) {
        throw Error(Errc::wrong_state,
                    "node '" + node + "' is " + std::string(to_string(state)) + ", cannot report READY");
      }
      set_node(d, node, NodeState::READY);
      maybe_activate(d);
      return Directive::none;
    }
    case Phase::failed: {
      set_node(d, node, NodeState::FAILED);
      retire_session(dep, node);
      if (d.state == DeploymentState::ACTIVE || d.state == DeploymentState::UPDATING) {
        transition(d, DeploymentState::DEGRADED);
      }
      return replace_node(d, node) ? Directive::redeploy : Directive::teardown;
    }
  }
  return Directive::none;
}

// --- monitoring -------------------------------------------------------------

void Provisioner::set_time(std::int64_t now) {
  if (now < now_) {
    throw Error(Errc::precondition, "time went backwards: " + std::to_string(now) + " < " + std::to_string(now_));
  }
  now_ = now;
}

std::vector<Event> Provisioner::tick(std::int64_t now) {
  set_time(now);
  const std::size_t before = events_.size();
  std::vector<std::pair<std::string, std::string>> lost;
  for (auto& [key, s] : sessions_) {
    const Deployment& d = deployments_.at(key.first);
    if (d.node_states.at(key.second) != NodeState::READY) continue;
    s.missed = now > s.last_heartbeat ? static_cast<int>((now - s.last_heartbeat) / cfg_.heartbeat_interval) : 0;
    if (s.missed >= cfg_.miss_threshold) lost.push_back(key);
  }
  for (const auto& [dep, node] : lost) {
    Deployment& d = deployments_.at(dep);
    if (d.state == DeploymentState::FAILED || d.state == DeploymentState::TORN_DOWN) continue;
    lose_node(d, node);
  }
  return {events_.begin() + static_cast<std::ptrdiff_t>(before), events_.end()};
}

void Provisioner::lose_node(Deployment& d, const std::string& node) {
  const int missed = sessions_.at({d.id, node}).missed;
  set_node(d, node, NodeState::LOST);
  retire_session(d.id, node);
  emit("NodeLost", d.id, node, {{"provider", d.placements.at(node)}, {"missed", missed}});
  if (d.state == DeploymentState::ACTIVE || d.state == DeploymentState::UPDATING) {
    transition(d, DeploymentState::DEGRADED);
  }
  replace_node(d, node);
}

bool Provisioner::replace_node(Deployment& d, const std::string& node) {
  const std::string old_provider = d.placements.at(node);
  auto& excluded = d.excluded[node];
  if (std::find(excluded.begin(), excluded.end(), old_provider) == excluded.end()) excluded.push_back(old_provider);
  emit("ReplanStarted", d.id, node, {{"excluded", excluded}});

  auto fail = [&](const std::string& reason) {
    emit("ReplanFailed", d.id, node, {{"reason", reason}});
    transition(d, DeploymentState::FAILED);
    return false;
  };

  auto use = provider_usage(d.id);
  for (const auto& [other, provider] : d.placements) {
    if (other == node) continue;
    const NodeSpec* spec = d.blueprint.find_node(other);
    use[provider].vcpu += spec->vcpu;
    use[provider].mem_gb += spec->mem_gb;
  }
  std::vector<OfferMatch> options;
  try {
    options = candidates(d, *d.blueprint.find_node(node), use);
  } catch (const Error& err) {
    return fail(err.what());
  }

  // The lost node already broke its chains, so their old epochs are released
  // before the new ones are compiled. A failed attempt restores the fabric.
  std::vector<std::size_t> affected;
  for (std::size_t i = 0; i < d.chain_plans.size(); ++i) {
    const ChainSpec* spec = spec_of(d, d.chain_plans[i]);
    if (spec != nullptr && uses(*spec, node)) affected.push_back(i);
  }
  const json saved = fabric_.state_json();

  std::string last_error;
  for (const auto& m : options) {
    d.placements[node] = m.offer.provider_id;
    std::vector<std::pair<std::size_t, ChainPlan>> fresh;
    try {
      for (std::size_t i : affected) release_chain(d.chain_plans[i], fabric_);
      for (std::size_t i : affected) {
        const ChainSpec& spec = *spec_of(d, d.chain_plans[i]);
        fresh.emplace_back(i, compile_chain(scoped(d, spec), chain_placements(d, spec), fabric_,
                                            d.chain_plans[i].epoch + 1));
      }
    } catch (const Error& err) {
      fabric_.restore_state(saved);
      last_error = err.what();
      continue;
    }
    for (auto& [i, p] : fresh) {
      emit("ChainRechained", d.id, "",
           {{"chain", p.chain_id}, {"old_epoch", d.chain_plans[i].epoch}, {"new_epoch", p.epoch}});
      d.chain_plans[i] = std::move(p);
    }
    d.offers[node] = m.offer.offer_id;
    emit("NodeReplaced", d.id, node, {{"from", old_provider}, {"to", m.offer.provider_id}});
    set_node(d, node, NodeState::PENDING);
    return true;
  }
  d.placements[node] = old_provider;
  return fail("no alternative provider could carry the node's chains: " + last_error);
}

std::vector<AgentSession> Provisioner::sessions() const {
  std::vector<AgentSession> out;
  for (const auto& [key, s] : sessions_) out.push_back(s);
  return out;
}

std::size_t Provisioner::live_sessions(std::string_view dep_id) const {
  return static_cast<std::size_t>(std::count_if(sessions_.begin(), sessions_.end(),
                                                [&](const auto& kv) { return kv.first.first == dep_id; }));
}

// --- persistence ------------------------------------------------------------

json to_json(const Deployment& d) {
  json states = json::object();
  for (const auto& [node, s] : d.node_states) states[node] = to_string(s);
  json plans = json::array();
  for (const auto& p : d.chain_plans) plans.push_back(to_json(p));
  return json{{"id", d.id},
              {"owner", d.owner},
              {"blueprint_id", d.blueprint.id},
              {"version", d.blueprint.version},
              {"state", to_string(d.state)},
              {"dep_seq", d.dep_seq},
              {"placements", d.placements},
              {"offers", d.offers},
              {"node_states", states},
              {"ordinals", d.ordinals},
              {"excluded", d.excluded},
              {"chain_plans", plans},
              {"blueprint", to_json(d.blueprint)}};
}

Deployment deployment_from_json(const json& doc) {
  const std::string path = "deployment";
  Deployment d;
  d.id = jsonio::get_string(doc, "id", path);
  d.owner = jsonio::get_string(doc, "owner", path);
  d.blueprint = blueprint_from_json(jsonio::require(doc, "blueprint", path));
  d.state = deployment_state_from(jsonio::get_string(doc, "state", path));
  d.dep_seq = jsonio::get_int(doc, "dep_seq", path);
  d.placements = jsonio::opt_string_map(doc, "placements", path);
  d.offers = jsonio::opt_string_map(doc, "offers", path);
  for (const auto& [node, s] : jsonio::opt_string_map(doc, "node_states", path)) d.node_states[node] = node_state_from(s);
  d.ordinals = jsonio::require(doc, "ordinals", path).get<std::map<std::string, std::size_t>>();
  d.excluded = jsonio::require(doc, "excluded", path).get<std::map<std::string, std::vector<std::string>>>();
  for (const auto& p : jsonio::require(doc, "chain_plans", path)) d.chain_plans.push_back(plan_from_json(p));
  return d;
}

json to_json(const HelloReply& r) {
  return json{{"token", r.token}, {"server", r.server}, {"node_state", to_string(r.node_state)}};
}

json Provisioner::state_json() const {
  json registry = json::array();
  for (const auto& [id, s] : registry_) {
    json entry{{"id", id}, {"latest", to_json(s.latest)}};
    if (s.previous) entry["previous"] = to_json(*s.previous);
    if (s.changes) entry["changes"] = to_json(*s.changes);
    registry.push_back(std::move(entry));
  }
  json deployments = json::array();
  for (const auto& [id, d] : deployments_) deployments.push_back(to_json(d));
  json sessions = json::array();
  for (const auto& [key, s] : sessions_) {
    sessions.push_back({{"deployment", s.deployment_id},
                        {"node", s.node_id},
                        {"provider", s.provider_id},
                        {"last_heartbeat", s.last_heartbeat},
                        {"missed", s.missed}});
  }
  json events = json::array();
  for (const auto& e : events_) events.push_back(to_json(e));
  return json{{"now", now_},
              {"next_deployment", next_dep_},
              {"next_event", next_event_},
              {"registry", registry},
              {"deployments", deployments},
              {"sessions", sessions},
              {"events", events}};
}

void Provisioner::restore_state(const json& state) {
  const std::string path = "provisioner";
  std::map<std::string, Stored> registry;
  for (const auto& entry : jsonio::require(state, "registry", path)) {
    Stored s{std::nullopt, blueprint_from_json(jsonio::require(entry, "latest", path)), std::nullopt};
    if (const json* prev = jsonio::find(entry, "previous")) s.previous = blueprint_from_json(*prev);
    if (const json* cs = jsonio::find(entry, "changes")) s.changes = changeset_from_json(*cs);
    registry.emplace(s.latest.id, std::move(s));
  }
  std::map<std::string, Deployment> deployments;
  for (const auto& doc : jsonio::require(state, "deployments", path)) {
    Deployment d = deployment_from_json(doc);
    deployments.emplace(d.id, std::move(d));
  }
  std::map<std::pair<std::string, std::string>, AgentSession> sessions;
  for (const auto& s : jsonio::require(state, "sessions", path)) {
    AgentSession a;
    a.deployment_id = jsonio::get_string(s, "deployment", path);
    a.node_id = jsonio::get_string(s, "node", path);
    a.provider_id = jsonio::get_string(s, "provider", path);
    a.last_heartbeat = jsonio::get_int(s, "last_heartbeat", path);
    a.missed = static_cast<int>(jsonio::get_int(s, "missed", path));
    sessions[{a.deployment_id, a.node_id}] = std::move(a);
  }
  std::vector<Event> events;
  for (const auto& e : jsonio::require(state, "events", path)) {
    events.push_back({e.at("seq").get<std::uint64_t>(), e.at("tick").get<std::int64_t>(), e.at("type"),
                      e.at("deployment"), e.at("node"), e.at("detail")});
  }
  now_ = jsonio::get_int(state, "now", path);
  next_dep_ = jsonio::get_int(state, "next_deployment", path);
  next_event_ = static_cast<std::uint64_t>(jsonio::get_int(state, "next_event", path));
  registry_ = std::move(registry);
  deployments_ = std::move(deployments);
  sessions_ = std::move(sessions);
  tokens_.clear();
  retired_tokens_.clear();
  events_ = std::move(events);
}

}  // namespace ztpom
