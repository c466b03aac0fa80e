#include "ztpom/agent.hpp"

#include <algorithm>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;

namespace {

std::string_view fail_mode_name(FailMode m) {
  switch (m) {
    case FailMode::none: return "none";
    case FailMode::fail_on_deploy: return "fail_on_deploy";
    case FailMode::silent_after: return "silent_after";
  }
  return "none";
}

std::string error_code(const json& reply) {
  if (reply.is_object() && reply.contains("error") && reply["error"].is_string()) return reply["error"];
  return "";
}

std::string describe(const WireMessage& m) {
  std::string msg = m.method + " " + m.target + " -> " + std::to_string(m.status);
  if (m.reply.is_object() && m.reply.contains("message")) msg += ": " + m.reply["message"].get<std::string>();
  return msg;
}

template <typename T>
json opt(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

template <typename T>
std::optional<T> opt_from(const json& doc, const char* key) {
  if (!doc.contains(key) || doc[key].is_null()) return std::nullopt;
  return doc[key].get<T>();
}

}  // namespace

std::string_view to_string(AgentState s) noexcept {
  switch (s) {
    case AgentState::BOOT: return "BOOT";
    case AgentState::DISCOVERED: return "DISCOVERED";
    case AgentState::FETCHED: return "FETCHED";
    case AgentState::DEPLOYING: return "DEPLOYING";
    case AgentState::READY: return "READY";
    case AgentState::STOPPED: return "STOPPED";
    case AgentState::ERROR: return "ERROR";
  }
  return "?";
}

json to_json(const AgentConfig& c) {
  json out{{"provider_id", c.provider_id},
           {"deploy_delay_ticks", c.deploy_delay_ticks},
           {"fail_mode", fail_mode_name(c.fail_mode)},
           {"heartbeat_every_ticks", c.heartbeat_every_ticks}};
  if (c.fail_mode == FailMode::silent_after) out["silent_after_tick"] = c.silent_after_tick;
  return out;
}

AgentConfig agent_config_from_json(const json& doc, std::string_view path, const AgentConfig& defaults) {
  jsonio::expect_object(doc, path);
  AgentConfig c = defaults;
  c.provider_id = jsonio::opt_string(doc, "provider_id", path).value_or(c.provider_id);
  c.deploy_delay_ticks = jsonio::opt_int(doc, "deploy_delay_ticks", path).value_or(c.deploy_delay_ticks);
  c.heartbeat_every_ticks = jsonio::opt_int(doc, "heartbeat_every_ticks", path).value_or(c.heartbeat_every_ticks);
  if (auto mode = jsonio::opt_string(doc, "fail_mode", path)) {
    if (*mode == "none") {
      c.fail_mode = FailMode::none;
    } else if (*mode == "fail_on_deploy") {
      c.fail_mode = FailMode::fail_on_deploy;
    } else if (*mode == "silent_after") {
      c.fail_mode = FailMode::silent_after;
      c.silent_after_tick = jsonio::get_int(doc, "silent_after_tick", path);
    } else {
      jsonio::fail(jsonio::child(path, "fail_mode"), "expected none, fail_on_deploy or silent_after");
    }
  }
  if (c.deploy_delay_ticks < 0) jsonio::fail(jsonio::child(path, "deploy_delay_ticks"), "must be >= 0");
  if (c.heartbeat_every_ticks < 1) jsonio::fail(jsonio::child(path, "heartbeat_every_ticks"), "must be >= 1");
  return c;
}

// ---------------------------------------------------------------------------

Agent::Agent(AgentConfig cfg, std::string deployment_id, std::string node_id, std::string registry)
    : cfg_(std::move(cfg)), deployment_(std::move(deployment_id)), node_(std::move(node_id)),
      registry_(std::move(registry)) {
  if (cfg_.deploy_delay_ticks < 0) throw Error(Errc::invalid, "deploy_delay_ticks must be >= 0");
  if (cfg_.heartbeat_every_ticks < 1) throw Error(Errc::invalid, "heartbeat_every_ticks must be >= 1");
}

WireMessage Agent::exchange(std::int64_t now, Transport& t, std::string method, std::string target, json body) {
  WireMessage m;
  m.tick = now;
  m.method = std::move(method);
  m.target = std::move(target);
  m.body = std::move(body);
  WireReply reply = t.send(m.method, m.target, m.body);
  m.status = reply.status;
  m.reply = std::move(reply.body);
  return m;
}

bool Agent::lost_token(const WireMessage& m) {
  if (error_code(m.reply) != "invalid-token") return false;
  token_.clear();
  return true;
}

void Agent::fail(const WireMessage& m) {
  state_ = AgentState::ERROR;
  error_ = describe(m);
}

void Agent::apply_directive(const WireMessage& m) {
  if (!m.reply.is_object() || !m.reply.contains("directive")) return;
  const std::string d = m.reply["directive"];
  if (d == "teardown") {
    directive_ = Directive::teardown;
  } else if (d == "redeploy") {
    directive_ = Directive::redeploy;
  } else {
    directive_ = Directive::none;
    return;
  }
  if (state_ != AgentState::ERROR) state_ = AgentState::STOPPED;
}

std::vector<WireMessage> Agent::step(std::int64_t now, Transport& t) {
  if (last_step_ && now < *last_step_) {
    throw Error(Errc::precondition, "agent step time went backwards: " + std::to_string(now));
  }
  last_step_ = now;
  if (state_ == AgentState::STOPPED || state_ == AgentState::ERROR) return {};

  const json hello{{"deployment", deployment_}, {"node", node_}, {"provider", cfg_.provider_id}};

  // A server restart drops session tokens; re-attach before anything else.
  if (token_.empty() && state_ != AgentState::BOOT) {
    WireMessage m = exchange(now, t, "POST", "/agent/hello", hello);
    if (m.status == 200) {
      token_ = m.reply.at("token");
    } else {
      fail(m);
    }
    return {m};
  }

  switch (state_) {
    case AgentState::BOOT: {
      WireMessage m = exchange(now, t, "POST", "/agent/hello", hello);
      if (m.status == 200) {
        token_ = m.reply.at("token");
        state_ = AgentState::DISCOVERED;
        error_.clear();
      } else if (error_code(m.reply) == "wrong-state") {
        error_ = describe(m);  // server not ready for us yet; retry next tick
      } else {
        fail(m);
      }
      return {m};
    }
    case AgentState::DISCOVERED: {
      WireMessage m = exchange(now, t, "GET", "/agent/recipe?token=" + token_, json());
      if (m.status == 200) {
        recipe_ = recipe_from_json(m.reply);
        applied_ = recipe_->steps;
        fetch_tick_ = now;
        ready_at_ = now + std::max<std::int64_t>(1, cfg_.deploy_delay_ticks);
        state_ = AgentState::FETCHED;
      } else if (!lost_token(m)) {
        fail(m);
      }
      return {m};
    }
    case AgentState::FETCHED:
      state_ = AgentState::DEPLOYING;
      [[fallthrough]];
    case AgentState::DEPLOYING: {
      if (now < *ready_at_) return {};
      const bool failing = cfg_.fail_mode == FailMode::fail_on_deploy;
      WireMessage m = exchange(now, t, "POST", "/agent/status",
                               {{"token", token_},
                                {"phase", failing ? "FAILED" : "READY"},
                                {"payload", {{"steps", applied_.size()}}}});
      if (m.status != 200) {
        if (!lost_token(m)) fail(m);
        return {m};
      }
      if (failing) {
        state_ = AgentState::ERROR;
        error_ = "deployment of '" + node_ + "' failed";
      } else {
        state_ = AgentState::READY;
        ready_tick_ = now;
        last_heartbeat_ = now;
        heartbeats_.push_back(now);
      }
      apply_directive(m);
      return {m};
    }
    case AgentState::READY: {
      if (cfg_.fail_mode == FailMode::silent_after && now > cfg_.silent_after_tick) return {};
      if (last_heartbeat_ && now - *last_heartbeat_ < cfg_.heartbeat_every_ticks) return {};
      WireMessage m = exchange(now, t, "POST", "/agent/status",
                               {{"token", token_}, {"phase", "metrics"}, {"payload", {{"tick", now}}}});
      if (m.status != 200) {
        if (!lost_token(m)) fail(m);
        return {m};
      }
      last_heartbeat_ = now;
      heartbeats_.push_back(now);
      apply_directive(m);
      return {m};
    }
    case AgentState::STOPPED:
    case AgentState::ERROR: break;
  }
  return {};
}

json Agent::state_json() const {
  return json{{"config", to_json(cfg_)},
              {"deployment", deployment_},
              {"node", node_},
              {"registry", registry_},
              {"state", to_string(state_)},
              {"error", error_},
              {"recipe", recipe_ ? to_json(*recipe_) : json(nullptr)},
              {"last_step", opt(last_step_)},
              {"fetch_tick", opt(fetch_tick_)},
              {"ready_at", opt(ready_at_)},
              {"ready_tick", opt(ready_tick_)},
              {"last_heartbeat", opt(last_heartbeat_)},
              {"heartbeats", heartbeats_},
              {"directive", directive_ ? json(to_string(*directive_)) : json(nullptr)}};
}

Agent Agent::from_json(const json& doc) {
  Agent a(agent_config_from_json(jsonio::require(doc, "config", "agent"), "agent.config"),
          jsonio::get_string(doc, "deployment", "agent"), jsonio::get_string(doc, "node", "agent"),
          jsonio::get_string(doc, "registry", "agent"));
  const std::string state = jsonio::get_string(doc, "state", "agent");
  bool known = false;
  for (auto s : {AgentState::BOOT, AgentState::DISCOVERED, AgentState::FETCHED, AgentState::DEPLOYING,
                 AgentState::READY, AgentState::STOPPED, AgentState::ERROR}) {
    if (to_string(s) == state) {
      a.state_ = s;
      known = true;
    }
  }
  if (!known) jsonio::fail("agent.state", "unknown agent state '" + state + "'");
  a.error_ = jsonio::opt_string(doc, "error", "agent").value_or("");
  if (doc.contains("recipe") && !doc["recipe"].is_null()) {
    a.recipe_ = recipe_from_json(doc["recipe"]);
    a.applied_ = a.recipe_->steps;
  }
  a.last_step_ = opt_from<std::int64_t>(doc, "last_step");
  a.fetch_tick_ = opt_from<std::int64_t>(doc, "fetch_tick");
  a.ready_at_ = opt_from<std::int64_t>(doc, "ready_at");
  a.ready_tick_ = opt_from<std::int64_t>(doc, "ready_tick");
  a.last_heartbeat_ = opt_from<std::int64_t>(doc, "last_heartbeat");
  a.heartbeats_ = doc.value("heartbeats", std::vector<std::int64_t>{});
  if (auto d = opt_from<std::string>(doc, "directive")) {
    a.directive_ = *d == "teardown" ? Directive::teardown : *d == "redeploy" ? Directive::redeploy : Directive::none;
  }
  return a;
}

// ---------------------------------------------------------------------------

Fleet::Fleet(AgentConfig defaults, std::map<std::string, AgentConfig> per_provider, std::string registry)
    : defaults_(std::move(defaults)), per_provider_(std::move(per_provider)), registry_(std::move(registry)) {}

void Fleet::set_provider_config(const std::string& provider, AgentConfig cfg) {
  per_provider_[provider] = std::move(cfg);
}

void Fleet::set_node_config(const std::string& deployment, const std::string& node, AgentConfig cfg) {
  per_node_[{deployment, node}] = std::move(cfg);
}

void Fleet::observe(const std::vector<Event>& events) {
  for (const auto& e : events) {
    if (e.type != "NodeState" || e.detail.value("to", "") != "PENDING") continue;
    spawn(e.deployment, e.node, e.detail.value("provider", ""));
  }
}

Agent& Fleet::spawn(const std::string& deployment, const std::string& node, const std::string& provider) {
  AgentConfig cfg = defaults_;
  if (auto it = per_provider_.find(provider); it != per_provider_.end()) cfg = it->second;
  if (auto it = per_node_.find({deployment, node}); it != per_node_.end()) {
    cfg = it->second;
    per_node_.erase(it);
  }
  cfg.provider_id = provider;
  agents_.emplace_back(std::move(cfg), deployment, node, registry_);
  return agents_.back();
}

std::vector<WireMessage> Fleet::step(std::int64_t now, Transport& transport) {
  std::vector<WireMessage> out;
  for (auto& a : agents_) {
    auto msgs = a.step(now, transport);
    out.insert(out.end(), std::make_move_iterator(msgs.begin()), std::make_move_iterator(msgs.end()));
  }
  return out;
}

Agent* Fleet::find(std::string_view deployment, std::string_view node) {
  for (auto it = agents_.rbegin(); it != agents_.rend(); ++it) {
    if (it->deployment_id() == deployment && it->node_id() == node) return &*it;
  }
  return nullptr;
}

json Fleet::state_json() const {
  json agents = json::array();
  for (const auto& a : agents_) agents.push_back(a.state_json());
  json per_node = json::array();
  for (const auto& [key, cfg] : per_node_) {
    per_node.push_back({{"deployment", key.first}, {"node", key.second}, {"config", to_json(cfg)}});
  }
  return json{{"agents", agents}, {"per_node", per_node}};
}

void Fleet::restore_state(const json& state) {
  std::vector<Agent> agents;
  for (const auto& a : jsonio::require(state, "agents", "fleet")) agents.push_back(Agent::from_json(a));
  std::map<std::pair<std::string, std::string>, AgentConfig> per_node;
  if (const json* pn = jsonio::find(state, "per_node")) {
    for (const auto& e : *pn) {
      per_node[{e.at("deployment"), e.at("node")}] = agent_config_from_json(e.at("config"), "fleet.per_node");
    }
  }
  agents_ = std::move(agents);
  per_node_ = std::move(per_node);
}

}  // namespace ztpom
