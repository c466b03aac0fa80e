#include "ztpom/blueprint.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using jsonio::child;
using json = nlohmann::json;

const NodeSpec* Blueprint::find_node(std::string_view node_id) const {
  for (const auto& n : nodes) {
    if (n.id == node_id) return &n;
  }
  return nullptr;
}

const ChainSpec* Blueprint::find_chain(std::string_view chain_id) const {
  for (const auto& c : chains) {
    if (c.id == chain_id) return &c;
  }
  return nullptr;
}

std::optional<std::size_t> Blueprint::ordinal(std::string_view node_id) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].id == node_id) return i;
  }
  return std::nullopt;
}

std::string ValidationReport::summary() const {
  std::string out;
  for (const auto& f : findings) {
    if (!out.empty()) out += "; ";
    out += f.path + ": " + f.message;
  }
  return out;
}

double ProviderProfile::fn_delay(std::string_view service_type) const {
  auto it = fn_delay_ms.find(std::string(service_type));
  if (it != fn_delay_ms.end()) return it->second;
  auto fallback = fn_delay_ms.find("*");
  return fallback == fn_delay_ms.end() ? 0.0 : fallback->second;
}

// ---------------------------------------------------------------------------
// placeholders

namespace {

bool is_identifier(std::string_view key) {
  if (key.empty()) return false;
  const unsigned char first = static_cast<unsigned char>(key.front());
  if (!(std::isalpha(first) || first == '_')) return false;
  return std::all_of(key.begin(), key.end(), [](char ch) {
    const unsigned char c = static_cast<unsigned char>(ch);
    return std::isalnum(c) || c == '_' || c == '.' || c == '-';
  });
}

// Returns the problem with the first malformed placeholder, if any.
std::optional<std::string> placeholder_problem(std::string_view text) {
  std::size_t pos = 0;
  while ((pos = text.find("${", pos)) != std::string_view::npos) {
    const std::size_t close = text.find('}', pos + 2);
    if (close == std::string_view::npos) return "unterminated placeholder";
    const std::string_view key = text.substr(pos + 2, close - pos - 2);
    if (!is_identifier(key)) return "placeholder key '" + std::string(key) + "' is not an identifier";
    pos = close + 1;
  }
  return std::nullopt;
}

std::string resolve_impl(std::string_view text, const std::map<std::string, std::string>& bindings,
                         std::vector<std::string>& stack) {
  std::string out;
  std::size_t pos = 0;
  while (true) {
    const std::size_t open = text.find("${", pos);
    if (open == std::string_view::npos) {
      out.append(text.substr(pos));
      return out;
    }
    out.append(text.substr(pos, open - pos));
    const std::size_t close = text.find('}', open + 2);
    if (close == std::string_view::npos) {
      throw Error(Errc::unresolved_placeholder, "unterminated placeholder in '" + std::string(text) + "'");
    }
    const std::string key(text.substr(open + 2, close - open - 2));
    auto it = bindings.find(key);
    if (it == bindings.end()) {
      throw Error(Errc::unresolved_placeholder, "unresolved placeholder '${" + key + "}'");
    }
    if (std::find(stack.begin(), stack.end(), key) != stack.end()) {
      throw Error(Errc::unresolved_placeholder, "cyclic placeholder '${" + key + "}'");
    }
    stack.push_back(key);
    out += resolve_impl(it->second, bindings, stack);
    stack.pop_back();
    pos = close + 1;
  }
}

}  // namespace

std::string resolve_placeholders(std::string_view text,
                                 const std::map<std::string, std::string>& bindings) {
  std::vector<std::string> stack;
  return resolve_impl(text, bindings, stack);
}

// ---------------------------------------------------------------------------
// validation

ValidationReport validate(const Blueprint& bp) {
  ValidationReport report;
  auto add = [&](std::string path, std::string message) {
    report.findings.push_back({std::move(path), std::move(message)});
  };

  if (bp.id.empty()) add("id", "must be non-empty");
  if (bp.version < 1) add("version", "must be >= 1");

  std::set<std::string> node_ids;
  for (std::size_t i = 0; i < bp.nodes.size(); ++i) {
    const NodeSpec& n = bp.nodes[i];
    const std::string path = child("nodes", i);
    if (n.id.empty()) {
      add(child(path, "id"), "must be non-empty");
    } else if (!node_ids.insert(n.id).second) {
      add(child(path, "id"), "duplicate node id '" + n.id + "'");
    }
    if (n.service_type.empty()) add(child(path, "service_type"), "must be non-empty");
    if (n.image_ref.empty()) add(child(path, "image_ref"), "must be non-empty");
    if (n.vcpu < 1) add(child(path, "vcpu"), "must be >= 1");
    if (!(n.mem_gb > 0) || !std::isfinite(n.mem_gb)) add(child(path, "mem_gb"), "must be > 0");
    for (const auto& [key, value] : n.params) {
      if (auto problem = placeholder_problem(value)) {
        add(child(child(path, "params"), key), *problem);
      }
    }
  }

  std::set<std::string> chain_ids;
  for (std::size_t i = 0; i < bp.chains.size(); ++i) {
    const ChainSpec& c = bp.chains[i];
    const std::string path = child("chains", i);
    if (c.id.empty()) {
      add(child(path, "id"), "must be non-empty");
    } else if (!chain_ids.insert(c.id).second) {
      add(child(path, "id"), "duplicate chain id '" + c.id + "'");
    }
    if (c.source.domain.empty()) add(child(path, "source.domain"), "must be non-empty");
    if (c.sink.domain.empty()) add(child(path, "sink.domain"), "must be non-empty");
    const std::string fpath = child(path, "functions");
    if (c.functions.empty()) add(fpath, "must list at least one function");
    std::set<std::string> seen;
    bool duplicate = false;
    for (std::size_t j = 0; j < c.functions.size(); ++j) {
      const std::string& f = c.functions[j];
      if (!seen.insert(f).second) duplicate = true;
      if (node_ids.count(f) == 0 && bp.find_node(f) == nullptr) {
        add(child(fpath, j), "unknown node '" + f + "'");
      }
    }
    if (duplicate) add(fpath, "duplicate function entry");
    const std::string qpath = child(path, "qos");
    auto bound_ok = [](const std::optional<double>& b) {
      return !b || (std::isfinite(*b) && *b >= 0);
    };
    if (!bound_ok(c.qos.max_latency_ms)) add(child(qpath, "max_latency_ms"), "must be >= 0");
    if (!bound_ok(c.qos.max_jitter_ms)) add(child(qpath, "max_jitter_ms"), "must be >= 0");
    if (!(c.qos.min_bandwidth_mbps > 0) || !std::isfinite(c.qos.min_bandwidth_mbps)) {
      add(child(qpath, "min_bandwidth_mbps"), "must be > 0");
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

Endpoint endpoint_from_json(const json& obj, const std::string& path) {
  jsonio::expect_object(obj, path);
  Endpoint ep;
  ep.domain = jsonio::get_string(obj, "domain", path);
  const std::string mac = jsonio::get_string(obj, "mac", path);
  if (!MacAddress::valid(mac)) jsonio::fail(child(path, "mac"), "malformed MAC '" + mac + "'");
  ep.mac = MacAddress::parse(mac);
  return ep;
}

json to_json(const Endpoint& ep) { return json{{"domain", ep.domain}, {"mac", ep.mac.str()}}; }

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

NodeSpec node_from_json(const json& obj, const std::string& path) {
  jsonio::expect_object(obj, path);
  NodeSpec n;
  n.id = jsonio::get_string(obj, "id", path);
  n.service_type = jsonio::get_string(obj, "service_type", path);
  n.image_ref = jsonio::get_string(obj, "image_ref", path);
  n.vcpu = static_cast<int>(jsonio::get_int(obj, "vcpu", path));
  n.mem_gb = jsonio::get_number(obj, "mem_gb", path);
  n.params = jsonio::opt_string_map(obj, "params", path);
  if (const json* p = jsonio::find(obj, "placement")) {
    const std::string ppath = child(path, "placement");
    jsonio::expect_object(*p, ppath);
    n.placement.regions = jsonio::opt_string_list(*p, "regions", ppath);
    n.placement.providers = jsonio::opt_string_list(*p, "providers", ppath);
  }
  return n;
}

json to_json(const NodeSpec& n) {
  return json{{"id", n.id},
              {"service_type", n.service_type},
              {"image_ref", n.image_ref},
              {"vcpu", n.vcpu},
              {"mem_gb", n.mem_gb},
              {"params", n.params},
              {"placement", {{"regions", n.placement.regions}, {"providers", n.placement.providers}}}};
}

std::array<std::uint8_t, 4> parse_mac_prefix(const std::string& text, const std::string& path) {
  if (!MacAddress::valid(text + ":00:00")) jsonio::fail(path, "malformed 4-byte MAC prefix '" + text + "'");
  const auto full = MacAddress::parse(text + ":00:00").bytes();
  return {full[0], full[1], full[2], full[3]};
}

std::string format_mac_prefix(const std::array<std::uint8_t, 4>& p) {
  char buf[12];
  std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x", p[0], p[1], p[2], p[3]);
  return buf;
}

struct Cidr {
  std::uint32_t network = 0;
  int prefix = 0;
};

std::optional<Cidr> parse_cidr(std::string_view text) {
  unsigned a, b, c, d;
  int prefix;
  char tail;
  const std::string s(text);
  if (std::sscanf(s.c_str(), "%u.%u.%u.%u/%d%c", &a, &b, &c, &d, &prefix, &tail) != 5) return std::nullopt;
  if (a > 255 || b > 255 || c > 255 || d > 255 || prefix < 0 || prefix > 30) return std::nullopt;
  const std::uint32_t addr = (a << 24) | (b << 16) | (c << 8) | d;
  const std::uint32_t mask = prefix == 0 ? 0 : ~std::uint32_t{0} << (32 - prefix);
  return Cidr{addr & mask, prefix};
}

}  // namespace

json to_json(const QoSDemand& qos) {
  return json{{"max_latency_ms", optional_number(qos.max_latency_ms)},
              {"max_jitter_ms", optional_number(qos.max_jitter_ms)},
              {"min_bandwidth_mbps", qos.min_bandwidth_mbps}};
}

QoSDemand qos_from_json(const json& obj, std::string_view path) {
  jsonio::expect_object(obj, path);
  QoSDemand q;
  q.max_latency_ms = jsonio::opt_number(obj, "max_latency_ms", path);
  q.max_jitter_ms = jsonio::opt_number(obj, "max_jitter_ms", path);
  q.min_bandwidth_mbps = jsonio::get_number(obj, "min_bandwidth_mbps", path);
  return q;
}

json to_json(const ChainSpec& c) {
  return json{{"id", c.id},
              {"source", to_json(c.source)},
              {"functions", c.functions},
              {"sink", to_json(c.sink)},
              {"qos", to_json(c.qos)}};
}

ChainSpec chain_from_json(const json& obj, std::string_view path_view) {
  const std::string path(path_view);
  jsonio::expect_object(obj, path);
  ChainSpec c;
  c.id = jsonio::get_string(obj, "id", path);
  c.source = endpoint_from_json(jsonio::require(obj, "source", path), child(path, "source"));
  c.functions = jsonio::get_string_list(obj, "functions", path);
  c.sink = endpoint_from_json(jsonio::require(obj, "sink", path), child(path, "sink"));
  c.qos = qos_from_json(jsonio::require(obj, "qos", path), child(path, "qos"));
  return c;
}

Blueprint blueprint_from_json(const json& doc) {
  jsonio::expect_object(doc, "");
  Blueprint bp;
  bp.id = jsonio::get_string(doc, "id", "");
  bp.name = jsonio::opt_string(doc, "name", "").value_or("");
  bp.version = jsonio::get_int(doc, "version", "");
  const json& nodes = jsonio::expect_array(jsonio::require(doc, "nodes", ""), "nodes");
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    bp.nodes.push_back(node_from_json(nodes[i], child("nodes", i)));
  }
  if (const json* chains = jsonio::find(doc, "chains")) {
    jsonio::expect_array(*chains, "chains");
    for (std::size_t i = 0; i < chains->size(); ++i) {
      bp.chains.push_back(chain_from_json((*chains)[i], child("chains", i)));
    }
  }
  return bp;
}

Blueprint parse_blueprint(std::string_view doc) {
  Blueprint bp = blueprint_from_json(jsonio::parse_document(doc));
  const ValidationReport report = validate(bp);
  if (!report.ok()) throw Error(Errc::invalid, report.summary());
  return bp;
}

json to_json(const Blueprint& bp) {
  json nodes = json::array();
  for (const auto& n : bp.nodes) nodes.push_back(to_json(n));
  json chains = json::array();
  for (const auto& c : bp.chains) chains.push_back(to_json(c));
  return json{{"id", bp.id}, {"name", bp.name}, {"version", bp.version}, {"nodes", nodes}, {"chains", chains}};
}

std::string serialize_blueprint(const Blueprint& bp) { return to_json(bp).dump(2); }

ProviderProfile profile_from_json(const json& obj, std::string_view path_view) {
  const std::string path(path_view);
  jsonio::expect_object(obj, path);
  ProviderProfile p;
  p.provider_id = jsonio::get_string(obj, "provider_id", path);
  p.domain_id = jsonio::get_string(obj, "domain_id", path);
  p.image_map = jsonio::opt_string_map(obj, "image_map", path);
  for (const auto& [ref, image] : p.image_map) {
    if (image.empty()) jsonio::fail(child(child(path, "image_map"), ref), "must be non-empty");
  }
  p.address_block = jsonio::get_string(obj, "address_block", path);
  if (!parse_cidr(p.address_block)) jsonio::fail(child(path, "address_block"), "malformed IPv4 block");
  p.mac_prefix = parse_mac_prefix(jsonio::get_string(obj, "mac_prefix", path), child(path, "mac_prefix"));
  if (const json* delays = jsonio::find(obj, "fn_delay_ms")) {
    const std::string dpath = child(path, "fn_delay_ms");
    jsonio::expect_object(*delays, dpath);
    for (auto it = delays->begin(); it != delays->end(); ++it) {
      if (!it->is_number() || it->get<double>() < 0) jsonio::fail(child(dpath, it.key()), "must be a number >= 0");
      p.fn_delay_ms[it.key()] = it->get<double>();
    }
  }
  if (const json* cap = jsonio::find(obj, "capacity")) {
    const std::string cpath = child(path, "capacity");
    p.capacity.vcpu = static_cast<int>(jsonio::get_int(*cap, "vcpu", cpath));
    p.capacity.mem_gb = jsonio::get_number(*cap, "mem_gb", cpath);
    if (p.capacity.vcpu < 0 || p.capacity.mem_gb < 0) jsonio::fail(cpath, "must be nonnegative");
  }
  p.params = jsonio::opt_string_map(obj, "params", path);
  return p;
}

json to_json(const ProviderProfile& p) {
  return json{{"provider_id", p.provider_id},
              {"domain_id", p.domain_id},
              {"image_map", p.image_map},
              {"address_block", p.address_block},
              {"mac_prefix", format_mac_prefix(p.mac_prefix)},
              {"fn_delay_ms", p.fn_delay_ms},
              {"capacity", {{"vcpu", p.capacity.vcpu}, {"mem_gb", p.capacity.mem_gb}}},
              {"params", p.params}};
}

json to_json(const NodeRecipe& r) {
  return json{{"node_id", r.node_id},
              {"provider_id", r.provider_id},
              {"concrete_image", r.concrete_image},
              {"assigned_mac", r.assigned_mac.str()},
              {"assigned_addr", r.assigned_addr},
              {"resolved_params", r.resolved_params},
              {"steps", r.steps}};
}

NodeRecipe recipe_from_json(const json& obj) {
  NodeRecipe r;
  r.node_id = jsonio::get_string(obj, "node_id", "");
  r.provider_id = jsonio::get_string(obj, "provider_id", "");
  r.concrete_image = jsonio::get_string(obj, "concrete_image", "");
  r.assigned_mac = MacAddress::parse(jsonio::get_string(obj, "assigned_mac", ""));
  r.assigned_addr = jsonio::get_string(obj, "assigned_addr", "");
  r.resolved_params = jsonio::opt_string_map(obj, "resolved_params", "");
  r.steps = jsonio::opt_string_list(obj, "steps", "");
  return r;
}

json to_json(const ChangeSet& cs) {
  json added = json::array();
  for (const auto& n : cs.added) added.push_back(to_json(n));
  json modified = json::array();
  for (const auto& n : cs.modified) modified.push_back(to_json(n));
  json chains = json::array();
  for (const auto& c : cs.chain_updates) chains.push_back(to_json(c));
  return json{{"blueprint_id", cs.blueprint_id}, {"from_version", cs.from_version},
              {"to_version", cs.to_version},     {"name", cs.name},
              {"added", added},                  {"removed", cs.removed},
              {"modified", modified},            {"chain_updates", chains},
              {"removed_chains", cs.removed_chains}, {"node_order", cs.node_order},
              {"chain_order", cs.chain_order}};
}

ChangeSet changeset_from_json(const json& obj) {
  ChangeSet cs;
  cs.blueprint_id = jsonio::get_string(obj, "blueprint_id", "");
  cs.from_version = jsonio::get_int(obj, "from_version", "");
  cs.to_version = jsonio::get_int(obj, "to_version", "");
  cs.name = jsonio::opt_string(obj, "name", "").value_or("");
  const auto nodes = [&](const char* key) {
    std::vector<NodeSpec> out;
    if (const json* arr = jsonio::find(obj, key)) {
      for (std::size_t i = 0; i < arr->size(); ++i) out.push_back(node_from_json((*arr)[i], child(key, i)));
    }
    return out;
  };
  cs.added = nodes("added");
  cs.modified = nodes("modified");
  cs.removed = jsonio::opt_string_list(obj, "removed", "");
  if (const json* arr = jsonio::find(obj, "chain_updates")) {
    for (std::size_t i = 0; i < arr->size(); ++i) {
      cs.chain_updates.push_back(chain_from_json((*arr)[i], child("chain_updates", i)));
    }
  }
  cs.removed_chains = jsonio::opt_string_list(obj, "removed_chains", "");
  cs.node_order = jsonio::opt_string_list(obj, "node_order", "");
  cs.chain_order = jsonio::opt_string_list(obj, "chain_order", "");
  return cs;
}

// ---------------------------------------------------------------------------
// recipe adaptation

MacAddress assign_mac(const std::array<std::uint8_t, 4>& prefix, std::int64_t dep_seq,
                      std::size_t ordinal) {
  if (ordinal > 0xff) {
    throw Error(Errc::invalid, "node ordinal " + std::to_string(ordinal) + " exceeds MAC encoding range");
  }
  return MacAddress(MacAddress::Bytes{prefix[0], prefix[1], prefix[2], prefix[3],
                                      static_cast<std::uint8_t>(dep_seq & 0xff),
                                      static_cast<std::uint8_t>(ordinal)});
}

std::string assign_address(std::string_view block, std::int64_t dep_seq, std::size_t ordinal) {
  const auto cidr = parse_cidr(block);
  if (!cidr) throw Error(Errc::invalid, "malformed address block '" + std::string(block) + "'");
  const std::uint64_t hosts = (std::uint64_t{1} << (32 - cidr->prefix)) - 2;
  const std::uint64_t slot =
      (static_cast<std::uint64_t>(dep_seq) * 256 + static_cast<std::uint64_t>(ordinal)) % hosts;
  const std::uint32_t addr = cidr->network + 1 + static_cast<std::uint32_t>(slot);
  return std::to_string(addr >> 24) + "." + std::to_string((addr >> 16) & 0xff) + "." +
         std::to_string((addr >> 8) & 0xff) + "." + std::to_string(addr & 0xff);
}

NodeRecipe adapt_recipe(const Blueprint& bp, std::string_view node_id,
                        const ProviderProfile& profile, std::int64_t dep_seq) {
  const auto ordinal = bp.ordinal(node_id);
  if (!ordinal) throw Error(Errc::not_found, "unknown node '" + std::string(node_id) + "'");
  return adapt_recipe(bp, node_id, profile, dep_seq, *ordinal);
}

NodeRecipe adapt_recipe(const Blueprint& bp, std::string_view node_id,
                        const ProviderProfile& profile, std::int64_t dep_seq,
                        std::size_t ordinal) {
  const NodeSpec* node = bp.find_node(node_id);
  if (node == nullptr) throw Error(Errc::not_found, "unknown node '" + std::string(node_id) + "'");

  auto image = profile.image_map.find(node->image_ref);
  if (image == profile.image_map.end()) {
    throw Error(Errc::unknown_image, "image_ref '" + node->image_ref + "' not offered by provider '" +
                                         profile.provider_id + "'");
  }
  if (node->vcpu > profile.capacity.vcpu || node->mem_gb > profile.capacity.mem_gb) {
    throw Error(Errc::capacity_exceeded, "node '" + node->id + "' needs " + std::to_string(node->vcpu) +
                                             " vcpu; provider '" + profile.provider_id +
                                             "' has capacity " + std::to_string(profile.capacity.vcpu));
  }

  NodeRecipe recipe;
  recipe.node_id = node->id;
  recipe.provider_id = profile.provider_id;
  recipe.concrete_image = image->second;
  recipe.assigned_mac = assign_mac(profile.mac_prefix, dep_seq, ordinal);
  recipe.assigned_addr = assign_address(profile.address_block, dep_seq, ordinal);

  // Built-in keys win over params of the same name, so "${addr}" in a param
  // called "addr" means the assigned address rather than itself.
  const std::map<std::string, std::string> builtins{
      {"node_id", node->id},
      {"service_type", node->service_type},
      {"provider_id", profile.provider_id},
      {"domain_id", profile.domain_id},
      {"image", recipe.concrete_image},
      {"mac", recipe.assigned_mac.str()},
      {"addr", recipe.assigned_addr},
      {"dep_seq", std::to_string(dep_seq)},
      {"version", std::to_string(bp.version)},
  };
  std::map<std::string, std::string> merged = profile.params;
  for (const auto& [k, v] : node->params) merged[k] = v;
  std::map<std::string, std::string> bindings = merged;
  for (const auto& [k, v] : builtins) bindings[k] = v;

  for (const auto& [k, v] : merged) recipe.resolved_params[k] = resolve_placeholders(v, bindings);

  recipe.steps.push_back("pull-image " + recipe.concrete_image);
  recipe.steps.push_back("configure-interface mac=" + recipe.assigned_mac.str() +
                         " addr=" + recipe.assigned_addr);
  for (const auto& [k, v] : recipe.resolved_params) recipe.steps.push_back("set-param " + k + "=" + v);
  recipe.steps.push_back("start-service " + node->service_type);

  auto leftover = [](const std::string& s) { return s.find("${") != std::string::npos; };
  bool dirty = leftover(recipe.node_id) || leftover(recipe.concrete_image);
  for (const auto& s : recipe.steps) dirty = dirty || leftover(s);
  if (dirty) throw Error(Errc::unresolved_placeholder, "placeholder left in recipe for '" + node->id + "'");
  return recipe;
}

// ---------------------------------------------------------------------------
// diff / apply

ChangeSet diff_blueprints(const Blueprint& old_bp, const Blueprint& new_bp) {
  if (old_bp.id != new_bp.id) {
    throw Error(Errc::invalid, "blueprint id mismatch: '" + old_bp.id + "' vs '" + new_bp.id + "'");
  }
  if (new_bp.version <= old_bp.version) {
    throw Error(Errc::precondition, "version must increase: " + std::to_string(old_bp.version) +
                                        " -> " + std::to_string(new_bp.version));
  }
  ChangeSet cs;
  cs.blueprint_id = new_bp.id;
  cs.from_version = old_bp.version;
  cs.to_version = new_bp.version;
  cs.name = new_bp.name;
  for (const auto& n : new_bp.nodes) {
    cs.node_order.push_back(n.id);
    const NodeSpec* before = old_bp.find_node(n.id);
    if (before == nullptr) {
      cs.added.push_back(n);
    } else if (!(*before == n)) {
      cs.modified.push_back(n);
    }
  }
  for (const auto& n : old_bp.nodes) {
    if (new_bp.find_node(n.id) == nullptr) cs.removed.push_back(n.id);
  }
  for (const auto& c : new_bp.chains) {
    cs.chain_order.push_back(c.id);
    const ChainSpec* before = old_bp.find_chain(c.id);
    if (before == nullptr || !(*before == c)) cs.chain_updates.push_back(c);
  }
  for (const auto& c : old_bp.chains) {
    if (new_bp.find_chain(c.id) == nullptr) cs.removed_chains.push_back(c.id);
  }
  return cs;
}

Blueprint apply_changes(const Blueprint& base, const ChangeSet& cs) {
  if (base.id != cs.blueprint_id) throw Error(Errc::invalid, "change set targets '" + cs.blueprint_id + "'");
  if (base.version != cs.from_version) {
    throw Error(Errc::precondition, "change set expects version " + std::to_string(cs.from_version));
  }
  std::map<std::string, NodeSpec> nodes;
  for (const auto& n : base.nodes) nodes[n.id] = n;
  for (const auto& id : cs.removed) nodes.erase(id);
  for (const auto& n : cs.modified) nodes[n.id] = n;
  for (const auto& n : cs.added) nodes[n.id] = n;

  std::map<std::string, ChainSpec> chains;
  for (const auto& c : base.chains) chains[c.id] = c;
  for (const auto& id : cs.removed_chains) chains.erase(id);
  for (const auto& c : cs.chain_updates) chains[c.id] = c;

  Blueprint out;
  out.id = base.id;
  out.name = cs.name;
  out.version = cs.to_version;
  for (const auto& id : cs.node_order) {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error(Errc::invalid, "change set orders unknown node '" + id + "'");
    out.nodes.push_back(it->second);
  }
  for (const auto& id : cs.chain_order) {
    auto it = chains.find(id);
    if (it == chains.end()) throw Error(Errc::invalid, "change set orders unknown chain '" + id + "'");
    out.chains.push_back(it->second);
  }
  if (out.nodes.size() != nodes.size() || out.chains.size() != chains.size()) {
    throw Error(Errc::invalid, "change set ordering does not cover every surviving entry");
  }
  return out;
}

}  // namespace ztpom
