#include "ztpom/fabric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <queue>

#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;
using jsonio::child;

std::string_view to_string(DomainKind kind) noexcept {
  switch (kind) {
    case DomainKind::csp: return "csp";
    case DomainKind::nren: return "nren";
    case DomainKind::campus: return "campus";
    case DomainKind::ocx: return "ocx";
  }
  return "csp";
}

DomainKind domain_kind_from_string(std::string_view text) {
  if (text == "csp") return DomainKind::csp;
  if (text == "nren") return DomainKind::nren;
  if (text == "campus") return DomainKind::campus;
  if (text == "ocx") return DomainKind::ocx;
  throw Error(Errc::invalid, "unknown domain kind '" + std::string(text) + "'");
}

std::string_view to_string(Binding binding) noexcept {
  switch (binding) {
    case Binding::unreachable: return "unreachable";
    case Binding::latency: return "latency";
    case Binding::jitter: return "jitter";
    case Binding::bandwidth: return "bandwidth";
  }
  return "unreachable";
}

FabricTopology::FabricTopology(std::vector<Domain> domains, std::vector<LinkSpec> links)
    : domains_(std::move(domains)), links_(std::move(links)) {
  std::sort(domains_.begin(), domains_.end(), [](const Domain& a, const Domain& b) { return a.id < b.id; });
  std::sort(links_.begin(), links_.end(), [](const LinkSpec& a, const LinkSpec& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < domains_.size(); ++i) {
    if (domains_[i].id.empty()) throw Error(Errc::invalid, "domain id must be non-empty");
    if (!domain_index_.emplace(domains_[i].id, i).second) {
      throw Error(Errc::invalid, "duplicate domain id '" + domains_[i].id + "'");
    }
  }
  adjacency_.assign(domains_.size(), {});
  for (std::size_t i = 0; i < links_.size(); ++i) {
    const LinkSpec& l = links_[i];
    if (l.id.empty()) throw Error(Errc::invalid, "link id must be non-empty");
    if (!link_index_.emplace(l.id, i).second) throw Error(Errc::invalid, "duplicate link id '" + l.id + "'");
    for (const auto& ep : l.endpoints) {
      if (domain_index_.find(ep) == domain_index_.end()) {
        throw Error(Errc::invalid, "link '" + l.id + "': dangling endpoint '" + ep + "'");
      }
    }
    if (l.endpoints[0] == l.endpoints[1]) {
      throw Error(Errc::invalid, "link '" + l.id + "': endpoints must be distinct");
    }
    if (!(l.latency_ms >= 0) || !(l.jitter_ms >= 0) || !std::isfinite(l.latency_ms) ||
        !std::isfinite(l.jitter_ms)) {
      throw Error(Errc::invalid, "link '" + l.id + "': latency and jitter must be >= 0");
    }
    if (!(l.capacity_mbps > 0) || !std::isfinite(l.capacity_mbps)) {
      throw Error(Errc::invalid, "link '" + l.id + "': capacity must be > 0");
    }
    if (l.vlan_pool.lo < 2 || l.vlan_pool.hi > 4094 || l.vlan_pool.lo > l.vlan_pool.hi) {
      throw Error(Errc::invalid, "link '" + l.id + "': invalid vlan_pool [" + std::to_string(l.vlan_pool.lo) +
                                     "," + std::to_string(l.vlan_pool.hi) + "]");
    }
    adjacency_[domain_index_.at(l.endpoints[0])].push_back(i);
    adjacency_[domain_index_.at(l.endpoints[1])].push_back(i);
  }
}

FabricTopology FabricTopology::load(std::string_view doc) { return from_json(jsonio::parse_document(doc)); }

FabricTopology FabricTopology::from_json(const json& doc) {
  jsonio::expect_object(doc, "");
  std::vector<Domain> domains;
  const json& ds = jsonio::expect_array(jsonio::require(doc, "domains", ""), "domains");
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string path = child("domains", i);
    Domain d;
    d.id = jsonio::get_string(ds[i], "id", path);
    d.kind = domain_kind_from_string(jsonio::opt_string(ds[i], "kind", path).value_or("csp"));
    d.providers = jsonio::opt_string_list(ds[i], "providers", path);
    domains.push_back(std::move(d));
  }
  std::vector<LinkSpec> links;
  if (const json* ls = jsonio::find(doc, "links")) {
    jsonio::expect_array(*ls, "links");
    for (std::size_t i = 0; i < ls->size(); ++i) {
      const json& lj = (*ls)[i];
      const std::string path = child("links", i);
      LinkSpec l;
      l.id = jsonio::get_string(lj, "id", path);
      const auto eps = jsonio::get_string_list(lj, "endpoints", path);
      if (eps.size() != 2) jsonio::fail(child(path, "endpoints"), "expected exactly two domain ids");
      l.endpoints = {eps[0], eps[1]};
      l.latency_ms = jsonio::get_number(lj, "latency_ms", path);
      l.jitter_ms = jsonio::opt_number(lj, "jitter_ms", path).value_or(0.0);
      l.capacity_mbps = jsonio::get_number(lj, "capacity_mbps", path);
      if (const json* pool = jsonio::find(lj, "vlan_pool")) {
        if (!pool->is_array() || pool->size() != 2 || !(*pool)[0].is_number_integer() ||
            !(*pool)[1].is_number_integer()) {
          jsonio::fail(child(path, "vlan_pool"), "expected [lo, hi] integers");
        }
        l.vlan_pool = {(*pool)[0].get<int>(), (*pool)[1].get<int>()};
      }
      links.push_back(std::move(l));
    }
  }
  return FabricTopology(std::move(domains), std::move(links));
}

json FabricTopology::to_json() const {
  json ds = json::array();
  for (const auto& d : domains_) {
    ds.push_back({{"id", d.id}, {"kind", std::string(ztpom::to_string(d.kind))}, {"providers", d.providers}});
  }
  json ls = json::array();
  for (const auto& l : links_) {
    ls.push_back({{"id", l.id},
                  {"endpoints", {l.endpoints[0], l.endpoints[1]}},
                  {"latency_ms", l.latency_ms},
                  {"jitter_ms", l.jitter_ms},
                  {"capacity_mbps", l.capacity_mbps},
                  {"vlan_pool", {l.vlan_pool.lo, l.vlan_pool.hi}}});
  }
  return json{{"domains", ds}, {"links", ls}};
}

const Domain* FabricTopology::find_domain(std::string_view id) const {
  auto it = domain_index_.find(id);
  return it == domain_index_.end() ? nullptr : &domains_[it->second];
}

const LinkSpec* FabricTopology::find_link(std::string_view id) const {
  auto it = link_index_.find(id);
  return it == link_index_.end() ? nullptr : &links_[it->second];
}

const LinkSpec& FabricTopology::link(std::string_view id) const {
  const LinkSpec* l = find_link(id);
  if (l == nullptr) throw Error(Errc::not_found, "unknown link '" + std::string(id) + "'");
  return *l;
}

std::size_t FabricTopology::domain_index(std::string_view id) const {
  auto it = domain_index_.find(id);
  if (it == domain_index_.end()) throw Error(Errc::not_found, "unknown domain '" + std::string(id) + "'");
  return it->second;
}

std::optional<std::string> FabricTopology::domain_of_provider(std::string_view provider_id) const {
  for (const auto& d : domains_) {
    if (std::find(d.providers.begin(), d.providers.end(), provider_id) != d.providers.end()) return d.id;
  }
  return std::nullopt;
}

double FabricTopology::committed(std::string_view link_id) const {
  auto it = link_commitments_.find(link_id);
  if (it == link_commitments_.end()) return 0.0;
  double sum = 0.0;
  for (const auto& [id, bw] : it->second) sum += bw;
  return sum;
}

double FabricTopology::residual(std::string_view link_id) const {
  return link(link_id).capacity_mbps - committed(link_id);
}

// ---------------------------------------------------------------------------
// path search

namespace {

struct Label {
  double latency = 0;
  double jitter = 0;
  std::vector<std::size_t> nodes;  // domain indices (sorted-id order)
  std::vector<std::size_t> links;  // link indices (sorted-id order)
  std::vector<bool> visited;

  std::size_t hops() const { return links.size(); }
};

// Strict weak order on (latency, hops, domain sequence, link sequence).
bool key_less(const Label& a, const Label& b) {
  if (a.latency != b.latency) return a.latency < b.latency;
  if (a.hops() != b.hops()) return a.hops() < b.hops();
  if (a.nodes != b.nodes) return a.nodes < b.nodes;
  return a.links < b.links;
}

bool subset(const std::vector<bool>& a, const std::vector<bool>& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && !b[i]) return false;
  }
  return true;
}

// Any completion of `later` is also a completion of `earlier` that is no
// worse under the objective and tie-breaks.
bool dominates(const Label& earlier, const Label& later) {
  if (earlier.latency > later.latency || earlier.jitter > later.jitter) return false;
  if (!subset(earlier.visited, later.visited)) return false;
  if (earlier.hops() < later.hops()) return true;
  if (earlier.hops() > later.hops()) return false;
  if (earlier.nodes != later.nodes) return earlier.nodes < later.nodes;
  return earlier.links <= later.links;
}

}  // namespace

Path FabricTopology::compute_path(std::string_view src, std::string_view dst, const QoSDemand& qos) const {
  if (src == dst) {
    throw Error(Errc::precondition, "path endpoints must differ (both '" + std::string(src) + "')");
  }
  const std::size_t s = domain_index(src);
  const std::size_t d = domain_index(dst);

  struct Bounds {
    std::optional<double> latency;
    std::optional<double> jitter;
    double bandwidth = 0;
  };

  auto search = [&](const Bounds& bounds) -> std::optional<Label> {
    auto cmp = [](const std::shared_ptr<Label>& a, const std::shared_ptr<Label>& b) { return key_less(*b, *a); };
    std::priority_queue<std::shared_ptr<Label>, std::vector<std::shared_ptr<Label>>, decltype(cmp)> open(cmp);
    std::vector<std::vector<std::shared_ptr<Label>>> settled(domains_.size());

    auto start = std::make_shared<Label>();
    start->nodes = {s};
    start->visited.assign(domains_.size(), false);
    start->visited[s] = true;
    open.push(start);

    while (!open.empty()) {
      auto label = open.top();
      open.pop();
      const std::size_t at = label->nodes.back();
      bool dominated = false;
      for (const auto& prior : settled[at]) {
        if (dominates(*prior, *label)) {
          dominated = true;
          break;
        }
      }
      if (dominated) continue;
      if (at == d) return *label;
      settled[at].push_back(label);

      for (std::size_t li : adjacency_[at]) {
        const LinkSpec& l = links_[li];
        const std::size_t next = domain_index_.find(l.other(domains_[at].id))->second;
        if (label->visited[next]) continue;
        if (bounds.bandwidth > 0 && residual(l.id) < bounds.bandwidth) continue;
        auto ext = std::make_shared<Label>(*label);
        ext->latency += l.latency_ms;
        ext->jitter += l.jitter_ms;
        if (bounds.latency && ext->latency > *bounds.latency) continue;
        if (bounds.jitter && ext->jitter > *bounds.jitter) continue;
        ext->nodes.push_back(next);
        ext->links.push_back(li);
        ext->visited[next] = true;
        open.push(std::move(ext));
      }
    }
    return std::nullopt;
  };

  auto to_path = [&](const Label& label) {
    Path p;
    for (std::size_t n : label.nodes) p.domains.push_back(domains_[n].id);
    for (std::size_t li : label.links) p.links.push_back(links_[li].id);
    return make_path(src, p.links);
  };

  if (auto found = search({qos.max_latency_ms, qos.max_jitter_ms, qos.min_bandwidth_mbps})) {
    return to_path(*found);
  }

  const std::string route = "'" + std::string(src) + "' -> '" + std::string(dst) + "'";
  auto candidate = search({});
  if (!candidate) throw NoPathError(Binding::unreachable, "no path " + route + ": unreachable");
  const Path best = to_path(*candidate);
  Binding binding = Binding::bandwidth;
  std::string detail;
  if (qos.max_latency_ms && best.total_latency_ms > *qos.max_latency_ms) {
    binding = Binding::latency;
    detail = "latency " + std::to_string(best.total_latency_ms) + " ms > " + std::to_string(*qos.max_latency_ms);
  } else if (qos.max_jitter_ms && best.total_jitter_ms > *qos.max_jitter_ms) {
    binding = Binding::jitter;
    detail = "jitter " + std::to_string(best.total_jitter_ms) + " ms > " + std::to_string(*qos.max_jitter_ms);
  } else {
    detail = "residual " + std::to_string(best.bottleneck_mbps) + " mbps < " +
             std::to_string(qos.min_bandwidth_mbps);
  }
  throw NoPathError(binding, "no feasible path " + route + ": " + std::string(to_string(binding)) +
                                 " (best candidate " + detail + ")");
}

Path FabricTopology::make_path(std::string_view src, const std::vector<std::string>& links) const {
  Path p;
  p.domains.push_back(std::string(src));
  domain_index(src);
  p.bottleneck_mbps = std::numeric_limits<double>::infinity();
  std::set<std::string> seen{std::string(src)};
  for (const auto& id : links) {
    const LinkSpec& l = link(id);
    const std::string& at = p.domains.back();
    if (!l.touches(at)) throw Error(Errc::invalid, "link '" + id + "' does not touch domain '" + at + "'");
    const std::string& next = l.other(at);
    if (!seen.insert(next).second) throw Error(Errc::invalid, "path revisits domain '" + next + "'");
    p.links.push_back(id);
    p.domains.push_back(next);
    p.total_latency_ms += l.latency_ms;
    p.total_jitter_ms += l.jitter_ms;
    p.bottleneck_mbps = std::min(p.bottleneck_mbps, residual(id));
  }
  return p;
}

// ---------------------------------------------------------------------------
// reservations

Reservation FabricTopology::commit_path(const Path& path, double bandwidth_mbps) {
  if (!(bandwidth_mbps >= 0) || !std::isfinite(bandwidth_mbps)) {
    throw Error(Errc::invalid, "bandwidth must be >= 0");
  }
  for (const auto& id : path.links) {
    const double left = residual(id);
    if (left < bandwidth_mbps) {
      throw Error(Errc::insufficient_residual, "link '" + id + "' has residual " + std::to_string(left) +
                                                   " mbps < " + std::to_string(bandwidth_mbps));
    }
  }
  Reservation r{next_reservation_++, path.links, bandwidth_mbps};
  for (const auto& id : r.links) link_commitments_[id][r.id] = bandwidth_mbps;
  reservations_.emplace(r.id, r);
  return r;
}

void FabricTopology::release(const Reservation& reservation) { release(reservation.id); }

void FabricTopology::release(std::uint64_t reservation_id) {
  auto it = reservations_.find(reservation_id);
  if (it == reservations_.end()) {
    throw Error(Errc::not_found, "unknown or already released reservation " + std::to_string(reservation_id));
  }
  for (const auto& id : it->second.links) {
    auto lc = link_commitments_.find(id);
    lc->second.erase(reservation_id);
    if (lc->second.empty()) link_commitments_.erase(lc);
  }
  reservations_.erase(it);
}

bool FabricTopology::reservation_active(std::uint64_t reservation_id) const {
  return reservations_.count(reservation_id) != 0;
}

// ---------------------------------------------------------------------------
// VLANs

int FabricTopology::allocate_vlan(std::string_view link_id) {
  const LinkSpec& l = link(link_id);
  auto& used = link_vlans_[l.id];
  for (int v = l.vlan_pool.lo; v <= l.vlan_pool.hi; ++v) {
    if (used.count(v) == 0) {
      used.insert(v);
      return v;
    }
  }
  throw Error(Errc::vlan_exhausted, "VLAN pool of link '" + l.id + "' exhausted");
}

void FabricTopology::claim_vlan(std::string_view link_id, int vlan) {
  const LinkSpec& l = link(link_id);
  if (!l.vlan_pool.contains(vlan)) {
    throw Error(Errc::invalid, "VLAN " + std::to_string(vlan) + " outside pool of link '" + l.id + "'");
  }
  if (!link_vlans_[l.id].insert(vlan).second) {
    throw Error(Errc::conflict, "VLAN " + std::to_string(vlan) + " already allocated on link '" + l.id + "'");
  }
}

void FabricTopology::release_vlan(std::string_view link_id, int vlan) {
  auto it = link_vlans_.find(link_id);
  if (it == link_vlans_.end() || it->second.erase(vlan) == 0) {
    throw Error(Errc::not_found, "VLAN " + std::to_string(vlan) + " not allocated on link '" +
                                     std::string(link_id) + "'");
  }
  if (it->second.empty()) link_vlans_.erase(it);
}

const std::set<int>& FabricTopology::vlans(std::string_view link_id) const {
  static const std::set<int> kEmpty;
  auto it = link_vlans_.find(link_id);
  return it == link_vlans_.end() ? kEmpty : it->second;
}

int FabricTopology::allocate_access_vlan(std::string_view domain_id) {
  domain_index(domain_id);
  auto& used = access_vlans_[std::string(domain_id)];
  for (int v = kAccessVlanRange.lo; v <= kAccessVlanRange.hi; ++v) {
    if (used.count(v) == 0) {
      used.insert(v);
      return v;
    }
  }
  throw Error(Errc::vlan_exhausted, "access VLAN pool of domain '" + std::string(domain_id) + "' exhausted");
}

void FabricTopology::release_access_vlan(std::string_view domain_id, int vlan) {
  auto it = access_vlans_.find(domain_id);
  if (it == access_vlans_.end() || it->second.erase(vlan) == 0) {
    throw Error(Errc::not_found, "access VLAN " + std::to_string(vlan) + " not allocated in domain '" +
                                     std::string(domain_id) + "'");
  }
  if (it->second.empty()) access_vlans_.erase(it);
}

// ---------------------------------------------------------------------------
// leases

void FabricTopology::adopt_lease(Lease lease) {
  if (leases_.count(lease.key) != 0) throw Error(Errc::conflict, "lease '" + lease.key + "' already active");
  std::string key = lease.key;
  leases_.emplace(std::move(key), std::move(lease));
}

void FabricTopology::release_lease(std::string_view key) {
  auto it = leases_.find(key);
  if (it == leases_.end()) throw Error(Errc::not_found, "unknown or released plan '" + std::string(key) + "'");
  const Lease lease = it->second;
  leases_.erase(it);
  unwind(lease);
}

bool FabricTopology::has_lease(std::string_view key) const { return leases_.find(key) != leases_.end(); }

void FabricTopology::unwind(const Lease& lease) {
  for (auto id : lease.reservations) {
    if (reservation_active(id)) release(id);
  }
  for (const auto& [link_id, vlan] : lease.link_vlans) {
    auto it = link_vlans_.find(link_id);
    if (it != link_vlans_.end()) {
      it->second.erase(vlan);
      if (it->second.empty()) link_vlans_.erase(it);
    }
  }
  for (const auto& [domain_id, vlan] : lease.access_vlans) {
    auto it = access_vlans_.find(domain_id);
    if (it != access_vlans_.end()) {
      it->second.erase(vlan);
      if (it->second.empty()) access_vlans_.erase(it);
    }
  }
}

AllocationState FabricTopology::allocation_state() const {
  AllocationState st;
  for (const auto& [id, m] : link_commitments_) st.committed_mbps[id] = committed(id);
  for (const auto& [id, s] : link_vlans_) st.link_vlans[id] = s;
  for (const auto& [id, s] : access_vlans_) st.access_vlans[id] = s;
  for (const auto& [key, l] : leases_) st.leases.insert(key);
  return st;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

json pairs_json(const std::vector<std::pair<std::string, int>>& pairs) {
  json out = json::array();
  for (const auto& [k, v] : pairs) out.push_back(json::array({k, v}));
  return out;
}

std::vector<std::pair<std::string, int>> pairs_from(const json& arr) {
  std::vector<std::pair<std::string, int>> out;
  for (const auto& p : arr) out.emplace_back(p.at(0).get<std::string>(), p.at(1).get<int>());
  return out;
}

}  // namespace

json FabricTopology::state_json() const {
  json res = json::array();
  for (const auto& [id, r] : reservations_) {
    res.push_back({{"id", r.id}, {"links", r.links}, {"bandwidth_mbps", r.bandwidth_mbps}});
  }
  json lv = json::object();
  for (const auto& [id, s] : link_vlans_) lv[id] = s;
  json av = json::object();
  for (const auto& [id, s] : access_vlans_) av[id] = s;
  json leases = json::array();
  for (const auto& [key, l] : leases_) {
    leases.push_back({{"key", l.key},
                      {"reservations", l.reservations},
                      {"link_vlans", pairs_json(l.link_vlans)},
                      {"access_vlans", pairs_json(l.access_vlans)}});
  }
  return json{{"reservations", res},
              {"link_vlans", lv},
              {"access_vlans", av},
              {"leases", leases},
              {"next_reservation", next_reservation_}};
}

void FabricTopology::restore_state(const json& state) {
  try {
    reservations_.clear();
    link_commitments_.clear();
    link_vlans_.clear();
    access_vlans_.clear();
    leases_.clear();
    for (const auto& r : state.at("reservations")) {
      Reservation res{r.at("id").get<std::uint64_t>(), r.at("links").get<std::vector<std::string>>(),
                      r.at("bandwidth_mbps").get<double>()};
      for (const auto& id : res.links) {
        link(id);
        link_commitments_[id][res.id] = res.bandwidth_mbps;
      }
      reservations_.emplace(res.id, res);
    }
    for (auto it = state.at("link_vlans").begin(); it != state.at("link_vlans").end(); ++it) {
      link(it.key());
      link_vlans_[it.key()] = it->get<std::set<int>>();
    }
    for (auto it = state.at("access_vlans").begin(); it != state.at("access_vlans").end(); ++it) {
      access_vlans_[it.key()] = it->get<std::set<int>>();
    }
    for (const auto& l : state.at("leases")) {
      Lease lease{l.at("key").get<std::string>(), l.at("reservations").get<std::vector<std::uint64_t>>(),
                  pairs_from(l.at("link_vlans")), pairs_from(l.at("access_vlans"))};
      leases_.emplace(lease.key, lease);
    }
    next_reservation_ = state.at("next_reservation").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw Error(Errc::invalid, std::string("corrupt fabric state: ") + e.what());
  }
}

json to_json(const Path& path) {
  return json{{"links", path.links},
              {"domains", path.domains},
              {"total_latency_ms", path.total_latency_ms},
              {"total_jitter_ms", path.total_jitter_ms},
              {"bottleneck_mbps", std::isfinite(path.bottleneck_mbps) ? json(path.bottleneck_mbps) : json(nullptr)}};
}

}  // namespace ztpom
