#include "ztpom/marketplace.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "ztpom/error.hpp"
#include "ztpom/json_util.hpp"

namespace ztpom {

using json = nlohmann::json;

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

bool contains(const std::vector<std::string>& list, std::string_view value) {
  return std::find(list.begin(), list.end(), value) != list.end();
}

std::pair<std::string, std::string> canonical(const std::string& a, const std::string& b) {
  return a < b ? std::pair{a, b} : std::pair{b, a};
}

void check_entry(const CatalogEntry& e) {
  if (e.offer_id.empty()) throw Error(Errc::invalid, "offer_id: must not be empty");
  if (e.provider_id.empty()) throw Error(Errc::invalid, "provider_id: must not be empty");
  if (e.service_type.empty()) throw Error(Errc::invalid, "service_type: must not be empty");
  if (!(e.price_per_hour >= 0)) throw Error(Errc::invalid, "price_per_hour: must be >= 0");
  if (e.availability_tier < 1 || e.availability_tier > 4) {
    throw Error(Errc::invalid, "availability_tier: must be in [1, 4], got " + std::to_string(e.availability_tier));
  }
  if (e.min_bandwidth_mbps < 0 || e.max_bandwidth_mbps < e.min_bandwidth_mbps) {
    throw Error(Errc::invalid, "bandwidth: need 0 <= min_bandwidth_mbps <= max_bandwidth_mbps");
  }
  if (!e.cert_fingerprint.empty() && !valid_fingerprint(e.cert_fingerprint)) {
    throw Error(Errc::invalid, "cert_fingerprint: expected 64 hex digits");
  }
}

}  // namespace

bool valid_fingerprint(std::string_view fp) {
  return fp.size() == 64 && std::all_of(fp.begin(), fp.end(), [](unsigned char c) { return std::isxdigit(c); });
}

Marketplace::Marketplace(double lambda) : lambda_(lambda) {
  if (!(lambda >= 0)) throw Error(Errc::invalid, "broker lambda must be >= 0");
}

void Marketplace::set_lambda(double lambda) {
  if (!(lambda >= 0)) throw Error(Errc::invalid, "broker lambda must be >= 0");
  lambda_ = lambda;
}

void Marketplace::register_cert(const std::string& party, const std::string& fingerprint) {
  if (party.empty()) throw Error(Errc::invalid, "party id must not be empty");
  if (!valid_fingerprint(fingerprint)) {
    throw Error(Errc::invalid, "fingerprint for '" + party + "' must be 32 bytes (64 hex digits), got " +
                                   std::to_string(fingerprint.size()) + " chars");
  }
  certs_[party] = lower(fingerprint);
  for (auto& [key, record] : trust_) {
    if (key.first == party || key.second == party) {
      record.a_confirmed = false;
      record.b_confirmed = false;
    }
  }
}

std::optional<std::string> Marketplace::cert(std::string_view party) const {
  auto it = certs_.find(std::string(party));
  if (it == certs_.end()) return std::nullopt;
  return it->second;
}

TrustRecord Marketplace::confirm_trust(const std::string& confirmer, const std::string& peer) {
  for (const auto* p : {&confirmer, &peer}) {
    if (certs_.count(*p) == 0) throw Error(Errc::not_found, "unknown party '" + *p + "' (no registered certificate)");
  }
  if (confirmer == peer) throw Error(Errc::invalid, "party '" + confirmer + "' cannot confirm trust with itself");
  auto key = canonical(confirmer, peer);
  auto [it, fresh] = trust_.try_emplace(key, TrustRecord{key.first, key.second, false, false});
  if (confirmer == key.first) {
    it->second.a_confirmed = true;
  } else {
    it->second.b_confirmed = true;
  }
  return it->second;
}

TrustRecord Marketplace::trust_status(const std::string& a, const std::string& b) const {
  for (const auto* p : {&a, &b}) {
    if (certs_.count(*p) == 0) throw Error(Errc::not_found, "unknown party '" + *p + "' (no registered certificate)");
  }
  auto key = canonical(a, b);
  auto it = trust_.find(key);
  if (it == trust_.end()) return TrustRecord{key.first, key.second, false, false};
  return it->second;
}

bool Marketplace::trusted(std::string_view a, std::string_view b) const {
  if (a == b) return !a.empty();
  auto it = trust_.find(canonical(std::string(a), std::string(b)));
  return it != trust_.end() && it->second.established();
}

std::vector<TrustRecord> Marketplace::trust_records() const {
  std::vector<TrustRecord> out;
  for (const auto& [key, record] : trust_) out.push_back(record);
  return out;
}

std::string Marketplace::publish_offer(CatalogEntry entry) {
  check_entry(entry);
  auto registered = certs_.find(entry.provider_id);
  if (registered == certs_.end()) {
    throw Error(Errc::precondition, "provider '" + entry.provider_id + "' has not registered a certificate");
  }
  if (entry.cert_fingerprint.empty()) {
    entry.cert_fingerprint = registered->second;
  } else if (lower(entry.cert_fingerprint) != registered->second) {
    throw Error(Errc::invalid, "cert_fingerprint of offer '" + entry.offer_id +
                                   "' does not match the certificate registered by '" + entry.provider_id + "'");
  }
  entry.cert_fingerprint = lower(entry.cert_fingerprint);
  auto existing = offers_.find(entry.offer_id);
  if (existing != offers_.end() && existing->second.provider_id != entry.provider_id) {
    throw Error(Errc::conflict,
                "offer '" + entry.offer_id + "' belongs to provider '" + existing->second.provider_id + "'");
  }
  const std::string id = entry.offer_id;
  offers_[id] = std::move(entry);
  return id;
}

void Marketplace::withdraw_offer(const std::string& offer_id) {
  if (offers_.erase(offer_id) == 0) throw Error(Errc::not_found, "unknown offer '" + offer_id + "'");
}

bool Marketplace::matches_hard(const CatalogEntry& e, const ServiceRequest& req) const {
  if (req.service_type && e.service_type != *req.service_type) return false;
  if (req.region && e.region != *req.region) return false;
  if (!req.allowed_regions.empty() && !contains(req.allowed_regions, e.region)) return false;
  if (!req.allowed_providers.empty() && !contains(req.allowed_providers, e.provider_id)) return false;
  if (contains(req.excluded_providers, e.provider_id)) return false;
  if (req.max_price && e.price_per_hour > *req.max_price) return false;
  if (req.min_tier && e.availability_tier < *req.min_tier) return false;
  if (req.min_bandwidth_mbps &&
      (*req.min_bandwidth_mbps < e.min_bandwidth_mbps || *req.min_bandwidth_mbps > e.max_bandwidth_mbps)) {
    return false;
  }
  return true;
}

std::vector<CatalogEntry> Marketplace::search(const ServiceRequest& filter) const {
  std::vector<CatalogEntry> out;
  for (const auto& [id, e] : offers_) {
    if (matches_hard(e, filter)) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(), [](const CatalogEntry& a, const CatalogEntry& b) {
    if (a.price_per_hour != b.price_per_hour) return a.price_per_hour < b.price_per_hour;
    if (a.provider_id != b.provider_id) return a.provider_id < b.provider_id;
    return a.offer_id < b.offer_id;
  });
  return out;
}

void Marketplace::register_profile(ProviderProfile profile) {
  if (profile.provider_id.empty()) throw Error(Errc::invalid, "provider profile needs a provider_id");
  const std::string id = profile.provider_id;
  profiles_[id] = std::move(profile);
}

const ProviderProfile* Marketplace::profile(std::string_view provider_id) const {
  auto it = profiles_.find(std::string(provider_id));
  return it == profiles_.end() ? nullptr : &it->second;
}

std::optional<std::string> Marketplace::provider_domain(std::string_view provider_id,
                                                        const FabricTopology& fabric) const {
  if (auto d = fabric.domain_of_provider(provider_id)) return d;
  if (const ProviderProfile* p = profile(provider_id); p && fabric.find_domain(p->domain_id) != nullptr) {
    return p->domain_id;
  }
  return std::nullopt;
}

BrokerExplanation Marketplace::explain(const ServiceRequest& req, const FabricTopology& fabric) const {
  BrokerExplanation out;
  std::vector<const CatalogEntry*> stage;
  for (const auto& [id, e] : offers_) {
    if (!req.service_type || e.service_type == *req.service_type) stage.push_back(&e);
  }
  auto narrow = [&](auto keep, const char* binding, const std::string& detail) {
    std::vector<const CatalogEntry*> next;
    for (const auto* e : stage) {
      if (keep(*e)) next.push_back(e);
    }
    if (!stage.empty() && next.empty() && out.binding.empty()) {
      out.binding = binding;
      out.detail = detail;
    }
    stage = std::move(next);
  };
  if (stage.empty()) {
    out.binding = "service_type";
    out.detail = "no offer for service type '" + req.service_type.value_or("") + "'";
    return out;
  }

  narrow(
      [&](const CatalogEntry& e) {
        if (req.region && e.region != *req.region) return false;
        if (!req.allowed_regions.empty() && !contains(req.allowed_regions, e.region)) return false;
        if (!req.allowed_providers.empty() && !contains(req.allowed_providers, e.provider_id)) return false;
        return !contains(req.excluded_providers, e.provider_id);
      },
      "placement", "no offer satisfies the region/provider placement constraints");
  narrow([&](const CatalogEntry& e) { return matches_hard(e, req); }, "sla",
         "no offer satisfies the price/tier/bandwidth constraints");
  narrow([&](const CatalogEntry& e) { return trusted(req.requester, e.provider_id); }, "trust",
         "no candidate provider has established trust with '" + req.requester + "'");

  std::map<std::string, std::optional<double>> latency;  // per provider domain
  std::vector<OfferMatch> found;
  std::string path_detail;
  for (const auto* e : stage) {
    OfferMatch m;
    m.offer = *e;
    auto domain = provider_domain(e->provider_id, fabric);
    if (!domain) {
      path_detail = "provider '" + e->provider_id + "' is not attached to the fabric";
      continue;
    }
    m.provider_domain = *domain;
    if (req.user_domain && *req.user_domain != *domain) {
      auto cached = latency.find(*domain);
      if (cached == latency.end()) {
        QoSDemand qos;
        qos.max_latency_ms = req.max_latency_ms;
        qos.min_bandwidth_mbps = req.min_bandwidth_mbps.value_or(0);
        std::optional<double> value;
        try {
          value = fabric.compute_path(*req.user_domain, *domain, qos).total_latency_ms;
        } catch (const Error& err) {
          path_detail = "no feasible path " + *req.user_domain + " -> " + *domain + ": " + err.what();
        }
        cached = latency.emplace(*domain, value).first;
      }
      if (!cached->second) continue;
      m.path_latency_ms = *cached->second;
    }
    m.score = e->price_per_hour + lambda_ * m.path_latency_ms;
    found.push_back(std::move(m));
  }
  if (!stage.empty() && found.empty() && out.binding.empty()) {
    out.binding = "path";
    out.detail = path_detail;
  }
  std::stable_sort(found.begin(), found.end(), [](const OfferMatch& a, const OfferMatch& b) {
    if (a.score != b.score) return a.score < b.score;
    if (a.offer.provider_id != b.offer.provider_id) return a.offer.provider_id < b.offer.provider_id;
    return a.offer.offer_id < b.offer.offer_id;
  });
  out.matches = std::move(found);
  return out;
}

std::vector<OfferMatch> Marketplace::broker(const ServiceRequest& req, const FabricTopology& fabric) const {
  return explain(req, fabric).matches;
}

void Marketplace::load_seed(const json& doc) {
  if (doc.is_array()) {
    for (std::size_t i = 0; i < doc.size(); ++i) {
      CatalogEntry e = entry_from_json(doc[i], jsonio::child("", i));
      if (!e.cert_fingerprint.empty() && certs_.count(e.provider_id) == 0) {
        register_cert(e.provider_id, e.cert_fingerprint);
      }
      publish_offer(std::move(e));
    }
    return;
  }
  jsonio::expect_object(doc, "");
  if (const json* certs = jsonio::find(doc, "certs")) {
    jsonio::expect_object(*certs, "certs");
    for (auto it = certs->begin(); it != certs->end(); ++it) {
      if (!it->is_string()) jsonio::fail(jsonio::child("certs", it.key()), "expected string");
      register_cert(it.key(), it->get<std::string>());
    }
  }
  if (const json* providers = jsonio::find(doc, "providers")) {
    jsonio::expect_array(*providers, "providers");
    for (std::size_t i = 0; i < providers->size(); ++i) {
      register_profile(profile_from_json((*providers)[i], jsonio::child("providers", i)));
    }
  }
  if (const json* offers = jsonio::find(doc, "offers")) load_seed(*offers);
  if (const json* trust = jsonio::find(doc, "trust")) {
    jsonio::expect_array(*trust, "trust");
    for (std::size_t i = 0; i < trust->size(); ++i) {
      const json& pair = (*trust)[i];
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
        jsonio::fail(jsonio::child("trust", i), "expected [party, party]");
      }
      confirm_trust(pair[0], pair[1]);
      confirm_trust(pair[1], pair[0]);
    }
  }
}

json Marketplace::state_json() const {
  json offers = json::array();
  for (const auto& [id, e] : offers_) offers.push_back(to_json(e));
  json trust = json::array();
  for (const auto& [key, r] : trust_) trust.push_back(to_json(r));
  json profiles = json::array();
  for (const auto& [id, p] : profiles_) profiles.push_back(to_json(p));
  return json{{"lambda", lambda_}, {"certs", certs_}, {"trust", trust}, {"offers", offers}, {"providers", profiles}};
}

void Marketplace::restore_state(const json& state) {
  Marketplace fresh(jsonio::get_number(state, "lambda", "marketplace"));
  for (const auto& [party, fp] : jsonio::opt_string_map(state, "certs", "marketplace")) {
    fresh.register_cert(party, fp);
  }
  const json& trust = jsonio::require(state, "trust", "marketplace");
  for (std::size_t i = 0; i < trust.size(); ++i) {
    const std::string path = jsonio::child("marketplace.trust", i);
    TrustRecord r{jsonio::get_string(trust[i], "party_a", path), jsonio::get_string(trust[i], "party_b", path),
                  jsonio::get_bool(trust[i], "a_confirmed", path), jsonio::get_bool(trust[i], "b_confirmed", path)};
    fresh.trust_[{r.party_a, r.party_b}] = r;
  }
  const json& offers = jsonio::require(state, "offers", "marketplace");
  for (std::size_t i = 0; i < offers.size(); ++i) {
    fresh.publish_offer(entry_from_json(offers[i], jsonio::child("marketplace.offers", i)));
  }
  if (const json* profiles = jsonio::find(state, "providers")) {
    for (std::size_t i = 0; i < profiles->size(); ++i) {
      fresh.register_profile(profile_from_json((*profiles)[i], jsonio::child("marketplace.providers", i)));
    }
  }
  *this = std::move(fresh);
}

// ---------------------------------------------------------------------------

json to_json(const CatalogEntry& e) {
  return json{{"offer_id", e.offer_id},
              {"provider_id", e.provider_id},
              {"service_type", e.service_type},
              {"region", e.region},
              {"price_per_hour", e.price_per_hour},
              {"availability_tier", e.availability_tier},
              {"min_bandwidth_mbps", e.min_bandwidth_mbps},
              {"max_bandwidth_mbps", e.max_bandwidth_mbps},
              {"api_endpoint", e.api_endpoint},
              {"cert_fingerprint", e.cert_fingerprint}};
}

CatalogEntry entry_from_json(const json& doc, std::string_view path) {
  jsonio::expect_object(doc, path);
  CatalogEntry e;
  e.offer_id = jsonio::get_string(doc, "offer_id", path);
  e.provider_id = jsonio::get_string(doc, "provider_id", path);
  e.service_type = jsonio::get_string(doc, "service_type", path);
  e.region = jsonio::opt_string(doc, "region", path).value_or("");
  e.price_per_hour = jsonio::get_number(doc, "price_per_hour", path);
  e.availability_tier = static_cast<int>(jsonio::opt_int(doc, "availability_tier", path).value_or(1));
  e.min_bandwidth_mbps = jsonio::opt_number(doc, "min_bandwidth_mbps", path).value_or(0);
  e.max_bandwidth_mbps = jsonio::opt_number(doc, "max_bandwidth_mbps", path).value_or(100000);
  e.api_endpoint = jsonio::opt_string(doc, "api_endpoint", path).value_or("");
  e.cert_fingerprint = jsonio::opt_string(doc, "cert_fingerprint", path).value_or("");
  return e;
}

json to_json(const TrustRecord& r) {
  return json{{"party_a", r.party_a},
              {"party_b", r.party_b},
              {"a_confirmed", r.a_confirmed},
              {"b_confirmed", r.b_confirmed},
              {"established", r.established()}};
}

json to_json(const OfferMatch& m) {
  return json{{"offer", to_json(m.offer)},
              {"provider_domain", m.provider_domain},
              {"path_latency_ms", m.path_latency_ms},
              {"score", m.score}};
}

json to_json(const ServiceRequest& r) {
  json out{{"requester", r.requester}};
  if (r.service_type) out["service_type"] = *r.service_type;
  if (r.region) out["region"] = *r.region;
  if (!r.allowed_regions.empty()) out["allowed_regions"] = r.allowed_regions;
  if (!r.allowed_providers.empty()) out["allowed_providers"] = r.allowed_providers;
  if (!r.excluded_providers.empty()) out["excluded_providers"] = r.excluded_providers;
  if (r.max_price) out["max_price"] = *r.max_price;
  if (r.min_tier) out["min_tier"] = *r.min_tier;
  if (r.min_bandwidth_mbps) out["min_bandwidth_mbps"] = *r.min_bandwidth_mbps;
  if (r.max_latency_ms) out["max_latency_ms"] = *r.max_latency_ms;
  if (r.user_domain) out["user_domain"] = *r.user_domain;
  return out;
}

ServiceRequest request_from_json(const json& doc, std::string_view path) {
  jsonio::expect_object(doc, path);
  ServiceRequest r;
  r.requester = jsonio::opt_string(doc, "requester", path).value_or("");
  r.service_type = jsonio::opt_string(doc, "service_type", path);
  r.region = jsonio::opt_string(doc, "region", path);
  r.allowed_regions = jsonio::opt_string_list(doc, "allowed_regions", path);
  r.allowed_providers = jsonio::opt_string_list(doc, "allowed_providers", path);
  r.excluded_providers = jsonio::opt_string_list(doc, "excluded_providers", path);
  r.max_price = jsonio::opt_number(doc, "max_price", path);
  if (r.max_price && *r.max_price < 0) jsonio::fail(jsonio::child(path, "max_price"), "must be >= 0");
  if (auto tier = jsonio::opt_int(doc, "min_tier", path)) r.min_tier = static_cast<int>(*tier);
  r.min_bandwidth_mbps = jsonio::opt_number(doc, "min_bandwidth_mbps", path);
  r.max_latency_ms = jsonio::opt_number(doc, "max_latency_ms", path);
  r.user_domain = jsonio::opt_string(doc, "user_domain", path);
  return r;
}

}  // namespace ztpom
