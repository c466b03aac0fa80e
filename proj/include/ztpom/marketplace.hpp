#pragma once

// Service directory, broker and pairwise trust registry. Providers register
// a certificate fingerprint, publish offers with flat SLA fields, and
// establish trust with requesters through a two-sided confirmation.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ztpom/blueprint.hpp"
#include "ztpom/fabric.hpp"

namespace ztpom {

struct CatalogEntry {
  std::string offer_id;
  std::string provider_id;
  std::string service_type;
  std::string region;
  double price_per_hour = 0;
  int availability_tier = 1;  // 1..4, higher is better
  double min_bandwidth_mbps = 0;
  double max_bandwidth_mbps = 100000;
  std::string api_endpoint;
  std::string cert_fingerprint;  // 64 hex chars; empty = provider's registered one

  bool operator==(const CatalogEntry&) const = default;
};

// Every field is an optional constraint.
struct ServiceRequest {
  std::string requester;
  std::optional<std::string> service_type;
  std::optional<std::string> region;
  std::vector<std::string> allowed_regions;
  std::vector<std::string> allowed_providers;
  std::vector<std::string> excluded_providers;
  std::optional<double> max_price;
  std::optional<int> min_tier;
  std::optional<double> min_bandwidth_mbps;
  std::optional<double> max_latency_ms;
  std::optional<std::string> user_domain;

  bool operator==(const ServiceRequest&) const = default;
};

struct OfferMatch {
  CatalogEntry offer;
  std::string provider_domain;
  double path_latency_ms = 0;
  double score = 0;
};

struct TrustRecord {
  std::string party_a;  // party_a < party_b
  std::string party_b;
  bool a_confirmed = false;
  bool b_confirmed = false;

  bool established() const { return a_confirmed && b_confirmed; }
  bool operator==(const TrustRecord&) const = default;
};

// Why a broker query came back empty: the first filter stage that removed
// the last candidate.
struct BrokerExplanation {
  std::vector<OfferMatch> matches;
  std::string binding;  // "service_type", "placement", "sla", "trust", "path"; empty if matches
  std::string detail;
};

bool valid_fingerprint(std::string_view fingerprint);

class Marketplace {
 public:
  explicit Marketplace(double lambda = 0.1);

  double lambda() const { return lambda_; }
  void set_lambda(double lambda);

  // --- certificates and trust ---
  void register_cert(const std::string& party, const std::string& fingerprint);
  std::optional<std::string> cert(std::string_view party) const;
  TrustRecord confirm_trust(const std::string& confirmer, const std::string& peer);
  TrustRecord trust_status(const std::string& a, const std::string& b) const;
  bool trusted(std::string_view a, std::string_view b) const;
  std::vector<TrustRecord> trust_records() const;

  // --- catalogue ---
  std::string publish_offer(CatalogEntry entry);
  void withdraw_offer(const std::string& offer_id);
  std::vector<CatalogEntry> search(const ServiceRequest& filter) const;
  const std::map<std::string, CatalogEntry>& offers() const { return offers_; }

  // --- provider profiles (recipe adaptation data) ---
  void register_profile(ProviderProfile profile);
  const ProviderProfile* profile(std::string_view provider_id) const;
  const std::map<std::string, ProviderProfile>& profiles() const { return profiles_; }

  // Domain a provider's offers are reached at: the topology's provider
  // attachment first, then the provider profile.
  std::optional<std::string> provider_domain(std::string_view provider_id, const FabricTopology& fabric) const;

  std::vector<OfferMatch> broker(const ServiceRequest& req, const FabricTopology& fabric) const;
  BrokerExplanation explain(const ServiceRequest& req, const FabricTopology& fabric) const;

  // Seed document: a list of offers (their fingerprints register the
  // providers), or {"certs", "providers", "offers", "trust"}.
  void load_seed(const nlohmann::json& doc);

  nlohmann::json state_json() const;
  void restore_state(const nlohmann::json& state);

 private:
  bool matches_hard(const CatalogEntry& e, const ServiceRequest& req) const;

  double lambda_;
  std::map<std::string, std::string> certs_;
  std::map<std::pair<std::string, std::string>, TrustRecord> trust_;
  std::map<std::string, CatalogEntry> offers_;
  std::map<std::string, ProviderProfile> profiles_;
};

nlohmann::json to_json(const CatalogEntry& entry);
CatalogEntry entry_from_json(const nlohmann::json& doc, std::string_view path = "");
nlohmann::json to_json(const TrustRecord& record);
nlohmann::json to_json(const OfferMatch& match);
nlohmann::json to_json(const ServiceRequest& req);
ServiceRequest request_from_json(const nlohmann::json& doc, std::string_view path = "");

}  // namespace ztpom
