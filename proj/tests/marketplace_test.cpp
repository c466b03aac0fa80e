#include <random>

#include <gtest/gtest.h>

#include "expect.hpp"
#include "oracles.hpp"
#include "ztpom/marketplace.hpp"

using namespace ztpom;

namespace {

Marketplace seeded() {
  Marketplace m(0.1);
  m.load_seed(oracle::fixture_json("catalogue.json"));
  return m;
}

ServiceRequest want(const std::string& type, const std::string& requester = "ztpom") {
  ServiceRequest r;
  r.requester = requester;
  r.service_type = type;
  return r;
}

std::string fp(char c) { return std::string(64, c); }

CatalogEntry offer(const std::string& id, const std::string& provider, double price) {
  CatalogEntry e;
  e.offer_id = id;
  e.provider_id = provider;
  e.service_type = "transcode";
  e.region = "eu-west";
  e.price_per_hour = price;
  return e;
}

std::map<std::string, std::string> domains_of(const Marketplace& m, const FabricTopology& t) {
  std::map<std::string, std::string> out;
  for (const auto& [id, e] : m.offers()) {
    if (auto d = m.provider_domain(e.provider_id, t)) out[e.provider_id] = *d;
  }
  return out;
}

void expect_same(const std::vector<OfferMatch>& got, const std::vector<oracle::RefMatch>& ref) {
  ASSERT_EQ(got.size(), ref.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].offer.offer_id, ref[i].offer_id) << "rank " << i;
    EXPECT_DOUBLE_EQ(got[i].path_latency_ms, ref[i].latency) << "rank " << i;
    EXPECT_DOUBLE_EQ(got[i].score, ref[i].score) << "rank " << i;
  }
}

}  // namespace

TEST(Catalogue, SeedLoads) {
  const auto m = seeded();
  EXPECT_EQ(m.offers().size(), 6u);
  EXPECT_EQ(m.profiles().size(), 3u);
  EXPECT_EQ(m.cert("csp-b"), fp('b'));
  EXPECT_TRUE(m.trusted("ztpom", "csp-c"));
  EXPECT_FALSE(m.trusted("csp-a", "csp-b"));
  EXPECT_EQ(m.offers().at("a-capture").cert_fingerprint, fp('a'));
}

TEST(Catalogue, SearchSortsByPrice) {
  const auto m = seeded();
  const auto hits = m.search(want("transcode"));
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].offer_id, "b-transcode");
  EXPECT_EQ(hits[1].offer_id, "c-transcode");
  ServiceRequest r = want("transcode");
  r.min_tier = 3;
  EXPECT_EQ(m.search(r).size(), 1u);
  r = {};
  r.max_price = 0.6;
  EXPECT_EQ(m.search(r).size(), 2u);
}

TEST(Catalogue, PublishRules) {
  Marketplace m;
  expect_error(Errc::precondition, [&] { m.publish_offer(offer("o", "p", 1)); }, "'p'");
  m.register_cert("p", fp('1'));
  m.register_cert("q", fp('2'));
  EXPECT_EQ(m.publish_offer(offer("o", "p", 1)), "o");
  expect_error(Errc::conflict, [&] { m.publish_offer(offer("o", "q", 1)); }, "'p'");
  auto wrong = offer("o2", "p", 1);
  wrong.cert_fingerprint = fp('2');
  expect_error(Errc::invalid, [&] { m.publish_offer(wrong); });
  auto tier = offer("o3", "p", 1);
  tier.availability_tier = 5;
  expect_error(Errc::invalid, [&] { m.publish_offer(tier); }, "availability_tier");
  auto bw = offer("o4", "p", 1);
  bw.min_bandwidth_mbps = 10;
  bw.max_bandwidth_mbps = 5;
  expect_error(Errc::invalid, [&] { m.publish_offer(bw); });
  // Republishing replaces.
  m.publish_offer(offer("o", "p", 2));
  EXPECT_DOUBLE_EQ(m.offers().at("o").price_per_hour, 2);
  m.withdraw_offer("o");
  expect_error(Errc::not_found, [&] { m.withdraw_offer("o"); });
}

TEST(Catalogue, FingerprintFormat) {
  EXPECT_TRUE(valid_fingerprint(fp('a')));
  EXPECT_TRUE(valid_fingerprint(std::string(64, 'F')));
  EXPECT_FALSE(valid_fingerprint(std::string(63, 'a')));
  EXPECT_FALSE(valid_fingerprint(std::string(64, 'g')));
  Marketplace m;
  expect_error(Errc::invalid, [&] { m.register_cert("p", "abc"); }, "64 hex");
}

TEST(Trust, TwoSidedAndSymmetric) {
  Marketplace m;
  m.register_cert("u", fp('1'));
  m.register_cert("p", fp('2'));
  auto r = m.confirm_trust("u", "p");
  EXPECT_FALSE(r.established());
  EXPECT_FALSE(m.trusted("u", "p"));
  r = m.confirm_trust("p", "u");
  EXPECT_TRUE(r.established());
  EXPECT_TRUE(m.trusted("u", "p"));
  EXPECT_TRUE(m.trusted("p", "u"));
  EXPECT_EQ(m.trust_status("u", "p"), m.trust_status("p", "u"));
  // Idempotent.
  EXPECT_EQ(m.confirm_trust("p", "u"), r);
  EXPECT_EQ(m.trust_records().size(), 1u);
}

TEST(Trust, Errors) {
  Marketplace m;
  m.register_cert("u", fp('1'));
  expect_error(Errc::not_found, [&] { m.confirm_trust("u", "ghost"); }, "'ghost'");
  expect_error(Errc::invalid, [&] { m.confirm_trust("u", "u"); });
  expect_error(Errc::not_found, [&] { m.trust_status("ghost", "u"); });
}

TEST(Trust, ReRegisteringCertificateRevokes) {
  auto m = seeded();
  ASSERT_TRUE(m.trusted("ztpom", "csp-b"));
  m.register_cert("csp-b", fp('d'));
  EXPECT_FALSE(m.trusted("ztpom", "csp-b"));
  EXPECT_TRUE(m.trusted("ztpom", "csp-a"));
  m.confirm_trust("csp-b", "ztpom");
  EXPECT_FALSE(m.trusted("ztpom", "csp-b"));
  m.confirm_trust("ztpom", "csp-b");
  EXPECT_TRUE(m.trusted("ztpom", "csp-b"));
}

TEST(Broker, TranscodeFromCampus) {
  const auto m = seeded();
  const auto t = oracle::t3();
  ServiceRequest r = want("transcode");
  r.user_domain = "C";
  const auto hits = m.broker(r, t);
  ASSERT_EQ(hits.size(), 2u);
  // 0.80 + 0.1 * (1 + 3) against 1.50 + 0.
  EXPECT_EQ(hits[0].offer.offer_id, "b-transcode");
  EXPECT_DOUBLE_EQ(hits[0].score, 1.2);
  EXPECT_EQ(hits[0].provider_domain, "B");
  EXPECT_DOUBLE_EQ(hits[1].score, 1.5);
  expect_same(hits, oracle::brute_force_broker(m, r, t, 0.1, domains_of(m, t)));
}

TEST(Broker, LambdaShiftsRanking) {
  auto m = seeded();
  m.set_lambda(1.0);
  ServiceRequest r = want("transcode");
  r.user_domain = "C";
  const auto hits = m.broker(r, oracle::t3());
  ASSERT_EQ(hits.size(), 2u);
  EXPECT_EQ(hits[0].offer.offer_id, "c-transcode");
  expect_error(Errc::invalid, [&] { m.set_lambda(-1); });
}

TEST(Broker, ExplainsEmptyResult) {
  const auto m = seeded();
  const auto t = oracle::t3();
  EXPECT_EQ(m.explain(want("teleport"), t).binding, "service_type");
  ServiceRequest r = want("transcode");
  r.region = "mars";
  EXPECT_EQ(m.explain(r, t).binding, "placement");
  r = want("transcode");
  r.max_price = 0.1;
  EXPECT_EQ(m.explain(r, t).binding, "sla");
  EXPECT_EQ(m.explain(want("transcode", "stranger"), t).binding, "trust");
  r = want("transcode");
  r.user_domain = "A";
  r.max_latency_ms = 1;
  const auto e = m.explain(r, t);
  EXPECT_TRUE(e.matches.empty());
  EXPECT_EQ(e.binding, "path");
  r.max_latency_ms.reset();
  EXPECT_TRUE(m.explain(r, t).binding.empty());
}

TEST(Broker, SelfTrust) {
  const auto m = seeded();
  // A provider looking for its own offers does not need a trust record.
  EXPECT_EQ(m.broker(want("capture", "csp-a"), oracle::t3()).size(), 1u);
  EXPECT_TRUE(m.broker(want("capture", "csp-b"), oracle::t3()).empty());
}

TEST(Broker, MatchesBruteForceOnRandomCatalogues) {
  std::mt19937_64 rng(11);
  const std::vector<std::string> types{"a", "b", "c"};
  const std::vector<std::string> regions{"r1", "r2", "r3"};
  for (int trial = 0; trial < 60; ++trial) {
    auto t = oracle::random_topology(rng, 6, 10, false);
    Marketplace m(std::uniform_int_distribution<int>(0, 4)(rng) * 0.05);
    m.register_cert("user", oracle::fingerprint(rng));
    std::vector<std::string> providers;
    for (const auto& d : t.domains()) {
      for (const auto& p : d.providers) {
        providers.push_back(p);
        m.register_cert(p, oracle::fingerprint(rng));
        if (std::uniform_int_distribution<int>(0, 3)(rng) != 0) {
          m.confirm_trust("user", p);
          m.confirm_trust(p, "user");
        }
      }
    }
    const int n = std::uniform_int_distribution<int>(1, 40)(rng);
    for (int i = 0; i < n; ++i) {
      CatalogEntry e = offer("o" + std::to_string(i),
                             providers[std::uniform_int_distribution<std::size_t>(0, providers.size() - 1)(rng)],
                             std::uniform_int_distribution<int>(1, 20)(rng) * 0.25);
      e.service_type = types[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
      e.region = regions[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
      e.availability_tier = std::uniform_int_distribution<int>(1, 4)(rng);
      e.max_bandwidth_mbps = std::uniform_int_distribution<int>(1, 10)(rng) * 100.0;
      m.publish_offer(e);
    }
    ServiceRequest r;
    r.requester = "user";
    r.service_type = types[std::uniform_int_distribution<std::size_t>(0, 2)(rng)];
    if (std::uniform_int_distribution<int>(0, 1)(rng)) r.user_domain = oracle::domain_name(0);
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.min_tier = 2;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.max_latency_ms = 5;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.min_bandwidth_mbps = 300;
    if (std::uniform_int_distribution<int>(0, 2)(rng) == 0) r.allowed_regions = {"r1", "r2"};
    expect_same(m.broker(r, t), oracle::brute_force_broker(m, r, t, m.lambda(), domains_of(m, t)));
  }
}

TEST(MarketplaceState, RoundTrip) {
  const auto m = seeded();
  Marketplace copy;
  copy.restore_state(nlohmann::json::parse(m.state_json().dump()));
  EXPECT_EQ(copy.state_json(), m.state_json());
  EXPECT_TRUE(copy.trusted("ztpom", "csp-a"));
}

TEST(MarketplaceState, RequestJsonRoundTrip) {
  ServiceRequest r = want("transcode");
  r.allowed_regions = {"eu-west"};
  r.max_latency_ms = 12.5;
  EXPECT_EQ(request_from_json(to_json(r)), r);
  expect_error(Errc::invalid, [] { request_from_json(nlohmann::json{{"min_tier", "high"}}); }, "min_tier");
}
