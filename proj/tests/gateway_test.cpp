#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "expect.hpp"
#include "oracles.hpp"
#include "ztpom/gateway.hpp"

using namespace ztpom;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

GatewayConfig base_config() {
  GatewayConfig cfg = load_config(oracle::fixture_path("ztpom.json"));
  cfg.env_seed.reset();
  return cfg;
}

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("ztpom-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Client {
  Service& svc;
  Response get(const std::string& target) { return svc.handle(make_request("GET", target)); }
  Response post(const std::string& target, const json& body) {
    return svc.handle(make_request("POST", target, body.dump()));
  }
  Response post_raw(const std::string& target, std::string body) {
    return svc.handle(make_request("POST", target, std::move(body)));
  }
  Response del(const std::string& target) { return svc.handle(make_request("DELETE", target)); }
};

json video() { return oracle::fixture_json("video.json"); }

std::string deploy_active(Service& svc) {
  Client c{svc};
  const Response r = c.post("/deployments", {{"blueprint", video()}});
  EXPECT_EQ(r.status, 201) << r.body.dump();
  const std::string id = r.body.at("id");
  svc.advance(5);
  EXPECT_EQ(c.get("/deployments/" + id).body.at("state"), "ACTIVE");
  return id;
}

}  // namespace

TEST(GatewayConfig, FixtureLoads) {
  const auto cfg = base_config();
  EXPECT_EQ(cfg.host, "127.0.0.1");
  EXPECT_EQ(cfg.port, 8080);
  EXPECT_EQ(cfg.seed, 15u);
  EXPECT_EQ(cfg.owner, "ztpom");
  EXPECT_TRUE(fs::exists(cfg.topology_path));
  EXPECT_EQ(cfg.agent_defaults.deploy_delay_ticks, 1);
}

TEST(GatewayConfig, Rejections) {
  const fs::path base = oracle::fixture_path("");
  json doc = oracle::fixture_json("ztpom.json");
  doc["miss_threshold"] = 0;
  expect_error(Errc::invalid, [&] { config_from_json(doc, base); }, "miss_threshold");
  doc = oracle::fixture_json("ztpom.json");
  doc["topology"] = "missing.json";
  expect_error(Errc::io, [&] { config_from_json(doc, base); }, "missing.json");
  doc = oracle::fixture_json("ztpom.json");
  doc["listen"] = "nonsense";
  expect_error(Errc::invalid, [&] { config_from_json(doc, base); }, "listen");
  expect_error(Errc::io, [] { load_config("/nonexistent/ztpom.json"); });
}

TEST(GatewayConfig, EnvironmentSeed) {
  auto cfg = base_config();
  ::setenv("ZTPOM_SEED", "4242", 1);
  apply_env(cfg);
  ::unsetenv("ZTPOM_SEED");
  EXPECT_EQ(cfg.seed, 4242u);
  EXPECT_EQ(cfg.env_seed, 4242u);
  ::setenv("ZTPOM_SEED", "-3", 1);
  expect_error(Errc::invalid, [&] { apply_env(cfg); }, "ZTPOM_SEED");
  ::unsetenv("ZTPOM_SEED");
}

TEST(GatewayWire, StatusMapping) {
  EXPECT_EQ(http_status(Errc::syntax), 400);
  EXPECT_EQ(http_status(Errc::invalid), 400);
  EXPECT_EQ(http_status(Errc::invalid_token), 401);
  EXPECT_EQ(http_status(Errc::wrong_provider), 403);
  EXPECT_EQ(http_status(Errc::not_found), 404);
  EXPECT_EQ(http_status(Errc::wrong_state), 409);
  EXPECT_EQ(http_status(Errc::duplicate_session), 409);
  EXPECT_EQ(http_status(Errc::no_offer), 422);
  EXPECT_EQ(http_status(Errc::no_feasible_path), 422);
  EXPECT_EQ(http_status(Errc::io), 500);
}

TEST(GatewayWire, RequestParsing) {
  const Request r = make_request("GET", "/catalogue?service_type=trans%20code&max_price=1.5&flag");
  EXPECT_EQ(r.path, "/catalogue");
  EXPECT_EQ(r.query.at("service_type"), "trans code");
  EXPECT_EQ(r.query.at("max_price"), "1.5");
  EXPECT_EQ(r.query.at("flag"), "");
}

TEST(GatewayRoutes, BlueprintRegistry) {
  Service svc(base_config());
  Client c{svc};
  auto r = c.post("/blueprints", video());
  EXPECT_EQ(r.status, 201);
  EXPECT_EQ(r.body, (json{{"id", "video"}, {"version", 1}}));
  EXPECT_EQ(c.get("/blueprints/video").body.at("nodes").size(), 3u);
  r = c.post_raw("/blueprints", "{\"id\": ");
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body.at("error"), "syntax");
  auto bad = video();
  bad["version"] = 2;
  bad["chains"][0]["functions"].push_back("ghost");
  r = c.post("/blueprints", bad);
  EXPECT_EQ(r.status, 400);
  EXPECT_EQ(r.body.at("error"), "invalid");
  auto next = video();
  next["version"] = 2;
  next["nodes"][1]["params"]["codec"] = "av1";
  r = c.post("/blueprints", next);
  EXPECT_EQ(r.status, 201);
  EXPECT_EQ(r.body.at("changes").at("modified").size(), 1u);
  EXPECT_EQ(c.get("/blueprints/video?version=1").body.at("version"), 1);
  EXPECT_EQ(c.get("/blueprints/video?version=9").status, 404);
}

TEST(GatewayRoutes, DeployToActiveWithSimulatedAgents) {
  Service svc(base_config());
  Client c{svc};
  auto r = c.post("/deployments", {{"blueprint", video()}});
  ASSERT_EQ(r.status, 201) << r.body.dump();
  EXPECT_EQ(r.body.at("id"), "dep-1");
  EXPECT_EQ(r.body.at("state"), "PROVISIONING");
  EXPECT_EQ(r.body.at("epochs").at("edit"), 1);
  svc.advance(5);
  r = c.get("/deployments/dep-1");
  EXPECT_EQ(r.body.at("state"), "ACTIVE");
  EXPECT_EQ(c.get("/deployments").body, (json::array({{{"id", "dep-1"},
                                                        {"blueprint_id", "video"},
                                                        {"version", 1},
                                                        {"state", "ACTIVE"}}})));
  // Same inline blueprint again is fine; changed content at the same version is not.
  EXPECT_EQ(c.post("/deployments", {{"blueprint_id", "video"}}).status, 201);
  auto changed = video();
  changed["nodes"][0]["params"]["clock"] = "other";
  r = c.post("/deployments", {{"blueprint", changed}});
  EXPECT_EQ(r.status, 409);
  EXPECT_EQ(r.body.at("error"), "conflict");
}

TEST(GatewayRoutes, DeploymentErrors) {
  Service svc(base_config());
  Client c{svc};
  auto r = c.get("/deployments/dep-9");
  EXPECT_EQ(r.status, 404);
  EXPECT_EQ(r.body.at("error"), "not-found");
  EXPECT_NE(r.body.at("message").get<std::string>().find("dep-9"), std::string::npos);
  r = c.post("/deployments", {{"blueprint_id", "nothing"}});
  EXPECT_EQ(r.status, 404);
  auto bp = video();
  bp["nodes"][1]["service_type"] = "teleport";
  r = c.post("/deployments", {{"blueprint", bp}});
  EXPECT_EQ(r.status, 422);
  EXPECT_EQ(r.body.at("error"), "no-offer");
  EXPECT_EQ(c.get("/nowhere").status, 404);
  EXPECT_EQ(c.post_raw("/deployments", "[1,2").status, 400);
}

TEST(GatewayRoutes, RechainRulesAndFlows) {
  Service svc(base_config());
  Client c{svc};
  const auto id = deploy_active(svc);
  auto r = c.get("/deployments/" + id + "/flows?count=5");
  ASSERT_EQ(r.status, 200);
  const json& flow = r.body.at("flows").at(0);
  EXPECT_EQ(flow.at("delivered"), 5);
  EXPECT_EQ(flow.at("packets").at(0).at("latency_ms"), 22.0);

  r = c.post("/deployments/" + id + "/rechain", {{"order", {"transform", "capture", "view"}}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("version"), 2);
  EXPECT_EQ(r.body.at("epochs").at("edit"), 2);
  r = c.get("/deployments/" + id + "/rules");
  const json& rules = r.body.at("rules").at(0);
  EXPECT_EQ(rules.at("epoch"), 2);
  const std::string text = rules.at("text");
  EXPECT_EQ(text.rfind("@C match(in=host:02:00:00:00:0c:01,vlan=0,dst=02:00:00:00:0c:02) -> ", 0), 0u) << text;
  r = c.get("/deployments/" + id + "/flows?count=3");
  EXPECT_EQ(r.body.at("flows").at(0).at("packets").at(0).at("trace"),
            (json::array({"transform", "capture", "view"})));
  EXPECT_EQ(c.get("/deployments/" + id + "/flows?count=0").status, 400);
  EXPECT_EQ(c.get("/deployments/" + id + "/flows?count=x").status, 400);

  r = c.post("/deployments/" + id + "/rechain", {{"chain", "nope"}, {"order", {"view"}}});
  EXPECT_EQ(r.status, 404);
  r = c.post("/deployments/dep-9/rechain", {{"order", {"view"}}});
  EXPECT_EQ(r.status, 404);
}

TEST(GatewayRoutes, TeardownFreesFabric) {
  Service svc(base_config());
  Client c{svc};
  const auto bare = svc.fabric().allocation_state();
  const auto id = deploy_active(svc);
  for (const auto& l : c.get("/topology").body.at("links")) {
    if (l.at("id") == "A-X") EXPECT_DOUBLE_EQ(l.at("committed_mbps").get<double>(), 800);
  }
  auto r = c.del("/deployments/" + id);
  EXPECT_EQ(r.body.at("state"), "TORN_DOWN");
  EXPECT_EQ(svc.fabric().allocation_state(), bare);
  EXPECT_EQ(c.del("/deployments/" + id).status, 409);
}

TEST(GatewayRoutes, AgentEndpoints) {
  GatewayConfig cfg = base_config();
  cfg.simulate_agents = false;
  Service svc(cfg);
  Client c{svc};
  c.post("/deployments", {{"blueprint", video()}});
  auto r = c.post("/agent/hello", {{"deployment", "dep-1"}, {"node", "capture"}, {"provider", "csp-b"}});
  EXPECT_EQ(r.status, 403);
  EXPECT_EQ(r.body.at("error"), "wrong-provider");
  r = c.post("/agent/hello", {{"deployment", "dep-1"}, {"node", "capture"}, {"provider", "csp-a"}});
  ASSERT_EQ(r.status, 200);
  const std::string token = r.body.at("token");
  EXPECT_EQ(r.body.at("server"), "http://127.0.0.1:8080");
  EXPECT_EQ(c.post("/agent/hello", {{"deployment", "dep-1"}, {"node", "capture"}, {"provider", "csp-a"}}).status,
            409);
  EXPECT_EQ(c.get("/agent/recipe").status, 401);
  EXPECT_EQ(c.get("/agent/recipe?token=zzz").status, 401);
  r = c.get("/agent/recipe?token=" + token);
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.body.at("concrete_image"), "img-a-gstreamer");
  r = c.post("/agent/status", {{"token", token}, {"phase", "READY"}});
  EXPECT_EQ(r.body, (json{{"directive", "none"}}));
  EXPECT_EQ(c.post("/agent/status", {{"token", token}, {"phase", "DANCING"}}).status, 400);
}

TEST(GatewayRoutes, CatalogueBrokerTrust) {
  Service svc(base_config());
  Client c{svc};
  EXPECT_EQ(c.get("/catalogue").body.size(), 6u);
  EXPECT_EQ(c.get("/catalogue?service_type=transcode").body.at(0).at("offer_id"), "b-transcode");
  auto r = c.post("/broker", {{"service_type", "transcode"}, {"user_domain", "C"}});
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_DOUBLE_EQ(r.body.at("matches").at(0).at("score").get<double>(), 1.2);
  r = c.post("/broker", {{"service_type", "teleport"}});
  EXPECT_TRUE(r.body.at("matches").empty());
  EXPECT_EQ(r.body.at("binding"), "service_type");

  EXPECT_EQ(c.post("/catalogue/certs", {{"party", "csp-d"}, {"fingerprint", std::string(64, 'd')}}).status, 201);
  r = c.post("/catalogue/offers", {{"offer_id", "d-render"},
                                   {"provider_id", "csp-d"},
                                   {"service_type", "render"},
                                   {"region", "eu-west"},
                                   {"price_per_hour", 0.1}});
  EXPECT_EQ(r.status, 201) << r.body.dump();
  EXPECT_EQ(c.post("/catalogue/offers", {{"offer_id", "x"}}).status, 400);
  r = c.post("/trust/csp-d/confirm", {{"peer", "ztpom"}});
  EXPECT_EQ(r.body.at("b_confirmed").get<bool>() || r.body.at("a_confirmed").get<bool>(), true);
  EXPECT_FALSE(c.get("/trust/ztpom/csp-d").body.at("a_confirmed").get<bool>() &&
               c.get("/trust/ztpom/csp-d").body.at("b_confirmed").get<bool>());
  c.post("/trust/ztpom/confirm", {{"peer", "csp-d"}});
  const auto status = c.get("/trust/csp-d/ztpom").body;
  EXPECT_TRUE(status.at("a_confirmed").get<bool>() && status.at("b_confirmed").get<bool>());
  EXPECT_EQ(c.get("/trust/csp-d/ghost").status, 404);
}

TEST(GatewayRoutes, EventsAreSequenced) {
  Service svc(base_config());
  Client c{svc};
  deploy_active(svc);
  auto r = c.get("/events");
  const auto& events = r.body.at("events");
  ASSERT_FALSE(events.empty());
  for (std::size_t i = 1; i < events.size(); ++i) {
    EXPECT_EQ(events[i].at("seq").get<std::uint64_t>(), events[i - 1].at("seq").get<std::uint64_t>() + 1);
  }
  const auto next = r.body.at("next").get<std::uint64_t>();
  EXPECT_EQ(next, events.back().at("seq").get<std::uint64_t>());
  EXPECT_TRUE(c.get("/events?since=" + std::to_string(next)).body.at("events").empty());
  EXPECT_EQ(c.get("/events?since=-1").status, 400);
}

TEST(GatewayRoutes, SimRunAndAdvance) {
  Service svc(base_config());
  Client c{svc};
  auto r = c.post("/sim/run", oracle::fixture_json("sc15.json"));
  ASSERT_EQ(r.status, 200) << r.body.dump();
  EXPECT_EQ(r.body.at("seed"), 15);
  EXPECT_EQ(r.body.at("results").at(0).at("delivered"), 10);
  r = c.post("/sim/advance", {{"ticks", 3}});
  EXPECT_EQ(r.body.at("now"), 3);
  EXPECT_EQ(c.post("/sim/advance", {{"ticks", -1}}).status, 400);
}

TEST(GatewayPersistence, SnapshotRestoreContinue) {
  TempDir dir;
  GatewayConfig cfg = base_config();
  cfg.persistence_dir = dir.path.string();
  json reference;
  {
    Service svc(cfg);
    Client c{svc};
    deploy_active(svc);
    c.post("/deployments/dep-1/rechain", {{"order", {"transform", "capture", "view"}}});
    const auto r = c.post("/snapshot", json::object());
    ASSERT_EQ(r.status, 200);
    EXPECT_TRUE(fs::exists(r.body.at("path").get<std::string>()));
    reference = svc.state_json();
  }
  Service restored(cfg);
  EXPECT_EQ(restored.state_json(), reference);
  // Agents re-attach with hello and keep the deployment ACTIVE.
  restored.advance(20);
  Client c{restored};
  EXPECT_EQ(c.get("/deployments/dep-1").body.at("state"), "ACTIVE");
  EXPECT_EQ(restored.provisioner().live_sessions("dep-1"), 3u);
}

TEST(GatewayPersistence, CorruptSnapshotNamesFile) {
  TempDir dir;
  GatewayConfig cfg = base_config();
  cfg.persistence_dir = dir.path.string();
  std::string path;
  {
    Service svc(cfg);
    path = svc.snapshot().string();
  }
  std::ofstream(path, std::ios::trunc) << "{\"format\": \"ztpom-snapshot/1\", \"fabric\": 7}";
  expect_error(Errc::io, [&] { Service again(cfg); }, path);
  Service fresh(base_config());
  const auto before = fresh.state_json();
  expect_error(Errc::io, [&] { fresh.restore(path); }, "corrupt");
  EXPECT_EQ(fresh.state_json(), before);
  expect_error(Errc::io, [&] { fresh.restore(dir.path / "absent.json"); }, "does not exist");
}

TEST(GatewayPersistence, SnapshotNeedsDirectory) {
  Service svc(base_config());
  expect_error(Errc::precondition, [&] { svc.snapshot(); });
  EXPECT_EQ(Client{svc}.post("/snapshot", json::object()).status, 409);
}

TEST(GatewayPersistence, AutosnapshotAfterMutation) {
  TempDir dir;
  GatewayConfig cfg = base_config();
  cfg.persistence_dir = dir.path.string();
  cfg.autosnapshot = true;
  Service svc(cfg);
  EXPECT_FALSE(fs::exists(svc.snapshot_path()));
  Client{svc}.get("/catalogue");
  EXPECT_FALSE(fs::exists(svc.snapshot_path()));
  Client{svc}.post("/blueprints", video());
  EXPECT_TRUE(fs::exists(svc.snapshot_path()));
}

TEST(GatewayTransport, LocalTransportRoundTrips) {
  Service svc(base_config());
  LocalTransport t(svc);
  const WireReply r = t.send("GET", "/catalogue?service_type=capture", json());
  EXPECT_TRUE(r.ok());
  EXPECT_EQ(r.body.size(), 1u);
  EXPECT_EQ(t.send("GET", "/deployments/x", json()).status, 404);
}
