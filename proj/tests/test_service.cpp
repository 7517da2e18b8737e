#include <gtest/gtest.h>

#include <thread>

#include "qlab/service.hpp"

using namespace qlab;

namespace {

class Service : public ::testing::Test {
 protected:
  void SetUp() override {
    ServiceConfig c;
    c.settings = SessionSettings::standard("Please consider the group.");
    c.settings.paths["1"] = 11;
    server_ = std::make_unique<SessionServer>(c);
    port_ = server_->bind_any_port();
    ASSERT_GT(port_, 0);
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }
  void TearDown() override {
    server_->stop();
    thread_.join();
  }

  httplib::Result post(const std::string& path, const json& body) {
    return client_->Post(path, body.dump(), "application/json");
  }

  std::string create(const json& body) {
    auto r = post("/sessions", body);
    EXPECT_EQ(r->status, 201) << r->body;
    return json::parse(r->body).at("id").get<std::string>();
  }

  std::unique_ptr<SessionServer> server_;
  std::unique_ptr<httplib::Client> client_;
  std::thread thread_;
  int port_ = 0;
};

}  // namespace

TEST_F(Service, UnknownSessionIs404) {
  auto r = client_->Get("/sessions/unknown");
  ASSERT_TRUE(r);
  EXPECT_EQ(r->status, 404);
  EXPECT_EQ(json::parse(r->body)["error"]["code"], "not_found");
  EXPECT_EQ(client_->Get("/sessions/unknown/payoff")->status, 404);
  EXPECT_EQ(post("/sessions/unknown/decision", {{"claim", 1}})->status, 404);
}

TEST_F(Service, LiveSessionPlaysToPayoff) {
  const auto id = create({{"treatment", "GT"}, {"mode", "live"}, {"seed", 3}});
  auto v = json::parse(client_->Get("/sessions/" + id)->body);
  EXPECT_EQ(v["status"], "running");
  EXPECT_EQ(client_->Get("/sessions/" + id + "/payoff")->status, 409);

  int guard = 0;
  while (v["status"] != "finished" && guard++ < 10000) {
    if (v["status"] == "awaiting_decision") {
      auto r = post("/sessions/" + id + "/decision", {{"claim", 2}});
      ASSERT_EQ(r->status, 200) << r->body;
      v = json::parse(r->body);
    } else {
      auto r = post("/sessions/" + id + "/advance", {{"mode", "units"}, {"amount", 25}});
      ASSERT_EQ(r->status, 200) << r->body;
      v = json::parse(r->body);
    }
  }
  ASSERT_EQ(v["status"], "finished");
  auto p = client_->Get("/sessions/" + id + "/payoff");
  ASSERT_EQ(p->status, 200);
  const auto payoff = json::parse(p->body);
  EXPECT_EQ(payoff["total_micros"].get<std::int64_t>(),
            payoff["base_fee_micros"].get<std::int64_t>() + payoff["bonus_micros"].get<std::int64_t>());

  auto log = client_->Get("/sessions/" + id + "/log");
  ASSERT_EQ(log->status, 200);
  EXPECT_EQ(log->get_header_value("Content-Type"), "application/x-ndjson");
  EXPECT_EQ(json(payoff_json(replay(log->body).payoff)), payoff);
}

TEST_F(Service, CommittedAndNamedPath) {
  const auto a = create({{"treatment", "IT"}, {"mode", "committed"}, {"path_id", "1"}});
  EXPECT_EQ(json::parse(client_->Get("/sessions/" + a)->body)["status"], "awaiting_commit");
  EXPECT_EQ(post("/sessions/" + a + "/advance", json::object())->status, 409);
  EXPECT_EQ(post("/sessions/" + a + "/commit", {{"strategy", "sometimes"}})->status, 400);
  auto r = post("/sessions/" + a + "/commit", {{"strategy", "assign_two"}});
  ASSERT_EQ(r->status, 200);
  EXPECT_EQ(json::parse(r->body)["status"], "finished");

  const auto b = create({{"treatment", "IT"}, {"mode", "committed"}, {"seed", 11}, {"strategy", "assign_two"}});
  EXPECT_EQ(client_->Get("/sessions/" + a + "/payoff")->body, client_->Get("/sessions/" + b + "/payoff")->body);
}

TEST_F(Service, NudgeTextDelivered) {
  const auto id = create({{"treatment", "GT-Nudge"}, {"mode", "live"}});
  EXPECT_EQ(json::parse(client_->Get("/sessions/" + id)->body)["nudge_text"], "Please consider the group.");
}

TEST_F(Service, ValidationErrors) {
  EXPECT_EQ(post("/sessions", {{"treatment", "XX"}})->status, 400);
  EXPECT_EQ(post("/sessions", json::object())->status, 400);
  EXPECT_EQ(client_->Post("/sessions", "{not json", "application/json")->status, 400);
  EXPECT_EQ(post("/sessions", {{"treatment", "GT"}, {"path_id", "nope"}})->status, 400);
  EXPECT_EQ(post("/sessions", {{"treatment", "GT"}, {"mode", "live"}, {"strategy", "assign_one"}})->status, 400);

  const auto id = create({{"treatment", "GT"}, {"seed", 1}});
  EXPECT_EQ(post("/sessions/" + id + "/decision", {{"claim", 1}})->status, 409);
  EXPECT_EQ(post("/sessions/" + id + "/decision", {{"claim", "two"}})->status, 400);
  EXPECT_EQ(post("/sessions/" + id + "/advance", {{"mode", "units"}})->status, 400);
  EXPECT_EQ(post("/sessions/" + id + "/advance", {{"mode", "warp"}})->status, 400);
  EXPECT_EQ(post("/sessions/" + id + "/commit", {{"strategy", "assign_one"}})->status, 409);
}

TEST_F(Service, ConcurrentClientsSeeConsistentState) {
  const auto id = create({{"treatment", "GT"}, {"mode", "committed"}, {"seed", 2}});
  std::vector<std::thread> ts;
  std::atomic<int> ok{0}, conflict{0}, other{0};
  for (int k = 0; k < 8; ++k) {
    ts.emplace_back([&, k] {
      httplib::Client c("127.0.0.1", port_);
      auto r = c.Post("/sessions/" + id + "/commit", json{{"strategy", k % 2 ? "assign_one" : "assign_two"}}.dump(),
                      "application/json");
      if (r && r->status == 200) {
        ++ok;
      } else if (r && r->status == 409) {
        ++conflict;
      } else {
        ++other;
      }
    });
  }
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 1);
  EXPECT_EQ(conflict.load(), 7);
  EXPECT_EQ(other.load(), 0);
}

TEST(ServiceConfig, ParsesSchemaAndReportsLines) {
  const std::string text = R"({
    "port": 9000,
    "nudge_text": "N",
    "treatments": [{"kind": "GT", "per_unit": 0.5}],
    "paths": {"1": 17}
  })";
  const auto c = service_config_from_json(parse_config_text(text));
  EXPECT_EQ(c.port, 9000);
  EXPECT_EQ(c.settings.treatments.at(TreatmentKind::GT).per_unit, 500000);
  EXPECT_EQ(c.settings.treatments.at(TreatmentKind::GT_NUDGE).nudge_text, "N");
  EXPECT_EQ(c.settings.paths.at("1"), 17u);

  try {
    parse_config_text("{\n  \"port\": 1,\n  \"host\": ,\n}", "f.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("f.json:3"), std::string::npos) << e.what();
  }
  try {
    service_config_from_json(json::parse(R"({"port": "high"})"));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("'port'"), std::string::npos);
  }
  EXPECT_THROW(service_config_from_json(json::parse(R"({"colour": 1})")), ConfigError);
  EXPECT_THROW(service_config_from_json(json::parse(R"({"treatments": [{"kind": "GT-Nudge"}]})")), ConfigError);
  EXPECT_THROW(service_config_from_json(json::parse(R"({"params": {"arrival_rate": -1}})")), ConfigError);
}

TEST(ServiceConfig, EnvironmentOverrides) {
  ServiceConfig c;
  setenv("QLAB_PORT", "12345", 1);
  setenv("QLAB_LOG_DIR", "/tmp/qlab-logs", 1);
  apply_env_overrides(c);
  EXPECT_EQ(c.port, 12345);
  EXPECT_EQ(*c.settings.log_dir, "/tmp/qlab-logs");
  setenv("QLAB_PORT", "abc", 1);
  EXPECT_THROW(apply_env_overrides(c), ConfigError);
  unsetenv("QLAB_PORT");
  unsetenv("QLAB_LOG_DIR");
}

TEST(ServiceConfig, ShippedSampleLoads) {
  const auto c = load_service_config(QLAB_SOURCE_DIR "/config/qlab.json");
  EXPECT_FALSE(c.settings.paths.empty());
  EXPECT_EQ(c.settings.treatments.count(TreatmentKind::GT_NUDGE), 0u);
}
