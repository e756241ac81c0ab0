#include <memory>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "affectgen/service.hpp"
#include "fixtures.hpp"

// After Eigen: httplib pulls in system headers whose macros clash with it.
#include <httplib.h>

namespace affectgen {
namespace {

using nlohmann::json;

class ServiceTest : public ::testing::Test {
 protected:
  void SetUp() override {
    model_ = std::make_shared<ReferenceModel>(testing::spread_model(8, 41));
    lexicon_ = std::make_shared<Lexicon>(Lexicon::parse("b\tjoy\t0.9\nc\tjoy\t0.3\nd\tfear\t0.7\n"));
    ServiceOptions options;
    options.max_length = 30;
    options.step_size = 0.25;
    service_ = std::make_unique<Service>(model_, lexicon_, options);
    port_ = service_->start("127.0.0.1", 0);
    client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
  }

  void TearDown() override { service_->stop(); }

  httplib::Result post(const json& body) { return client_->Post("/generate", body.dump(), "application/json"); }

  std::shared_ptr<ReferenceModel> model_;
  std::shared_ptr<Lexicon> lexicon_;
  std::unique_ptr<Service> service_;
  std::unique_ptr<httplib::Client> client_;
  int port_ = 0;
};

TEST_F(ServiceTest, Meta) {
  const auto res = client_->Get("/meta");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  const json meta = json::parse(res->body);
  EXPECT_EQ(meta["schema_version"], 1);
  EXPECT_EQ(meta["emotions"].size(), 8u);
  EXPECT_EQ(meta["bounds"]["knob"]["min"], 0.0);
  EXPECT_EQ(meta["bounds"]["knob"]["max"], 1.0);
  EXPECT_FALSE(meta["topics"].empty());
  EXPECT_EQ(meta["model_id"], model_->model_id());
  EXPECT_EQ(meta["bounds"]["length"]["max"], 30);
  EXPECT_EQ(meta["defaults"]["step_size"], 0.25);
}

TEST_F(ServiceTest, GenerateReturnsRequestedLength) {
  const auto res = post({{"prompt", "a b"}, {"emotion", "joy"}, {"knob", 0.8}, {"length", 7}, {"seed", 3}});
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200) << res->body;
  const json body = json::parse(res->body);
  EXPECT_EQ(body["tokens"].size(), 7u);
  EXPECT_EQ(body["steps"].size(), 7u);
  EXPECT_TRUE(body.contains("mean_kl"));
  EXPECT_TRUE(body.contains("duration_ms"));
  EXPECT_EQ(body["intensity_score"]["emotion"], "joy");
  EXPECT_EQ(body["model_id"], model_->model_id());
  EXPECT_EQ(body["config"]["step_size"], 0.25);
}

TEST_F(ServiceTest, FixedSeedIsDeterministic) {
  const json req{{"prompt", "c a"}, {"emotion", "fear"}, {"length", 10}, {"seed", 17}};
  const auto a = post(req), b = post(req);
  ASSERT_TRUE(a && b);
  EXPECT_EQ(json::parse(a->body)["text"], json::parse(b->body)["text"]);
}

TEST_F(ServiceTest, ValidationErrorsNameFields) {
  auto res = post({{"prompt", "a"}, {"knob", 2.0}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  json body = json::parse(res->body);
  ASSERT_EQ(body["errors"].size(), 1u);
  EXPECT_EQ(body["errors"][0]["field"], "knob");

  res = post({{"prompt", "a"}, {"emotion", "happy"}, {"length", 500}, {"variance", 0}});
  body = json::parse(res->body);
  std::set<std::string> fields;
  for (const auto& e : body["errors"]) fields.insert(e["field"].get<std::string>());
  EXPECT_EQ(fields, (std::set<std::string>{"emotion", "length", "variance"}));

  res = post({{"prompt", "a"}, {"topic", "astrology"}});
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["errors"][0]["field"], "topic");

  res = client_->Post("/generate", "{not json", "application/json");
  EXPECT_EQ(res->status, 400);
  res = post({{"knob", 0.5}});
  EXPECT_EQ(json::parse(res->body)["errors"][0]["field"], "prompt");
}

TEST_F(ServiceTest, UnprojectableTopicIsFieldError) {
  // The letter vocabulary contains none of the built-in topic words.
  const auto res = post({{"prompt", "a"}, {"topic", "politics"}});
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);
  EXPECT_EQ(json::parse(res->body)["errors"][0]["field"], "topic");
}

TEST_F(ServiceTest, StreamEmitsOneEventPerToken) {
  std::string stream;
  const auto res = client_->Post("/generate", json{{"prompt", "a b"}, {"emotion", "joy"}, {"length", 6},
                                                   {"seed", 5}, {"stream", true}}
                                                  .dump(),
                                 "application/json");
  ASSERT_TRUE(res);
  ASSERT_EQ(res->status, 200);
  EXPECT_NE(res->get_header_value("Content-Type").find("text/event-stream"), std::string::npos);
  std::istringstream in(res->body);
  std::vector<json> events;
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("data: ", 0) == 0) events.push_back(json::parse(line.substr(6)));
  }
  ASSERT_EQ(events.size(), 7u);
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_EQ(events[i]["type"], "token");
    EXPECT_EQ(events[i]["index"], i);
  }
  EXPECT_EQ(events.back()["type"], "summary");
  EXPECT_EQ(events.back()["tokens"].size(), 6u);

  // Same seed without streaming produces the same text.
  const auto plain = post({{"prompt", "a b"}, {"emotion", "joy"}, {"length", 6}, {"seed", 5}});
  EXPECT_EQ(json::parse(plain->body)["text"], events.back()["text"]);
}

TEST(ServiceNoModel, AnswersUnavailable) {
  auto lexicon = std::make_shared<Lexicon>(Lexicon::parse("b\tjoy\t0.9\n"));
  Service service(nullptr, lexicon);
  const int port = service.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", port);
  const auto res = client.Post("/generate", R"({"prompt": "a"})", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 503);
  const auto meta = client.Get("/meta");
  EXPECT_FALSE(json::parse(meta->body)["ready"].get<bool>());
  service.set_model(std::make_shared<ReferenceModel>(testing::spread_model(8, 42)));
  EXPECT_EQ(client.Post("/generate", R"({"prompt": "a", "length": 2})", "application/json")->status, 200);
  service.stop();
}

}  // namespace
}  // namespace affectgen
