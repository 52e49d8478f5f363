// Exercises the three remote protocols against a local server: embedding
// provider, model client, judge client.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "mscke/dataset.hpp"
#include "mscke/embedding.hpp"
#include "mscke/engine.hpp"

using namespace mscke;
using nlohmann::json;

namespace {

// Serves all three endpoints from deterministic toy data.
class TestServer {
 public:
  TestServer() : toy_(9, 8, 2) {
    server_.Post("/embed_text", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body);
      Vec v = toy_.encode_text(body.at("text").get<std::string>());
      res.set_content(json{{"vector", v}}.dump(), "application/json");
    });
    server_.Post("/embed_image", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body);
      PatchSet p = toy_.encode_image(ImageRef{body.at("image").get<std::string>()});
      json rows = json::array();
      for (std::size_t r = 0; r < p.rows(); ++r)
        rows.push_back(std::vector<double>(p.row(r), p.row(r) + p.cols));
      res.set_content(json{{"patches", rows}}.dump(), "application/json");
    });
    server_.Post("/generate", [](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body);
      std::string image =
          body.at("image").is_null() ? "<null>" : body.at("image").get<std::string>();
      res.set_content(
          json{{"text", "gen[" + image + "|" + body.at("prompt").get<std::string>() + "]"}}.dump(),
          "application/json");
    });
    server_.Post("/judge", [this](const httplib::Request& req, httplib::Response& res) {
      last_auth_ = req.get_header_value("Authorization");
      json body = json::parse(req.body);
      std::string prompt = body.at("prompt").get<std::string>();
      std::string verdict = prompt.find("hard") != std::string::npos ? "No" : "Yes";
      res.set_content(json{{"verdict", verdict}}.dump(), "application/json");
    });
    server_.Post("/judge_bad", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(json{{"verdict", "Dunno"}}.dump(), "application/json");
    });
    server_.Post("/flaky", [](const httplib::Request&, httplib::Response& res) {
      res.status = 500;
    });

    port_ = server_.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~TestServer() {
    server_.stop();
    thread_.join();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
  const ToyProvider& toy() const { return toy_; }
  std::string last_auth() const { return last_auth_; }

 private:
  ToyProvider toy_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::string last_auth_;
};

}  // namespace

TEST_CASE("http embedding provider round trips toy vectors") {
  TestServer server;
  HttpProvider remote(server.url(), 8, 2, 5.0);

  Vec direct = server.toy().encode_text("what color is the kite");
  Vec via_http = encode_text(remote, "what color is the kite");
  CHECK(via_http == direct);  // f32-grid values survive JSON exactly

  PatchSet patches = encode_image(remote, ImageRef{"img-7"});
  CHECK(patches == server.toy().encode_image(ImageRef{"img-7"}));
  CHECK(encode_image(remote, std::nullopt).rows() == 0);
}

TEST_CASE("http embedding provider surfaces transport failures with a cause") {
  HttpProvider unreachable("http://127.0.0.1:1", 8, 2, 0.3);
  CHECK_THROWS_AS(encode_text(unreachable, "text"), TransportError);
}

TEST_CASE("http model client generates and propagates non-200 as transport errors") {
  TestServer server;
  HttpModelClient client("remote", server.url(), 5.0);
  CHECK(client.generate(ImageRef{"img-1"}, "hello") == "gen[img-1|hello]");
  CHECK(client.generate(std::nullopt, "hello") == "gen[<null>|hello]");

  HttpModelClient flaky("flaky", server.url() + "/nowhere", 0.5);
  CHECK_THROWS_AS(flaky.generate(std::nullopt, "x"), TransportError);
}

TEST_CASE("http judge: verdicts, bearer token pass-through, bad verdicts") {
  TestServer server;
  HttpJudge judge(server.url(), "secret-token", 5.0);
  JudgeRequest req;
  req.prompt = "ordinary question";
  req.criterion_id = "c";
  req.candidate_id = "x";
  req.stage = 1;
  CHECK(judge.judge(req) == Verdict::kYes);
  CHECK(server.last_auth() == "Bearer secret-token");
  req.prompt = "a hard question";
  CHECK(judge.judge(req) == Verdict::kNo);

  HttpJudge unreachable("http://127.0.0.1:1", "", 0.3);
  CHECK_THROWS_AS(unreachable.judge(req), TransportError);
}

TEST_CASE("an http-backed engine routes like a local one") {
  TestServer server;
  HttpProvider remote(server.url(), 8, 2, 5.0);
  HttpModelClient base("base", server.url(), 5.0);
  HttpModelClient cf("cf", server.url(), 5.0);
  AlignmentHead head = make_head(FusionMode::kDotAttention, 8, 8, 3);
  head.bias = -5.0;  // wide routing margins for the toy texts below

  Engine engine(MemoryStore{}, head, remote, base, cf);
  engine.apply_edit(EditExample{ImageRef{"img-1"}, "stored fact", "value", "e1"});
  Answer a = engine.answer(QueryInput{ImageRef{"img-1"}, "stored fact value"});
  CHECK(a.route == Route::kCounterfactual);
  CHECK(a.text.rfind("gen[img-1|New fact: stored fact value", 0) == 0);

  // base-route answers come back verbatim from the remote base
  Answer b = engine.answer(QueryInput{std::nullopt, "totally elsewhere topic"});
  CHECK(b.route == Route::kBase);
  CHECK(b.text == base.generate(std::nullopt, "totally elsewhere topic"));

  // transport failures carry the route they happened on
  HttpModelClient dead("dead", "http://127.0.0.1:1", 0.3);
  Engine broken(MemoryStore{}, head, remote, dead, dead);
  CHECK_THROWS_WITH_AS(broken.answer(QueryInput{std::nullopt, "anything"}),
                       doctest::Contains("base route"), TransportError);
}
