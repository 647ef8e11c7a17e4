#include <atomic>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>

#include "orps/gateway/openai.hpp"
#include "orps/gateway/roles.hpp"
#include "orps/gateway/scripted.hpp"
#include "support/harness.hpp"

using namespace orps;
using support::put_script;

namespace {

ChatRequest request(const std::string& problem, Role role, int round, int first, int n = 1,
                    const std::string& variant = "") {
  ChatRequest r;
  r.messages = {{"system", "s"}, {"user", "u"}};
  r.n = n;
  r.tag = RequestTag{problem, role, variant, round, first, 0};
  return r;
}

// Fails with a transient error a fixed number of times, then answers.
class FlakyBackend : public ModelBackend {
public:
  explicit FlakyBackend(int failures) : failures_(failures) {}
  std::vector<Completion> complete(const ChatRequest& req) override {
    ++calls;
    if (calls <= failures_) throw TransientError("HTTP 500");
    std::vector<Completion> out(static_cast<std::size_t>(req.n) + 2, Completion{"ok", 5, 99999, 0});
    return out;
  }
  std::atomic<int> calls{0};

private:
  int failures_;
};

ProblemRecord problem(const std::string& id = "p") {
  ProblemRecord p;
  p.id = id;
  p.prompt = "Write f(x) returning x squared.";
  p.hidden_tests = {"assert f(2) == 4"};
  return p;
}

// Local chat-completions server scripted per request.
class FakeEndpoint {
public:
  using Handler = std::function<void(const json& body, httplib::Response&)>;

  explicit FakeEndpoint(Handler h) : handler_(std::move(h)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits;
      last_auth = req.get_header_value("Authorization");
      handler_(json::parse(req.body), res);
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }

  std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  std::atomic<int> hits{0};
  std::string last_auth;

private:
  Handler handler_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

json choices(int n, const std::string& text) {
  json c = json::array();
  for (int i = 0; i < n; ++i) c.push_back({{"index", i}, {"message", {{"role", "assistant"}, {"content", text}}}});
  return json{{"choices", c}, {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 4 * n}}}};
}

ModelGateway live_gateway(const std::string& url, int retries = 2) {
  RetryPolicy retry;
  retry.max_retries = retries;
  retry.initial_backoff = std::chrono::milliseconds(0);
  return ModelGateway(std::make_shared<OpenAIBackend>(EndpointConfig{url, "test-model", "secret", std::chrono::seconds(10)}),
                      retry, 4);
}

}  // namespace

TEST(Scripted, PlaybackByKey) {
  support::TempDir dir;
  put_script(dir.path(), "p1", "programmer", 1, "0.txt", "first");
  put_script(dir.path(), "p1", "programmer", 1, "1.txt", "second");
  auto s = support::scripted(dir.path());
  auto out = s.gateway->complete_chat(request("p1", Role::programmer, 1, 0, 2));
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].text, "first");
  EXPECT_EQ(out[1].text, "second");
  EXPECT_EQ(out[0].latency_ms, 0);
  EXPECT_EQ(s.backend->requests().size(), 1u);
}

TEST(Scripted, ResolutionFallbacks) {
  support::TempDir dir;
  put_script(dir.path(), "_default", "critic", 1, "0.txt", "default critic");
  put_script(dir.path(), "p1", "programmer", 1, "0.txt", "r1-0");
  put_script(dir.path(), "p1", "programmer", 1, "1.txt", "r1-1");
  put_script(dir.path(), "p1", "programmer", 3, "0.txt", "r3-0");
  put_script(dir.path(), "p1", "programmer.code_only", 1, "0.txt", "code only");
  put_script(dir.path(), "p1", "critic", 1, "0.txt", "main");
  put_script(dir.path(), "p1", "critic", 1, "0.retry.txt", "retry");
  ScriptedBackend b(dir.path());

  auto tag = [](const std::string& p, Role r, int round, const std::string& variant = "", int attempt = 0) {
    return RequestTag{p, r, variant, round, 0, attempt};
  };
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 2), 1), "r1-1");  // highest lower round
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 4), 0), "r3-0");
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 3), 5), "r3-0");  // cycles
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 1), 3), "r1-1");
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 1, "code_only"), 0), "code only");
  EXPECT_EQ(b.lookup(tag("p1", Role::programmer, 1, "cot"), 0), "r1-0");  // variant falls back to role
  EXPECT_EQ(b.lookup(tag("p1", Role::critic, 1, "", 1), 0), "retry");
  EXPECT_EQ(b.lookup(tag("p1", Role::critic, 1), 0), "main");
  EXPECT_EQ(b.lookup(tag("other", Role::critic, 2), 0), "default critic");
  EXPECT_THROW(b.lookup(tag("other", Role::programmer, 1), 0), GatewayUnavailable);
  EXPECT_THROW(b.lookup(tag("p1", Role::test_writer, 1), 0), GatewayUnavailable);
  EXPECT_THROW(b.lookup(tag("p1", Role::programmer, 0), 0), GatewayUnavailable);
  EXPECT_THROW(ScriptedBackend(dir.path() / "missing"), ConfigError);
}

TEST(Gateway, RetryExhaustionRaisesUnavailable) {
  auto backend = std::make_shared<FlakyBackend>(3);
  RetryPolicy retry;
  retry.max_retries = 2;
  retry.initial_backoff = std::chrono::milliseconds(0);
  ModelGateway g(backend, retry);
  EXPECT_THROW(g.complete_chat(request("p", Role::programmer, 1, 0)), GatewayUnavailable);
  EXPECT_EQ(backend->calls.load(), 3);
}

TEST(Gateway, RetriesThenCapsCompletions) {
  auto backend = std::make_shared<FlakyBackend>(2);
  RetryPolicy retry;
  retry.max_retries = 2;
  retry.initial_backoff = std::chrono::milliseconds(0);
  ModelGateway g(backend, retry);
  auto req = request("p", Role::programmer, 1, 0, 3);
  req.max_new_tokens = 1500;
  auto out = g.complete_chat(req);
  EXPECT_EQ(out.size(), 3u);
  for (const auto& c : out) EXPECT_LE(c.completion_tokens, 1500u);
  auto u = g.usage().at("programmer");
  EXPECT_EQ(u.requests, 1u);
  EXPECT_EQ(u.completions, 3u);
}

TEST(Gateway, Preconditions) {
  ModelGateway g(std::make_shared<FlakyBackend>(0));
  auto req = request("p", Role::programmer, 1, 0, 0);
  EXPECT_THROW(g.complete_chat(req), PreconditionViolation);
  req.n = 1;
  req.messages.clear();
  EXPECT_THROW(g.complete_chat(req), PreconditionViolation);
  EXPECT_THROW(ModelGateway(nullptr), ConfigError);
}

TEST(UsageLedgerTest, AddsAndMerges) {
  UsageLedger l;
  l.add(Role::critic, {Completion{"a", 10, 3, 0}, Completion{"b", 10, 5, 0}});
  l.merge({{"critic", UsageCounters{1, 1, 1, 1}}, {"programmer", UsageCounters{4, 1, 0, 0}}});
  auto s = l.snapshot();
  EXPECT_EQ(s["critic"], (UsageCounters{3, 2, 21, 9}));
  EXPECT_EQ(total(s).completions, 7u);
}

TEST(OpenAI, SuccessCarriesRequestShape) {
  json seen;
  FakeEndpoint ep([&](const json& body, httplib::Response& res) {
    seen = body;
    res.set_content(dump_json(choices(body["n"].get<int>(), "hello")), "application/json");
  });
  auto g = live_gateway(ep.base_url());
  auto req = request("p", Role::programmer, 1, 0, 3);
  req.max_new_tokens = 1500;
  req.temperature = 0.7;
  auto out = g.complete_chat(req);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].text, "hello");
  EXPECT_EQ(out[0].prompt_tokens, 12u);
  EXPECT_EQ(seen["model"], "test-model");
  EXPECT_EQ(seen["n"], 3);
  EXPECT_EQ(seen["max_tokens"], 1500);
  EXPECT_EQ(ep.last_auth, "Bearer secret");
}

TEST(OpenAI, ServerErrorsAreRetried) {
  FakeEndpoint ep([&, count = 0](const json& body, httplib::Response& res) mutable {
    if (++count <= 2) {
      res.status = 500;
      return;
    }
    res.set_content(dump_json(choices(body["n"].get<int>(), "late")), "application/json");
  });
  auto g = live_gateway(ep.base_url());
  EXPECT_EQ(g.complete_chat(request("p", Role::critic, 1, 0)).front().text, "late");
  EXPECT_EQ(ep.hits.load(), 3);
}

TEST(OpenAI, ThreeServerErrorsWithRetryBudgetTwo) {
  FakeEndpoint ep([](const json&, httplib::Response& res) { res.status = 500; });
  auto g = live_gateway(ep.base_url(), 2);
  EXPECT_THROW(g.complete_chat(request("p", Role::critic, 1, 0)), GatewayUnavailable);
  EXPECT_EQ(ep.hits.load(), 3);
}

TEST(OpenAI, ContextOverflowAndClientErrors) {
  FakeEndpoint ep([](const json& body, httplib::Response& res) {
    res.status = body["max_tokens"] == 1 ? 401 : 400;
    res.set_content(R"({"error": "This model's maximum context length is 4096 tokens"})", "application/json");
  });
  auto g = live_gateway(ep.base_url());
  EXPECT_THROW(g.complete_chat(request("p", Role::programmer, 1, 0)), ContextOverflow);
  auto req = request("p", Role::programmer, 1, 0);
  req.max_new_tokens = 1;
  EXPECT_THROW(g.complete_chat(req), GatewayUnavailable);
}

TEST(OpenAI, FewerChoicesAreToppedUp) {
  FakeEndpoint ep([](const json&, httplib::Response& res) {
    res.set_content(dump_json(choices(1, "one")), "application/json");
  });
  auto g = live_gateway(ep.base_url());
  auto out = g.complete_chat(request("p", Role::programmer, 1, 0, 4));
  EXPECT_EQ(out.size(), 4u);
  EXPECT_EQ(ep.hits.load(), 4);
}

TEST(OpenAI, ConfigValidation) {
  EXPECT_THROW(OpenAIBackend(EndpointConfig{"localhost:8000", "m", "", std::chrono::seconds(1)}), ConfigError);
  EXPECT_THROW(OpenAIBackend(EndpointConfig{"http://localhost:8000/v1", "", "", std::chrono::seconds(1)}), ConfigError);
}

TEST(Critique, DollarDelimitedScore) {
  support::TempDir dir;
  put_script(dir.path(), "p", "critic", 1, "0.txt",
             "=== Critic Thoughts ===\nThe nested loop is O(n^2); the tests pass but a set would be faster.\n"
             "=== Score ===\n$$3$$");
  auto s = support::scripted(dir.path());
  auto pc = critique(*s.gateway, RoleSettings{}, "=== Problem ===\nx", "def f(): pass", std::string("Execution: ok"),
                     RequestTag{"p", Role::critic, "", 1, 0, 0});
  EXPECT_EQ(pc.score, 3);
  EXPECT_FALSE(pc.anomaly);
  EXPECT_FALSE(pc.critique_text.empty());
  auto prompt = s.backend->requests().front().messages.back().content;
  EXPECT_NE(prompt.find("=== Execution Report ==="), std::string::npos);
  EXPECT_NE(prompt.find("Execution: ok"), std::string::npos);
}

TEST(Critique, FeedbackOmittedUsesNoFeedbackVariant) {
  support::TempDir dir;
  put_script(dir.path(), "p", "critic.no_feedback", 1, "0.txt", "fine $$6$$");
  auto s = support::scripted(dir.path());
  auto pc = critique(*s.gateway, RoleSettings{}, "ctx", "code", std::nullopt, RequestTag{"p", Role::critic, "", 1, 0, 0});
  EXPECT_EQ(pc.score, 6);
  auto req = s.backend->requests().front();
  EXPECT_EQ(req.tag.variant, "no_feedback");
  for (const auto& m : req.messages) EXPECT_EQ(m.content.find("Execution Report"), std::string::npos);
}

TEST(Critique, MalformedOnceThenRetry) {
  support::TempDir dir;
  put_script(dir.path(), "p", "critic", 1, "0.txt", "looks fine, score: high");
  put_script(dir.path(), "p", "critic", 1, "0.retry.txt", "fine $$8$$");
  auto s = support::scripted(dir.path());
  UsageLedger usage;
  auto pc = critique(*s.gateway, RoleSettings{}, "ctx", "code", std::string("fb"), RequestTag{"p", Role::critic, "", 1, 0, 0},
                     &usage);
  EXPECT_EQ(pc.score, 8);
  EXPECT_FALSE(pc.anomaly);
  EXPECT_EQ(usage.snapshot()["critic"].requests, 2u);
}

TEST(Critique, MalformedTwiceFallsBackToMinimum) {
  support::TempDir dir;
  put_script(dir.path(), "p", "critic", 1, "0.txt", "score: three");
  auto s = support::scripted(dir.path());
  RoleSettings settings;
  settings.score_range = ScoreRange{2, 9};
  auto pc = critique(*s.gateway, settings, "ctx", "code", std::string("fb"), RequestTag{"p", Role::critic, "", 1, 0, 0});
  EXPECT_EQ(pc.score, 2);
  EXPECT_TRUE(pc.anomaly);
  EXPECT_EQ(s.backend->requests().size(), 2u);
  EXPECT_THROW(critique(*s.gateway, settings, "", "code", std::nullopt, {}), PreconditionViolation);
}

TEST(GenerateTests, DropsBrokenAsserts) {
  support::TempDir dir;
  put_script(dir.path(), "p", "test_writer", 0, "0.txt",
             "```python\nassert f(1) == 1\nassert f(2) == 4\nassert f((3) == 9\nassert f(0) == 0\nassert f(-1) == 1\n```");
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  auto tests = generate_tests(*s.gateway, *ex, RoleSettings{}, problem(), 10);
  EXPECT_EQ(tests, (std::vector<std::string>{"assert f(1) == 1", "assert f(2) == 4", "assert f(0) == 0", "assert f(-1) == 1"}));
}

TEST(GenerateTests, CapsAgainstDatasetTests) {
  support::TempDir dir;
  put_script(dir.path(), "p", "test_writer", 0, "0.txt",
             "```\nassert f(10) == 100\nassert f(11) == 121\nassert f(12) == 144\nassert f(13) == 169\nassert f(14) == 196\n```");
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  auto p = problem();
  for (int i = 0; i < 14; ++i) p.visible_tests.push_back("assert f(" + std::to_string(i) + ") == " + std::to_string(i * i));
  auto tests = generate_tests(*s.gateway, *ex, RoleSettings{}, p, 5);
  EXPECT_LE(tests.size(), 1u);
  EXPECT_LE(tests.size() + p.visible_tests.size(), 15u);
}

TEST(GenerateTests, DeduplicatesAndRejectsEmpty) {
  support::TempDir dir;
  put_script(dir.path(), "p", "test_writer", 0, "0.txt", "```\nassert f(1) == 1\nassert f(1) == 1\n```");
  put_script(dir.path(), "q", "test_writer", 0, "0.txt", "I cannot write tests for this.");
  auto s = support::scripted(dir.path());
  auto ex = support::fake_executor();
  EXPECT_EQ(generate_tests(*s.gateway, *ex, RoleSettings{}, problem("p"), 10).size(), 1u);
  EXPECT_THROW(generate_tests(*s.gateway, *ex, RoleSettings{}, problem("q"), 10), NoValidTests);
  // Hidden tests never reach the test writer.
  for (const auto& r : s.backend->requests())
    for (const auto& m : r.messages) EXPECT_EQ(m.content.find("assert f(2) == 4"), std::string::npos);
}
