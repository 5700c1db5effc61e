#include <doctest.h>

#include <cmath>
#include <future>
#include <thread>

#include <httplib.h>

#include "prefkit/errors.hpp"
#include "prefkit/gateway.hpp"
#include "prefkit/judge_protocol.hpp"
#include "prefkit/mock_backends.hpp"
#include "support.hpp"

using namespace prefkit;
using nlohmann::json;
using testing::spec;

namespace {

PromptRecord prompt(const std::string& id = "p1", const std::string& reference = "the cat sits") {
  PromptRecord p;
  p.id = id;
  p.text = "What is the cat doing?";
  p.reference_answer = reference;
  return p;
}

std::string reply_with(const std::string& text) { return json{{"choices", {{{"text", text}}}}}.dump(); }

std::string block(const std::vector<double>& weights, const std::vector<int>& scores, int n = 1) {
  JudgeReply r;
  r.reference_answer = "ref";
  for (int i = 0; i < n; ++i) r.responses.push_back({weights, scores, std::nullopt});
  return "analysis\n" + format_judge_block(r);
}

}  // namespace

TEST_CASE("weighted overall: worked examples") {
  const std::vector<double> w{0.4, 0.2, 0.1, 0.1, 0.1, 0.1};
  const std::vector<int> s{8, 7, 10, 9, 10, 10};
  CHECK(weighted_overall(w, s) == 8.5);
  const std::vector<double> eq(6, 1.0 / 6.0);
  const std::vector<int> sevens(6, 7);
  CHECK(weighted_overall(eq, sevens) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("weights: tolerance and renormalization") {
  const std::vector<double> ok{0.2, 0.2, 0.2, 0.2, 0.1, 0.105};
  const auto n = normalize_weights(ok);
  double sum = 0;
  for (double x : n) sum += x;
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> low{0.2, 0.2, 0.1, 0.1, 0.1, 0.1};
  CHECK_THROWS_AS(normalize_weights(low), JudgeReplyError);
  const std::vector<double> neg{0.6, 0.6, -0.2, 0.0, 0.0, 0.0};
  CHECK_THROWS_AS(normalize_weights(neg), JudgeReplyError);
}

TEST_CASE("judge reply parsing uses the last fenced block and checks shape") {
  const auto good = block({0.4, 0.2, 0.1, 0.1, 0.1, 0.1}, {8, 7, 10, 9, 10, 10}, 2);
  const auto parsed = parse_judge_reply("```json\n{\"junk\":1}\n```\n" + good, 2);
  REQUIRE(parsed.responses.size() == 2);
  CHECK(parsed.responses[0].scores[2] == 10);
  CHECK_THROWS_AS(parse_judge_reply(good, 3), JudgeReplyError);
  CHECK_THROWS_AS(parse_judge_reply("no block here", 1), JudgeReplyError);
  CHECK_THROWS_AS(parse_judge_reply(block({0.5, 0.5, 0, 0, 0, 0}, {11, 0, 0, 0, 0, 0}), 1), JudgeReplyError);
}

TEST_CASE("pairwise reply must be exactly A or B") {
  CHECK(parse_pairwise_reply(" A\n") == PairwiseChoice::first);
  CHECK(parse_pairwise_reply("B") == PairwiseChoice::second);
  CHECK_FALSE(parse_pairwise_reply("A.").has_value());
  CHECK_FALSE(parse_pairwise_reply("Response A").has_value());
  CHECK_FALSE(parse_pairwise_reply("").has_value());
}

TEST_CASE("rendered prompts carry the template and round trip through the parsers") {
  const std::vector<std::string> responses{"first answer", "second answer"};
  const auto text = render_scoring_prompt("Q?", "ref answer", responses);
  CHECK(text.find("Please act as an impartial evaluator") != std::string::npos);
  CHECK(text.find("[Response 2]") != std::string::npos);
  const auto back = parse_scoring_prompt(text);
  REQUIRE(back.has_value());
  CHECK(back->question == "Q?");
  CHECK(back->reference == "ref answer");
  CHECK(back->responses == responses);

  const auto pw = parse_pairwise_prompt(render_pairwise_prompt("Q?", "x y", "z"));
  REQUIRE(pw.has_value());
  CHECK(pw->response_a == "x y");
  CHECK(pw->response_b == "z");
  CHECK(parse_augment_prompt(render_augment_prompt("Q?", "the ref")) == std::optional<std::string>("the ref"));
}

TEST_CASE("mock generator: deterministic, n texts, precondition and cardinality errors") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("gen", EndpointKind::generator, "mock://generator"));
  GenerationRequest req;
  req.prompt_text = "Describe the picture";
  req.n_samples = 3;
  req.seed = 7;
  const auto a = g.generate("gen", req);
  const auto b = g.generate("gen", req);
  CHECK(a.size() == 3);
  CHECK(a == b);
  req.n_samples = 0;
  CHECK_THROWS_AS(g.generate("gen", req), PreconditionError);

  auto short_backend = std::make_shared<testing::FnBackend>(
      [](const std::string&, const json&, int) { return json{{"choices", {{{"text", "a"}}, {{"text", "b"}}}}}.dump(); });
  g.add_endpoint(spec("short", EndpointKind::generator, "mock://generator"), short_backend);
  req.n_samples = 3;
  CHECK_THROWS_AS(g.generate("short", req), ProtocolError);
}

TEST_CASE("endpoint kind is enforced") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("gen", EndpointKind::generator, "mock://generator"));
  const SingleImageContext ctx{"p", "q", {}};
  CHECK_THROWS_AS(g.score_reward("gen", ctx, "x"), PreconditionError);
  CHECK_THROWS_AS(g.score_reward("nope", ctx, "x"), PreconditionError);
}

TEST_CASE("retries: attempts = 1 + max_retries, then EndpointError with history") {
  Gateway g({}, testing::no_backoff());
  auto failing = std::make_shared<testing::FnBackend>(
      [](const std::string&, const json&, int) -> std::string { throw TransportError("connection refused"); });
  g.add_endpoint(spec("r", EndpointKind::reward, "mock://reward", 3), failing);
  try {
    g.score_reward("r", SingleImageContext{"p", "q", {}}, "x");
    FAIL("expected EndpointError");
  } catch (const EndpointError& e) {
    CHECK(e.attempts().size() == 4);
    CHECK(e.attempts().back().number == 4);
    CHECK(e.endpoint_id() == "r");
  }
  CHECK(failing->calls == 4);
  CHECK(g.stats("r").attempts == 4);
  CHECK(g.stats("r").failures == 1);
}

TEST_CASE("retries: transient failure recovers with the same request body") {
  Gateway g({}, testing::no_backoff());
  std::vector<std::string> bodies;
  std::mutex m;
  auto flaky = std::make_shared<testing::FnBackend>([&](const std::string&, const json& body, int call) {
    std::lock_guard lock(m);
    bodies.push_back(body.dump());
    if (call < 2) throw TransportError("HTTP 503");
    return json{{"choices", {{{"text", "ok"}}}}}.dump();
  });
  g.add_endpoint(spec("gen", EndpointKind::generator, "mock://generator", 2), flaky);
  GenerationRequest req;
  req.prompt_text = "x";
  req.seed = 11;
  CHECK(g.generate("gen", req) == std::vector<std::string>{"ok"});
  REQUIRE(bodies.size() == 3);
  CHECK(bodies[0] == bodies[2]);
}

TEST_CASE("protocol errors are not retried") {
  Gateway g({}, testing::no_backoff());
  auto bad = std::make_shared<testing::FnBackend>([](const std::string&, const json&, int) { return std::string("{"); });
  g.add_endpoint(spec("r", EndpointKind::reward, "mock://reward", 5), bad);
  try {
    g.score_reward("r", SingleImageContext{"p", "q", {}}, "x");
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    CHECK(e.raw_body() == "{");
  }
  CHECK(bad->calls == 1);
}

TEST_CASE("reward: NaN and null are protocol errors; mock is pure") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("nan", EndpointKind::reward, "x"),
                 std::make_shared<MockReward>([](std::string_view, std::string_view) { return std::nan(""); }));
  const SingleImageContext ctx{"p", "what is it", {}};
  CHECK_THROWS_AS(g.score_reward("nan", ctx, "x"), ProtocolError);
  CHECK_THROWS_AS(parse_score_reply(R"({"reward": "1"})"), ProtocolError);

  std::map<std::string, std::string> refs{{"what is it", "a red apple"}};
  g.add_endpoint(spec("ov", EndpointKind::reward, "x"), std::make_shared<MockReward>(overlap_reward(refs)));
  const double best = g.score_reward("ov", ctx, "a red apple");
  CHECK(best == 1.0);
  CHECK(g.score_reward("ov", ctx, "a green pear") < best);
  CHECK(g.score_reward("ov", ctx, "a green pear") == g.score_reward("ov", ctx, "a green pear"));
}

TEST_CASE("lanes cap in-flight requests at max_concurrency") {
  Gateway g({}, testing::no_backoff());
  auto counting = std::make_shared<testing::CountingBackend>(
      std::make_shared<MockReward>(planted_reward(1)), std::chrono::milliseconds(5));
  g.add_endpoint(spec("r", EndpointKind::reward, "x", 0, 3), counting);
  std::vector<std::future<double>> futures;
  for (int i = 0; i < 40; ++i) {
    futures.push_back(g.score_reward_async("r", SingleImageContext{"p", "q", {}}, "resp " + std::to_string(i)));
  }
  for (auto& f : futures) f.get();
  CHECK(counting->peak.load() <= 3);
  CHECK(counting->peak.load() >= 2);
  CHECK(g.stats("r").requests == 40);
}

TEST_CASE("judge: overall recomputed locally, verdicts in presentation order") {
  Gateway g({}, testing::no_backoff());
  auto backend = std::make_shared<testing::FnBackend>([](const std::string&, const json&, int) {
    JudgeReply r;
    r.reference_answer = "ref";
    r.responses.push_back({{0.4, 0.2, 0.1, 0.1, 0.1, 0.1}, {8, 7, 10, 9, 10, 10}, 3.0});
    r.responses.push_back({{0.4, 0.2, 0.1, 0.1, 0.1, 0.1}, {0, 0, 0, 0, 0, 10}, 9.0});
    return reply_with(format_judge_block(r));
  });
  g.add_endpoint(spec("j", EndpointKind::judge, "x"), backend);
  const std::vector<JudgeCandidate> c{{4, "one"}, {2, "two"}};
  const auto v = g.judge("j", prompt(), c, JudgeMode::listwise);
  REQUIRE(v.size() == 2);
  CHECK(v[0].overall == 8.5);
  CHECK(v[1].overall == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(v[0].response_ref.sample_index == 4);
  CHECK(v[1].position == 1);
  CHECK_THROWS_AS(g.judge("j", prompt(), std::span(c).first(1), JudgeMode::listwise), PreconditionError);
  CHECK_THROWS_AS(g.judge("j", prompt(), c, JudgeMode::pointwise), PreconditionError);
}

TEST_CASE("judge: weights summing to 0.8 are re-asked, then verdict failure") {
  Gateway g({}, testing::no_backoff());
  auto backend = std::make_shared<testing::FnBackend>([](const std::string&, const json&, int) {
    return reply_with(block({0.3, 0.1, 0.1, 0.1, 0.1, 0.1}, {5, 5, 5, 5, 5, 5}));
  });
  g.add_endpoint(spec("j", EndpointKind::judge, "x"), backend);
  const std::vector<JudgeCandidate> c{{0, "one"}};
  JudgeOptions opt;
  opt.max_reasks = 2;
  try {
    g.judge("j", prompt(), c, JudgeMode::pointwise, opt);
    FAIL("expected VerdictFailure");
  } catch (const VerdictFailure& e) {
    CHECK(e.raw_replies().size() == 3);
  }
  CHECK(backend->calls == 3);
}

TEST_CASE("judge: an unusable first reply is recovered by a re-ask") {
  Gateway g({}, testing::no_backoff());
  auto backend = std::make_shared<testing::FnBackend>([](const std::string&, const json&, int call) {
    if (call == 0) return reply_with("I think response one is great.");
    return reply_with(block({1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6, 1.0 / 6}, {7, 7, 7, 7, 7, 7}));
  });
  g.add_endpoint(spec("j", EndpointKind::judge, "x"), backend);
  const std::vector<JudgeCandidate> c{{0, "one"}};
  const auto v = g.judge("j", prompt(), c, JudgeMode::pointwise);
  CHECK(v[0].overall == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("overlap judge: identical candidates tie, reference copy wins") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("j", EndpointKind::judge, "mock://judge?scorer=overlap"));
  const std::vector<JudgeCandidate> same{{0, "a cat"}, {1, "a cat"}};
  auto v = g.judge("j", prompt(), same, JudgeMode::listwise);
  CHECK(v[0].overall == v[1].overall);
  const std::vector<JudgeCandidate> c{{0, "the cat sits"}, {1, "a dog"}};
  v = g.judge("j", prompt(), c, JudgeMode::listwise);
  CHECK(v[0].overall > v[1].overall);
  CHECK(v[0].overall == doctest::Approx(10.0));
}

TEST_CASE("biased judge shifts only the first-listed response") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("plain", EndpointKind::judge, "mock://judge?scorer=overlap"));
  g.add_endpoint(spec("biased", EndpointKind::judge, "mock://judge?scorer=overlap&bias=2"));
  const std::vector<JudgeCandidate> c{{0, "a dog"}, {1, "the cat"}};
  const auto plain = g.judge("plain", prompt(), c, JudgeMode::listwise);
  const auto biased = g.judge("biased", prompt(), c, JudgeMode::listwise);
  CHECK(biased[0].overall == doctest::Approx(plain[0].overall + 2.0).epsilon(0.02));
  CHECK(biased[1].overall == plain[1].overall);
}

TEST_CASE("mock:// URL errors") {
  Gateway g;
  CHECK_THROWS_AS(g.add_endpoint(spec("x", EndpointKind::judge, "mock://judge?scorer=nope")), ValidationError);
  CHECK_THROWS_AS(g.add_endpoint(spec("y", EndpointKind::judge, "mock://oracle")), ValidationError);
  CHECK_THROWS_AS(g.add_endpoint(spec("z", EndpointKind::judge, "ftp://host")), ValidationError);
  CHECK_THROWS_AS(g.add_endpoint(spec("s", EndpointKind::judge, "https://host")), ValidationError);
}

TEST_CASE("endpoint specs: loading, duplicates, invariants, credentials") {
  const auto doc = json::parse(R"({"endpoints":[
    {"id":"a","kind":"reward","base_url":"mock://reward","max_concurrency":2},
    {"id":"b","kind":"judge","base_url":"mock://judge","timeout_ms":500}]})");
  const auto specs = load_endpoint_specs(doc);
  REQUIRE(specs.size() == 2);
  CHECK(specs[0].max_concurrency == 2);
  CHECK(specs[1].timeout == std::chrono::milliseconds(500));
  CHECK_THROWS_AS(load_endpoint_specs(json::parse(R"([{"id":"a","kind":"reward","base_url":"x"},
                                                      {"id":"a","kind":"reward","base_url":"y"}])")),
                  ValidationError);
  CHECK_THROWS_AS(load_endpoint_specs(json::parse(R"({"id":"a","kind":"reward","base_url":"x","max_concurrency":0})")),
                  ValidationError);

  Gateway g({}, testing::no_backoff());
  auto s = spec("cred", EndpointKind::reward, "mock://reward");
  s.auth_env_var = "PREFKIT_TEST_UNSET_VARIABLE";
  g.add_endpoint(s);
  CHECK_THROWS_AS(g.score_reward("cred", SingleImageContext{"p", "q", {}}, "x"), PreconditionError);
}

TEST_CASE("HTTP backend speaks the wire protocol, retries 5xx and passes credentials") {
  httplib::Server server;
  std::atomic<int> score_calls{0};
  std::string seen_auth;
  std::mutex m;
  server.Post("/api/score", [&](const httplib::Request& req, httplib::Response& res) {
    if (score_calls++ == 0) {
      res.status = 503;
      return;
    }
    {
      std::lock_guard lock(m);
      seen_auth = req.get_header_value("Authorization");
    }
    const auto body = json::parse(req.body);
    const double reward = static_cast<double>(body["response_text"].get<std::string>().size()) +
                          static_cast<double>(body["images"].size()) * 100.0;
    res.set_content(json{{"reward", reward}}.dump(), "application/json");
  });
  server.Post("/api/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = json::parse(req.body);
    if (body["n"].get<int>() > 5) {
      res.status = 400;
      res.set_content("too many", "text/plain");
      return;
    }
    json choices = json::array();
    for (int i = 0; i < body["n"].get<int>(); ++i) choices.push_back({{"text", "sample " + std::to_string(i)}});
    res.set_content(json{{"choices", choices}}.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("PREFKIT_TEST_TOKEN", "s3cret", 1);
  testing::TempDir dir;
  testing::write_bytes(dir / "i.png", testing::small_png(3));
  Gateway g(ImageStore({dir.path()}), testing::no_backoff());
  auto r = spec("r", EndpointKind::reward, "http://127.0.0.1:" + std::to_string(port) + "/api/");
  r.auth_env_var = "PREFKIT_TEST_TOKEN";
  g.add_endpoint(r);
  g.add_endpoint(spec("gen", EndpointKind::generator, "http://127.0.0.1:" + std::to_string(port) + "/api", 0));

  CHECK(g.score_reward("r", SingleImageContext{"p", "q", {"i.png"}}, "abcd") == 104.0);
  CHECK(score_calls == 2);
  CHECK(seen_auth == "Bearer s3cret");

  GenerationRequest req;
  req.prompt_text = "hello";
  req.n_samples = 2;
  CHECK(g.generate("gen", req) == std::vector<std::string>{"sample 0", "sample 1"});
  req.n_samples = 6;
  CHECK_THROWS_AS(g.generate("gen", req), ProtocolError);

  server.stop();
  t.join();

  auto dead = spec("dead", EndpointKind::reward, "http://127.0.0.1:" + std::to_string(port), 1);
  dead.timeout = std::chrono::milliseconds(200);
  g.add_endpoint(dead);
  CHECK_THROWS_AS(g.score_reward("dead", SingleImageContext{"p", "q", {}}, "x"), EndpointError);
}
