#include <doctest.h>

#include <cmath>
#include <map>

#include "prefkit/curate.hpp"
#include "prefkit/dataset.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/judge_protocol.hpp"
#include "prefkit/mock_backends.hpp"
#include "support.hpp"

using namespace prefkit;
using nlohmann::json;
using testing::spec;

namespace {

std::vector<PreferencePair> numbered_pairs(std::size_t n) {
  std::vector<PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(testing::make_pair("p" + std::to_string(i), "question " + std::to_string(i),
                                     "good " + std::to_string(i), "bad " + std::to_string(i)));
  }
  return out;
}

std::vector<StrengthEstimate> estimates(const std::vector<PreferencePair>& pairs, const std::vector<double>& s) {
  std::vector<StrengthEstimate> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back({pairs[i].id, {{"m", s[i]}}, s[i]});
  return out;
}

// Reward from a fixed response -> value table.
std::shared_ptr<MockReward> table_reward(std::map<std::string, double> table) {
  return std::make_shared<MockReward>([table](std::string_view, std::string_view response) {
    return table.at(std::string(response));
  });
}

// Annotator preferring `favourite`, or always answering "A" when follow_position is set.
std::shared_ptr<testing::FnBackend> annotator(std::string favourite, bool follow_position = false) {
  return std::make_shared<testing::FnBackend>([favourite, follow_position](const std::string&, const json& body, int) {
    std::string text;
    for (const auto& part : body["messages"][0]["content"]) {
      if (part["type"] == "text") text += part["text"].get<std::string>();
    }
    const auto p = parse_pairwise_prompt(text);
    if (!p) throw std::runtime_error("not a pairwise prompt");
    std::string answer = p->response_a == favourite ? "A" : "B";
    if (follow_position) answer = "A";
    return json{{"choices", {{{"text", answer}}}}}.dump();
  });
}

}  // namespace

TEST_CASE("flip_bottom: worked examples") {
  const auto pairs = numbered_pairs(5);
  auto r = flip_bottom(estimates(pairs, {-2.0, -1.5, -0.2, 0.3, 1.1}), pairs);
  CHECK(r.pairs[0].chosen == "bad 0");
  CHECK(r.pairs[0].provenance == Provenance::curated_flip);
  for (int i = 1; i < 5; ++i) CHECK(r.pairs[i].chosen == pairs[i].chosen);
  CHECK(r.decisions.size() == 5);
  CHECK(r.decisions[0].action == CurationAction::flipped);
  CHECK(r.decisions[1].action == CurationAction::kept);

  r = flip_bottom(estimates(pairs, {0.0, 0.5, 1.0, 2.0, 0.1}), pairs);
  for (const auto& d : r.decisions) CHECK(d.action == CurationAction::kept);

  r = flip_bottom(estimates(pairs, {-0.1, -3.0, 5.0, -1.0, -0.5}), pairs);
  std::vector<CurationAction> actions;
  for (const auto& d : r.decisions) actions.push_back(d.action);
  CHECK(actions == std::vector<CurationAction>{CurationAction::kept, CurationAction::flipped, CurationAction::kept,
                                               CurationAction::flipped, CurationAction::kept});
}

TEST_CASE("flip_bottom: ties keep input order; missing estimate is a precondition error") {
  const auto pairs = numbered_pairs(4);
  const auto r = flip_bottom(estimates(pairs, {-1.0, -1.0, -1.0, -1.0}), pairs);
  CHECK(r.decisions[0].action == CurationAction::flipped);
  CHECK(r.decisions[1].action == CurationAction::flipped);
  CHECK(r.decisions[2].action == CurationAction::kept);
  CHECK_THROWS_AS(flip_bottom(estimates(pairs, {-1.0, 2.0}), pairs), PreconditionError);
}

TEST_CASE("strength: equal margins normalize to 0; agreeing signs are preserved") {
  const auto pairs = numbered_pairs(4);
  const std::vector<std::string> one{"m"};
  MarginTable t(4, 1);
  for (std::size_t p = 0; p < 4; ++p) t.set(p, 0, 0.7);
  for (const auto& e : strengths_from_margins(pairs, one, t).estimates) CHECK(e.strength == 0.0);

  const std::vector<std::string> two{"m1", "m2"};
  MarginTable u(4, 2);
  const double a[] = {1.0, -2.0, 0.5, -0.1};
  const double b[] = {30.0, -1.0, 7.0, -40.0};
  for (std::size_t p = 0; p < 4; ++p) {
    u.set(p, 0, a[p]);
    u.set(p, 1, b[p]);
  }
  const auto r = strengths_from_margins(pairs, two, u);
  for (std::size_t p = 0; p < 4; ++p) CHECK(std::signbit(r.estimates[p].strength) == std::signbit(a[p]));
}

TEST_CASE("strength: three MRMs match a hand-run normalization to 1e-9") {
  const auto pairs = numbered_pairs(6);
  const std::vector<std::string> ids{"a", "b", "c"};
  const double m[6][3] = {{1.0, 2.0, -0.5}, {-1.0, 0.5, 0.25}, {3.0, 4.0, 1.0},
                          {0.2, -2.0, 2.0}, {-0.7, 1.5, -3.0}, {0.0, 0.1, 0.4}};
  MarginTable t(6, 3);
  for (std::size_t p = 0; p < 6; ++p) {
    for (std::size_t k = 0; k < 3; ++k) t.set(p, k, m[p][k]);
  }
  long double sd[3];
  for (int k = 0; k < 3; ++k) {
    long double mean = 0, sq = 0;
    for (int p = 0; p < 6; ++p) mean += m[p][k];
    mean /= 6;
    for (int p = 0; p < 6; ++p) sq += (m[p][k] - mean) * (m[p][k] - mean);
    sd[k] = std::sqrt(sq / 6);
  }
  const auto r = strengths_from_margins(pairs, ids, t);
  REQUIRE(r.estimates.size() == 6);
  for (int p = 0; p < 6; ++p) {
    const long double expected = (m[p][0] / sd[0] + m[p][1] / sd[1] + m[p][2] / sd[2]) / 3;
    CHECK(std::fabs(r.estimates[p].strength - static_cast<double>(expected)) < 1e-9);
    CHECK(r.estimates[p].per_model_margins.size() == 3);
  }
}

TEST_CASE("estimate_strength: failing MRM leaves a hole; all failing drops the pair") {
  Gateway g({}, testing::no_backoff());
  const auto pairs = numbered_pairs(3);
  g.add_endpoint(spec("ok", EndpointKind::reward, "x"), std::make_shared<MockReward>(planted_reward(1)));
  g.add_endpoint(spec("half", EndpointKind::reward, "x", 0),
                 std::make_shared<MockReward>([](std::string_view prompt, std::string_view) -> double {
                   if (prompt == "question 1") throw TransportError("down");
                   return 1.0;
                 }));
  g.add_endpoint(spec("dead", EndpointKind::reward, "x", 0),
                 std::make_shared<testing::FnBackend>(
                     [](const std::string&, const json&, int) -> std::string { throw TransportError("down"); }));
  const std::vector<std::string> pool{"ok", "half"};
  const auto r = estimate_strength(g, pairs, pool, 2);
  REQUIRE(r.estimates.size() == 3);
  CHECK(r.estimates[0].per_model_margins.size() == 2);
  CHECK(r.estimates[1].per_model_margins.size() == 1);
  const std::vector<std::string> dead{"dead"};
  const auto d = estimate_strength(g, pairs, dead, 2);
  CHECK(d.estimates.empty());
  CHECK(d.dropped_ids.size() == 3);
  CHECK_THROWS_AS(estimate_strength(g, pairs, std::span<const std::string>{}, 1), PreconditionError);
}

TEST_CASE("consistency filter: strict retain rule; failures forwarded with a note") {
  Gateway g({}, testing::no_backoff());
  std::vector<PreferencePair> pairs{testing::make_pair("a", "q", "c1", "r1"), testing::make_pair("b", "q", "c2", "r2"),
                                    testing::make_pair("c", "q", "c3", "r3"), testing::make_pair("d", "q", "c4", "r4")};
  g.add_endpoint(spec("mrm", EndpointKind::reward, "x", 0),
                 table_reward({{"c1", 1.2}, {"r1", 0.3}, {"c2", 0.1}, {"r2", 0.4}, {"c3", 0.5}, {"r3", 0.5}}));
  const auto r = consistency_filter(g, pairs, "mrm", 2);
  REQUIRE(r.retained.size() == 1);
  CHECK(r.retained[0].id == "a");
  REQUIRE(r.forwarded.size() == 3);
  CHECK(r.forwarded[0].id == "b");
  CHECK(r.forwarded_notes[1] == "consistency tie");
  CHECK(r.forwarded_notes[2].find("failed") != std::string::npos);
  CHECK(r.decisions.size() == 1);
  CHECK(r.decisions[0].step == CurationStep::retain_consistent);
}

TEST_CASE("decide_votes: majority, tie and too few votes") {
  auto votes = [](int chosen, int rejected) {
    std::vector<Vote> v;
    for (int i = 0; i < chosen; ++i) v.push_back({"a", VoteOrder::AB, Side::chosen});
    for (int i = 0; i < rejected; ++i) v.push_back({"a", VoteOrder::BA, Side::rejected});
    return v;
  };
  CHECK(decide_votes(votes(5, 1)) == CurationAction::kept);
  CHECK(decide_votes(votes(3, 3)) == CurationAction::discarded);
  CHECK(decide_votes(votes(2, 4)) == CurationAction::flipped);
  CHECK(decide_votes(votes(1, 0)) == CurationAction::discarded);
  CHECK(decide_votes(votes(0, 2)) == CurationAction::flipped);
}

TEST_CASE("reannotate: both orders per annotator; kept, flipped and discarded") {
  Gateway g({}, testing::no_backoff());
  const std::vector<PreferencePair> pairs{testing::make_pair("x", "q", "alpha", "beta")};
  g.add_endpoint(spec("fan1", EndpointKind::judge, "x"), annotator("alpha"));
  g.add_endpoint(spec("fan2", EndpointKind::judge, "x"), annotator("alpha"));
  g.add_endpoint(spec("pos", EndpointKind::judge, "x"), annotator("", true));
  g.add_endpoint(spec("hater1", EndpointKind::judge, "x"), annotator("beta"));
  g.add_endpoint(spec("hater2", EndpointKind::judge, "x"), annotator("beta"));

  const std::vector<std::string> mostly_for{"fan1", "fan2", "pos"};
  auto r = reannotate(g, pairs, mostly_for, 0, 2);
  REQUIRE(r.decisions.size() == 1);
  REQUIRE(r.decisions[0].votes.has_value());
  CHECK(r.decisions[0].votes->size() == 6);
  CHECK(r.decisions[0].action == CurationAction::kept);
  CHECK(r.relabeled.size() == 1);

  const std::vector<std::string> split{"fan1", "hater1", "pos"};
  r = reannotate(g, pairs, split, 0, 2);
  CHECK(r.decisions[0].action == CurationAction::discarded);
  CHECK(r.discarded_ids == std::vector<std::string>{"x"});

  const std::vector<std::string> against{"hater1", "hater2", "pos"};
  r = reannotate(g, pairs, against, 0, 2);
  CHECK(r.decisions[0].action == CurationAction::flipped);
  REQUIRE(r.relabeled.size() == 1);
  CHECK(r.relabeled[0].chosen == "beta");
  CHECK(r.relabeled[0].provenance == Provenance::curated_reannotated);
}

TEST_CASE("reannotate: failed or unparseable calls are omitted votes") {
  Gateway g({}, testing::no_backoff());
  const std::vector<PreferencePair> pairs{testing::make_pair("x", "q", "alpha", "beta")};
  g.add_endpoint(spec("fan", EndpointKind::judge, "x"), annotator("alpha"));
  g.add_endpoint(spec("mumble", EndpointKind::judge, "x"),
                 std::make_shared<testing::FnBackend>([](const std::string&, const json&, int) {
                   return json{{"choices", {{{"text", "Response A, clearly"}}}}}.dump();
                 }));
  g.add_endpoint(spec("dead", EndpointKind::judge, "x", 0),
                 std::make_shared<testing::FnBackend>(
                     [](const std::string&, const json&, int) -> std::string { throw TransportError("down"); }));
  const std::vector<std::string> one_good{"fan", "mumble", "dead"};
  auto r = reannotate(g, pairs, one_good, 0, 1);
  CHECK(r.decisions[0].votes->size() == 2);
  CHECK(r.decisions[0].action == CurationAction::kept);

  const std::vector<std::string> none{"mumble", "dead"};
  r = reannotate(g, pairs, none, 0, 1);
  CHECK(r.decisions[0].action == CurationAction::discarded);
  CHECK(r.decisions[0].notes.find("fewer than two valid votes") != std::string::npos);
}

TEST_CASE("run_curate: writes dataset and one decision per line") {
  testing::TempDir dir;
  Gateway g({}, testing::no_backoff());
  for (int s = 0; s < 3; ++s) {
    g.add_endpoint(spec("m" + std::to_string(s), EndpointKind::reward, "x"),
                   std::make_shared<MockReward>(planted_reward(static_cast<std::uint64_t>(s))));
  }
  g.add_endpoint(spec("j", EndpointKind::judge, "mock://judge?scorer=planted&salt=0"));
  const auto pairs = numbered_pairs(40);
  write_dataset(dir / "in", pairs);
  CurateConfig c;
  c.mrm_pool = {"m0", "m1", "m2"};
  c.mrm = "m0";
  c.annotators = {"j"};
  const auto r = run_curate(g, c, dir / "in", dir / "out", dir / "decisions.jsonl");
  const auto m = read_manifest(dir / "out");
  CHECK(m.record_count == r.pairs.size());
  CHECK(m.parent_manifests == std::vector<std::string>{"in"});
  CHECK(r.stats.input == 40);
  CHECK(r.stats.output == r.stats.retained + r.stats.reannotated_kept + r.stats.reannotated_flipped);
  std::ifstream in(dir / "decisions.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    const auto d = json::parse(line).get<CurationDecision>();
    CHECK_NOTHROW(validate(d));
    ++lines;
  }
  CHECK(lines == r.decisions.size());
  CHECK(lines >= 40);
}
