#include <doctest.h>

#include <map>

#include "prefkit/errors.hpp"
#include "prefkit/eval.hpp"
#include "prefkit/mock_backends.hpp"
#include "support.hpp"

using namespace prefkit;
using testing::spec;

namespace {

BenchmarkItem item(const std::string& id, const std::string& group, const std::string& task, Label label = Label::a) {
  return BenchmarkItem{id, group, task, "prompt " + group, {}, "resp a " + id, "resp b " + id, label};
}

ItemScores right() { return {1.0, 0.0}; }
ItemScores wrong() { return {0.0, 1.0}; }

std::shared_ptr<MockReward> table_reward(std::map<std::string, double> table) {
  return std::make_shared<MockReward>([table](std::string_view, std::string_view response) {
    auto it = table.find(std::string(response));
    if (it == table.end()) throw TransportError("unknown response");
    return it->second;
  });
}

}  // namespace

TEST_CASE("metrics: Acc+ over groups") {
  const std::vector<BenchmarkItem> items{item("1", "g1", "t"), item("2", "g1", "t"), item("3", "g2", "t"),
                                         item("4", "g2", "t")};
  const std::vector<ItemScores> scores{right(), right(), right(), wrong()};
  const auto r = compute_metrics(items, scores);
  CHECK(r.acc_plus == 0.5);
  CHECK(r.overall_acc == 0.75);
  CHECK(r.acc == r.overall_acc);
}

TEST_CASE("metrics: macro differs from overall for unequal task sizes") {
  std::vector<BenchmarkItem> items;
  std::vector<ItemScores> scores;
  for (int i = 0; i < 10; ++i) {
    items.push_back(item("a" + std::to_string(i), "ga" + std::to_string(i), "A"));
    scores.push_back(right());
  }
  items.push_back(item("b0", "gb0", "B"));
  scores.push_back(right());
  items.push_back(item("b1", "gb1", "B"));
  scores.push_back(wrong());
  const auto r = compute_metrics(items, scores);
  CHECK(r.macro_acc == 0.75);
  CHECK(r.overall_acc == 11.0 / 12.0);
  CHECK(r.per_task.at("B").accuracy == 0.5);
}

TEST_CASE("metrics: ties and failures are incorrect; label b respected") {
  const std::vector<BenchmarkItem> items{item("1", "g", "t"), item("2", "g", "t", Label::b), item("3", "h", "t")};
  const std::vector<ItemScores> scores{{0.5, 0.5}, {0.1, 0.2}, {std::nullopt, 0.3}};
  const auto r = compute_metrics(items, scores);
  CHECK(r.correct == 1);
  CHECK(r.failed == 1);
  CHECK(r.failed_ids == std::vector<std::string>{"3"});
  CHECK(r.acc_plus == 0.0);
  CHECK(r.acc_plus <= r.overall_acc);
  CHECK(format_table(r).find("could not be scored") != std::string::npos);
  CHECK_THROWS_AS(compute_metrics({}, {}), PreconditionError);
}

TEST_CASE("evaluate scores each response independently through the gateway") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("mrm", EndpointKind::reward, "x", 0),
                 table_reward({{"resp a 1", 2.0}, {"resp b 1", 1.0}, {"resp a 2", 0.0}, {"resp b 2", 1.0}}));
  const std::vector<BenchmarkItem> items{item("1", "g", "t"), item("2", "g", "t"), item("3", "h", "u")};
  const auto r = evaluate(g, items, "mrm", 2);
  CHECK(r.correct == 1);
  CHECK(r.failed == 1);
  CHECK(r.per_task.size() == 2);
}

TEST_CASE("best_of_n: argmax, lowest index on ties, n = 1, all failing") {
  Gateway g({}, testing::no_backoff());
  g.add_endpoint(spec("mrm", EndpointKind::reward, "x", 0),
                 table_reward({{"w", 0.1}, {"x", 0.9}, {"y", 0.4}, {"z", 0.4}, {"lo", -5.0}}));
  const PromptRecord p{"p", "q", {}, "ref", Domain::other, "s"};
  const std::vector<std::string> four{"w", "x", "y", "z"};
  CHECK(best_of_n(g, p, four, "mrm").index == 1);
  const std::vector<std::string> tied{"w", "lo", "y", "z"};
  CHECK(best_of_n(g, p, tied, "mrm").index == 2);
  const std::vector<std::string> more{"w", "x", "y", "z", "lo", "lo"};
  CHECK(best_of_n(g, p, more, "mrm").index == 1);
  const std::vector<std::string> single{"y"};
  const auto one = best_of_n(g, p, single, "mrm");
  CHECK(one.index == 0);
  CHECK(one.scores[0] == 0.4);
  const std::vector<std::string> unknown{"a", "b"};
  CHECK_THROWS_AS(best_of_n(g, p, unknown, "mrm"), ScoringError);
  const std::vector<std::string> partial{"a", "w"};
  CHECK(best_of_n(g, p, partial, "mrm").index == 1);
}
