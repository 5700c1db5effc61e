#include "prefkit/eval.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "prefkit/errors.hpp"

namespace prefkit {

using nlohmann::json;

bool item_correct(const BenchmarkItem& item, const ItemScores& scores) {
  if (!scores.a || !scores.b) return false;
  return item.human_label == Label::a ? *scores.a > *scores.b : *scores.b > *scores.a;
}

MetricReport compute_metrics(std::span<const BenchmarkItem> items, std::span<const ItemScores> scores) {
  if (items.empty()) throw PreconditionError("no benchmark items");
  if (items.size() != scores.size()) throw PreconditionError("scores do not match items");
  MetricReport r;
  std::map<std::string, bool> group_ok;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const bool ok = item_correct(items[i], scores[i]);
    if (!scores[i].a || !scores[i].b) {
      ++r.failed;
      r.failed_ids.push_back(items[i].id);
    }
    ++r.items;
    r.correct += ok;
    auto& t = r.per_task[items[i].task];
    ++t.items;
    t.correct += ok;
    auto [it, inserted] = group_ok.emplace(items[i].group_id, ok);
    if (!inserted) it->second = it->second && ok;
  }
  double macro = 0.0;
  for (auto& [name, t] : r.per_task) {
    t.accuracy = static_cast<double>(t.correct) / static_cast<double>(t.items);
    macro += t.accuracy;
  }
  r.overall_acc = static_cast<double>(r.correct) / static_cast<double>(r.items);
  r.acc = r.overall_acc;
  r.macro_acc = macro / static_cast<double>(r.per_task.size());
  r.groups = group_ok.size();
  const auto all_correct = std::count_if(group_ok.begin(), group_ok.end(), [](const auto& g) { return g.second; });
  r.acc_plus = static_cast<double>(all_correct) / static_cast<double>(r.groups);
  return r;
}

json to_json_value(const MetricReport& r) {
  json tasks = json::object();
  for (const auto& [name, t] : r.per_task) {
    tasks[name] = {{"items", t.items}, {"correct", t.correct}, {"accuracy", t.accuracy}};
  }
  return json{{"items", r.items},           {"correct", r.correct},     {"failed", r.failed},
              {"overall_acc", r.overall_acc}, {"macro_acc", r.macro_acc}, {"acc", r.acc},
              {"acc_plus", r.acc_plus},     {"groups", r.groups},       {"per_task", tasks},
              {"failed_ids", r.failed_ids}};
}

std::string format_table(const MetricReport& r) {
  std::size_t width = 12;
  for (const auto& [name, t] : r.per_task) width = std::max(width, name.size());
  std::string out = fmt::format("{:<{}}  {:>7}  {:>7}  {:>8}\n", "task", width, "items", "correct", "accuracy");
  for (const auto& [name, t] : r.per_task) {
    out += fmt::format("{:<{}}  {:>7}  {:>7}  {:>8.4f}\n", name, width, t.items, t.correct, t.accuracy);
  }
  out += fmt::format("{:<{}}  {:>7}  {:>7}  {:>8.4f}\n", "overall", width, r.items, r.correct, r.overall_acc);
  out += fmt::format("{:<{}}  {:>7}  {:>7}  {:>8.4f}\n", "macro", width, "", "", r.macro_acc);
  out += fmt::format("{:<{}}  {:>7}  {:>7}  {:>8.4f}\n", "acc+", width, r.groups, "", r.acc_plus);
  if (r.failed > 0) out += fmt::format("{} item(s) could not be scored and count as incorrect\n", r.failed);
  return out;
}

namespace {

std::optional<double> try_score(Gateway& gateway, const std::string& mrm, const PairContext& context,
                                const std::string& response, const std::string& id) {
  try {
    return gateway.score_reward(mrm, context, response);
  } catch (const std::exception& e) {
    spdlog::warn("eval: scoring failed for '{}': {}", id, e.what());
    return std::nullopt;
  }
}

}  // namespace

std::vector<ItemScores> score_items(Gateway& gateway, std::span<const BenchmarkItem> items, const std::string& mrm,
                                    int workers) {
  std::vector<ItemScores> scores(items.size());
  const auto n = static_cast<std::ptrdiff_t>(items.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(std::max(workers, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& item = items[i];
    const PairContext context = SingleImageContext{item.group_id, item.prompt_text, item.images};
    scores[i].a = try_score(gateway, mrm, context, item.response_a, item.id);
    scores[i].b = try_score(gateway, mrm, context, item.response_b, item.id);
  }
  return scores;
}

MetricReport evaluate(Gateway& gateway, std::span<const BenchmarkItem> items, const std::string& mrm, int workers) {
  if (items.empty()) throw PreconditionError("no benchmark items");
  return compute_metrics(items, score_items(gateway, items, mrm, workers));
}

std::size_t argmax_lowest(std::span<const std::optional<double>> scores) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] && (!best || *scores[i] > *scores[*best])) best = i;
  }
  if (!best) throw ScoringError("no candidate could be scored");
  return *best;
}

BestOfN best_of_n(Gateway& gateway, const PromptRecord& prompt, std::span<const std::string> candidates,
                  const std::string& mrm) {
  if (candidates.empty()) throw PreconditionError("best_of_n needs at least one candidate");
  const PairContext context = SingleImageContext{prompt.id, prompt.text, prompt.images};
  BestOfN out;
  for (const auto& c : candidates) out.scores.push_back(try_score(gateway, mrm, context, c, prompt.id));
  out.index = argmax_lowest(out.scores);
  return out;
}

}  // namespace prefkit
