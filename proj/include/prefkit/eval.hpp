#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/gateway.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

// Reward scores for one benchmark item; nullopt where scoring failed.
struct ItemScores {
  std::optional<double> a;
  std::optional<double> b;
};

struct TaskStats {
  std::size_t items = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;
};

struct MetricReport {
  std::size_t items = 0;
  std::size_t correct = 0;
  std::size_t failed = 0;  // scoring failures, counted incorrect
  double overall_acc = 0.0;
  double macro_acc = 0.0;
  double acc = 0.0;  // same value as overall_acc
  double acc_plus = 0.0;
  std::size_t groups = 0;
  std::map<std::string, TaskStats> per_task;
  std::vector<std::string> failed_ids;
};

nlohmann::json to_json_value(const MetricReport& r);
std::string format_table(const MetricReport& r);

// Correct iff the human-preferred response scores strictly higher.
bool item_correct(const BenchmarkItem& item, const ItemScores& scores);

MetricReport compute_metrics(std::span<const BenchmarkItem> items, std::span<const ItemScores> scores);

// Scores both responses of every item independently on a reward endpoint.
std::vector<ItemScores> score_items(Gateway& gateway, std::span<const BenchmarkItem> items, const std::string& mrm,
                                    int workers = 8);

MetricReport evaluate(Gateway& gateway, std::span<const BenchmarkItem> items, const std::string& mrm,
                      int workers = 8);

struct BestOfN {
  std::size_t index = 0;
  std::vector<std::optional<double>> scores;
};

class ScoringError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argmax over the successfully scored candidates, lowest index on ties.
// ScoringError when nothing was scored.
std::size_t argmax_lowest(std::span<const std::optional<double>> scores);
BestOfN best_of_n(Gateway& gateway, const PromptRecord& prompt, std::span<const std::string> candidates,
                  const std::string& mrm);

}  // namespace prefkit
