#include "prefkit/curate.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "prefkit/errors.hpp"
#include "prefkit/rng.hpp"

namespace prefkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::optional<double> try_margin(Gateway& gateway, const std::string& mrm, const PreferencePair& pair,
                                 std::string* error) {
  try {
    const double c = gateway.score_reward(mrm, pair.context, pair.chosen);
    const double r = gateway.score_reward(mrm, pair.context, pair.rejected);
    return c - r;
  } catch (const std::exception& e) {
    if (error) *error = e.what();
    return std::nullopt;
  }
}

CurationDecision decision(const std::string& id, CurationStep step, CurationAction action, std::string notes = {}) {
  CurationDecision d;
  d.pair_id = id;
  d.step = step;
  d.action = action;
  d.notes = std::move(notes);
  return d;
}

}  // namespace

StrengthResult strengths_from_margins(std::span<const PreferencePair> pairs, std::span<const std::string> mrm_ids,
                                      const MarginTable& table) {
  if (table.pairs != pairs.size() || table.models != mrm_ids.size()) {
    throw PreconditionError("margin table does not match pairs and MRM pool");
  }
  const auto strengths = kernels::omp::normalized_strengths(table);
  StrengthResult out;
  for (std::size_t p = 0; p < pairs.size(); ++p) {
    if (!strengths[p]) {
      out.dropped_ids.push_back(pairs[p].id);
      continue;
    }
    StrengthEstimate e;
    e.pair_id = pairs[p].id;
    for (std::size_t m = 0; m < mrm_ids.size(); ++m) {
      if (table.has(p, m)) e.per_model_margins.push_back({mrm_ids[m], table.at(p, m)});
    }
    e.strength = *strengths[p];
    out.estimates.push_back(std::move(e));
  }
  return out;
}

StrengthResult estimate_strength(Gateway& gateway, std::span<const PreferencePair> pairs,
                                 std::span<const std::string> mrm_pool, int workers) {
  if (mrm_pool.empty()) throw PreconditionError("mrm_pool is empty");
  MarginTable table(pairs.size(), mrm_pool.size());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(std::max(workers, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto p = static_cast<std::size_t>(i);
    for (std::size_t m = 0; m < mrm_pool.size(); ++m) {
      std::string error;
      if (auto margin = try_margin(gateway, mrm_pool[m], pairs[p], &error)) {
        table.set(p, m, *margin);
      } else {
        spdlog::warn("curate: MRM '{}' failed on pair '{}': {}", mrm_pool[m], pairs[p].id, error);
      }
    }
  }
  return strengths_from_margins(pairs, mrm_pool, table);
}

StepResult flip_bottom(std::span<const StrengthEstimate> estimates, std::span<const PreferencePair> pairs) {
  std::map<std::string, double> strength;
  for (const auto& e : estimates) strength[e.pair_id] = e.strength;
  std::vector<std::size_t> negatives;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    auto it = strength.find(pairs[i].id);
    if (it == strength.end()) throw PreconditionError("no strength estimate for pair '" + pairs[i].id + "'");
    if (it->second < 0.0) negatives.push_back(i);
  }
  std::stable_sort(negatives.begin(), negatives.end(), [&](std::size_t a, std::size_t b) {
    return strength.at(pairs[a].id) < strength.at(pairs[b].id);
  });
  std::vector<bool> flip(pairs.size(), false);
  for (std::size_t k = 0; k < negatives.size() / 2; ++k) flip[negatives[k]] = true;

  StepResult out;
  out.pairs.reserve(pairs.size());
  out.decisions.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto s = fmt::format("strength={:.9g}", strength.at(pairs[i].id));
    if (flip[i]) {
      out.pairs.push_back(flipped(pairs[i], Provenance::curated_flip));
      out.decisions.push_back(decision(pairs[i].id, CurationStep::flip, CurationAction::flipped, s));
    } else {
      out.pairs.push_back(pairs[i]);
      out.decisions.push_back(decision(pairs[i].id, CurationStep::flip, CurationAction::kept, s));
    }
  }
  return out;
}

FilterResult consistency_filter(Gateway& gateway, std::span<const PreferencePair> pairs, const std::string& mrm,
                                int workers) {
  std::vector<std::optional<double>> margins(pairs.size());
  std::vector<std::string> errors(pairs.size());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 4) num_threads(std::max(workers, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) margins[i] = try_margin(gateway, mrm, pairs[i], &errors[i]);

  FilterResult out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (margins[i] && *margins[i] > 0.0) {
      out.retained.push_back(pairs[i]);
      out.decisions.push_back(decision(pairs[i].id, CurationStep::retain_consistent, CurationAction::kept,
                                       fmt::format("margin={:.9g}", *margins[i])));
      continue;
    }
    out.forwarded.push_back(pairs[i]);
    if (!margins[i]) {
      out.forwarded_notes.push_back("consistency check failed: " + errors[i]);
    } else if (*margins[i] == 0.0) {
      out.forwarded_notes.push_back("consistency tie");
    } else {
      out.forwarded_notes.push_back(fmt::format("inconsistent margin={:.9g}", *margins[i]));
    }
  }
  return out;
}

CurationAction decide_votes(std::span<const Vote> votes) {
  if (votes.size() < 2) return CurationAction::discarded;
  const auto for_chosen = std::count_if(votes.begin(), votes.end(), [](const Vote& v) { return v.winner == Side::chosen; });
  const auto for_rejected = static_cast<std::ptrdiff_t>(votes.size()) - for_chosen;
  if (for_chosen > for_rejected) return CurationAction::kept;
  if (for_rejected > for_chosen) return CurationAction::flipped;
  return CurationAction::discarded;
}

ReannotateResult reannotate(Gateway& gateway, std::span<const PreferencePair> pairs,
                            std::span<const std::string> annotators, std::int64_t seed, int workers,
                            std::span<const std::string> notes) {
  if (annotators.empty()) throw PreconditionError("no annotators configured");
  std::vector<std::vector<Vote>> votes(pairs.size());
  std::vector<std::string> failures(pairs.size());
  const auto n = static_cast<std::ptrdiff_t>(pairs.size());
#pragma omp parallel for schedule(dynamic, 2) num_threads(std::max(workers, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto& pair = pairs[i];
    for (const auto& annotator : annotators) {
      for (const auto order : {VoteOrder::AB, VoteOrder::BA}) {
        const bool ab = order == VoteOrder::AB;
        const auto call_seed = static_cast<std::int64_t>(
            derive_seed(static_cast<std::uint64_t>(seed), "reannotate", pair.id, annotator, ab ? "AB" : "BA") >> 33);
        try {
          const auto choice = gateway.compare(annotator, pair.context, ab ? pair.chosen : pair.rejected,
                                              ab ? pair.rejected : pair.chosen, call_seed);
          if (!choice) {
            failures[i] += fmt::format("{}:{} unparseable; ", annotator, ab ? "AB" : "BA");
            continue;
          }
          const bool first = *choice == PairwiseChoice::first;
          votes[i].push_back({annotator, order, first == ab ? Side::chosen : Side::rejected});
        } catch (const std::exception& e) {
          failures[i] += fmt::format("{}:{} failed ({}); ", annotator, ab ? "AB" : "BA", e.what());
        }
      }
    }
  }

  ReannotateResult out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto action = decide_votes(votes[i]);
    std::string note = i < notes.size() ? notes[i] : std::string{};
    if (!failures[i].empty()) note += (note.empty() ? "" : "; ") + failures[i];
    if (votes[i].size() < 2) note += (note.empty() ? "" : "; ") + std::string("fewer than two valid votes");
    CurationDecision d = decision(pairs[i].id, CurationStep::reannotate, action, std::move(note));
    d.votes = votes[i];
    out.decisions.push_back(std::move(d));
    switch (action) {
      case CurationAction::kept:
        out.relabeled.push_back(pairs[i]);
        break;
      case CurationAction::flipped:
        out.relabeled.push_back(flipped(pairs[i], Provenance::curated_reannotated));
        break;
      case CurationAction::discarded:
        out.discarded_ids.push_back(pairs[i].id);
        break;
    }
  }
  return out;
}

void to_json(json& j, const CurateConfig& c) {
  j = json{{"mrm_pool", c.mrm_pool},
           {"mrm", c.mrm},
           {"annotators", c.annotators},
           {"skip_strength", c.skip_strength},
           {"seed", c.seed}};
}

void validate(const CurateConfig& c) {
  if (!c.skip_strength && c.mrm_pool.empty()) throw ValidationError("mrm_pool is empty");
  if (c.mrm.empty()) throw ValidationError("no consistency MRM configured");
  if (c.annotators.empty()) throw ValidationError("no annotators configured");
}

json to_json_value(const CurateStats& s) {
  return json{{"input", s.input},
              {"strength_dropped", s.strength_dropped},
              {"flipped", s.flipped},
              {"retained", s.retained},
              {"forwarded", s.forwarded},
              {"reannotated_kept", s.reannotated_kept},
              {"reannotated_flipped", s.reannotated_flipped},
              {"discarded", s.discarded},
              {"output", s.output}};
}

CurateResult curate(Gateway& gateway, std::span<const PreferencePair> pairs, const CurateConfig& config) {
  validate(config);
  CurateResult result;
  result.stats.input = pairs.size();

  std::vector<PreferencePair> current(pairs.begin(), pairs.end());
  if (!config.skip_strength) {
    auto strength = estimate_strength(gateway, current, config.mrm_pool, config.workers);
    for (const auto& id : strength.dropped_ids) {
      result.decisions.push_back(
          decision(id, CurationStep::flip, CurationAction::discarded, "every MRM failed on this pair"));
    }
    if (!strength.dropped_ids.empty()) {
      std::erase_if(current, [&](const PreferencePair& p) {
        return std::find(strength.dropped_ids.begin(), strength.dropped_ids.end(), p.id) != strength.dropped_ids.end();
      });
    }
    result.stats.strength_dropped = strength.dropped_ids.size();
    auto flipped_step = flip_bottom(strength.estimates, current);
    for (const auto& d : flipped_step.decisions) result.stats.flipped += d.action == CurationAction::flipped;
    std::move(flipped_step.decisions.begin(), flipped_step.decisions.end(), std::back_inserter(result.decisions));
    current = std::move(flipped_step.pairs);
  }

  auto filtered = consistency_filter(gateway, current, config.mrm, config.workers);
  result.stats.retained = filtered.retained.size();
  result.stats.forwarded = filtered.forwarded.size();
  std::move(filtered.decisions.begin(), filtered.decisions.end(), std::back_inserter(result.decisions));

  auto relabeled =
      reannotate(gateway, filtered.forwarded, config.annotators, config.seed, config.workers, filtered.forwarded_notes);
  for (const auto& d : relabeled.decisions) {
    result.stats.reannotated_kept += d.action == CurationAction::kept;
    result.stats.reannotated_flipped += d.action == CurationAction::flipped;
  }
  result.stats.discarded = relabeled.discarded_ids.size() + result.stats.strength_dropped;
  std::move(relabeled.decisions.begin(), relabeled.decisions.end(), std::back_inserter(result.decisions));

  // Survivors go back into input order.
  std::map<std::string, PreferencePair> survivors;
  for (auto& p : filtered.retained) survivors.emplace(p.id, std::move(p));
  for (auto& p : relabeled.relabeled) survivors.emplace(p.id, std::move(p));
  for (const auto& p : pairs) {
    auto it = survivors.find(p.id);
    if (it != survivors.end()) result.pairs.push_back(std::move(it->second));
  }
  result.stats.output = result.pairs.size();
  return result;
}

CurateResult run_curate(Gateway& gateway, const CurateConfig& config, const fs::path& in, const fs::path& out,
                        const fs::path& decisions) {
  const auto pairs = read_records<PreferencePair>(in);
  {
    std::map<std::string, int> ids;
    for (const auto& p : pairs) {
      if (++ids[p.id] > 1) throw ValidationError("duplicate pair id '" + p.id + "' in " + in.string());
    }
  }
  auto result = curate(gateway, pairs, config);
  WriteOptions options;
  options.pipeline_config_digest = config_digest(json(config));
  options.parent_manifests = {read_manifest(in).name};
  write_dataset(out, result.pairs, options);
  copy_blobs(in, out);

  if (decisions.has_parent_path()) fs::create_directories(decisions.parent_path());
  std::vector<std::string> lines;
  lines.reserve(result.decisions.size());
  for (const auto& d : result.decisions) {
    validate(d);
    lines.push_back(canonical_line(json(d)));
  }
  const auto tmp = fs::path(decisions.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    for (const auto& l : lines) f << l << '\n';
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, decisions);
  spdlog::info("curate: {}", to_json_value(result.stats).dump());
  return result;
}

}  // namespace prefkit
