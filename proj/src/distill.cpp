#include "prefkit/distill.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

#include "prefkit/errors.hpp"
#include "prefkit/image.hpp"
#include "prefkit/judge_protocol.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/rng.hpp"

namespace prefkit {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const DistillConfig& c) {
  j = json{{"k_candidates", c.k_candidates},     {"temperature", c.temperature},
           {"top_p", c.top_p},                   {"tau_low", c.tau_low},
           {"tau_high", c.tau_high},             {"noise_sigma", c.noise_sigma},
           {"min_margin", c.min_margin},         {"seed", c.seed},
           {"generator_pool", c.generator_pool}, {"augment_pool", c.augment_pool},
           {"judge", c.judge},                   {"judge_max_reasks", c.judge_max_reasks},
           {"judge_temperature", c.judge_temperature}};
}

void from_json(const json& j, DistillConfig& c) {
  const DistillConfig d;
  c.k_candidates = j.value("k_candidates", d.k_candidates);
  c.temperature = j.value("temperature", d.temperature);
  c.top_p = j.value("top_p", d.top_p);
  c.tau_low = j.value("tau_low", d.tau_low);
  c.tau_high = j.value("tau_high", d.tau_high);
  c.noise_sigma = j.value("noise_sigma", d.noise_sigma);
  c.min_margin = j.value("min_margin", d.min_margin);
  c.seed = j.value("seed", d.seed);
  c.generator_pool = j.value("generator_pool", d.generator_pool);
  c.augment_pool = j.value("augment_pool", d.augment_pool);
  c.judge = j.value("judge", d.judge);
  c.judge_max_reasks = j.value("judge_max_reasks", d.judge_max_reasks);
  c.judge_temperature = j.value("judge_temperature", d.judge_temperature);
}

void validate(const DistillConfig& c) {
  if (c.k_candidates < 2) throw ValidationError("k_candidates must be >= 2");
  if (!(c.tau_low < c.tau_high)) throw ValidationError("tau_low must be below tau_high");
  if (c.tau_low < 0.0 || c.tau_high > 10.0) throw ValidationError("thresholds must lie in [0, 10]");
  if (c.noise_sigma < 0.0) throw ValidationError("noise_sigma must be >= 0");
  if (c.min_margin < 0.0) throw ValidationError("min_margin must be >= 0");
  if (!(c.temperature > 0.0)) throw ValidationError("temperature must be > 0");
  if (!(c.top_p > 0.0 && c.top_p <= 1.0)) throw ValidationError("top_p must be in (0, 1]");
  if (c.generator_pool.empty()) throw ValidationError("generator_pool is empty");
  if (c.judge.empty()) throw ValidationError("no judge endpoint configured");
  if (c.judge_max_reasks < 0) throw ValidationError("judge_max_reasks must be >= 0");
}

std::int64_t wire_seed(std::uint64_t derived) { return static_cast<std::int64_t>(derived >> 33); }

std::vector<PreferencePair> build_pairs(const PromptRecord& prompt, std::span<const CandidateResponse> candidates,
                                        std::span<const JudgeVerdict> listwise, std::span<const JudgeVerdict> pointwise,
                                        double min_margin) {
  std::map<int, double> sl;
  std::map<int, double> sp;
  for (const auto& v : listwise) sl[v.response_ref.sample_index] = v.overall;
  for (const auto& v : pointwise) sp[v.response_ref.sample_index] = v.overall;
  std::map<int, const CandidateResponse*> by_index;
  std::vector<ScoredCandidate> scored;
  for (const auto& c : candidates) {
    auto l = sl.find(c.sample_index);
    auto p = sp.find(c.sample_index);
    if (l == sl.end() || p == sp.end()) continue;
    by_index[c.sample_index] = &c;
    scored.push_back({c.sample_index, l->second, p->second});
  }
  std::vector<PreferencePair> pairs;
  if (scored.size() < 2) return pairs;
  for (const auto& ip : intersect_pairs(scored, min_margin)) {
    const auto& chosen = *by_index.at(ip.chosen);
    const auto& rejected = *by_index.at(ip.rejected);
    // Identical texts cannot form a pair.
    if (chosen.text == rejected.text) continue;
    PreferencePair pair;
    pair.id = prompt.id + "#" + std::to_string(ip.chosen) + ">" + std::to_string(ip.rejected);
    pair.context = SingleImageContext{prompt.id, prompt.text, prompt.images};
    pair.chosen = chosen.text;
    pair.rejected = rejected.text;
    pair.listwise_margin = ip.listwise_margin;
    pair.pointwise_margin = ip.pointwise_margin;
    pair.provenance = Provenance::distilled;
    pair.source_dataset = prompt.source;
    pair.chosen_origin = ResponseOrigin{chosen.generator_id, chosen.sample_index, chosen.augmented, chosen.degraded};
    pair.rejected_origin =
        ResponseOrigin{rejected.generator_id, rejected.sample_index, rejected.augmented, rejected.degraded};
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

Distiller::Distiller(Gateway& gateway, DistillConfig config) : gateway_(gateway), config_(std::move(config)) {
  validate(config_);
}

std::string Distiller::pick_generator(const PromptRecord& prompt) const {
  if (config_.generator_pool.empty()) throw ValidationError("generator_pool is empty");
  Rng rng(derive_seed(static_cast<std::uint64_t>(config_.seed), "generator", prompt.id));
  return config_.generator_pool[rng.uniform_index(config_.generator_pool.size())];
}

std::vector<CandidateResponse> Distiller::generate_candidates(const PromptRecord& prompt) const {
  const auto generator = pick_generator(prompt);
  GenerationRequest req;
  req.prompt_text = prompt.text;
  for (const auto& ref : prompt.images) req.images.push_back(gateway_.images().load(ref));
  req.temperature = config_.temperature;
  req.top_p = config_.top_p;
  req.n_samples = config_.k_candidates;
  req.seed = wire_seed(derive_seed(static_cast<std::uint64_t>(config_.seed), "generate", prompt.id));
  const auto texts = gateway_.generate(generator, req);
  std::vector<CandidateResponse> out;
  out.reserve(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    CandidateResponse c;
    c.prompt_id = prompt.id;
    c.generator_id = generator;
    c.sample_index = static_cast<int>(i);
    c.text = texts[i];
    c.sampling = {req.temperature, req.top_p, req.seed};
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<JudgeVerdict> Distiller::listwise_score(const PromptRecord& prompt,
                                                    std::span<const CandidateResponse> candidates, int round) const {
  std::vector<std::size_t> order(candidates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(static_cast<std::uint64_t>(config_.seed), "listwise", prompt.id, std::to_string(round)));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<JudgeCandidate> presented;
  presented.reserve(order.size());
  for (auto i : order) presented.push_back({candidates[i].sample_index, candidates[i].text});
  JudgeOptions options;
  options.max_reasks = config_.judge_max_reasks;
  options.temperature = config_.judge_temperature;
  options.seed = wire_seed(derive_seed(static_cast<std::uint64_t>(config_.seed), "judge-l", prompt.id,
                                       std::to_string(round)));
  auto verdicts = gateway_.judge(config_.judge, prompt, presented, JudgeMode::listwise, options);
  std::vector<JudgeVerdict> out(candidates.size());
  for (std::size_t slot = 0; slot < order.size(); ++slot) out[order[slot]] = std::move(verdicts[slot]);
  return out;
}

DiversityResult Distiller::enhance_diversity(const PromptRecord& prompt, std::vector<CandidateResponse> candidates,
                                             std::vector<JudgeVerdict> verdicts) const {
  DiversityResult result;
  if (verdicts.size() != candidates.size()) {
    throw PreconditionError("verdicts do not cover all candidates of '" + prompt.id + "'");
  }
  const bool all_low = std::all_of(verdicts.begin(), verdicts.end(),
                                   [this](const JudgeVerdict& v) { return v.overall < config_.tau_low; });
  const bool all_high = std::all_of(verdicts.begin(), verdicts.end(),
                                    [this](const JudgeVerdict& v) { return v.overall > config_.tau_high; });
  int next_index = 0;
  for (const auto& c : candidates) next_index = std::max(next_index, c.sample_index + 1);
  const auto base = static_cast<std::uint64_t>(config_.seed);

  std::optional<CandidateResponse> extra;
  if (all_low && !candidates.empty()) {
    if (config_.augment_pool.empty()) {
      spdlog::info("distill: '{}' scored low everywhere but augment_pool is empty", prompt.id);
    } else {
      Rng rng(derive_seed(base, "augment", prompt.id));
      const auto model = config_.augment_pool[rng.uniform_index(config_.augment_pool.size())];
      GenerationRequest req;
      req.prompt_text = render_augment_prompt(prompt.text, prompt.reference_answer);
      for (const auto& ref : prompt.images) req.images.push_back(gateway_.images().load(ref));
      req.temperature = config_.temperature;
      req.top_p = config_.top_p;
      req.n_samples = 1;
      req.seed = wire_seed(derive_seed(base, "augment-gen", prompt.id));
      auto texts = gateway_.generate(model, req);
      CandidateResponse c;
      c.prompt_id = prompt.id;
      c.generator_id = model;
      c.sample_index = next_index;
      c.text = std::move(texts.front());
      c.sampling = {req.temperature, req.top_p, req.seed};
      c.augmented = true;
      extra = std::move(c);
      result.branch = DiversityBranch::augmented;
    }
  } else if (all_high && !candidates.empty()) {
    if (prompt.images.empty()) {
      spdlog::info("distill: '{}' scored high everywhere but has no image to degrade", prompt.id);
    } else {
      GenerationRequest req;
      req.prompt_text = prompt.text;
      try {
        for (std::size_t i = 0; i < prompt.images.size(); ++i) {
          Rng rng(derive_seed(base, "noise", prompt.id, std::to_string(i)));
          auto image = decode_image(gateway_.images().load(prompt.images[i]));
          req.images.push_back(encode_png(add_gaussian_noise(std::move(image), config_.noise_sigma, rng)));
        }
      } catch (const ImageError& e) {
        spdlog::warn("distill: '{}' cannot take the degraded branch: {}", prompt.id, e.what());
        req.images.clear();
      }
      if (!req.images.empty()) {
        // Same generator as the original candidates.
        const auto generator = candidates.front().generator_id;
        req.temperature = config_.temperature;
        req.top_p = config_.top_p;
        req.n_samples = 1;
        req.seed = wire_seed(derive_seed(base, "degrade-gen", prompt.id));
        auto texts = gateway_.generate(generator, req);
        CandidateResponse c;
        c.prompt_id = prompt.id;
        c.generator_id = generator;
        c.sample_index = next_index;
        c.text = std::move(texts.front());
        c.sampling = {req.temperature, req.top_p, req.seed};
        c.degraded = true;
        extra = std::move(c);
        result.branch = DiversityBranch::degraded;
      }
    }
  }

  if (extra) {
    candidates.push_back(std::move(*extra));
    result.listwise = listwise_score(prompt, candidates, 1);
  } else {
    result.listwise = std::move(verdicts);
  }
  result.candidates = std::move(candidates);
  return result;
}

std::vector<JudgeVerdict> Distiller::pointwise_score(const PromptRecord& prompt,
                                                     std::span<const CandidateResponse> candidates) const {
  std::vector<JudgeVerdict> out;
  for (const auto& c : candidates) {
    JudgeOptions options;
    options.max_reasks = config_.judge_max_reasks;
    options.temperature = config_.judge_temperature;
    options.seed = wire_seed(derive_seed(static_cast<std::uint64_t>(config_.seed), "judge-p", prompt.id,
                                         std::to_string(c.sample_index)));
    const JudgeCandidate single{c.sample_index, c.text};
    try {
      auto v = gateway_.judge(config_.judge, prompt, std::span<const JudgeCandidate>(&single, 1),
                              JudgeMode::pointwise, options);
      out.push_back(std::move(v.front()));
    } catch (const VerdictFailure& e) {
      spdlog::warn("distill: pointwise verdict failed for '{}' sample {}: {}", prompt.id, c.sample_index, e.what());
    } catch (const EndpointError& e) {
      spdlog::warn("distill: pointwise call failed for '{}' sample {}: {}", prompt.id, c.sample_index, e.what());
    } catch (const ProtocolError& e) {
      spdlog::warn("distill: pointwise reply malformed for '{}' sample {}: {}", prompt.id, c.sample_index, e.what());
    }
  }
  return out;
}

PromptOutcome Distiller::run_prompt(const PromptRecord& prompt) const {
  PromptOutcome outcome;
  outcome.prompt_id = prompt.id;
  try {
    validate(prompt);
    auto candidates = generate_candidates(prompt);
    auto listwise = listwise_score(prompt, candidates, 0);
    auto diverse = enhance_diversity(prompt, std::move(candidates), std::move(listwise));
    outcome.branch = diverse.branch;
    outcome.candidates = std::move(diverse.candidates);
    outcome.listwise = std::move(diverse.listwise);
    outcome.pointwise = pointwise_score(prompt, outcome.candidates);
    outcome.pairs = build_pairs(prompt, outcome.candidates, outcome.listwise, outcome.pointwise, config_.min_margin);
    outcome.ok = true;
    if (outcome.pointwise.size() < 2) outcome.note = "fewer than two pointwise-scored candidates";
  } catch (const std::exception& e) {
    // Generator, judge or image failures exclude the prompt.
    outcome.ok = false;
    outcome.note = e.what();
    outcome.pairs.clear();
    spdlog::warn("distill: prompt '{}' excluded: {}", prompt.id, e.what());
  }
  return outcome;
}

std::vector<PromptOutcome> Distiller::run(std::span<const PromptRecord> prompts, int workers) const {
  std::vector<PromptOutcome> out(prompts.size());
  const auto n = static_cast<std::ptrdiff_t>(prompts.size());
#pragma omp parallel for schedule(dynamic, 1) num_threads(std::max(workers, 1))
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = run_prompt(prompts[i]);
  return out;
}

namespace {

std::unordered_set<std::string> finished_prompts(const fs::path& progress) {
  std::unordered_set<std::string> done;
  std::ifstream in(progress);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto doc = json::parse(line, nullptr, false);
    if (doc.is_object() && doc.contains("prompt_id")) done.insert(doc["prompt_id"].get<std::string>());
  }
  return done;
}

}  // namespace

DistillRunSummary run_distill(Gateway& gateway, const DistillConfig& config, std::span<const PromptRecord> prompts,
                              const fs::path& out, const DistillRunOptions& options) {
  const Distiller distiller(gateway, config);
  const DatasetLayout layout{out};
  const auto progress_path = out / "progress.jsonl";
  if (!options.resume && (fs::exists(layout.records()) || fs::exists(progress_path))) {
    throw PreconditionError("output " + out.string() + " already holds a dataset; pass --resume to continue it");
  }
  fs::create_directories(out / "aux");

  std::set<std::string> seen;
  for (const auto& p : prompts) {
    if (!seen.insert(p.id).second) throw ValidationError("duplicate prompt id '" + p.id + "'");
  }

  const auto done = options.resume ? finished_prompts(progress_path) : std::unordered_set<std::string>{};
  std::vector<PromptRecord> todo;
  DistillRunSummary summary;
  for (const auto& p : prompts) {
    if (options.limit && todo.size() + done.size() >= *options.limit) break;
    if (done.contains(p.id)) {
      ++summary.skipped;
      continue;
    }
    todo.push_back(p);
  }

  DatasetWriter pairs_out(out);
  DatasetWriter candidates_out(out / "aux" / "candidates");
  DatasetWriter verdicts_out(out / "aux" / "verdicts");
  std::ofstream progress(progress_path, std::ios::app);
  const ImageStore blobs({}, layout.blobs());
  std::map<std::string, std::string> embedded;

  for (std::size_t start = 0; start < todo.size(); start += options.chunk_size) {
    const auto count = std::min(options.chunk_size, todo.size() - start);
    auto outcomes = distiller.run(std::span<const PromptRecord>(todo).subspan(start, count), options.workers);
    // Appended in input order so the files do not depend on scheduling.
    for (const auto& o : outcomes) {
      for (auto pair : o.pairs) {
        for (auto& ref : std::get<SingleImageContext>(pair.context).images) {
          auto it = embedded.find(ref);
          if (it == embedded.end()) it = embedded.emplace(ref, embed_image(gateway.images(), blobs, ref)).first;
          ref = it->second;
        }
        pairs_out.append(pair);
      }
      for (const auto& c : o.candidates) candidates_out.append(c);
      for (const auto& v : o.listwise) verdicts_out.append(v);
      for (const auto& v : o.pointwise) verdicts_out.append(v);
      progress << json{{"prompt_id", o.prompt_id}, {"ok", o.ok}, {"pairs", o.pairs.size()}, {"note", o.note}}.dump()
               << '\n';
      ++summary.processed;
      summary.failed += o.ok ? 0 : 1;
      summary.pairs += o.pairs.size();
    }
    progress.flush();
    spdlog::info("distill: {}/{} prompts, {} pairs so far", start + count, todo.size(), summary.pairs);
  }

  WriteOptions wo;
  wo.pipeline_config_digest = config_digest(json(config));
  candidates_out.finalize({"candidates", wo.pipeline_config_digest, {}});
  verdicts_out.finalize({"verdicts", wo.pipeline_config_digest, {}});
  summary.manifest = pairs_out.finalize(wo);
  return summary;
}

}  // namespace prefkit
