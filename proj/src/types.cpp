#include "prefkit/types.hpp"

#include <cmath>
#include <numeric>

#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"

namespace prefkit {

using nlohmann::json;

namespace {

template <class T>
void put_optional(json& j, const char* key, const std::optional<T>& value) {
  if (value) j[key] = *value;
}

template <class T>
void get_optional(const json& j, const char* key, std::optional<T>& value) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) {
    value = it->get<T>();
  } else {
    value.reset();
  }
}

template <class T>
T value_or(const json& j, const char* key, T fallback) {
  if (auto it = j.find(key); it != j.end() && !it->is_null()) return it->get<T>();
  return fallback;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw ValidationError(message);
}

}  // namespace

void to_json(json& j, const PromptRecord& r) {
  j = json{{"id", r.id},
           {"text", r.text},
           {"images", r.images},
           {"reference_answer", r.reference_answer},
           {"domain", r.domain},
           {"source", r.source}};
}

void from_json(const json& j, PromptRecord& r) {
  j.at("id").get_to(r.id);
  j.at("text").get_to(r.text);
  r.images = value_or(j, "images", std::vector<std::string>{});
  j.at("reference_answer").get_to(r.reference_answer);
  r.domain = value_or(j, "domain", Domain::other);
  r.source = value_or(j, "source", std::string{});
}

void to_json(json& j, const SamplingParams& r) {
  j = json{{"temperature", r.temperature}, {"top_p", r.top_p}, {"seed", r.seed}};
}

void from_json(const json& j, SamplingParams& r) {
  j.at("temperature").get_to(r.temperature);
  j.at("top_p").get_to(r.top_p);
  j.at("seed").get_to(r.seed);
}

void to_json(json& j, const CandidateResponse& r) {
  j = json{{"prompt_id", r.prompt_id}, {"generator_id", r.generator_id}, {"sample_index", r.sample_index},
           {"text", r.text},           {"sampling", r.sampling},         {"degraded", r.degraded},
           {"augmented", r.augmented}};
}

void from_json(const json& j, CandidateResponse& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("generator_id").get_to(r.generator_id);
  j.at("sample_index").get_to(r.sample_index);
  j.at("text").get_to(r.text);
  j.at("sampling").get_to(r.sampling);
  r.degraded = value_or(j, "degraded", false);
  r.augmented = value_or(j, "augmented", false);
}

void to_json(json& j, const ResponseRef& r) {
  j = json{{"prompt_id", r.prompt_id}, {"sample_index", r.sample_index}};
}

void from_json(const json& j, ResponseRef& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("sample_index").get_to(r.sample_index);
}

void to_json(json& j, const JudgeVerdict& r) {
  j = json{{"prompt_id", r.prompt_id},
           {"response_ref", r.response_ref},
           {"mode", r.mode},
           {"judge_id", r.judge_id},
           {"judge_reference", r.judge_reference},
           {"weights", r.weights},
           {"criterion_scores", r.criterion_scores},
           {"overall", r.overall},
           {"position", r.position},
           {"raw_judge_output", r.raw_judge_output}};
}

void from_json(const json& j, JudgeVerdict& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  j.at("response_ref").get_to(r.response_ref);
  j.at("mode").get_to(r.mode);
  j.at("judge_id").get_to(r.judge_id);
  r.judge_reference = value_or(j, "judge_reference", std::string{});
  j.at("weights").get_to(r.weights);
  j.at("criterion_scores").get_to(r.criterion_scores);
  j.at("overall").get_to(r.overall);
  r.position = value_or(j, "position", 0);
  r.raw_judge_output = value_or(j, "raw_judge_output", std::string{});
}

void to_json(json& j, const SingleImageContext& r) {
  j = json{{"type", "single_image"}, {"prompt_id", r.prompt_id}, {"prompt_text", r.prompt_text}, {"images", r.images}};
}

void from_json(const json& j, SingleImageContext& r) {
  j.at("prompt_id").get_to(r.prompt_id);
  r.prompt_text = value_or(j, "prompt_text", std::string{});
  r.images = value_or(j, "images", std::vector<std::string>{});
}

void to_json(json& j, const ReformulatedContext& r) {
  j = json{{"type", "reformulated"},         {"image_1", r.image_1},         {"image_2", r.image_2},
           {"prompt_text", r.prompt_text},   {"eval_prompt", r.eval_prompt}, {"chosen_position", r.chosen_position}};
}

void from_json(const json& j, ReformulatedContext& r) {
  j.at("image_1").get_to(r.image_1);
  j.at("image_2").get_to(r.image_2);
  j.at("prompt_text").get_to(r.prompt_text);
  j.at("eval_prompt").get_to(r.eval_prompt);
  j.at("chosen_position").get_to(r.chosen_position);
}

void to_json(json& j, const PairContext& r) {
  std::visit([&j](const auto& c) { to_json(j, c); }, r);
}

void from_json(const json& j, PairContext& r) {
  const auto type = value_or(j, "type", std::string{"single_image"});
  if (type == "single_image") {
    r = j.get<SingleImageContext>();
  } else if (type == "reformulated") {
    r = j.get<ReformulatedContext>();
  } else {
    throw ValidationError("unknown context type '" + type + "'");
  }
}

void to_json(json& j, const ResponseOrigin& r) {
  j = json{{"generator_id", r.generator_id},
           {"sample_index", r.sample_index},
           {"augmented", r.augmented},
           {"degraded", r.degraded}};
}

void from_json(const json& j, ResponseOrigin& r) {
  j.at("generator_id").get_to(r.generator_id);
  j.at("sample_index").get_to(r.sample_index);
  r.augmented = value_or(j, "augmented", false);
  r.degraded = value_or(j, "degraded", false);
}

void to_json(json& j, const PreferencePair& r) {
  j = json{{"id", r.id},
           {"context", r.context},
           {"chosen", r.chosen},
           {"rejected", r.rejected},
           {"provenance", r.provenance},
           {"source_dataset", r.source_dataset}};
  put_optional(j, "listwise_margin", r.listwise_margin);
  put_optional(j, "pointwise_margin", r.pointwise_margin);
  put_optional(j, "chosen_origin", r.chosen_origin);
  put_optional(j, "rejected_origin", r.rejected_origin);
}

void from_json(const json& j, PreferencePair& r) {
  j.at("id").get_to(r.id);
  j.at("context").get_to(r.context);
  j.at("chosen").get_to(r.chosen);
  j.at("rejected").get_to(r.rejected);
  r.provenance = value_or(j, "provenance", Provenance::open_source);
  r.source_dataset = value_or(j, "source_dataset", std::string{});
  get_optional(j, "listwise_margin", r.listwise_margin);
  get_optional(j, "pointwise_margin", r.pointwise_margin);
  get_optional(j, "chosen_origin", r.chosen_origin);
  get_optional(j, "rejected_origin", r.rejected_origin);
}

void to_json(json& j, const T2IRecord& r) {
  j = json{{"id", r.id},
           {"prompt_text", r.prompt_text},
           {"chosen_image", r.chosen_image},
           {"rejected_image", r.rejected_image},
           {"source", r.source}};
}

void from_json(const json& j, T2IRecord& r) {
  j.at("id").get_to(r.id);
  j.at("prompt_text").get_to(r.prompt_text);
  j.at("chosen_image").get_to(r.chosen_image);
  j.at("rejected_image").get_to(r.rejected_image);
  r.source = value_or(j, "source", std::string{});
}

void to_json(json& j, const BaselineItem& r) {
  j = json{{"record_id", r.record_id},
           {"image", r.image},
           {"prompt_text", r.prompt_text},
           {"chosen", r.chosen},
           {"source", r.source}};
}

void from_json(const json& j, BaselineItem& r) {
  j.at("record_id").get_to(r.record_id);
  j.at("image").get_to(r.image);
  j.at("prompt_text").get_to(r.prompt_text);
  j.at("chosen").get_to(r.chosen);
  r.source = value_or(j, "source", std::string{});
}

void to_json(json& j, const BenchmarkItem& r) {
  j = json{{"id", r.id},
           {"group_id", r.group_id},
           {"task", r.task},
           {"prompt_text", r.prompt_text},
           {"images", r.images},
           {"response_a", r.response_a},
           {"response_b", r.response_b},
           {"human_label", r.human_label}};
}

void from_json(const json& j, BenchmarkItem& r) {
  j.at("id").get_to(r.id);
  r.group_id = value_or(j, "group_id", r.id);
  r.task = value_or(j, "task", std::string{"default"});
  j.at("prompt_text").get_to(r.prompt_text);
  r.images = value_or(j, "images", std::vector<std::string>{});
  j.at("response_a").get_to(r.response_a);
  j.at("response_b").get_to(r.response_b);
  j.at("human_label").get_to(r.human_label);
}

void to_json(json& j, const MrmMargin& r) { j = json{{"endpoint_id", r.endpoint_id}, {"margin", r.margin}}; }

void from_json(const json& j, MrmMargin& r) {
  j.at("endpoint_id").get_to(r.endpoint_id);
  j.at("margin").get_to(r.margin);
}

void to_json(json& j, const StrengthEstimate& r) {
  j = json{{"pair_id", r.pair_id}, {"per_model_margins", r.per_model_margins}, {"strength", r.strength}};
}

void from_json(const json& j, StrengthEstimate& r) {
  j.at("pair_id").get_to(r.pair_id);
  j.at("per_model_margins").get_to(r.per_model_margins);
  j.at("strength").get_to(r.strength);
}

void to_json(json& j, const Vote& r) {
  j = json{{"annotator_id", r.annotator_id}, {"order", r.order}, {"winner", r.winner}};
}

void from_json(const json& j, Vote& r) {
  j.at("annotator_id").get_to(r.annotator_id);
  j.at("order").get_to(r.order);
  j.at("winner").get_to(r.winner);
}

void to_json(json& j, const CurationDecision& r) {
  j = json{{"pair_id", r.pair_id}, {"step", r.step}, {"action", r.action}, {"notes", r.notes}};
  put_optional(j, "votes", r.votes);
}

void from_json(const json& j, CurationDecision& r) {
  j.at("pair_id").get_to(r.pair_id);
  j.at("step").get_to(r.step);
  j.at("action").get_to(r.action);
  r.notes = value_or(j, "notes", std::string{});
  get_optional(j, "votes", r.votes);
}

void to_json(json& j, const DatasetManifest& r) {
  j = json{{"name", r.name},
           {"record_count", r.record_count},
           {"content_digest", r.content_digest},
           {"pipeline_config_digest", r.pipeline_config_digest},
           {"parent_manifests", r.parent_manifests},
           {"created_at", r.created_at}};
}

void from_json(const json& j, DatasetManifest& r) {
  j.at("name").get_to(r.name);
  j.at("record_count").get_to(r.record_count);
  j.at("content_digest").get_to(r.content_digest);
  r.pipeline_config_digest = value_or(j, "pipeline_config_digest", std::string{});
  r.parent_manifests = value_or(j, "parent_manifests", std::vector<std::string>{});
  r.created_at = value_or(j, "created_at", std::string{});
}

void validate(const PromptRecord& r) {
  require(!r.id.empty(), "prompt id is empty");
  require(!r.reference_answer.empty(), "prompt '" + r.id + "' has an empty reference_answer");
}

void validate(const CandidateResponse& r) {
  require(!r.prompt_id.empty(), "candidate without prompt_id");
  require(!r.generator_id.empty(), "candidate without generator_id");
  require(r.sample_index >= 0, "negative sample_index");
  require(!(r.degraded && r.augmented), "candidate is both degraded and augmented");
}

void validate(const JudgeVerdict& r) {
  require(!r.weights.empty(), "verdict without weights");
  require(r.weights.size() == r.criterion_scores.size(), "weights and criterion_scores differ in length");
  const double sum = std::accumulate(r.weights.begin(), r.weights.end(), 0.0);
  require(std::abs(sum - 1.0) <= 0.01, "verdict weights sum to " + std::to_string(sum));
  long double recomputed = 0.0L;
  for (std::size_t m = 0; m < r.weights.size(); ++m) {
    require(r.criterion_scores[m] >= 0 && r.criterion_scores[m] <= 10, "criterion score out of 0..10");
    recomputed += static_cast<long double>(r.weights[m]) * r.criterion_scores[m];
  }
  require(r.overall >= 0.0 && r.overall <= 10.0, "overall outside [0,10]");
  // Round-tripping through 9 significant digits moves values by < 1e-8 on
  // the 0..10 scale; the in-memory verdict is exact to 1e-9.
  require(std::abs(static_cast<long double>(r.overall) - recomputed) <= 1e-7L,
          "overall does not match the weighted criterion scores");
}

void validate(const PreferencePair& r) {
  require(!r.id.empty(), "pair id is empty");
  require(r.chosen != r.rejected, "pair '" + r.id + "' has chosen == rejected");
  if (r.provenance == Provenance::distilled) {
    require(r.listwise_margin && *r.listwise_margin > 0.0 && r.pointwise_margin && *r.pointwise_margin > 0.0,
            "distilled pair '" + r.id + "' lacks strictly positive margins");
  }
  if (const auto* ctx = std::get_if<ReformulatedContext>(&r.context)) {
    require(ctx->chosen_position == 1 || ctx->chosen_position == 2, "chosen_position must be 1 or 2");
    require(ctx->image_1 != ctx->image_2, "reformulated context repeats one image");
  }
}

void validate(const T2IRecord& r) {
  require(!r.id.empty(), "t2i record id is empty");
  require(r.chosen_image != r.rejected_image, "t2i record '" + r.id + "' has chosen_image == rejected_image");
}

void validate(const BaselineItem& r) { require(!r.record_id.empty(), "baseline item without record_id"); }

void validate(const BenchmarkItem& r) {
  require(!r.id.empty(), "benchmark item id is empty");
  require(r.response_a != r.response_b, "benchmark item '" + r.id + "' has identical responses");
}

void validate(const StrengthEstimate& r) {
  require(!r.per_model_margins.empty(), "strength estimate without margins");
  require(std::isfinite(r.strength), "strength is not finite");
}

void validate(const CurationDecision& r) {
  if (r.step == CurationStep::reannotate && r.action != CurationAction::discarded) {
    require(r.votes.has_value(), "reannotate decision without votes");
  }
}

ContentKey content_key(const PromptRecord& r) { return {r.text, r.images}; }

ContentKey content_key(const PreferencePair& r) { return {reward_prompt_text(r.context), context_images(r.context)}; }

ContentKey content_key(const T2IRecord& r) { return {r.prompt_text, {r.chosen_image, r.rejected_image}}; }

ContentKey content_key(const BenchmarkItem& r) { return {r.prompt_text, r.images}; }

const std::string& record_id(const PromptRecord& r) { return r.id; }
const std::string& record_id(const PreferencePair& r) { return r.id; }
const std::string& record_id(const T2IRecord& r) { return r.id; }
const std::string& record_id(const BenchmarkItem& r) { return r.id; }

std::string reward_prompt_text(const PairContext& context) {
  if (const auto* single = std::get_if<SingleImageContext>(&context)) return single->prompt_text;
  const auto& ref = std::get<ReformulatedContext>(context);
  if (ref.eval_prompt.empty()) return ref.prompt_text;
  return ref.prompt_text + "\n\n" + ref.eval_prompt;
}

std::vector<std::string> context_images(const PairContext& context) {
  if (const auto* single = std::get_if<SingleImageContext>(&context)) return single->images;
  const auto& ref = std::get<ReformulatedContext>(context);
  return {ref.image_1, ref.image_2};
}

std::string pair_content_digest(const PreferencePair& pair) {
  json ctx = pair.context;
  // prompt_id is a local handle; the content is text + images.
  if (std::holds_alternative<SingleImageContext>(pair.context)) ctx.erase("prompt_id");
  const json key{{"context", ctx}, {"chosen", pair.chosen}, {"rejected", pair.rejected}};
  return sha256_hex(canonical_dump(key));
}

PreferencePair flipped(PreferencePair pair, Provenance provenance) {
  std::swap(pair.chosen, pair.rejected);
  std::swap(pair.chosen_origin, pair.rejected_origin);
  if (pair.listwise_margin) pair.listwise_margin = -*pair.listwise_margin;
  if (pair.pointwise_margin) pair.pointwise_margin = -*pair.pointwise_margin;
  if (auto* ref = std::get_if<ReformulatedContext>(&pair.context)) {
    ref->chosen_position = ref->chosen_position == 1 ? 2 : 1;
  }
  pair.provenance = provenance;
  return pair;
}

}  // namespace prefkit
