#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace prefkit {

enum class Domain { visual_understanding, visual_reasoning, multimodal_safety, other };

NLOHMANN_JSON_SERIALIZE_ENUM(Domain, {{Domain::visual_understanding, "visual_understanding"},
                                      {Domain::visual_reasoning, "visual_reasoning"},
                                      {Domain::multimodal_safety, "multimodal_safety"},
                                      {Domain::other, "other"}})

// A multimodal prompt with its reference answer.
struct PromptRecord {
  std::string id;
  std::string text;
  std::vector<std::string> images;
  std::string reference_answer;
  Domain domain = Domain::other;
  std::string source;
};

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 0.95;
  std::int64_t seed = 0;
};

struct CandidateResponse {
  std::string prompt_id;
  std::string generator_id;
  int sample_index = 0;
  std::string text;
  SamplingParams sampling;
  bool degraded = false;   // generated from a noise-injected image
  bool augmented = false;  // better response generated with the reference answer visible
};

enum class JudgeMode { listwise, pointwise };

NLOHMANN_JSON_SERIALIZE_ENUM(JudgeMode, {{JudgeMode::listwise, "listwise"}, {JudgeMode::pointwise, "pointwise"}})

struct ResponseRef {
  std::string prompt_id;
  int sample_index = 0;
};

struct JudgeVerdict {
  std::string prompt_id;
  ResponseRef response_ref;
  JudgeMode mode = JudgeMode::listwise;
  std::string judge_id;
  std::string judge_reference;  // the judge's own answer
  std::vector<double> weights;
  std::vector<int> criterion_scores;
  double overall = 0.0;
  int position = 0;  // presentation slot in the judge prompt
  std::string raw_judge_output;
};

struct SingleImageContext {
  std::string prompt_id;
  std::string prompt_text;
  std::vector<std::string> images;
};

// Two-image pairwise-evaluation context built from a text-to-image triplet.
struct ReformulatedContext {
  std::string image_1;
  std::string image_2;
  std::string prompt_text;
  std::string eval_prompt;
  int chosen_position = 1;  // 1 or 2
};

using PairContext = std::variant<SingleImageContext, ReformulatedContext>;

enum class Provenance { distilled, t2i_reformulated, open_source, curated_flip, curated_reannotated };

NLOHMANN_JSON_SERIALIZE_ENUM(Provenance, {{Provenance::distilled, "distilled"},
                                          {Provenance::t2i_reformulated, "t2i_reformulated"},
                                          {Provenance::open_source, "open_source"},
                                          {Provenance::curated_flip, "curated_flip"},
                                          {Provenance::curated_reannotated, "curated_reannotated"}})

struct ResponseOrigin {
  std::string generator_id;
  int sample_index = 0;
  bool augmented = false;
  bool degraded = false;
};

struct PreferencePair {
  std::string id;
  PairContext context;
  std::string chosen;
  std::string rejected;
  std::optional<double> listwise_margin;
  std::optional<double> pointwise_margin;
  Provenance provenance = Provenance::open_source;
  std::string source_dataset;
  std::optional<ResponseOrigin> chosen_origin;
  std::optional<ResponseOrigin> rejected_origin;
};

struct T2IRecord {
  std::string id;
  std::string prompt_text;
  std::string chosen_image;
  std::string rejected_image;
  std::string source;
};

// Single-image baseline item: one image scored against its prompt.
struct BaselineItem {
  std::string record_id;
  std::string image;
  std::string prompt_text;
  bool chosen = false;
  std::string source;
};

enum class Label { a, b };

NLOHMANN_JSON_SERIALIZE_ENUM(Label, {{Label::a, "a"}, {Label::b, "b"}})

struct BenchmarkItem {
  std::string id;
  std::string group_id;
  std::string task;
  std::string prompt_text;
  std::vector<std::string> images;
  std::string response_a;
  std::string response_b;
  Label human_label = Label::a;
};

struct MrmMargin {
  std::string endpoint_id;
  double margin = 0.0;
};

struct StrengthEstimate {
  std::string pair_id;
  std::vector<MrmMargin> per_model_margins;
  double strength = 0.0;
};

enum class CurationStep { flip, retain_consistent, reannotate };
enum class CurationAction { kept, flipped, discarded };
enum class VoteOrder { AB, BA };
enum class Side { chosen, rejected };

NLOHMANN_JSON_SERIALIZE_ENUM(CurationStep, {{CurationStep::flip, "flip"},
                                            {CurationStep::retain_consistent, "retain_consistent"},
                                            {CurationStep::reannotate, "reannotate"}})
NLOHMANN_JSON_SERIALIZE_ENUM(CurationAction, {{CurationAction::kept, "kept"},
                                              {CurationAction::flipped, "flipped"},
                                              {CurationAction::discarded, "discarded"}})
NLOHMANN_JSON_SERIALIZE_ENUM(VoteOrder, {{VoteOrder::AB, "AB"}, {VoteOrder::BA, "BA"}})
NLOHMANN_JSON_SERIALIZE_ENUM(Side, {{Side::chosen, "chosen"}, {Side::rejected, "rejected"}})

struct Vote {
  std::string annotator_id;
  VoteOrder order = VoteOrder::AB;
  Side winner = Side::chosen;
};

struct CurationDecision {
  std::string pair_id;
  CurationStep step = CurationStep::flip;
  CurationAction action = CurationAction::kept;
  std::optional<std::vector<Vote>> votes;
  std::string notes;
};

struct DatasetManifest {
  std::string name;
  std::size_t record_count = 0;
  std::string content_digest;
  std::string pipeline_config_digest;
  std::vector<std::string> parent_manifests;
  std::string created_at;
};

// JSON mapping. Optional fields are omitted when empty so the canonical
// form of a record is unique.
void to_json(nlohmann::json& j, const PromptRecord& r);
void from_json(const nlohmann::json& j, PromptRecord& r);
void to_json(nlohmann::json& j, const SamplingParams& r);
void from_json(const nlohmann::json& j, SamplingParams& r);
void to_json(nlohmann::json& j, const CandidateResponse& r);
void from_json(const nlohmann::json& j, CandidateResponse& r);
void to_json(nlohmann::json& j, const ResponseRef& r);
void from_json(const nlohmann::json& j, ResponseRef& r);
void to_json(nlohmann::json& j, const JudgeVerdict& r);
void from_json(const nlohmann::json& j, JudgeVerdict& r);
void to_json(nlohmann::json& j, const SingleImageContext& r);
void from_json(const nlohmann::json& j, SingleImageContext& r);
void to_json(nlohmann::json& j, const ReformulatedContext& r);
void from_json(const nlohmann::json& j, ReformulatedContext& r);
void to_json(nlohmann::json& j, const PairContext& r);
void from_json(const nlohmann::json& j, PairContext& r);
void to_json(nlohmann::json& j, const ResponseOrigin& r);
void from_json(const nlohmann::json& j, ResponseOrigin& r);
void to_json(nlohmann::json& j, const PreferencePair& r);
void from_json(const nlohmann::json& j, PreferencePair& r);
void to_json(nlohmann::json& j, const T2IRecord& r);
void from_json(const nlohmann::json& j, T2IRecord& r);
void to_json(nlohmann::json& j, const BaselineItem& r);
void from_json(const nlohmann::json& j, BaselineItem& r);
void to_json(nlohmann::json& j, const BenchmarkItem& r);
void from_json(const nlohmann::json& j, BenchmarkItem& r);
void to_json(nlohmann::json& j, const MrmMargin& r);
void from_json(const nlohmann::json& j, MrmMargin& r);
void to_json(nlohmann::json& j, const StrengthEstimate& r);
void from_json(const nlohmann::json& j, StrengthEstimate& r);
void to_json(nlohmann::json& j, const Vote& r);
void from_json(const nlohmann::json& j, Vote& r);
void to_json(nlohmann::json& j, const CurationDecision& r);
void from_json(const nlohmann::json& j, CurationDecision& r);
void to_json(nlohmann::json& j, const DatasetManifest& r);
void from_json(const nlohmann::json& j, DatasetManifest& r);

// Invariant checks; throw ValidationError describing the first violation.
void validate(const PromptRecord& r);
void validate(const CandidateResponse& r);
void validate(const JudgeVerdict& r);
void validate(const PreferencePair& r);
void validate(const T2IRecord& r);
void validate(const BaselineItem& r);
void validate(const BenchmarkItem& r);
void validate(const StrengthEstimate& r);
void validate(const CurationDecision& r);

// Prompt text and image references that identify a record's content for
// decontamination.
struct ContentKey {
  std::string prompt_text;
  std::vector<std::string> images;
};

ContentKey content_key(const PromptRecord& r);
ContentKey content_key(const PreferencePair& r);
ContentKey content_key(const T2IRecord& r);
ContentKey content_key(const BenchmarkItem& r);

const std::string& record_id(const PromptRecord& r);
const std::string& record_id(const PreferencePair& r);
const std::string& record_id(const T2IRecord& r);
const std::string& record_id(const BenchmarkItem& r);

// Prompt text as seen by a reward model for this context.
std::string reward_prompt_text(const PairContext& context);
// Image references in presentation order.
std::vector<std::string> context_images(const PairContext& context);

// Digest of (context, chosen, rejected) only; ids and provenance ignored.
std::string pair_content_digest(const PreferencePair& pair);

// Swaps chosen and rejected, along with margins and origins.
PreferencePair flipped(PreferencePair pair, Provenance provenance);

}  // namespace prefkit
