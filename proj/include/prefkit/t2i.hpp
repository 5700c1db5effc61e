#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/image.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

inline constexpr const char* kDefaultEvalPrompt =
    "Compare Image 1 and Image 2 as depictions of the prompt. Which image is better?";
inline constexpr const char* kFirstBetter = "Image 1 is better than Image 2";
inline constexpr const char* kSecondBetter = "Image 2 is better than Image 1";

struct T2IOptions {
  std::string eval_prompt = kDefaultEvalPrompt;
  std::string first_better = kFirstBetter;    // verdict naming slot 1
  std::string second_better = kSecondBetter;  // verdict naming slot 2
  std::int64_t seed = 0;
};

// Accepts a JSON object {eval_prompt, first_better, second_better} or plain
// text, which is taken as the evaluation prompt.
T2IOptions parse_eval_template(const std::string& content, std::int64_t seed);
nlohmann::json to_config_json(const T2IOptions& options);

// Two-image pairwise-evaluation pair. Slot order is drawn from a PRNG keyed
// on (seed, record id); the chosen response is the verdict sentence naming
// the chosen image's slot.
PreferencePair reformulate(const T2IRecord& record, const T2IOptions& options);

// Baseline representation: each image is the input, the prompt is the
// target; exactly one of the two items is flagged chosen.
std::array<BaselineItem, 2> reformulate_baseline(const T2IRecord& record);

// Same pair with the image slots swapped and both verdicts relabeled.
PreferencePair swap_slots(const PreferencePair& pair, const T2IOptions& options);

// Preferred image of a reformulated pair, read off the chosen verdict.
// Throws ValidationError if the verdict matches neither template or
// disagrees with chosen_position.
std::string preferred_image(const PreferencePair& pair, const T2IOptions& options);

// True iff both pairs express the same preference over the same images,
// prompt and evaluation prompt.
bool same_preference(const PreferencePair& a, const PreferencePair& b, const T2IOptions& options);

struct T2IBatchResult {
  std::vector<PreferencePair> pairs;
  std::vector<BaselineItem> baseline;
  std::vector<std::string> skipped_ids;
};

// Drops records with unresolvable images (logged), then maps the rest in
// parallel.
T2IBatchResult reformulate_records(const std::vector<T2IRecord>& records, const T2IOptions& options,
                                   const ImageStore& images, bool baseline);

}  // namespace prefkit
