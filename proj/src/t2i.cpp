#include "prefkit/t2i.hpp"

#include <spdlog/spdlog.h>

#include "prefkit/errors.hpp"
#include "prefkit/kernels.hpp"
#include "prefkit/rng.hpp"

namespace prefkit {

T2IOptions parse_eval_template(const std::string& content, std::int64_t seed) {
  T2IOptions options;
  options.seed = seed;
  const auto doc = nlohmann::json::parse(content, nullptr, false);
  if (doc.is_object()) {
    options.eval_prompt = doc.value("eval_prompt", options.eval_prompt);
    options.first_better = doc.value("first_better", options.first_better);
    options.second_better = doc.value("second_better", options.second_better);
  } else {
    auto text = content;
    while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) text.pop_back();
    if (!text.empty()) options.eval_prompt = text;
  }
  if (options.first_better == options.second_better) {
    throw ValidationError("the two verdict templates must differ");
  }
  return options;
}

nlohmann::json to_config_json(const T2IOptions& options) {
  return {{"eval_prompt", options.eval_prompt},
          {"first_better", options.first_better},
          {"second_better", options.second_better},
          {"seed", options.seed}};
}

PreferencePair reformulate(const T2IRecord& record, const T2IOptions& options) {
  Rng rng(derive_seed(static_cast<std::uint64_t>(options.seed), "t2i", record.id));
  const bool chosen_first = rng.uniform_index(2) == 0;
  ReformulatedContext ctx;
  ctx.prompt_text = record.prompt_text;
  ctx.eval_prompt = options.eval_prompt;
  ctx.image_1 = chosen_first ? record.chosen_image : record.rejected_image;
  ctx.image_2 = chosen_first ? record.rejected_image : record.chosen_image;
  ctx.chosen_position = chosen_first ? 1 : 2;
  PreferencePair pair;
  pair.id = record.id;
  pair.context = std::move(ctx);
  pair.chosen = chosen_first ? options.first_better : options.second_better;
  pair.rejected = chosen_first ? options.second_better : options.first_better;
  pair.provenance = Provenance::t2i_reformulated;
  pair.source_dataset = record.source;
  return pair;
}

std::array<BaselineItem, 2> reformulate_baseline(const T2IRecord& record) {
  return {BaselineItem{record.id, record.chosen_image, record.prompt_text, true, record.source},
          BaselineItem{record.id, record.rejected_image, record.prompt_text, false, record.source}};
}

PreferencePair swap_slots(const PreferencePair& pair, const T2IOptions& options) {
  auto out = pair;
  auto& ctx = std::get<ReformulatedContext>(out.context);
  std::swap(ctx.image_1, ctx.image_2);
  ctx.chosen_position = ctx.chosen_position == 1 ? 2 : 1;
  auto relabel = [&options](const std::string& verdict) {
    if (verdict == options.first_better) return options.second_better;
    if (verdict == options.second_better) return options.first_better;
    throw ValidationError("verdict '" + verdict + "' matches no template");
  };
  out.chosen = relabel(pair.chosen);
  out.rejected = relabel(pair.rejected);
  return out;
}

std::string preferred_image(const PreferencePair& pair, const T2IOptions& options) {
  const auto& ctx = std::get<ReformulatedContext>(pair.context);
  int slot = 0;
  if (pair.chosen == options.first_better && pair.rejected == options.second_better) {
    slot = 1;
  } else if (pair.chosen == options.second_better && pair.rejected == options.first_better) {
    slot = 2;
  } else {
    throw ValidationError("pair '" + pair.id + "' verdicts do not match the templates");
  }
  if (slot != ctx.chosen_position) {
    throw ValidationError("pair '" + pair.id + "' chosen verdict disagrees with chosen_position");
  }
  return slot == 1 ? ctx.image_1 : ctx.image_2;
}

bool same_preference(const PreferencePair& a, const PreferencePair& b, const T2IOptions& options) {
  const auto* ca = std::get_if<ReformulatedContext>(&a.context);
  const auto* cb = std::get_if<ReformulatedContext>(&b.context);
  if (ca == nullptr || cb == nullptr) return false;
  if (ca->prompt_text != cb->prompt_text || ca->eval_prompt != cb->eval_prompt) return false;
  const bool same_images = (ca->image_1 == cb->image_1 && ca->image_2 == cb->image_2) ||
                           (ca->image_1 == cb->image_2 && ca->image_2 == cb->image_1);
  if (!same_images) return false;
  try {
    return preferred_image(a, options) == preferred_image(b, options);
  } catch (const ValidationError&) {
    return false;
  }
}

T2IBatchResult reformulate_records(const std::vector<T2IRecord>& records, const T2IOptions& options,
                                   const ImageStore& images, bool baseline) {
  T2IBatchResult result;
  std::vector<T2IRecord> usable;
  usable.reserve(records.size());
  for (const auto& r : records) {
    if (!images.try_load(r.chosen_image) || !images.try_load(r.rejected_image)) {
      spdlog::warn("reformulate: skipping '{}': unresolvable image", r.id);
      result.skipped_ids.push_back(r.id);
      continue;
    }
    validate(r);
    usable.push_back(r);
  }
  if (baseline) {
    result.baseline.reserve(2 * usable.size());
    for (const auto& r : usable) {
      for (auto& item : reformulate_baseline(r)) result.baseline.push_back(std::move(item));
    }
  } else {
    result.pairs = kernels::omp::reformulate_all(usable, options);
  }
  return result;
}

}  // namespace prefkit
