#include "prefkit/decontaminate.hpp"

#include "prefkit/digest.hpp"

namespace prefkit {

std::string sample_digest(const ContentKey& key, const ImageStore& images) {
  std::string material = "text:" + sha256_hex(normalize_prompt_text(key.prompt_text));
  for (const auto& ref : key.images) {
    const auto bytes = images.load(ref);
    material += "\nimage:" + sha256_hex(std::span<const std::uint8_t>(bytes));
  }
  return sha256_hex(material);
}

void to_json(nlohmann::json& j, const DecontaminationReport& r) {
  j = nlohmann::json{{"input_count", r.input_count},
                     {"removed", r.removed},
                     {"unresolvable", r.unresolvable},
                     {"removed_ids", r.removed_ids},
                     {"unresolvable_ids", r.unresolvable_ids}};
}

}  // namespace prefkit
