#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/image.hpp"
#include "prefkit/judge_protocol.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

enum class EndpointKind { generator, judge, reward };

NLOHMANN_JSON_SERIALIZE_ENUM(EndpointKind, {{EndpointKind::generator, "generator"},
                                            {EndpointKind::judge, "judge"},
                                            {EndpointKind::reward, "reward"}})

struct EndpointSpec {
  std::string id;
  EndpointKind kind = EndpointKind::generator;
  std::string base_url;      // http://host:port[/prefix] or mock://<persona>?k=v
  std::string auth_env_var;  // empty: no credential
  int max_concurrency = 4;
  int max_retries = 2;
  std::chrono::milliseconds timeout{60000};
};

void to_json(nlohmann::json& j, const EndpointSpec& s);
void from_json(const nlohmann::json& j, EndpointSpec& s);
void validate(const EndpointSpec& s);

// Reads {"endpoints": [...]}, a bare array, or a single endpoint object.
std::vector<EndpointSpec> load_endpoint_specs(const nlohmann::json& doc);

struct GenerationRequest {
  std::string prompt_text;
  std::vector<Bytes> images;
  double temperature = 1.0;
  double top_p = 0.95;
  int n_samples = 1;
  std::int64_t seed = 0;
};

// Connection failure or retryable status; consumed by the retry loop.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Moves one request body to an endpoint and returns the raw reply body.
// Throws TransportError for retryable failures, ProtocolError otherwise.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string post(const std::string& path, const nlohmann::json& body, const std::string& credential) = 0;
};

class HttpBackend : public Backend {
 public:
  HttpBackend(std::string base_url, std::chrono::milliseconds timeout);
  std::string post(const std::string& path, const nlohmann::json& body, const std::string& credential) override;

 private:
  std::string host_;
  std::string prefix_;
  std::chrono::milliseconds timeout_;
};

// mock:// URLs map to the deterministic personas in mock_backends.hpp.
std::shared_ptr<Backend> make_backend(const EndpointSpec& spec);

// Wire paths.
inline constexpr const char* kChatPath = "/v1/chat/completions";
inline constexpr const char* kScorePath = "/score";

nlohmann::json chat_request_body(std::string_view model, std::string_view prompt_text, std::span<const Bytes> images,
                                 double temperature, double top_p, int n, std::int64_t seed);
// {choices:[{text}]} -> texts; ProtocolError on a malformed body.
std::vector<std::string> parse_chat_reply(const std::string& body);

nlohmann::json score_request_body(std::string_view prompt_text, std::span<const Bytes> images,
                                  std::string_view response_text);
double parse_score_reply(const std::string& body);

struct RetryPolicy {
  std::chrono::milliseconds base{1000};
  std::chrono::milliseconds cap{30000};
};

struct EndpointStats {
  std::uint64_t requests = 0;
  std::uint64_t attempts = 0;
  std::uint64_t failures = 0;
};

struct JudgeOptions {
  int max_reasks = 2;
  double temperature = 0.0;
  std::int64_t seed = 0;
};

// One candidate as presented to a judge.
struct JudgeCandidate {
  int sample_index = 0;
  std::string text;
};

// Uniform client over generator, judge and reward endpoints. Each endpoint
// owns a lane that caps in-flight requests at max_concurrency; calls may
// come from any thread.
class Gateway {
 public:
  explicit Gateway(ImageStore images = {}, RetryPolicy retry = {});

  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  void add_endpoint(const EndpointSpec& spec);
  void add_endpoint(const EndpointSpec& spec, std::shared_ptr<Backend> backend);
  bool has_endpoint(std::string_view id) const;
  EndpointSpec endpoint(std::string_view id) const;
  EndpointStats stats(std::string_view id) const;

  const ImageStore& images() const noexcept { return images_; }

  std::vector<std::string> generate(std::string_view endpoint_id, const GenerationRequest& request);

  // Scores `candidates` in the given order. Listwise needs >= 2 candidates,
  // pointwise exactly 1. Unusable replies are re-asked up to max_reasks
  // times, then VerdictFailure. Overall scores are recomputed locally.
  std::vector<JudgeVerdict> judge(std::string_view endpoint_id, const PromptRecord& prompt,
                                  std::span<const JudgeCandidate> candidates, JudgeMode mode,
                                  const JudgeOptions& options = {});

  double score_reward(std::string_view endpoint_id, const PairContext& context, std::string_view response);
  std::future<double> score_reward_async(std::string endpoint_id, PairContext context, std::string response);

  // Pairwise comparison on a judge endpoint. nullopt when the reply is not
  // exactly "A" or "B"; transport failures throw EndpointError.
  std::optional<PairwiseChoice> compare(std::string_view endpoint_id, const PairContext& context,
                                        std::string_view first, std::string_view second, std::int64_t seed = 0);

 private:
  struct Lane {
    Lane(EndpointSpec s, std::shared_ptr<Backend> b)
        : spec(std::move(s)), backend(std::move(b)), slots(spec.max_concurrency) {}
    EndpointSpec spec;
    std::shared_ptr<Backend> backend;
    std::counting_semaphore<> slots;
    std::atomic<std::uint64_t> requests{0};
    std::atomic<std::uint64_t> attempts{0};
    std::atomic<std::uint64_t> failures{0};
  };

  Lane& lane(std::string_view id, EndpointKind expected) const;
  std::string call(Lane& lane, const std::string& path, const nlohmann::json& body) const;
  std::vector<Bytes> load_images(std::span<const std::string> refs) const;

  ImageStore images_;
  RetryPolicy retry_;
  mutable std::mutex mutex_;
  std::map<std::string, std::unique_ptr<Lane>, std::less<>> lanes_;
};

}  // namespace prefkit
