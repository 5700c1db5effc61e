#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "prefkit/curate.hpp"
#include "prefkit/gateway.hpp"
#include "prefkit/types.hpp"

namespace prefkit {

enum class Phase { collected, curated_raw, merged, trained_star, recurated, trained_final };

NLOHMANN_JSON_SERIALIZE_ENUM(Phase, {{Phase::collected, "collected"},
                                     {Phase::curated_raw, "curated_raw"},
                                     {Phase::merged, "merged"},
                                     {Phase::trained_star, "trained_star"},
                                     {Phase::recurated, "recurated"},
                                     {Phase::trained_final, "trained_final"}})

const char* phase_name(Phase p);

// Dataset directory plus the manifest it held when recorded.
struct DatasetRef {
  std::string path;
  DatasetManifest manifest;
};

// Trained checkpoint directory and the reward endpoint serving it.
struct ModelRef {
  std::string path;
  EndpointSpec endpoint;
};

struct IterationState {
  int iteration = 0;
  std::optional<DatasetRef> d_prev;
  std::optional<DatasetRef> d_raw;
  std::optional<DatasetRef> d_new;
  std::optional<DatasetRef> d_star;
  std::optional<DatasetRef> d_final;
  std::optional<ModelRef> r_prev;
  std::optional<ModelRef> r_star;
  std::optional<ModelRef> r_final;
  Phase phase = Phase::collected;
  std::string error;  // set when a phase failed; state stays at the last completed phase
};

void to_json(nlohmann::json& j, const DatasetRef& r);
void from_json(const nlohmann::json& j, DatasetRef& r);
void to_json(nlohmann::json& j, const ModelRef& r);
void from_json(const nlohmann::json& j, ModelRef& r);
void to_json(nlohmann::json& j, const IterationState& s);
void from_json(const nlohmann::json& j, IterationState& s);

class TrainerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Trains on a dataset directory and leaves a checkpoint in `out`, returning
// the reward endpoint that serves it.
class Trainer {
 public:
  virtual ~Trainer() = default;
  virtual ModelRef train(const std::filesystem::path& dataset, const std::filesystem::path& out) = 0;
};

// Runs a command template through the shell. "{data}" and "{out}" are
// replaced by quoted paths. On exit status 0 the command must have written
// <out>/endpoint.json holding a reward EndpointSpec. If credential_env_var
// is set, its value is exported as PREFKIT_TRAINER_CREDENTIAL.
class ShellTrainer : public Trainer {
 public:
  explicit ShellTrainer(std::string command_template, std::string credential_env_var = {});
  ModelRef train(const std::filesystem::path& dataset, const std::filesystem::path& out) override;

  static std::string render(const std::string& command_template, const std::filesystem::path& dataset,
                            const std::filesystem::path& out);

 private:
  std::string template_;
  std::string credential_env_var_;
};

// Writes <out>/endpoint.json for a mock reward endpoint plus a small
// checkpoint record naming the training data digest.
ModelRef write_mock_checkpoint(const std::filesystem::path& dataset, const std::filesystem::path& out,
                               const std::string& reward_url);

// Union of two pair lists without content duplicates. Among duplicates the
// record with the smallest canonical line wins; ids shared by different
// contents get a digest suffix. Commutative and idempotent.
std::vector<PreferencePair> merge_pairs(std::span<const PreferencePair> a, std::span<const PreferencePair> b);
DatasetManifest merge(const std::filesystem::path& a, const std::filesystem::path& b,
                      const std::filesystem::path& out);

struct IterateConfig {
  std::vector<EndpointSpec> endpoints;
  std::vector<std::string> mrm_pool;
  std::vector<std::string> annotators;
  std::string initial_dataset;                    // D0
  std::vector<std::vector<std::string>> schedule;  // raw datasets per iteration
  std::string trainer_auth_env_var;
  std::int64_t seed = 0;
  int workers = 8;
};

void from_json(const nlohmann::json& j, IterateConfig& c);
void to_json(nlohmann::json& j, const IterateConfig& c);

// Owns a state directory for the lifetime of the object (LOCK file).
class StateLock {
 public:
  explicit StateLock(const std::filesystem::path& dir);
  ~StateLock();
  StateLock(const StateLock&) = delete;
  StateLock& operator=(const StateLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct IterateOptions {
  std::optional<Phase> stop_after;  // return once this phase is persisted
};

class Orchestrator {
 public:
  Orchestrator(std::filesystem::path state_dir, IterateConfig config, Trainer& trainer, Gateway& gateway);

  std::filesystem::path state_path() const { return dir_ / "state.json"; }
  std::optional<IterationState> load_state() const;

  // Iteration 0: train r0 on D0. No-op when a state already exists.
  IterationState bootstrap();

  // Starts iteration i+1 from a finished iteration i with the given raw
  // datasets merged into d_raw.
  IterationState begin_iteration(std::span<const std::string> raw_datasets);

  // Runs the remaining phases of the current iteration. Completed phases
  // are skipped, so this resumes after a crash.
  IterationState run_iteration(const IterateOptions& options = {});

 private:
  std::filesystem::path phase_dir(int iteration, Phase phase) const;
  void save(const IterationState& state) const;
  DatasetRef record_dataset(const std::filesystem::path& dir) const;
  ModelRef train(IterationState& state, Phase phase, const DatasetRef& data, const std::string& endpoint_id);
  void register_model(const ModelRef& model);
  std::filesystem::path resolve(const std::string& path) const;

  std::filesystem::path dir_;
  IterateConfig config_;
  Trainer& trainer_;
  Gateway& gateway_;
};

}  // namespace prefkit
