#include "prefkit/orchestrate.hpp"

#include <fcntl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <map>

#include <spdlog/spdlog.h>

#include "prefkit/dataset.hpp"
#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"

namespace prefkit {

namespace fs = std::filesystem;
using nlohmann::json;

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::collected: return "collected";
    case Phase::curated_raw: return "curated_raw";
    case Phase::merged: return "merged";
    case Phase::trained_star: return "trained_star";
    case Phase::recurated: return "recurated";
    case Phase::trained_final: return "trained_final";
  }
  return "unknown";
}

void to_json(json& j, const DatasetRef& r) { j = json{{"path", r.path}, {"manifest", r.manifest}}; }
void from_json(const json& j, DatasetRef& r) {
  j.at("path").get_to(r.path);
  j.at("manifest").get_to(r.manifest);
}
void to_json(json& j, const ModelRef& r) { j = json{{"path", r.path}, {"endpoint", r.endpoint}}; }
void from_json(const json& j, ModelRef& r) {
  j.at("path").get_to(r.path);
  j.at("endpoint").get_to(r.endpoint);
}

namespace {

template <class T>
void put_optional(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

template <class T>
void get_optional(const json& j, const char* key, std::optional<T>& v) {
  if (j.contains(key) && !j[key].is_null()) {
    v = j[key].get<T>();
  } else {
    v.reset();
  }
}

void write_atomic(const fs::path& path, const std::string& content) {
  const auto tmp = fs::path(path.string() + ".tmp");
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << content;
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') {
      out += "'\\''";
    } else {
      out += c;
    }
  }
  return out + "'";
}

}  // namespace

void to_json(json& j, const IterationState& s) {
  j = json{{"iteration", s.iteration}, {"phase", s.phase}};
  put_optional(j, "d_prev", s.d_prev);
  put_optional(j, "d_raw", s.d_raw);
  put_optional(j, "d_new", s.d_new);
  put_optional(j, "d_star", s.d_star);
  put_optional(j, "d_final", s.d_final);
  put_optional(j, "r_prev", s.r_prev);
  put_optional(j, "r_star", s.r_star);
  put_optional(j, "r_final", s.r_final);
  if (!s.error.empty()) j["error"] = s.error;
}

void from_json(const json& j, IterationState& s) {
  j.at("iteration").get_to(s.iteration);
  j.at("phase").get_to(s.phase);
  get_optional(j, "d_prev", s.d_prev);
  get_optional(j, "d_raw", s.d_raw);
  get_optional(j, "d_new", s.d_new);
  get_optional(j, "d_star", s.d_star);
  get_optional(j, "d_final", s.d_final);
  get_optional(j, "r_prev", s.r_prev);
  get_optional(j, "r_star", s.r_star);
  get_optional(j, "r_final", s.r_final);
  s.error = j.value("error", std::string{});
}

ShellTrainer::ShellTrainer(std::string command_template, std::string credential_env_var)
    : template_(std::move(command_template)), credential_env_var_(std::move(credential_env_var)) {
  if (template_.empty()) throw ValidationError("trainer command template is empty");
}

std::string ShellTrainer::render(const std::string& command_template, const fs::path& dataset, const fs::path& out) {
  std::string cmd;
  for (std::size_t i = 0; i < command_template.size();) {
    if (command_template.compare(i, 6, "{data}") == 0) {
      cmd += quote(dataset.string());
      i += 6;
    } else if (command_template.compare(i, 5, "{out}") == 0) {
      cmd += quote(out.string());
      i += 5;
    } else {
      cmd += command_template[i++];
    }
  }
  return cmd;
}

ModelRef ShellTrainer::train(const fs::path& dataset, const fs::path& out) {
  fs::create_directories(out);
  if (!credential_env_var_.empty()) {
    if (const char* v = std::getenv(credential_env_var_.c_str())) {
      ::setenv("PREFKIT_TRAINER_CREDENTIAL", v, 1);
    } else {
      spdlog::warn("trainer: credential variable {} is not set", credential_env_var_);
    }
  }
  const auto cmd = render(template_, dataset, out);
  spdlog::info("trainer: {}", cmd);
  const int status = std::system(cmd.c_str());
  if (status == -1) throw TrainerError("could not start trainer command");
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    throw TrainerError("trainer command exited with status " +
                       std::to_string(WIFEXITED(status) ? WEXITSTATUS(status) : status) + ": " + cmd);
  }
  const auto endpoint_file = out / "endpoint.json";
  std::ifstream in(endpoint_file);
  if (!in) throw TrainerError("trainer did not write " + endpoint_file.string());
  ModelRef model;
  model.path = out.string();
  try {
    model.endpoint = json::parse(in).get<EndpointSpec>();
  } catch (const json::exception& e) {
    throw TrainerError("bad " + endpoint_file.string() + ": " + e.what());
  }
  if (model.endpoint.kind != EndpointKind::reward) throw TrainerError("trainer endpoint is not a reward endpoint");
  return model;
}

ModelRef write_mock_checkpoint(const fs::path& dataset, const fs::path& out, const std::string& reward_url) {
  fs::create_directories(out);
  const auto manifest = read_manifest(dataset);
  EndpointSpec spec;
  spec.id = "trained";
  spec.kind = EndpointKind::reward;
  spec.base_url = reward_url;
  validate(spec);
  write_atomic(out / "checkpoint.json",
               json{{"dataset_digest", manifest.content_digest}, {"record_count", manifest.record_count}}.dump(2) +
                   "\n");
  write_atomic(out / "endpoint.json", json(spec).dump(2) + "\n");
  return {out.string(), spec};
}

std::vector<PreferencePair> merge_pairs(std::span<const PreferencePair> a, std::span<const PreferencePair> b) {
  struct Entry {
    std::string line;
    PreferencePair pair;
  };
  std::map<std::string, Entry> by_digest;
  auto take = [&](const PreferencePair& p) {
    auto line = canonical_line(json(p));
    const auto digest = pair_content_digest(p);
    auto it = by_digest.find(digest);
    if (it == by_digest.end()) {
      by_digest.emplace(digest, Entry{std::move(line), p});
    } else if (line < it->second.line) {
      it->second = Entry{std::move(line), p};
    }
  };
  for (const auto& p : a) take(p);
  for (const auto& p : b) take(p);

  std::map<std::string, int> id_uses;
  for (const auto& [digest, e] : by_digest) ++id_uses[e.pair.id];
  std::vector<std::pair<std::string, PreferencePair>> ordered;
  for (auto& [digest, e] : by_digest) {
    if (id_uses[e.pair.id] > 1) e.pair.id += "~" + digest.substr(0, 12);
    ordered.emplace_back(canonical_line(json(e.pair)), std::move(e.pair));
  }
  std::sort(ordered.begin(), ordered.end(), [](const auto& x, const auto& y) { return x.first < y.first; });
  std::vector<PreferencePair> out;
  out.reserve(ordered.size());
  for (auto& [line, p] : ordered) out.push_back(std::move(p));
  return out;
}

DatasetManifest merge(const fs::path& a, const fs::path& b, const fs::path& out) {
  const auto pa = read_records<PreferencePair>(a);
  const auto pb = read_records<PreferencePair>(b);
  WriteOptions options;
  options.parent_manifests = {read_manifest(a).name, read_manifest(b).name};
  const auto manifest = write_dataset(out, merge_pairs(pa, pb), options);
  copy_blobs(a, out);
  copy_blobs(b, out);
  return manifest;
}

void from_json(const json& j, IterateConfig& c) {
  const IterateConfig d;
  c.endpoints = j.contains("endpoints") ? load_endpoint_specs(j.at("endpoints")) : std::vector<EndpointSpec>{};
  c.mrm_pool = j.value("mrm_pool", d.mrm_pool);
  c.annotators = j.value("annotators", d.annotators);
  c.initial_dataset = j.value("initial_dataset", d.initial_dataset);
  c.schedule = j.value("schedule", d.schedule);
  c.trainer_auth_env_var = j.value("trainer_auth_env_var", d.trainer_auth_env_var);
  c.seed = j.value("seed", d.seed);
  c.workers = j.value("workers", d.workers);
}

void to_json(json& j, const IterateConfig& c) {
  j = json{{"endpoints", c.endpoints},
           {"mrm_pool", c.mrm_pool},
           {"annotators", c.annotators},
           {"initial_dataset", c.initial_dataset},
           {"schedule", c.schedule},
           {"trainer_auth_env_var", c.trainer_auth_env_var},
           {"seed", c.seed},
           {"workers", c.workers}};
}

StateLock::StateLock(const fs::path& dir) : path_(dir / "LOCK") {
  fs::create_directories(dir);
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    throw PreconditionError("state directory " + dir.string() + " is locked by another orchestrator (" +
                            path_.string() + "); remove it if no run is active");
  }
  const auto pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto written = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

StateLock::~StateLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

Orchestrator::Orchestrator(fs::path state_dir, IterateConfig config, Trainer& trainer, Gateway& gateway)
    : dir_(std::move(state_dir)), config_(std::move(config)), trainer_(trainer), gateway_(gateway) {
  fs::create_directories(dir_);
  for (const auto& spec : config_.endpoints) gateway_.add_endpoint(spec);
}

std::optional<IterationState> Orchestrator::load_state() const {
  std::ifstream in(state_path());
  if (!in) return std::nullopt;
  try {
    return json::parse(in).get<IterationState>();
  } catch (const json::exception& e) {
    throw IoError("corrupt " + state_path().string() + ": " + e.what());
  }
}

void Orchestrator::save(const IterationState& state) const { write_atomic(state_path(), json(state).dump(2) + "\n"); }

fs::path Orchestrator::phase_dir(int iteration, Phase phase) const {
  return dir_ / ("phase-" + std::to_string(iteration) + "-" + phase_name(phase));
}

fs::path Orchestrator::resolve(const std::string& path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : dir_ / p;
}

DatasetRef Orchestrator::record_dataset(const fs::path& dir) const {
  if (!verify_manifest(dir)) throw IoError("dataset " + dir.string() + " does not match its manifest");
  DatasetRef ref;
  const auto rel = fs::relative(dir, dir_);
  const bool inside = !rel.empty() && *rel.begin() != "..";
  ref.path = inside ? rel.string() : fs::absolute(dir).string();
  ref.manifest = read_manifest(dir);
  return ref;
}

void Orchestrator::register_model(const ModelRef& model) { gateway_.add_endpoint(model.endpoint); }

ModelRef Orchestrator::train(IterationState& state, Phase phase, const DatasetRef& data,
                             const std::string& endpoint_id) {
  const auto out = phase_dir(state.iteration, phase);
  if (fs::exists(out)) fs::remove_all(out);  // left by an interrupted run
  ModelRef model;
  try {
    model = trainer_.train(resolve(data.path), out);
  } catch (const std::exception& e) {
    state.error = std::string(phase_name(phase)) + ": " + e.what();
    save(state);
    throw;
  }
  model.endpoint.id = endpoint_id;
  const auto rel = fs::relative(out, dir_);
  model.path = rel.string();
  register_model(model);
  return model;
}

IterationState Orchestrator::bootstrap() {
  auto state = load_state();
  if (state && (state->iteration > 0 || state->phase == Phase::trained_final)) return *state;
  if (!state) {
    if (config_.initial_dataset.empty()) throw ValidationError("config has no initial_dataset");
    IterationState s;
    s.iteration = 0;
    s.d_prev = record_dataset(config_.initial_dataset);
    copy_blobs(config_.initial_dataset, dir_);
    s.phase = Phase::collected;
    save(s);
    state = s;
  }
  state->error.clear();
  state->r_final = train(*state, Phase::trained_final, *state->d_prev, "r0");
  state->d_final = state->d_prev;
  state->phase = Phase::trained_final;
  save(*state);
  spdlog::info("iterate: bootstrap trained r0 on {} pairs", state->d_prev->manifest.record_count);
  return *state;
}

IterationState Orchestrator::begin_iteration(std::span<const std::string> raw_datasets) {
  auto prev = load_state();
  if (!prev) throw PreconditionError("no state in " + dir_.string() + "; bootstrap first");
  if (prev->phase != Phase::trained_final || !prev->error.empty()) {
    throw PreconditionError("iteration " + std::to_string(prev->iteration) + " is unfinished; resume it first");
  }
  if (raw_datasets.empty()) throw ValidationError("no raw datasets given");
  {
    std::ofstream history(dir_ / "history.jsonl", std::ios::app);
    history << json(*prev).dump() << '\n';
  }
  IterationState s;
  s.iteration = prev->iteration + 1;
  s.d_prev = prev->d_final;
  s.r_prev = prev->r_final;
  const auto out = phase_dir(s.iteration, Phase::collected);
  if (fs::exists(out)) fs::remove_all(out);
  std::vector<PreferencePair> raw;
  std::vector<std::string> parents;
  for (const auto& path : raw_datasets) {
    const auto pairs = read_records<PreferencePair>(path);
    raw = merge_pairs(raw, pairs);
    parents.push_back(read_manifest(path).name);
  }
  WriteOptions options;
  options.parent_manifests = parents;
  write_dataset(out, raw, options);
  for (const auto& path : raw_datasets) {
    copy_blobs(path, out);
    copy_blobs(path, dir_);
  }
  s.d_raw = record_dataset(out);
  s.phase = Phase::collected;
  save(s);
  spdlog::info("iterate: iteration {} collected {} raw pairs", s.iteration, raw.size());
  return s;
}

IterationState Orchestrator::run_iteration(const IterateOptions& options) {
  auto loaded = load_state();
  if (!loaded) throw PreconditionError("no state in " + dir_.string());
  auto state = *loaded;
  state.error.clear();
  for (const auto* m : {&state.r_prev, &state.r_star, &state.r_final}) {
    if (*m) register_model(**m);
  }
  if (state.iteration == 0) return state.phase == Phase::trained_final ? state : bootstrap();

  const auto& seed = config_.seed;
  auto curate_config = [&](const ModelRef& mrm, bool skip) {
    CurateConfig c;
    c.mrm_pool = config_.mrm_pool.empty() ? std::vector<std::string>{mrm.endpoint.id} : config_.mrm_pool;
    c.mrm = mrm.endpoint.id;
    c.annotators = config_.annotators;
    c.skip_strength = skip;
    c.seed = seed;
    c.workers = config_.workers;
    return c;
  };
  auto fresh = [&](Phase p) {
    auto d = phase_dir(state.iteration, p);
    if (fs::exists(d)) fs::remove_all(d);  // left by an interrupted run
    return d;
  };

  while (state.phase != Phase::trained_final) {
    switch (state.phase) {
      case Phase::collected: {
        if (!state.r_prev) throw PreconditionError("iteration has no previous model");
        const auto out = fresh(Phase::curated_raw);
        run_curate(gateway_, curate_config(*state.r_prev, false), resolve(state.d_raw->path), out,
                   out / "decisions.jsonl");
        state.d_new = record_dataset(out);
        if (state.d_new->manifest.record_count == 0) {
          spdlog::warn("iterate: curation of d_raw left no pairs; d_star will equal d_prev");
        }
        state.phase = Phase::curated_raw;
        break;
      }
      case Phase::curated_raw: {
        const auto out = fresh(Phase::merged);
        merge(resolve(state.d_prev->path), resolve(state.d_new->path), out);
        state.d_star = record_dataset(out);
        state.phase = Phase::merged;
        break;
      }
      case Phase::merged:
        state.r_star = train(state, Phase::trained_star, *state.d_star, "r" + std::to_string(state.iteration) + "_star");
        state.phase = Phase::trained_star;
        break;
      case Phase::trained_star: {
        const auto out = fresh(Phase::recurated);
        run_curate(gateway_, curate_config(*state.r_star, true), resolve(state.d_star->path), out,
                   out / "decisions.jsonl");
        state.d_final = record_dataset(out);
        state.phase = Phase::recurated;
        break;
      }
      case Phase::recurated:
        state.r_final = train(state, Phase::trained_final, *state.d_final, "r" + std::to_string(state.iteration));
        state.phase = Phase::trained_final;
        break;
      case Phase::trained_final:
        break;
    }
    save(state);
    spdlog::info("iterate: iteration {} reached {}", state.iteration, phase_name(state.phase));
    if (options.stop_after && *options.stop_after == state.phase) break;
  }
  return state;
}

}  // namespace prefkit
