// prefkit command line: one subcommand per pipeline stage.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "prefkit/curate.hpp"
#include "prefkit/dataset.hpp"
#include "prefkit/decontaminate.hpp"
#include "prefkit/distill.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/eval.hpp"
#include "prefkit/gateway.hpp"
#include "prefkit/orchestrate.hpp"
#include "prefkit/t2i.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace prefkit;

namespace {

json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::vector<EndpointSpec> specs_of(const std::vector<EndpointSpec>& specs, EndpointKind kind) {
  std::vector<EndpointSpec> out;
  for (const auto& s : specs) {
    if (s.kind == kind) out.push_back(s);
  }
  return out;
}

std::vector<std::string> ids_of(const std::vector<EndpointSpec>& specs) {
  std::vector<std::string> ids;
  for (const auto& s : specs) ids.push_back(s.id);
  return ids;
}

// An endpoint config file, or an id defined in one of `known`.
EndpointSpec resolve_endpoint(const std::string& ref, const std::vector<EndpointSpec>& known, EndpointKind kind) {
  if (fs::is_regular_file(ref)) {
    auto specs = specs_of(load_endpoint_specs(read_json_file(ref)), kind);
    if (specs.size() != 1) throw ValidationError(ref + " must hold exactly one endpoint of the required kind");
    return specs.front();
  }
  for (const auto& s : known) {
    if (s.id == ref) return s;
  }
  throw ValidationError("unknown endpoint '" + ref + "'");
}

ImageStore image_store(const std::vector<std::string>& roots, const fs::path& input) {
  std::vector<fs::path> paths(roots.begin(), roots.end());
  const auto base = fs::is_directory(input) ? input : input.parent_path();
  if (!base.empty()) paths.push_back(base);
  return ImageStore(paths, fs::is_directory(input) ? DatasetLayout{input}.blobs() : fs::path{});
}

RetryPolicy retry_policy(int base_ms) {
  RetryPolicy r;
  r.base = std::chrono::milliseconds(base_ms);
  return r;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multimodal preference data pipeline"};
  app.require_subcommand(1);
  std::string log_level = "info";
  std::vector<std::string> image_roots;
  int backoff_ms = 1000;
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");
  app.add_option("--image-root", image_roots, "Extra directory for resolving relative image paths");
  app.add_option("--backoff-ms", backoff_ms, "Base retry backoff in milliseconds")->check(CLI::NonNegativeNumber);

  // distill
  auto* distill = app.add_subcommand("distill", "Generate, judge and pair candidate responses");
  std::string d_prompts, d_config, d_out;
  std::optional<std::int64_t> d_seed;
  std::optional<std::size_t> d_limit;
  bool d_resume = false;
  int workers = 8;
  distill->add_option("--prompts", d_prompts, "Prompt records (JSONL file or dataset)")->required();
  distill->add_option("--config", d_config, "Distillation config with endpoints")->required();
  distill->add_option("--out", d_out, "Output dataset directory")->required();
  distill->add_option("--seed", d_seed);
  distill->add_option("--limit", d_limit);
  distill->add_flag("--resume", d_resume, "Skip prompts already processed in --out");
  distill->add_option("--workers", workers, "Concurrent prompts")->check(CLI::PositiveNumber);

  // reformulate-t2i
  auto* t2i = app.add_subcommand("reformulate-t2i", "Turn text-to-image triplets into two-image pairs");
  std::string t_in, t_out, t_template;
  std::int64_t t_seed = 0;
  bool t_baseline = false;
  t2i->add_option("--in", t_in, "T2I records (JSONL file or dataset)")->required();
  t2i->add_option("--out", t_out, "Output dataset directory")->required();
  t2i->add_option("--eval-template", t_template, "Evaluation prompt and verdict templates");
  t2i->add_option("--seed", t_seed)->required();
  t2i->add_flag("--baseline", t_baseline, "Emit the single-image baseline representation instead");

  // curate
  auto* cur = app.add_subcommand("curate", "Strength flip, consistency filter and re-annotation");
  std::string c_in, c_out, c_pool, c_mrm, c_annotators, c_decisions;
  bool c_skip = false;
  std::int64_t c_seed = 0;
  cur->add_option("--in", c_in, "Input pair dataset")->required();
  cur->add_option("--out", c_out, "Output pair dataset")->required();
  cur->add_option("--mrm-pool", c_pool, "Reward endpoints used for strength estimation");
  cur->add_option("--mrm", c_mrm, "Consistency MRM: endpoint id or endpoint config file")->required();
  cur->add_option("--annotators", c_annotators, "Judge endpoints used for re-annotation")->required();
  cur->add_flag("--skip-strength", c_skip, "Skip strength estimation and flipping");
  cur->add_option("--decisions", c_decisions, "Decision log (JSONL)")->required();
  cur->add_option("--seed", c_seed);
  cur->add_option("--workers", workers)->check(CLI::PositiveNumber);

  // iterate
  auto* it = app.add_subcommand("iterate", "Run the iterative curate-train loop");
  std::string i_state, i_trainer, i_config, i_stop;
  std::vector<std::string> i_raw;
  it->add_option("--state", i_state, "State directory")->required();
  it->add_option("--raw", i_raw, "Raw datasets for the next iteration");
  it->add_option("--trainer-cmd", i_trainer, "Trainer command with {data} and {out} placeholders")->required();
  it->add_option("--config", i_config, "Iteration config")->required();
  it->add_option("--stop-after", i_stop, "Stop once this phase is persisted");

  // eval
  auto* ev = app.add_subcommand("eval", "Benchmark accuracy of a reward endpoint");
  std::string e_items, e_mrm, e_report;
  ev->add_option("--items", e_items, "Benchmark items (JSONL)")->required();
  ev->add_option("--mrm", e_mrm, "Reward endpoint config")->required();
  ev->add_option("--report", e_report, "Report path (JSON; a .txt table is written next to it)")->required();
  ev->add_option("--workers", workers)->check(CLI::PositiveNumber);

  // bestofn
  auto* bon = app.add_subcommand("bestofn", "Pick the highest-reward candidate per prompt");
  std::string b_prompts, b_candidates, b_mrm, b_out;
  bon->add_option("--prompts", b_prompts, "Prompt records (JSONL)")->required();
  bon->add_option("--candidates", b_candidates, "Lines of {prompt_id, candidates:[text]}")->required();
  bon->add_option("--mrm", b_mrm, "Reward endpoint config")->required();
  bon->add_option("--out", b_out, "Selections (JSONL)")->required();

  // decontaminate
  auto* dec = app.add_subcommand("decontaminate", "Remove records that overlap a benchmark");
  std::string x_in, x_out, x_bench, x_kind = "pairs", x_report;
  dec->add_option("--in", x_in, "Input dataset")->required();
  dec->add_option("--out", x_out, "Output dataset")->required();
  dec->add_option("--benchmark", x_bench, "Benchmark items (JSONL)")->required();
  dec->add_option("--kind", x_kind, "Record kind of --in")->check(CLI::IsMember({"pairs", "prompts", "t2i"}));
  dec->add_option("--report", x_report, "Removal report (JSON)");

  // mock-train
  auto* mt = app.add_subcommand("mock-train", "Trainer stub serving a mock reward endpoint");
  std::string m_data, m_out, m_url = "mock://reward?scorer=planted&salt=0";
  mt->add_option("--data", m_data, "Training dataset")->required();
  mt->add_option("--out", m_out, "Checkpoint directory")->required();
  mt->add_option("--reward-url", m_url, "mock:// URL the checkpoint serves");

  CLI11_PARSE(app, argc, argv);

  auto logger = spdlog::stderr_color_mt("prefkit");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::from_str(log_level));

  try {
    if (*distill) {
      auto doc = read_json_file(d_config);
      auto config = doc.get<DistillConfig>();
      if (d_seed) config.seed = *d_seed;
      Gateway gateway(image_store(image_roots, d_prompts), retry_policy(backoff_ms));
      for (const auto& spec : load_endpoint_specs(doc.value("endpoints", json::array()))) gateway.add_endpoint(spec);
      const auto prompts = read_jsonl<PromptRecord>(d_prompts);
      DistillRunOptions options;
      options.resume = d_resume;
      options.limit = d_limit;
      options.workers = workers;
      const auto summary = run_distill(gateway, config, prompts, d_out, options);
      std::cout << json{{"processed", summary.processed}, {"skipped", summary.skipped}, {"failed", summary.failed},
                        {"pairs", summary.pairs},         {"content_digest", summary.manifest.content_digest}}
                       .dump()
                << '\n';
    } else if (*t2i) {
      T2IOptions options;
      options.seed = t_seed;
      if (!t_template.empty()) {
        std::ifstream in(t_template);
        if (!in) throw IoError("cannot open " + t_template);
        const std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        options = parse_eval_template(content, t_seed);
      }
      const auto records = read_jsonl<T2IRecord>(t_in);
      const auto result = reformulate_records(records, options, image_store(image_roots, t_in), t_baseline);
      WriteOptions wo;
      wo.pipeline_config_digest = config_digest(to_config_json(options));
      if (fs::is_directory(t_in)) wo.parent_manifests = {read_manifest(t_in).name};
      const auto manifest =
          t_baseline ? write_dataset(t_out, result.baseline, wo) : write_dataset(t_out, result.pairs, wo);
      std::cout << json{{"records", manifest.record_count},
                        {"skipped", result.skipped_ids.size()},
                        {"content_digest", manifest.content_digest}}
                       .dump()
                << '\n';
    } else if (*cur) {
      std::vector<EndpointSpec> pool;
      if (!c_pool.empty()) pool = specs_of(load_endpoint_specs(read_json_file(c_pool)), EndpointKind::reward);
      const auto annotators = specs_of(load_endpoint_specs(read_json_file(c_annotators)), EndpointKind::judge);
      const auto mrm = resolve_endpoint(c_mrm, pool, EndpointKind::reward);
      Gateway gateway(image_store(image_roots, c_in), retry_policy(backoff_ms));
      for (const auto& s : pool) gateway.add_endpoint(s);
      for (const auto& s : annotators) gateway.add_endpoint(s);
      gateway.add_endpoint(mrm);
      CurateConfig config;
      config.mrm_pool = ids_of(pool);
      config.mrm = mrm.id;
      config.annotators = ids_of(annotators);
      config.skip_strength = c_skip;
      config.seed = c_seed;
      config.workers = workers;
      const auto result = run_curate(gateway, config, c_in, c_out, c_decisions);
      std::cout << to_json_value(result.stats).dump() << '\n';
    } else if (*it) {
      auto config = read_json_file(i_config).get<IterateConfig>();
      // Relative dataset paths in the config are relative to the config file.
      const auto base = fs::path(i_config).parent_path();
      auto rebase = [&](std::string& p) {
        if (!p.empty() && fs::path(p).is_relative()) p = (base / p).string();
      };
      rebase(config.initial_dataset);
      for (auto& step : config.schedule) {
        for (auto& p : step) rebase(p);
      }
      std::optional<Phase> stop;
      if (!i_stop.empty()) stop = json(i_stop).get<Phase>();
      if (!i_stop.empty() && json(*stop).get<std::string>() != i_stop) throw ValidationError("unknown phase " + i_stop);

      StateLock lock(i_state);
      Gateway gateway(image_store(image_roots, i_state), retry_policy(backoff_ms));
      ShellTrainer trainer(i_trainer, config.trainer_auth_env_var);
      const auto schedule = config.schedule;
      Orchestrator orchestrator(i_state, config, trainer, gateway);
      IterateOptions options;
      options.stop_after = stop;
      auto state = orchestrator.bootstrap();
      auto halted = [&](const IterationState& st) {
        return st.phase != Phase::trained_final || (stop && *stop == st.phase);
      };
      bool resumed = false;
      if (state.phase != Phase::trained_final) {
        state = orchestrator.run_iteration(options);
        resumed = true;
      }
      if (!i_raw.empty()) {
        if (!resumed && !halted(state)) {
          orchestrator.begin_iteration(i_raw);
          state = orchestrator.run_iteration(options);
        }
      } else {
        while (!halted(state) && static_cast<std::size_t>(state.iteration) < schedule.size()) {
          orchestrator.begin_iteration(schedule[static_cast<std::size_t>(state.iteration)]);
          state = orchestrator.run_iteration(options);
        }
      }
      std::cout << json(state).dump() << '\n';
    } else if (*ev) {
      const auto mrm = resolve_endpoint(e_mrm, {}, EndpointKind::reward);
      Gateway gateway(image_store(image_roots, e_items), retry_policy(backoff_ms));
      gateway.add_endpoint(mrm);
      const auto items = read_jsonl<BenchmarkItem>(e_items);
      for (std::size_t i = 0; i < items.size(); ++i) {
        try {
          validate(items[i]);
        } catch (const ValidationError& e) {
          throw RecordError(i, e.what());
        }
      }
      const auto report = evaluate(gateway, items, mrm.id, workers);
      const auto table = format_table(report);
      write_text(e_report, to_json_value(report).dump(2) + "\n");
      write_text(e_report + ".txt", table);
      std::cout << table;
    } else if (*bon) {
      const auto mrm = resolve_endpoint(b_mrm, {}, EndpointKind::reward);
      Gateway gateway(image_store(image_roots, b_prompts), retry_policy(backoff_ms));
      gateway.add_endpoint(mrm);
      std::map<std::string, PromptRecord> prompts;
      for (auto& p : read_jsonl<PromptRecord>(b_prompts)) prompts.emplace(p.id, std::move(p));
      std::ifstream in(b_candidates);
      if (!in) throw IoError("cannot open " + b_candidates);
      std::string out;
      std::string line;
      std::size_t index = 0;
      while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto doc = json::parse(line);
        const auto id = doc.at("prompt_id").get<std::string>();
        const auto texts = doc.at("candidates").get<std::vector<std::string>>();
        auto p = prompts.find(id);
        if (p == prompts.end()) throw RecordError(index, "unknown prompt_id '" + id + "'");
        const auto best = best_of_n(gateway, p->second, texts, mrm.id);
        json scores = json::array();
        for (const auto& s : best.scores) scores.push_back(s ? json(*s) : json(nullptr));
        out += json{{"prompt_id", id}, {"index", best.index}, {"text", texts[best.index]}, {"scores", scores}}.dump() +
               "\n";
        ++index;
      }
      write_text(b_out, out);
    } else if (*dec) {
      const auto bench = read_jsonl<BenchmarkItem>(x_bench);
      const auto images = image_store(image_roots, x_in);
      const auto bench_images = image_store(image_roots, x_bench);
      const auto index = build_benchmark_index(std::span<const BenchmarkItem>(bench), bench_images);
      DecontaminationReport report;
      if (x_kind == "pairs") {
        report = decontaminate_dataset<PreferencePair>(x_in, x_out, index, images).second;
      } else if (x_kind == "prompts") {
        report = decontaminate_dataset<PromptRecord>(x_in, x_out, index, images).second;
      } else {
        report = decontaminate_dataset<T2IRecord>(x_in, x_out, index, images).second;
      }
      const auto text = json(report).dump(2) + "\n";
      if (!x_report.empty()) write_text(x_report, text);
      std::cout << text;
    } else if (*mt) {
      const auto model = write_mock_checkpoint(m_data, m_out, m_url);
      std::cout << json(model.endpoint).dump() << '\n';
    }
  } catch (const RecordError& e) {
    spdlog::error("record {}: {}", e.index(), e.what());
    return 1;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
