#include <doctest.h>

#include <cstdlib>
#include <set>

#include "prefkit/dataset.hpp"
#include "prefkit/errors.hpp"
#include "prefkit/mock_backends.hpp"
#include "prefkit/orchestrate.hpp"
#include "support.hpp"

using namespace prefkit;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kTruthSalt = 7;
const std::string kOracleReward = "mock://reward?scorer=planted&salt=7";

class MockTrainer : public Trainer {
 public:
  ModelRef train(const fs::path& dataset, const fs::path& out) override {
    ++calls;
    if (fail_at && calls == *fail_at) throw TrainerError("out of memory");
    return write_mock_checkpoint(dataset, out, kOracleReward);
  }
  int calls = 0;
  std::optional<int> fail_at;
};

// Pairs ordered by planted truth, then a `noise` fraction reversed.
std::vector<PreferencePair> planted_pairs(const std::string& tag, int n, double noise, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<PreferencePair> out;
  for (int i = 0; i < n; ++i) {
    const auto prompt = tag + " question " + std::to_string(i);
    const auto x = "answer x " + tag + std::to_string(i);
    const auto y = "answer y " + tag + std::to_string(i);
    const bool x_better = planted_quality(kTruthSalt, prompt, x) > planted_quality(kTruthSalt, prompt, y);
    auto p = testing::make_pair(tag + std::to_string(i), prompt, x_better ? x : y, x_better ? y : x);
    if (rng.bernoulli(noise)) std::swap(p.chosen, p.rejected);
    out.push_back(p);
  }
  return out;
}

double agreement(const std::vector<PreferencePair>& pairs) {
  std::size_t ok = 0;
  for (const auto& p : pairs) {
    const auto prompt = reward_prompt_text(p.context);
    ok += planted_quality(kTruthSalt, prompt, p.chosen) > planted_quality(kTruthSalt, prompt, p.rejected);
  }
  return static_cast<double>(ok) / static_cast<double>(pairs.size());
}

IterateConfig iterate_config(const fs::path& d0) {
  IterateConfig c;
  EndpointSpec judge;
  judge.id = "oracle-judge";
  judge.kind = EndpointKind::judge;
  judge.base_url = "mock://judge?scorer=planted&salt=7";
  c.endpoints = {judge};
  c.annotators = {"oracle-judge"};
  c.initial_dataset = d0.string();
  c.seed = 11;
  c.workers = 2;
  return c;
}

struct Fixture {
  testing::TempDir dir{"orch"};
  fs::path d0 = dir / "d0";
  fs::path raw = dir / "raw";
  Fixture() {
    write_dataset(d0, planted_pairs("a", 40, 0.0, 1));
    write_dataset(raw, planted_pairs("b", 200, 0.3, 2));
  }
};

}  // namespace

TEST_CASE("merge: disjoint, shared and self") {
  const auto a = planted_pairs("m", 100, 0.0, 1);
  const auto b = planted_pairs("n", 50, 0.0, 1);
  CHECK(merge_pairs(a, b).size() == 150);

  auto c = planted_pairs("n", 50, 0.0, 1);
  for (int i = 0; i < 10; ++i) c[i] = a[i];
  CHECK(merge_pairs(a, c).size() == 140);

  const auto self = merge_pairs(a, a);
  CHECK(self.size() == 100);
  const auto ab = merge_pairs(a, c);
  const auto ba = merge_pairs(c, a);
  REQUIRE(ab.size() == ba.size());
  for (std::size_t i = 0; i < ab.size(); ++i) CHECK(json(ab[i]) == json(ba[i]));
  const auto again = merge_pairs(ab, ab);
  CHECK(again.size() == ab.size());
}

TEST_CASE("merge: same id with different content keeps both under distinct ids") {
  auto x = testing::make_pair("dup", "q", "c1", "r1");
  auto y = testing::make_pair("dup", "q", "c2", "r2");
  const std::vector<PreferencePair> a{x}, b{y};
  const auto m = merge_pairs(a, b);
  REQUIRE(m.size() == 2);
  CHECK(m[0].id != m[1].id);
}

TEST_CASE("merge on disk records both parents") {
  testing::TempDir dir;
  write_dataset(dir / "left", planted_pairs("l", 5, 0.0, 1));
  write_dataset(dir / "right", planted_pairs("r", 7, 0.0, 1));
  const auto m = merge(dir / "left", dir / "right", dir / "both");
  CHECK(m.record_count == 12);
  CHECK(m.parent_manifests == std::vector<std::string>{"left", "right"});
}

TEST_CASE("bootstrap trains r0 on D0 only") {
  Fixture f;
  MockTrainer trainer;
  Gateway g({}, testing::no_backoff());
  Orchestrator o(f.dir / "state", iterate_config(f.d0), trainer, g);
  const auto s = o.bootstrap();
  CHECK(s.iteration == 0);
  CHECK(s.phase == Phase::trained_final);
  CHECK(s.r_final->endpoint.id == "r0");
  CHECK(trainer.calls == 1);
  CHECK_FALSE(s.d_raw.has_value());
  CHECK(g.has_endpoint("r0"));
  o.bootstrap();
  CHECK(trainer.calls == 1);
}

TEST_CASE("iteration with 30% planted noise reaches >= 0.9 agreement") {
  Fixture f;
  MockTrainer trainer;
  Gateway g({}, testing::no_backoff());
  Orchestrator o(f.dir / "state", iterate_config(f.d0), trainer, g);
  o.bootstrap();
  const std::vector<std::string> raws{f.raw.string()};
  o.begin_iteration(raws);
  const auto s = o.run_iteration();
  CHECK(s.phase == Phase::trained_final);
  CHECK(trainer.calls == 3);
  const auto before = agreement(read_records<PreferencePair>(f.raw));
  const auto after = agreement(read_records<PreferencePair>(f.dir / "state" / s.d_final->path));
  CHECK(before < 0.8);
  CHECK(after >= 0.9);
  for (auto p : {Phase::collected, Phase::curated_raw, Phase::merged, Phase::trained_star, Phase::recurated,
                 Phase::trained_final}) {
    CHECK(fs::exists(f.dir / "state" / ("phase-1-" + std::string(phase_name(p)))));
  }
  const auto star = read_manifest(f.dir / "state" / s.d_star->path);
  CHECK(star.parent_manifests.size() == 2);
}

TEST_CASE("crash after trained_star resumes to the same result") {
  Fixture f;
  const std::vector<std::string> raws{f.raw.string()};
  std::string uninterrupted;
  {
    MockTrainer trainer;
    Gateway g({}, testing::no_backoff());
    Orchestrator o(f.dir / "whole", iterate_config(f.d0), trainer, g);
    o.bootstrap();
    o.begin_iteration(raws);
    uninterrupted = o.run_iteration().d_final->manifest.content_digest;
  }
  IterationState stopped;
  {
    MockTrainer trainer;
    Gateway g({}, testing::no_backoff());
    Orchestrator o(f.dir / "split", iterate_config(f.d0), trainer, g);
    o.bootstrap();
    o.begin_iteration(raws);
    stopped = o.run_iteration(IterateOptions{Phase::trained_star});
    CHECK(stopped.phase == Phase::trained_star);
    CHECK_FALSE(stopped.d_final.has_value());
  }
  // Partial output of the phase that was running when the process died.
  fs::create_directories(f.dir / "split" / "phase-1-recurated");
  MockTrainer trainer;
  Gateway g({}, testing::no_backoff());
  Orchestrator o(f.dir / "split", iterate_config(f.d0), trainer, g);
  const auto s = o.run_iteration();
  CHECK(trainer.calls == 1);
  CHECK(s.d_star->manifest.content_digest == stopped.d_star->manifest.content_digest);
  CHECK(s.d_final->manifest.content_digest == uninterrupted);
}

TEST_CASE("trainer failure freezes the state with an error note") {
  Fixture f;
  MockTrainer trainer;
  trainer.fail_at = 2;
  Gateway g({}, testing::no_backoff());
  Orchestrator o(f.dir / "state", iterate_config(f.d0), trainer, g);
  o.bootstrap();
  const std::vector<std::string> raws{f.raw.string()};
  o.begin_iteration(raws);
  CHECK_THROWS_AS(o.run_iteration(), TrainerError);
  const auto s = o.load_state();
  REQUIRE(s.has_value());
  CHECK(s->phase == Phase::merged);
  CHECK(s->error.find("out of memory") != std::string::npos);
  trainer.fail_at.reset();
  const auto done = o.run_iteration();
  CHECK(done.phase == Phase::trained_final);
  CHECK(done.error.empty());
}

TEST_CASE("state lock admits one owner") {
  testing::TempDir dir;
  {
    StateLock a(dir.path());
    CHECK_THROWS_AS(StateLock(dir.path()), PreconditionError);
  }
  CHECK_NOTHROW(StateLock(dir.path()));
}

TEST_CASE("shell trainer: template substitution, endpoint contract, credentials") {
  testing::TempDir dir;
  write_dataset(dir / "data", planted_pairs("s", 3, 0.0, 1));
  CHECK(ShellTrainer::render("train --data {data} --out {out}", "/a b/d", "/o") == "train --data '/a b/d' --out '/o'");

  ::setenv("PREFKIT_TEST_TRAINER_SECRET", "hunter2", 1);
  const std::string cmd = std::string("'") + PREFKIT_CLI +
                          "' mock-train --data {data} --out {out} && printf %s \"$PREFKIT_TRAINER_CREDENTIAL\" > {out}/cred";
  ShellTrainer ok(cmd, "PREFKIT_TEST_TRAINER_SECRET");
  const auto m = ok.train(dir / "data", dir / "ckpt");
  CHECK(m.endpoint.kind == EndpointKind::reward);
  std::ifstream cred(dir / "ckpt" / "cred");
  std::string secret;
  cred >> secret;
  CHECK(secret == "hunter2");

  ShellTrainer failing("exit 3");
  CHECK_THROWS_AS(failing.train(dir / "data", dir / "ckpt2"), TrainerError);
  ShellTrainer silent("true");
  CHECK_THROWS_AS(silent.train(dir / "data", dir / "ckpt3"), TrainerError);
}
