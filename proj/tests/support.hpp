#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <fstream>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "prefkit/gateway.hpp"
#include "prefkit/image.hpp"
#include "prefkit/mock_backends.hpp"
#include "prefkit/rng.hpp"
#include "prefkit/types.hpp"

namespace testing {

// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "prefkit") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline prefkit::RetryPolicy no_backoff() {
  prefkit::RetryPolicy r;
  r.base = std::chrono::milliseconds(0);
  r.cap = std::chrono::milliseconds(0);
  return r;
}

inline prefkit::EndpointSpec spec(const std::string& id, prefkit::EndpointKind kind, const std::string& url,
                                  int max_retries = 2, int max_concurrency = 4) {
  prefkit::EndpointSpec s;
  s.id = id;
  s.kind = kind;
  s.base_url = url;
  s.max_retries = max_retries;
  s.max_concurrency = max_concurrency;
  return s;
}

// Backend whose behaviour is a lambda; counts calls.
class FnBackend : public prefkit::Backend {
 public:
  using Fn = std::function<std::string(const std::string&, const nlohmann::json&, int call)>;
  explicit FnBackend(Fn fn) : fn_(std::move(fn)) {}
  std::string post(const std::string& path, const nlohmann::json& body, const std::string&) override {
    return fn_(path, body, calls++);
  }
  std::atomic<int> calls{0};

 private:
  Fn fn_;
};

// Tracks the peak number of overlapping post() calls.
class CountingBackend : public prefkit::Backend {
 public:
  CountingBackend(std::shared_ptr<prefkit::Backend> inner, std::chrono::milliseconds hold)
      : inner_(std::move(inner)), hold_(hold) {}
  std::string post(const std::string& path, const nlohmann::json& body, const std::string& cred) override {
    const int now = ++in_flight;
    int seen = peak.load();
    while (now > seen && !peak.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(hold_);
    auto reply = inner_->post(path, body, cred);
    --in_flight;
    return reply;
  }
  std::atomic<int> in_flight{0};
  std::atomic<int> peak{0};

 private:
  std::shared_ptr<prefkit::Backend> inner_;
  std::chrono::milliseconds hold_;
};

inline prefkit::Bytes small_png(std::uint8_t shade, int size = 8) {
  prefkit::Image img;
  img.width = size;
  img.height = size;
  img.channels = 3;
  img.pixels.assign(static_cast<std::size_t>(size * size * 3), shade);
  return prefkit::encode_png(img);
}

inline void write_bytes(const std::filesystem::path& p, const prefkit::Bytes& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline prefkit::PreferencePair make_pair(const std::string& id, const std::string& prompt, const std::string& chosen,
                                         const std::string& rejected,
                                         prefkit::Provenance prov = prefkit::Provenance::open_source) {
  prefkit::PreferencePair p;
  p.id = id;
  p.context = prefkit::SingleImageContext{id, prompt, {}};
  p.chosen = chosen;
  p.rejected = rejected;
  p.provenance = prov;
  p.source_dataset = "synthetic";
  return p;
}

}  // namespace testing
