#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "prefkit/rng.hpp"

namespace prefkit {

using Bytes = std::vector<std::uint8_t>;

// 8-bit raster, interleaved channels (1 = gray, 3 = RGB, 4 = RGBA).
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Decodes PNG or binary PNM (P5/P6). Throws ImageError.
Image decode_image(const Bytes& bytes);
// Lossless PNG encoding.
Bytes encode_png(const Image& image);

// Additive Gaussian noise with std = sigma_fraction * 255, clamped to [0,255].
// The alpha channel is left untouched.
Image add_gaussian_noise(Image image, double sigma_fraction, Rng& rng);

// Resolves image references. Accepted forms:
//   blob:<sha256>        sidecar blob in the blob directory
//   http://host/path     fetched over HTTP
//   anything else        filesystem path, relative ones against the search roots
class ImageStore {
 public:
  ImageStore() = default;
  explicit ImageStore(std::vector<std::filesystem::path> search_roots, std::filesystem::path blob_dir = {});

  void add_search_root(std::filesystem::path root);
  void set_blob_dir(std::filesystem::path dir);
  const std::filesystem::path& blob_dir() const noexcept { return blob_dir_; }

  // Throws ImageError when the reference cannot be read.
  Bytes load(std::string_view ref) const;
  std::optional<Bytes> try_load(std::string_view ref) const;

  // Writes bytes to <blob_dir>/<digest> and returns "blob:<digest>".
  std::string put(const Bytes& bytes) const;

 private:
  std::vector<std::filesystem::path> search_roots_;
  std::filesystem::path blob_dir_;
};

// Copies the image behind `ref` into `target`'s blob directory. http
// references are returned unchanged.
std::string embed_image(const ImageStore& source, const ImageStore& target, std::string_view ref);

}  // namespace prefkit
