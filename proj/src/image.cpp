#include "prefkit/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include <httplib.h>
#include <png.h>

#include "prefkit/digest.hpp"
#include "prefkit/errors.hpp"

namespace prefkit {

namespace fs = std::filesystem;

namespace {

bool is_png(const Bytes& b) {
  static constexpr std::uint8_t sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  return b.size() >= 8 && std::equal(sig, sig + 8, b.begin());
}

Image decode_png(const Bytes& bytes) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size())) {
    throw ImageError(std::string("png decode: ") + png.message);
  }
  const bool alpha = (png.format & PNG_FORMAT_FLAG_ALPHA) != 0;
  const bool color = (png.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png.format = color ? (alpha ? PNG_FORMAT_RGBA : PNG_FORMAT_RGB) : (alpha ? PNG_FORMAT_GA : PNG_FORMAT_GRAY);
  Image img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.channels = static_cast<int>(PNG_IMAGE_PIXEL_CHANNELS(png.format));
  img.pixels.resize(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    png_image_free(&png);
    throw ImageError(std::string("png decode: ") + png.message);
  }
  return img;
}

Image decode_pnm(const Bytes& bytes) {
  std::string header(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 256));
  std::istringstream in(header);
  std::string magic;
  in >> magic;
  const int channels = magic == "P5" ? 1 : magic == "P6" ? 3 : 0;
  if (channels == 0) throw ImageError("unsupported image format");
  auto next_int = [&in]() {
    in >> std::ws;
    while (in.peek() == '#') {
      std::string comment;
      std::getline(in, comment);
      in >> std::ws;
    }
    int v = -1;
    in >> v;
    return v;
  };
  const int w = next_int();
  const int h = next_int();
  const int maxval = next_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw ImageError("unsupported PNM header");
  const auto offset = static_cast<std::size_t>(in.tellg()) + 1;  // single whitespace after maxval
  const std::size_t n = static_cast<std::size_t>(w) * h * channels;
  if (bytes.size() < offset + n) throw ImageError("truncated PNM data");
  Image img{w, h, channels, std::vector<std::uint8_t>(bytes.begin() + offset, bytes.begin() + offset + n)};
  return img;
}

Bytes read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw ImageError("cannot open image '" + p.string() + "'");
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

Bytes fetch_http(std::string_view url) {
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string host(url.substr(0, path_start));
  const std::string path = path_start == std::string_view::npos ? "/" : std::string(url.substr(path_start));
  httplib::Client client(host);
  client.set_connection_timeout(10);
  client.set_read_timeout(30);
  auto res = client.Get(path);
  if (!res || res->status != 200) throw ImageError("cannot fetch image '" + std::string(url) + "'");
  return Bytes(res->body.begin(), res->body.end());
}

}  // namespace

Image decode_image(const Bytes& bytes) {
  if (is_png(bytes)) return decode_png(bytes);
  return decode_pnm(bytes);
}

Bytes encode_png(const Image& image) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  switch (image.channels) {
    case 1: png.format = PNG_FORMAT_GRAY; break;
    case 2: png.format = PNG_FORMAT_GA; break;
    case 3: png.format = PNG_FORMAT_RGB; break;
    case 4: png.format = PNG_FORMAT_RGBA; break;
    default: throw ImageError("unsupported channel count");
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + png.message);
  }
  Bytes out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, image.pixels.data(), 0, nullptr)) {
    throw ImageError(std::string("png encode: ") + png.message);
  }
  out.resize(size);
  return out;
}

Image add_gaussian_noise(Image image, double sigma_fraction, Rng& rng) {
  const double sigma = sigma_fraction * 255.0;
  const bool has_alpha = image.channels == 2 || image.channels == 4;
  const auto stride = static_cast<std::size_t>(image.channels);
  for (std::size_t i = 0; i < image.pixels.size(); ++i) {
    if (has_alpha && i % stride == stride - 1) continue;
    const double v = image.pixels[i] + sigma * rng.normal();
    image.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  }
  return image;
}

ImageStore::ImageStore(std::vector<fs::path> search_roots, fs::path blob_dir)
    : search_roots_(std::move(search_roots)), blob_dir_(std::move(blob_dir)) {}

void ImageStore::add_search_root(fs::path root) { search_roots_.push_back(std::move(root)); }

void ImageStore::set_blob_dir(fs::path dir) { blob_dir_ = std::move(dir); }

Bytes ImageStore::load(std::string_view ref) const {
  if (ref.empty()) throw ImageError("empty image reference");
  if (ref.starts_with("blob:")) {
    const auto digest = ref.substr(5);
    if (!blob_dir_.empty() && fs::exists(blob_dir_ / digest)) return read_file(blob_dir_ / digest);
    for (const auto& root : search_roots_) {
      if (fs::exists(root / "blobs" / digest)) return read_file(root / "blobs" / digest);
    }
    throw ImageError("unknown blob '" + std::string(ref) + "'");
  }
  if (ref.starts_with("http://")) return fetch_http(ref);
  if (ref.starts_with("https://")) throw ImageError("https image references are not supported: " + std::string(ref));
  const fs::path p(ref);
  if (p.is_relative()) {
    for (const auto& root : search_roots_) {
      if (fs::exists(root / p)) return read_file(root / p);
    }
  }
  if (fs::is_regular_file(p)) return read_file(p);
  throw ImageError("unresolvable image reference '" + std::string(ref) + "'");
}

std::optional<Bytes> ImageStore::try_load(std::string_view ref) const {
  try {
    return load(ref);
  } catch (const ImageError&) {
    return std::nullopt;
  }
}

std::string ImageStore::put(const Bytes& bytes) const {
  if (blob_dir_.empty()) throw IoError("image store has no blob directory");
  const auto digest = sha256_hex(std::span<const std::uint8_t>(bytes));
  fs::create_directories(blob_dir_);
  const auto target = blob_dir_ / digest;
  if (!fs::exists(target)) {
    const auto tmp = blob_dir_ / (digest + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
      if (!out) throw IoError("cannot write blob " + tmp.string());
    }
    fs::rename(tmp, target);
  }
  return "blob:" + digest;
}

std::string embed_image(const ImageStore& source, const ImageStore& target, std::string_view ref) {
  if (ref.starts_with("http://")) return std::string(ref);
  return target.put(source.load(ref));
}

}  // namespace prefkit
