#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "sceneadapt/diffcore/tensor.hpp"
#include "sceneadapt/io.hpp"

namespace sceneadapt {

// Planar RGB image (channel, row, column) with values in [0,1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> data;

  Image() = default;
  Image(std::size_t w, std::size_t h, float fill = 0.0f) : width(w), height(h), data(3 * w * h, fill) {}

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  bool operator==(const Image&) const = default;
};

// Per-pixel class ids, row-major.
struct LabelMask {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  LabelMask() = default;
  LabelMask(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), data(w * h, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }

  bool operator==(const LabelMask&) const = default;
};

inline std::uint8_t quantize_unit(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Image stacked into a (1,3,H,W) tensor.
template <class T = float>
Tensor<T> to_tensor(const Image& img) {
  Tensor<T> t(Shape{1, 3, img.height, img.width});
  for (std::size_t i = 0; i < img.data.size(); ++i) t[i] = static_cast<T>(img.data[i]);
  return t;
}

template <class T>
Tensor<T> stack_images(const std::vector<const Image*>& images) {
  if (images.empty()) throw UsageError("stack_images: empty batch");
  const std::size_t w = images[0]->width, h = images[0]->height;
  Tensor<T> t(Shape{images.size(), 3, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->width != w || images[n]->height != h) throw DataError("batch images differ in resolution");
    std::copy(images[n]->data.begin(), images[n]->data.end(), t.data().begin() + n * 3 * w * h);
  }
  return t;
}

// Per-pixel argmax over channels of a (1,C,H,W) tensor.
template <class T>
LabelMask argmax_channels(const Tensor<T>& scores, std::size_t batch_index = 0) {
  const std::size_t c = scores.extent(1), h = scores.extent(2), w = scores.extent(3);
  LabelMask m(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < c; ++k)
        if (scores.at(batch_index, k, y, x) > scores.at(batch_index, best, y, x)) best = k;
      m.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return m;
}

// Binary PPM (P6) / PGM (P5), maxval 255.

inline std::string encode_ppm(const Image& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.reserve(out.size() + 3 * img.width * img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) out.push_back(static_cast<char>(quantize_unit(img.at(c, y, x))));
  return out;
}

inline std::string encode_pgm(const LabelMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(mask.data.data()), mask.data.size());
  return out;
}

namespace detail {

struct PnmHeader {
  std::string magic;
  std::size_t width = 0, height = 0, maxval = 0;
  std::size_t offset = 0;
};

inline PnmHeader parse_pnm_header(const std::string& bytes, const std::string& what) {
  PnmHeader h;
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto read_number = [&](const char* field) {
    skip_space_and_comments();
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw DataError(what + ": malformed " + field);
    return static_cast<std::size_t>(std::stoul(bytes.substr(start, pos - start)));
  };
  if (bytes.size() < 2) throw DataError(what + ": truncated header");
  h.magic = bytes.substr(0, 2);
  pos = 2;
  h.width = read_number("width");
  h.height = read_number("height");
  h.maxval = read_number("maxval");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw DataError(what + ": missing separator after header");
  h.offset = pos + 1;
  if (h.maxval != 255) throw DataError(what + ": only maxval 255 is supported");
  return h;
}

}  // namespace detail

inline Image decode_ppm(const std::string& bytes, const std::string& what = "ppm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P6") throw DataError(what + ": not a binary PPM (P6)");
  if (bytes.size() - h.offset < 3 * h.width * h.height) throw DataError(what + ": truncated pixel data");
  Image img(h.width, h.height);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.offset);
  for (std::size_t y = 0; y < h.height; ++y)
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<float>(*p++) / 255.0f;
  return img;
}

inline LabelMask decode_pgm(const std::string& bytes, const std::string& what = "pgm") {
  const auto h = detail::parse_pnm_header(bytes, what);
  if (h.magic != "P5") throw DataError(what + ": not a binary PGM (P5)");
  if (bytes.size() - h.offset < h.width * h.height) throw DataError(what + ": truncated pixel data");
  LabelMask m(h.width, h.height);
  std::copy_n(reinterpret_cast<const std::uint8_t*>(bytes.data() + h.offset), m.data.size(), m.data.begin());
  return m;
}

inline void write_ppm(const fs::path& path, const Image& img) { atomic_write(path, encode_ppm(img)); }
inline void write_pgm(const fs::path& path, const LabelMask& mask) { atomic_write(path, encode_pgm(mask)); }
inline Image read_ppm(const fs::path& path) { return decode_ppm(read_file(path), path.string()); }
inline LabelMask read_pgm(const fs::path& path) { return decode_pgm(read_file(path), path.string()); }

}  // namespace sceneadapt
