// Copyright 2026 The repsim Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// 8-bit gray and RGB images with binary PNM (P5 / P6) I/O.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"

namespace repsim {

struct GrayImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major

  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }
};

struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved RGB

  std::size_t pixel_count() const noexcept { return width * height; }
};

/// ITU-R BT.601 luma, rounded half up.
inline GrayImage to_gray(const RgbImage& img) {
  GrayImage out{img.width, img.height, std::vector<std::uint8_t>(img.pixel_count())};
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double y = 0.299 * img.pixels[3 * p] + 0.587 * img.pixels[3 * p + 1] + 0.114 * img.pixels[3 * p + 2];
    out.pixels[p] = static_cast<std::uint8_t>(std::min(255.0, std::floor(y + 0.5)));
  }
  return out;
}

namespace detail {

struct PnmData {
  char kind = 0;  // '5' gray, '6' rgb
  std::size_t width = 0, height = 0;
  std::string_view payload;
};

inline PnmData parse_pnm(std::string_view bytes, const std::string& name) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw FormatError(name + ": not a binary PGM/PPM (expected P5 or P6 magic)");
  }
  std::size_t pos = 2;
  auto next_token = [&]() -> std::size_t {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError(name + ": malformed PNM header at byte offset " + std::to_string(start));
    return std::stoull(std::string(bytes.substr(start, pos - start)));
  };
  PnmData out;
  out.kind = bytes[1];
  out.width = next_token();
  out.height = next_token();
  const std::size_t maxval = next_token();
  if (maxval != 255) throw FormatError(name + ": only 8-bit PNM (maxval 255) is supported");
  if (out.width == 0 || out.height == 0) throw FormatError(name + ": empty image");
  ++pos;  // single whitespace byte after maxval
  const std::size_t channels = out.kind == '5' ? 1 : 3;
  const std::size_t expected = out.width * out.height * channels;
  if (bytes.size() < pos + expected) {
    throw FormatError(name + ": truncated pixel data: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size() > pos ? bytes.size() - pos : 0));
  }
  out.payload = bytes.substr(pos, expected);
  return out;
}

}  // namespace detail

inline std::string encode_pgm(const GrayImage& img) {
  std::string out = "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

inline std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

/// Decodes P5 or P6; colour input is converted to luma.
inline GrayImage decode_pnm_gray(std::string_view bytes, const std::string& name = "image") {
  const auto pnm = detail::parse_pnm(bytes, name);
  if (pnm.kind == '5') {
    return {pnm.width, pnm.height, std::vector<std::uint8_t>(pnm.payload.begin(), pnm.payload.end())};
  }
  return to_gray({pnm.width, pnm.height, std::vector<std::uint8_t>(pnm.payload.begin(), pnm.payload.end())});
}

/// Decodes P5 or P6; gray input is replicated into three channels.
inline RgbImage decode_pnm_rgb(std::string_view bytes, const std::string& name = "image") {
  const auto pnm = detail::parse_pnm(bytes, name);
  RgbImage out{pnm.width, pnm.height, {}};
  if (pnm.kind == '6') {
    out.pixels.assign(pnm.payload.begin(), pnm.payload.end());
  } else {
    out.pixels.reserve(pnm.payload.size() * 3);
    for (char c : pnm.payload)
      for (int k = 0; k < 3; ++k) out.pixels.push_back(static_cast<std::uint8_t>(c));
  }
  return out;
}

}  // namespace repsim
