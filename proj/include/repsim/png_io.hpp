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

// Image files by content: PNG (through libpng) or binary PNM. Requires
// linking libpng.

#include <png.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "repsim/embedding_store.hpp"
#include "repsim/errors.hpp"
#include "repsim/image.hpp"

namespace repsim {

namespace detail {

inline bool is_png(std::string_view bytes) {
  return bytes.size() >= 8 && std::memcmp(bytes.data(), "\x89PNG\r\n\x1a\n", 8) == 0;
}

inline std::vector<std::uint8_t> decode_png(std::string_view bytes, std::uint32_t format, std::size_t& width,
                                            std::size_t& height, const std::string& name) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw FormatError(name + ": " + image.message);
  }
  image.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw FormatError(name + ": " + msg);
  }
  width = image.width;
  height = image.height;
  return pixels;
}

inline std::string encode_png(const std::uint8_t* pixels, std::size_t width, std::size_t height,
                              std::uint32_t format) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
    throw IoError(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

inline bool wants_png(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  for (auto& c : ext) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return ext == ".png";
}

}  // namespace detail

inline RgbImage read_rgb_image(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (detail::is_png(bytes)) {
    RgbImage img;
    img.pixels = detail::decode_png(bytes, PNG_FORMAT_RGB, img.width, img.height, path.string());
    return img;
  }
  return decode_pnm_rgb(bytes, path.string());
}

inline GrayImage read_gray_image(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  if (detail::is_png(bytes)) {
    // libpng's colour-to-gray conversion differs from BT.601 luma; convert here.
    RgbImage rgb;
    rgb.pixels = detail::decode_png(bytes, PNG_FORMAT_RGB, rgb.width, rgb.height, path.string());
    return to_gray(rgb);
  }
  return decode_pnm_gray(bytes, path.string());
}

/// Writes PNG when the extension is .png, binary PPM otherwise.
inline void write_rgb_image(const RgbImage& img, const std::filesystem::path& path) {
  detail::write_file_bytes(path, detail::wants_png(path)
                                     ? detail::encode_png(img.pixels.data(), img.width, img.height, PNG_FORMAT_RGB)
                                     : encode_ppm(img));
}

inline void write_gray_image(const GrayImage& img, const std::filesystem::path& path) {
  detail::write_file_bytes(path, detail::wants_png(path)
                                     ? detail::encode_png(img.pixels.data(), img.width, img.height, PNG_FORMAT_GRAY)
                                     : encode_pgm(img));
}

}  // namespace repsim
