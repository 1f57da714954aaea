#include "fpliif/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

std::vector<png_byte> read_png(const std::filesystem::path& path, png_uint_32 format, Index& h,
                               Index& w) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw DataError("cannot read PNG " + path.string() + ": " + image.message);
  }
  image.format = format;
  std::vector<png_byte> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
  }
  h = image.height;
  w = image.width;
  return buffer;
}

void write_png(const std::filesystem::path& path, png_uint_32 format, Index h, Index w,
               const std::vector<png_byte>& buffer) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, buffer.data(), 0, nullptr)) {
    throw DataError("cannot write PNG " + path.string() + ": " + image.message);
  }
}

png_byte quantize(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<png_byte>(std::lround(c * 255.0f));
}

}  // namespace

RgbImage read_png_rgb(const std::filesystem::path& path) {
  Index h = 0, w = 0;
  const auto buf = read_png(path, PNG_FORMAT_RGB, h, w);
  RgbImage img(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        img.channels[static_cast<std::size_t>(c)](y, x) =
            static_cast<float>(buf[static_cast<std::size_t>((y * w + x) * 3 + c)]) / 255.0f;
      }
    }
  }
  return img;
}

LabelMap read_png_labels(const std::filesystem::path& path) {
  Index h = 0, w = 0;
  const auto buf = read_png(path, PNG_FORMAT_GRAY, h, w);
  LabelMap labels(h, w);
  for (Index i = 0; i < h * w; ++i) labels(i / w, i % w) = buf[static_cast<std::size_t>(i)];
  return labels;
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  const Index h = image.height(), w = image.width();
  std::vector<png_byte> buf(static_cast<std::size_t>(h * w * 3));
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        buf[static_cast<std::size_t>((y * w + x) * 3 + c)] =
            quantize(image.channels[static_cast<std::size_t>(c)](y, x));
      }
    }
  }
  write_png(path, PNG_FORMAT_RGB, h, w, buf);
}

void write_png_labels(const std::filesystem::path& path, const LabelMap& labels) {
  const Index h = labels.rows(), w = labels.cols();
  std::vector<png_byte> buf(static_cast<std::size_t>(h * w));
  for (Index i = 0; i < h * w; ++i) {
    const std::int32_t v = labels(i / w, i % w);
    if (v < 0 || v > 255) throw DataError("label " + std::to_string(v) + " does not fit in 8 bits");
    buf[static_cast<std::size_t>(i)] = static_cast<png_byte>(v);
  }
  write_png(path, PNG_FORMAT_GRAY, h, w, buf);
}

}  // namespace fpliif
