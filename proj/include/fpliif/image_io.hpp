#pragma once

#include <Eigen/Core>

#include <array>
#include <filesystem>

#include "fpliif/loss.hpp"

namespace fpliif {

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Planar RGB image with values in [0, 1].
struct RgbImage {
  std::array<Plane, 3> channels;

  RgbImage() = default;
  RgbImage(Index height, Index width) {
    for (auto& c : channels) c = Plane::Zero(height, width);
  }
  Index height() const { return channels[0].rows(); }
  Index width() const { return channels[0].cols(); }
};

// 8-bit PNG I/O. Reads throw DataError naming the file.
RgbImage read_png_rgb(const std::filesystem::path& path);
LabelMap read_png_labels(const std::filesystem::path& path);
void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);
void write_png_labels(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace fpliif
