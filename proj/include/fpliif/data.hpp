#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fpliif/image_io.hpp"
#include "fpliif/loss.hpp"
#include "fpliif/random.hpp"
#include "fpliif/tensor.hpp"

namespace fpliif {

struct SegSample {
  std::string id;
  RgbImage image;
  LabelMap labels;
  int num_classes = 0;

  Index height() const { return labels.rows(); }
  Index width() const { return labels.cols(); }
};

// Classes drawn by synth_face.
enum FaceClass : std::int32_t {
  kBackground = 0,
  kSkin = 1,
  kHair = 2,
  kLeftEye = 3,
  kRightEye = 4,
  kBrow = 5,
  kNose = 6,
  kMouth = 7,
};
inline constexpr int kSynthClasses = 8;

/// Continuous face layout behind synth_face, in unit-square image
/// coordinates (u to the right, v down, both in [0, 1]).
struct FaceGeometry {
  double cx = 0.5, cy = 0.5;  // face center
  double rx = 0.25, ry = 0.3;  // skin ellipse radii
  double roll = 0.0;           // radians
  double hair_scale_x = 1.15, hair_scale_y = 1.1, hair_shift = 0.12, hair_bottom = 0.45;
  double hairline = -0.7;
  double eye_x = 0.36, eye_y = -0.12, eye_a = 0.16, eye_b = 0.09;
  double brow_gap = 0.17, brow_half_width = 0.22, brow_half_thickness = 0.055, brow_curve = 0.8;
  double nose_top = -0.02, nose_bottom = 0.3, nose_half_width = 0.12;
  double mouth_y = 0.55, mouth_a = 0.26, mouth_b = 0.09;

  // Face-local coordinates scaled by the skin radii (unit circle = skin).
  Eigen::Vector2d local(double u, double v) const;
  bool inside_skin(double u, double v) const;
  std::int32_t label_at(double u, double v) const;
};

FaceGeometry synth_face_geometry(std::uint64_t seed);

/// Procedural face-like sample. Geometry is drawn from the seed alone, so the
/// same seed at two resolutions rasterizes the same continuous face. Labels
/// are sampled at pixel centers; the image is 2x2 supersampled with smooth
/// shading and mild noise. num_classes must be >= 8 (extra ids stay unused).
SegSample synth_face(std::uint64_t seed, int res, int num_classes = kSynthClasses);

/// Reads root/<split>.txt and the matching images/<id>.png and masks/<id>.png.
/// Samples are ordered lexicographically by id.
std::vector<SegSample> load_dataset(const std::filesystem::path& root, const std::string& split,
                                    int num_classes);

/// Writes samples in the same layout (creates directories, overwrites files).
void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<SegSample>& samples);

/// Image: bicubic (Keys, a = -0.5) with cell-center alignment and edge clamp.
/// Labels: nearest, source index floor((d + 0.5) * in / out).
SegSample resize_sample(const SegSample& sample, int res);

RgbImage resize_bicubic(const RgbImage& image, Index out_h, Index out_w);
LabelMap resize_nearest(const LabelMap& labels, Index out_h, Index out_w);

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  bool operator==(const Range&) const = default;
};

struct AugmentPolicy {
  Range rotation_deg{-30.0, 30.0};
  Range shear_deg{0.0, 20.0};  // x-shear
  Range scale{0.5, 3.0};
  int crop = 0;  // output side length; 0 keeps the input size
  Range brightness{0.5, 1.5};
  Range contrast{0.0, 2.0};
  Range saturation{0.5, 1.5};
  Range hue{-0.3, 0.3};  // fraction of a full hue turn

  // Every range collapsed to its neutral value.
  static AugmentPolicy identity();
  bool operator==(const AugmentPolicy&) const = default;
};

/// One affine draw (rotation, shear, scale about the center) plus a random
/// crop offset, applied to the image (bilinear, black fill) and labels
/// (nearest, background fill); then brightness, contrast, saturation and hue
/// jitter on the image only, in that order.
SegSample augment(const SegSample& sample, const AugmentPolicy& policy, Rng& rng);

// Hue rotation in HSV space, clamped output.
RgbImage adjust_hue(const RgbImage& image, double shift);

template <typename Scalar>
struct Batch {
  Tensor<Scalar> images;  // N x 3 x H x W
  std::vector<LabelMap> labels;
  std::vector<std::size_t> indices;  // positions in the source list
};

/// Seeded permutation split into consecutive batches; the last one may be
/// short.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed);

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<const RgbImage*>& images);

template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<SegSample>& samples,
                         const std::vector<std::size_t>& indices);

/// Pull-style batch iterator over a sample list.
template <typename Scalar>
class BatchStream {
 public:
  BatchStream(const std::vector<SegSample>& samples, std::size_t batch_size,
              std::uint64_t shuffle_seed);
  std::optional<Batch<Scalar>> next();
  std::size_t num_batches() const { return order_.size(); }

 private:
  const std::vector<SegSample>* samples_;
  std::vector<std::vector<std::size_t>> order_;
  std::size_t cursor_ = 0;
};

}  // namespace fpliif
