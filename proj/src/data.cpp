#include "fpliif/data.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

bool in_ellipse(double a, double b, double ca, double cb, double ra, double rb) {
  const double x = (a - ca) / ra, y = (b - cb) / rb;
  return x * x + y * y <= 1.0;
}

bool in_triangle(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                 const Eigen::Vector2d& c) {
  auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& s, const Eigen::Vector2d& t) {
    return (s.x() - o.x()) * (t.y() - o.y()) - (s.y() - o.y()) * (t.x() - o.x());
  };
  const double d1 = cross(p, a, b), d2 = cross(p, b, c), d3 = cross(p, c, a);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0;
  const bool pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

using Color = Eigen::Array3d;

}  // namespace

Eigen::Vector2d FaceGeometry::local(double u, double v) const {
  const double dx = u - cx, dy = v - cy;
  const double c = std::cos(roll), s = std::sin(roll);
  return {(c * dx + s * dy) / rx, (-s * dx + c * dy) / ry};
}

bool FaceGeometry::inside_skin(double u, double v) const {
  return local(u, v).squaredNorm() <= 1.0;
}

std::int32_t FaceGeometry::label_at(double u, double v) const {
  const Eigen::Vector2d p = local(u, v);
  const double a = p.x(), b = p.y();
  std::int32_t label = kBackground;
  if (b < hair_bottom && in_ellipse(a, b, 0.0, -hair_shift, hair_scale_x, hair_scale_y)) label = kHair;
  if (p.squaredNorm() > 1.0) return label;

  label = kSkin;
  if (b < hairline) return kHair;
  for (int side : {-1, 1}) {
    const double da = a - side * eye_x;
    const double center = eye_y - brow_gap + brow_curve * da * da;
    if (std::abs(da) <= brow_half_width && std::abs(b - center) <= brow_half_thickness) label = kBrow;
  }
  for (int side : {-1, 1}) {
    if (in_ellipse(a, b, side * eye_x, eye_y, eye_a, eye_b)) label = side < 0 ? kLeftEye : kRightEye;
  }
  if (in_triangle(p, {0.0, nose_top}, {-nose_half_width, nose_bottom}, {nose_half_width, nose_bottom})) {
    label = kNose;
  }
  if (in_ellipse(a, b, 0.0, mouth_y, mouth_a, mouth_b)) label = kMouth;
  return label;
}

namespace {

FaceGeometry draw_geometry(Rng& rng) {
  FaceGeometry g;
  g.cx = uniform(rng, 0.44, 0.56);
  g.cy = uniform(rng, 0.48, 0.58);
  g.rx = uniform(rng, 0.24, 0.30);
  g.ry = uniform(rng, 0.30, 0.36);
  g.roll = uniform(rng, -12.0, 12.0) * kDeg;
  g.hair_scale_x = uniform(rng, 1.08, 1.22);
  g.hair_scale_y = uniform(rng, 1.05, 1.15);
  g.hair_shift = uniform(rng, 0.08, 0.18);
  g.hair_bottom = uniform(rng, 0.2, 0.6);
  g.hairline = uniform(rng, -0.8, -0.62);
  g.eye_x = uniform(rng, 0.32, 0.40);
  g.eye_y = uniform(rng, -0.18, -0.08);
  g.eye_a = uniform(rng, 0.14, 0.18);
  g.eye_b = uniform(rng, 0.08, 0.11);
  g.brow_gap = uniform(rng, 0.17, 0.22);
  g.brow_half_width = uniform(rng, 0.18, 0.24);
  g.brow_half_thickness = uniform(rng, 0.045, 0.06);
  g.brow_curve = uniform(rng, 0.5, 1.2);
  g.nose_top = uniform(rng, -0.05, 0.02);
  g.nose_bottom = uniform(rng, 0.26, 0.34);
  g.nose_half_width = uniform(rng, 0.1, 0.14);
  g.mouth_y = uniform(rng, 0.5, 0.6);
  g.mouth_a = uniform(rng, 0.22, 0.3);
  g.mouth_b = uniform(rng, 0.07, 0.1);
  return g;
}

}  // namespace

FaceGeometry synth_face_geometry(std::uint64_t seed) {
  Rng rng = make_rng(seed, Stream::kSynth);
  return draw_geometry(rng);
}

SegSample synth_face(std::uint64_t seed, int res, int num_classes) {
  if (res < 32) throw ParameterError("synth_face: res must be >= 32, got " + std::to_string(res));
  if (num_classes < kSynthClasses) {
    throw ParameterError("synth_face: num_classes must be >= " + std::to_string(kSynthClasses));
  }
  // Geometry first, appearance second: the label layout never depends on res.
  Rng rng = make_rng(seed, Stream::kSynth);
  const FaceGeometry g = draw_geometry(rng);

  std::array<Color, kSynthClasses> palette;
  palette[kBackground] = Color(uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9), uniform(rng, 0.2, 0.9));
  const double tone = uniform(rng, 0.4, 0.85);
  palette[kSkin] = Color(std::min(1.0, tone + 0.1), tone * 0.8 + 0.05, tone * 0.65);
  const double hair = uniform(rng, 0.05, 0.35);
  palette[kHair] = Color(hair * uniform(rng, 0.9, 1.6), hair, hair * uniform(rng, 0.6, 1.0));
  const double sclera = uniform(rng, 0.85, 0.97);
  palette[kLeftEye] = Color(sclera, sclera, std::min(1.0, sclera + 0.03));
  palette[kRightEye] = palette[kLeftEye];
  palette[kBrow] = palette[kHair] * uniform(rng, 0.5, 0.8);
  palette[kNose] = palette[kSkin] * uniform(rng, 0.78, 0.86);
  palette[kMouth] = Color(uniform(rng, 0.65, 0.85), uniform(rng, 0.15, 0.3), uniform(rng, 0.2, 0.35));
  const double grad_x = uniform(rng, -0.3, 0.3);
  const double grad_y = uniform(rng, -0.3, 0.3);

  SegSample s;
  s.id = "synth_" + std::to_string(seed);
  s.num_classes = num_classes;
  s.image = RgbImage(res, res);
  s.labels.resize(res, res);
  const double inv = 1.0 / res;
  for (int y = 0; y < res; ++y) {
    for (int x = 0; x < res; ++x) {
      const double u = (x + 0.5) * inv, v = (y + 0.5) * inv;
      s.labels(y, x) = g.label_at(u, v);
      Color c = Color::Zero();
      for (double oy : {-0.25, 0.25}) {
        for (double ox : {-0.25, 0.25}) {
          c += palette[static_cast<std::size_t>(g.label_at(u + ox * inv, v + oy * inv))];
        }
      }
      c *= 0.25 * (1.0 + grad_x * (u - 0.5) + grad_y * (v - 0.5));
      for (int ch = 0; ch < 3; ++ch) {
        const double noise = uniform(rng, -0.03, 0.03);
        s.image.channels[static_cast<std::size_t>(ch)](y, x) =
            static_cast<float>(std::clamp(c(ch) + noise, 0.0, 1.0));
      }
    }
  }
  return s;
}

std::vector<SegSample> load_dataset(const std::filesystem::path& root, const std::string& split,
                                    int num_classes) {
  const auto list = root / (split + ".txt");
  std::ifstream in(list);
  if (!in) throw DataError("missing split file " + list.string());
  std::vector<std::string> ids;
  for (std::string line; std::getline(in, line);) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  std::sort(ids.begin(), ids.end());

  std::vector<SegSample> samples;
  samples.reserve(ids.size());
  for (const auto& id : ids) {
    const auto image_path = root / "images" / (id + ".png");
    const auto mask_path = root / "masks" / (id + ".png");
    if (!std::filesystem::exists(image_path)) throw DataError("sample '" + id + "': missing image " + image_path.string());
    if (!std::filesystem::exists(mask_path)) throw DataError("sample '" + id + "': missing mask " + mask_path.string());
    SegSample s;
    s.id = id;
    s.num_classes = num_classes;
    s.image = read_png_rgb(image_path);
    s.labels = read_png_labels(mask_path);
    if (s.image.height() != s.labels.rows() || s.image.width() != s.labels.cols()) {
      throw DataError("sample '" + id + "': image is " + std::to_string(s.image.height()) + "x" +
                      std::to_string(s.image.width()) + " but mask is " +
                      std::to_string(s.labels.rows()) + "x" + std::to_string(s.labels.cols()));
    }
    const std::int32_t max_label = s.labels.size() ? s.labels.maxCoeff() : 0;
    if (max_label >= num_classes) {
      throw DataError("sample '" + id + "': mask value " + std::to_string(max_label) +
                      " >= declared classes " + std::to_string(num_classes));
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<SegSample>& samples) {
  std::filesystem::create_directories(root / "images");
  std::filesystem::create_directories(root / "masks");
  std::vector<std::string> ids;
  for (const auto& s : samples) {
    write_png_rgb(root / "images" / (s.id + ".png"), s.image);
    write_png_labels(root / "masks" / (s.id + ".png"), s.labels);
    ids.push_back(s.id);
  }
  std::sort(ids.begin(), ids.end());
  std::ofstream out(root / (split + ".txt"), std::ios::trunc);
  for (const auto& id : ids) out << id << '\n';
  if (!out) throw DataError("cannot write split file for " + split);
}

namespace {

double cubic_weight(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

// out x in resampling matrix for one axis.
Eigen::MatrixXd bicubic_axis(Index in, Index out) {
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(out, in);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index d = 0; d < out; ++d) {
    const double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    const auto base = static_cast<Index>(std::floor(src));
    for (Index k = base - 1; k <= base + 2; ++k) {
      m(d, std::clamp<Index>(k, 0, in - 1)) += cubic_weight(src - static_cast<double>(k));
    }
  }
  return m;
}

}  // namespace

RgbImage resize_bicubic(const RgbImage& image, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1) throw ParameterError("resize: output size must be >= 1");
  if (out_h == image.height() && out_w == image.width()) return image;
  const Eigen::MatrixXd ry = bicubic_axis(image.height(), out_h);
  const Eigen::MatrixXd rx = bicubic_axis(image.width(), out_w);
  RgbImage out;
  for (std::size_t c = 0; c < 3; ++c) {
    const Eigen::MatrixXd src = image.channels[c].cast<double>().matrix();
    const Eigen::MatrixXd r = ry * src * rx.transpose();
    out.channels[c] = r.array().cwiseMax(0.0).cwiseMin(1.0).cast<float>();
  }
  return out;
}

LabelMap resize_nearest(const LabelMap& labels, Index out_h, Index out_w) {
  if (out_h < 1 || out_w < 1) throw ParameterError("resize: output size must be >= 1");
  const Index in_h = labels.rows(), in_w = labels.cols();
  LabelMap out(out_h, out_w);
  for (Index y = 0; y < out_h; ++y) {
    const Index sy = std::min(in_h - 1, (2 * y + 1) * in_h / (2 * out_h));
    for (Index x = 0; x < out_w; ++x) {
      const Index sx = std::min(in_w - 1, (2 * x + 1) * in_w / (2 * out_w));
      out(y, x) = labels(sy, sx);
    }
  }
  return out;
}

SegSample resize_sample(const SegSample& sample, int res) {
  if (res < 1) throw ParameterError("resize_sample: res must be >= 1");
  SegSample out;
  out.id = sample.id;
  out.num_classes = sample.num_classes;
  out.image = resize_bicubic(sample.image, res, res);
  out.labels = resize_nearest(sample.labels, res, res);
  return out;
}

AugmentPolicy AugmentPolicy::identity() {
  AugmentPolicy p;
  p.rotation_deg = {0, 0};
  p.shear_deg = {0, 0};
  p.scale = {1, 1};
  p.crop = 0;
  p.brightness = {1, 1};
  p.contrast = {1, 1};
  p.saturation = {1, 1};
  p.hue = {0, 0};
  return p;
}

namespace {

float luma(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

void clamp01(RgbImage& img) {
  for (auto& c : img.channels) c = c.cwiseMax(0.0f).cwiseMin(1.0f);
}

}  // namespace

RgbImage adjust_hue(const RgbImage& image, double shift) {
  if (shift == 0.0) return image;
  RgbImage out = image;
  const Index h = image.height(), w = image.width();
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const double r = image.channels[0](y, x), g = image.channels[1](y, x), b = image.channels[2](y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      double hue = 0.0;
      if (delta > 0) {
        if (mx == r) {
          hue = std::fmod((g - b) / delta, 6.0);
        } else if (mx == g) {
          hue = (b - r) / delta + 2.0;
        } else {
          hue = (r - g) / delta + 4.0;
        }
        hue /= 6.0;
      }
      const double sat = mx > 0 ? delta / mx : 0.0;
      hue = hue + shift;
      hue -= std::floor(hue);
      // HSV -> RGB
      const double hh = hue * 6.0;
      const double c = mx * sat;
      const double xx = c * (1.0 - std::abs(std::fmod(hh, 2.0) - 1.0));
      const double m = mx - c;
      double rr = 0, gg = 0, bb = 0;
      switch (static_cast<int>(hh) % 6) {
        case 0: rr = c; gg = xx; break;
        case 1: rr = xx; gg = c; break;
        case 2: gg = c; bb = xx; break;
        case 3: gg = xx; bb = c; break;
        case 4: rr = xx; bb = c; break;
        default: rr = c; bb = xx; break;
      }
      out.channels[0](y, x) = static_cast<float>(std::clamp(rr + m, 0.0, 1.0));
      out.channels[1](y, x) = static_cast<float>(std::clamp(gg + m, 0.0, 1.0));
      out.channels[2](y, x) = static_cast<float>(std::clamp(bb + m, 0.0, 1.0));
    }
  }
  return out;
}

SegSample augment(const SegSample& sample, const AugmentPolicy& policy, Rng& rng) {
  // All draws happen unconditionally and in a fixed order.
  const double theta = uniform(rng, policy.rotation_deg.lo, policy.rotation_deg.hi) * kDeg;
  const double shear = uniform(rng, policy.shear_deg.lo, policy.shear_deg.hi) * kDeg;
  const double scale = uniform(rng, policy.scale.lo, policy.scale.hi);
  const double crop_u = uniform01(rng);
  const double crop_v = uniform01(rng);
  const double brightness = uniform(rng, policy.brightness.lo, policy.brightness.hi);
  const double contrast = uniform(rng, policy.contrast.lo, policy.contrast.hi);
  const double saturation = uniform(rng, policy.saturation.lo, policy.saturation.hi);
  const double hue = uniform(rng, policy.hue.lo, policy.hue.hi);

  const Index in_h = sample.height(), in_w = sample.width();
  const Index out_h = policy.crop > 0 ? policy.crop : in_h;
  const Index out_w = policy.crop > 0 ? policy.crop : in_w;

  Eigen::Matrix2d rot;
  rot << std::cos(theta), -std::sin(theta), std::sin(theta), std::cos(theta);
  Eigen::Matrix2d sh;
  sh << 1.0, std::tan(shear), 0.0, 1.0;
  const Eigen::Matrix2d forward = scale * sh * rot;
  const Eigen::Matrix2d inverse = forward.inverse();

  // Crop window position inside the transformed image's extent.
  const double free_x = std::max(0.0, scale * static_cast<double>(in_w) - static_cast<double>(out_w)) / 2.0;
  const double free_y = std::max(0.0, scale * static_cast<double>(in_h) - static_cast<double>(out_h)) / 2.0;
  const Eigen::Vector2d offset((2.0 * crop_u - 1.0) * free_x, (2.0 * crop_v - 1.0) * free_y);
  const Eigen::Vector2d in_center(in_w / 2.0, in_h / 2.0);
  const Eigen::Vector2d out_center(out_w / 2.0, out_h / 2.0);

  SegSample out;
  out.id = sample.id;
  out.num_classes = sample.num_classes;
  out.image = RgbImage(out_h, out_w);
  out.labels = LabelMap::Zero(out_h, out_w);
  for (Index y = 0; y < out_h; ++y) {
    for (Index x = 0; x < out_w; ++x) {
      const Eigen::Vector2d q(x + 0.5, y + 0.5);
      const Eigen::Vector2d p = inverse * (q - out_center - offset) + in_center;
      if (p.x() < 0 || p.y() < 0 || p.x() >= static_cast<double>(in_w) || p.y() >= static_cast<double>(in_h)) {
        continue;
      }
      out.labels(y, x) = sample.labels(static_cast<Index>(p.y()), static_cast<Index>(p.x()));
      const double sx = std::clamp(p.x() - 0.5, 0.0, static_cast<double>(in_w - 1));
      const double sy = std::clamp(p.y() - 0.5, 0.0, static_cast<double>(in_h - 1));
      const auto x0 = static_cast<Index>(sx), y0 = static_cast<Index>(sy);
      const Index x1 = std::min(x0 + 1, in_w - 1), y1 = std::min(y0 + 1, in_h - 1);
      const double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
      for (std::size_t c = 0; c < 3; ++c) {
        const Plane& s = sample.image.channels[c];
        const double v = (s(y0, x0) * (1 - fx) + s(y0, x1) * fx) * (1 - fy) +
                         (s(y1, x0) * (1 - fx) + s(y1, x1) * fx) * fy;
        out.image.channels[c](y, x) = static_cast<float>(v);
      }
    }
  }

  RgbImage& img = out.image;
  if (brightness != 1.0) {
    for (auto& c : img.channels) c *= static_cast<float>(brightness);
    clamp01(img);
  }
  if (contrast != 1.0) {
    const float m = luma(img.channels[0].mean(), img.channels[1].mean(), img.channels[2].mean());
    for (auto& c : img.channels) c = m + static_cast<float>(contrast) * (c - m);
    clamp01(img);
  }
  if (saturation != 1.0) {
    const Plane gray = 0.299f * img.channels[0] + 0.587f * img.channels[1] + 0.114f * img.channels[2];
    for (auto& c : img.channels) c = gray + static_cast<float>(saturation) * (c - gray);
    clamp01(img);
  }
  img = adjust_hue(img, hue);
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t count, std::size_t batch_size,
                                                    std::uint64_t shuffle_seed) {
  if (batch_size < 1) throw ParameterError("batches: batch_size must be >= 1");
  std::vector<std::size_t> order(count);
  for (std::size_t i = 0; i < count; ++i) order[i] = i;
  Rng rng(shuffle_seed);
  for (std::size_t i = count; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < count; start += batch_size) {
    const std::size_t end = std::min(count, start + batch_size);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stack_images(const std::vector<const RgbImage*>& images) {
  if (images.empty()) throw DimensionError("stack_images: no images");
  const Index h = images[0]->height(), w = images[0]->width();
  const Index plane = h * w;
  typename Tensor<Scalar>::Array data(static_cast<Index>(images.size()) * 3 * plane);
  for (std::size_t b = 0; b < images.size(); ++b) {
    if (images[b]->height() != h || images[b]->width() != w) {
      throw DimensionError("stack_images: images differ in size");
    }
    for (std::size_t c = 0; c < 3; ++c) {
      const Plane& p = images[b]->channels[c];
      data.segment((static_cast<Index>(b) * 3 + static_cast<Index>(c)) * plane, plane) =
          Eigen::Map<const Eigen::ArrayXf>(p.data(), plane).template cast<Scalar>();
    }
  }
  return Tensor<Scalar>({static_cast<Index>(images.size()), 3, h, w}, std::move(data));
}

template <typename Scalar>
Batch<Scalar> make_batch(const std::vector<SegSample>& samples,
                         const std::vector<std::size_t>& indices) {
  Batch<Scalar> batch;
  std::vector<const RgbImage*> images;
  for (std::size_t i : indices) {
    images.push_back(&samples.at(i).image);
    batch.labels.push_back(samples[i].labels);
  }
  batch.images = stack_images<Scalar>(images);
  batch.indices = indices;
  return batch;
}

template <typename Scalar>
BatchStream<Scalar>::BatchStream(const std::vector<SegSample>& samples, std::size_t batch_size,
                                 std::uint64_t shuffle_seed)
    : samples_(&samples), order_(batch_indices(samples.size(), batch_size, shuffle_seed)) {}

template <typename Scalar>
std::optional<Batch<Scalar>> BatchStream<Scalar>::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  return make_batch<Scalar>(*samples_, order_[cursor_++]);
}

template Tensor<float> stack_images(const std::vector<const RgbImage*>&);
template Tensor<double> stack_images(const std::vector<const RgbImage*>&);
template Batch<float> make_batch(const std::vector<SegSample>&, const std::vector<std::size_t>&);
template Batch<double> make_batch(const std::vector<SegSample>&, const std::vector<std::size_t>&);
template class BatchStream<float>;
template class BatchStream<double>;

}  // namespace fpliif
