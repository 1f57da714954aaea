#include "fpliif/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fpliif/errors.hpp"
#include "fpliif/ops.hpp"
#include "fpliif/random.hpp"

namespace fpliif {

std::string to_string(DecodeMode mode) {
  return mode == DecodeMode::kEnsemble ? "ensemble" : "bilinear";
}

DecodeMode decode_mode_from_string(std::string_view name) {
  if (name == "ensemble") return DecodeMode::kEnsemble;
  if (name == "bilinear") return DecodeMode::kBilinear;
  throw ConfigError("unknown decode mode '" + std::string(name) + "' (ensemble|bilinear)");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid model config: " + what); };
  if (in_channels < 1) fail("in_channels must be >= 1");
  if (base_width < 1) fail("base_width must be >= 1");
  if (group_sizes.size() != 3) fail("exactly three resblock groups are required");
  for (int g : group_sizes) {
    if (g < 1) fail("every group needs at least one resblock");
  }
  if (rcmlp_dims.empty()) fail("rcmlp_dims must not be empty");
  for (int d : rcmlp_dims) {
    if (d < 1) fail("rcmlp widths must be >= 1");
  }
  if (head_width < 1) fail("head_width must be >= 1");
  if (head_depth < 1) fail("head_depth must be >= 1");
  if (num_classes < 2) fail("num_classes must be >= 2");
  if (input_resolution < 4 || input_resolution % 4 != 0) {
    fail("input_resolution must be a positive multiple of 4");
  }
  if (input_mean.size() != static_cast<std::size_t>(in_channels) ||
      input_std.size() != static_cast<std::size_t>(in_channels)) {
    fail("input_mean/input_std need one entry per input channel");
  }
  for (double s : input_std) {
    if (!(s > 0)) fail("input_std entries must be positive");
  }
}

template <typename Scalar>
void Model<Scalar>::add_parameter(std::string name, Tensor<Scalar> value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  value.set_requires_grad(true);
  index_.emplace(name, params_.size());
  names_.push_back(std::move(name));
  params_.push_back(std::move(value));
}

template <typename Scalar>
const Tensor<Scalar>& Model<Scalar>::param(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) throw ContractError("no parameter named " + std::string(name));
  return params_[it->second];
}

template <typename Scalar>
bool Model<Scalar>::has_param(std::string_view name) const {
  return index_.count(std::string(name)) != 0;
}

template <typename Scalar>
void Model<Scalar>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename Scalar>
Model<Scalar> Model<Scalar>::clone() const {
  Model out(config_);
  for (std::size_t i = 0; i < params_.size(); ++i) out.add_parameter(names_[i], params_[i].detach());
  return out;
}

template class Model<float>;
template class Model<double>;

std::vector<double> cell_coordinates(Index n) {
  if (n < 1) throw ParameterError("cell_coordinates: n must be >= 1");
  std::vector<double> c(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    c[static_cast<std::size_t>(i)] = -1.0 + static_cast<double>(2 * i + 1) / static_cast<double>(n);
  }
  return c;
}

QueryGrid make_query_grid(Index out_h, Index out_w) {
  const auto ys = cell_coordinates(out_h);
  const auto xs = cell_coordinates(out_w);
  QueryGrid q;
  q.out_h = out_h;
  q.out_w = out_w;
  q.coords.resize(out_h * out_w, 2);
  for (Index r = 0; r < out_h; ++r) {
    for (Index c = 0; c < out_w; ++c) {
      q.coords(r * out_w + c, 0) = xs[static_cast<std::size_t>(c)];
      q.coords(r * out_w + c, 1) = ys[static_cast<std::size_t>(r)];
    }
  }
  return q;
}

std::array<double, 4> ensemble_weights(const Eigen::Vector2d& query,
                                       const std::array<Eigen::Vector2d, 4>& centers) {
  // Opposite-corner area, factored per axis so a clamped (collapsed) axis
  // splits evenly instead of zeroing every term.
  auto axis = [](double q, double lo, double hi) {
    std::array<double, 2> w{std::abs(hi - q), std::abs(q - lo)};
    if (!(w[0] + w[1] > 0)) w = {0.5, 0.5};
    return w;
  };
  const auto wx = axis(query.x(), centers[0].x(), centers[1].x());
  const auto wy = axis(query.y(), centers[0].y(), centers[2].y());
  std::array<double, 4> area{wx[0] * wy[0], wx[1] * wy[0], wx[0] * wy[1], wx[1] * wy[1]};
  const double total = area[0] + area[1] + area[2] + area[3];
  for (double& a : area) a /= total;
  return area;
}

namespace {

// Kaiming-uniform over fan-in with negative slope a = sqrt(5):
// bound = sqrt(6 / ((1 + a^2) fan_in)) = 1 / sqrt(fan_in).
template <typename Scalar>
Tensor<Scalar> kaiming_uniform(Shape shape, Index fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  typename Tensor<Scalar>::Array a(numel(shape));
  for (Index i = 0; i < a.size(); ++i) a(i) = static_cast<Scalar>(uniform(rng, -bound, bound));
  return Tensor<Scalar>(std::move(shape), std::move(a));
}

template <typename Scalar>
void add_conv(Model<Scalar>& m, const std::string& name, Index cin, Index cout, Rng& rng) {
  m.add_parameter(name + ".weight", kaiming_uniform<Scalar>({cout, cin, 3, 3}, cin * 9, rng));
  m.add_parameter(name + ".bias", Tensor<Scalar>::zeros({cout}));
}

template <typename Scalar>
void add_linear(Model<Scalar>& m, const std::string& name, Index din, Index dout, Rng& rng) {
  m.add_parameter(name + ".weight", kaiming_uniform<Scalar>({dout, din}, din, rng));
  m.add_parameter(name + ".bias", Tensor<Scalar>::zeros({dout}));
}

template <typename Scalar>
void add_norm(Model<Scalar>& m, const std::string& name, Index c) {
  m.add_parameter(name + ".gamma", Tensor<Scalar>::full({c}, Scalar(1)));
  m.add_parameter(name + ".beta", Tensor<Scalar>::zeros({c}));
}

std::string block_name(std::size_t group, int block) {
  return "enc.group" + std::to_string(group) + ".block" + std::to_string(block);
}

template <typename Scalar>
Tensor<Scalar> conv(const Model<Scalar>& m, const std::string& name, const Tensor<Scalar>& x,
                    int stride) {
  return conv2d(x, m.param(name + ".weight"), m.param(name + ".bias"), stride, 1);
}

template <typename Scalar>
Tensor<Scalar> dense(const Model<Scalar>& m, const std::string& name, const Tensor<Scalar>& x) {
  return linear(x, m.param(name + ".weight"), m.param(name + ".bias"));
}

template <typename Scalar>
Tensor<Scalar> norm(const Model<Scalar>& m, const std::string& name, const Tensor<Scalar>& x) {
  return instance_norm(x, m.param(name + ".gamma"), m.param(name + ".beta"));
}

// conv -> IN -> ReLU -> conv -> IN, plus identity skip.
template <typename Scalar>
Tensor<Scalar> resblock(const Model<Scalar>& m, const std::string& name, const Tensor<Scalar>& x) {
  Tensor<Scalar> y = relu(norm(m, name + ".norm0", conv(m, name + ".conv0", x, 1)));
  y = norm(m, name + ".norm1", conv(m, name + ".conv1", y, 1));
  return add(y, x);
}

template <typename Scalar>
Tensor<Scalar> head(const Model<Scalar>& m, Tensor<Scalar> x) {
  for (int i = 0; i < m.config().head_depth; ++i) {
    x = relu(dense(m, "dec.head" + std::to_string(i), x));
  }
  return dense(m, "dec.out", x);
}

// Constant N x M x 2 block of per-query coordinates.
template <typename Scalar>
Tensor<Scalar> coordinate_block(const Eigen::Array<double, Eigen::Dynamic, 2, Eigen::RowMajor>& xy,
                                Index n) {
  const Index m = xy.rows();
  typename Tensor<Scalar>::Array a(n * m * 2);
  for (Index b = 0; b < n; ++b) {
    for (Index q = 0; q < m; ++q) {
      a((b * m + q) * 2) = static_cast<Scalar>(xy(q, 0));
      a((b * m + q) * 2 + 1) = static_cast<Scalar>(xy(q, 1));
    }
  }
  return Tensor<Scalar>({n, m, 2}, std::move(a));
}

}  // namespace

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng = make_rng(seed, Stream::kInit);
  Model<Scalar> m(config);
  const Index d = config.base_width;

  add_conv(m, "enc.stem", config.in_channels, d, rng);
  for (std::size_t g = 0; g < config.group_sizes.size(); ++g) {
    for (int b = 0; b < config.group_sizes[g]; ++b) {
      const std::string name = block_name(g, b);
      add_conv(m, name + ".conv0", d, d, rng);
      add_norm(m, name + ".norm0", d);
      add_conv(m, name + ".conv1", d, d, rng);
      add_norm(m, name + ".norm1", d);
    }
    if (g + 1 < config.group_sizes.size()) add_conv(m, "enc.down" + std::to_string(g), d, d, rng);
  }

  Index width = 9 * d;
  for (std::size_t i = 0; i < config.rcmlp_dims.size(); ++i) {
    add_linear(m, "dec.rcmlp" + std::to_string(i), width, config.rcmlp_dims[i], rng);
    width = config.rcmlp_dims[i];
  }
  width = config.head_inputs();
  for (int i = 0; i < config.head_depth; ++i) {
    add_linear(m, "dec.head" + std::to_string(i), width, config.head_width, rng);
    width = config.head_width;
  }
  add_linear(m, "dec.out", width, config.num_classes, rng);
  return m;
}

template <typename Scalar>
LatentGrid<Scalar> encode(const Model<Scalar>& model, const Tensor<Scalar>& image) {
  const ModelConfig& cfg = model.config();
  if (image.ndim() != 4 || image.dim(1) != cfg.in_channels) {
    throw DimensionError("encode: expected N x " + std::to_string(cfg.in_channels) +
                         " x H x W image, got " + to_string(image.shape()));
  }
  const Index h = image.dim(2), w = image.dim(3);
  if (h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0) {
    throw DimensionError("encode: H and W must be positive multiples of 4, got " +
                         to_string(image.shape()));
  }

  // Input standardization is a fixed affine map; it carries no parameters.
  typename Tensor<Scalar>::Array normalized = image.data();
  const Index plane = h * w;
  for (Index b = 0; b < image.dim(0); ++b) {
    for (Index c = 0; c < cfg.in_channels; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      auto seg = normalized.segment((b * cfg.in_channels + c) * plane, plane);
      seg = (seg - static_cast<Scalar>(cfg.input_mean[ci])) / static_cast<Scalar>(cfg.input_std[ci]);
    }
  }
  Tensor<Scalar> x(image.shape(), std::move(normalized));

  x = conv(model, "enc.stem", x, 1);
  for (std::size_t g = 0; g < cfg.group_sizes.size(); ++g) {
    Tensor<Scalar> group_input = x;
    for (int b = 0; b < cfg.group_sizes[g]; ++b) x = resblock(model, block_name(g, b), x);
    x = add(x, group_input);
    if (g + 1 < cfg.group_sizes.size()) x = conv(model, "enc.down" + std::to_string(g), x, 2);
  }
  return {x};
}

template <typename Scalar>
Tensor<Scalar> decode(const Model<Scalar>& model, const LatentGrid<Scalar>& latent, Index out_h,
                      Index out_w) {
  const ModelConfig& cfg = model.config();
  const Tensor<Scalar>& z = latent.features;
  if (z.ndim() != 4 || z.dim(1) != cfg.base_width) {
    throw DimensionError("decode: latent must be N x " + std::to_string(cfg.base_width) +
                         " x h x w, got " + to_string(z.shape()));
  }
  if (out_h < 1 || out_w < 1) throw ParameterError("decode: output size must be >= 1");
  const Index n = z.dim(0), lh = z.dim(2), lw = z.dim(3);
  const Index m = out_h * out_w;

  const Tensor<Scalar> g = global_avg_pool(z);
  Tensor<Scalar> u = to_channels_last(unfold3x3(z));
  for (std::size_t i = 0; i < cfg.rcmlp_dims.size(); ++i) {
    u = dense(model, "dec.rcmlp" + std::to_string(i), u);
    if (i + 1 < cfg.rcmlp_dims.size()) u = relu(u);
  }
  const Tensor<Scalar> reduced = to_channels_first(u, lh, lw);
  const Tensor<Scalar> global = repeat_rows(g, m);
  const QueryGrid queries = make_query_grid(out_h, out_w);

  if (cfg.decode_mode == DecodeMode::kBilinear) {
    const Tensor<Scalar> up = to_channels_last(resize_bilinear(reduced, out_h, out_w));
    const std::vector<Tensor<Scalar>> parts{up, global, coordinate_block<Scalar>(queries.coords, n)};
    return to_channels_first(head(model, concat<Scalar>(parts, -1)), out_h, out_w);
  }

  // Local ensemble: the four latent cells whose centers bracket each query.
  // Relative offsets are expressed in latent-grid units (normalized offset
  // times the grid extent), so one cell spacing is 2.
  using Coords = Eigen::Array<double, Eigen::Dynamic, 2, Eigen::RowMajor>;
  std::array<Coords, 4> centers, offsets;
  std::array<Eigen::ArrayXd, 4> weights;
  for (std::size_t t = 0; t < 4; ++t) {
    centers[t].resize(m, 2);
    offsets[t].resize(m, 2);
    weights[t].resize(m);
  }
  const auto cx = cell_coordinates(lw);
  const auto cy = cell_coordinates(lh);
  auto bracket = [](double coord, Index cells) {
    const double u = (coord + 1.0) * static_cast<double>(cells) / 2.0 - 0.5;
    const auto lo = static_cast<Index>(std::floor(u));
    return std::pair<Index, Index>{std::clamp<Index>(lo, 0, cells - 1),
                                   std::clamp<Index>(lo + 1, 0, cells - 1)};
  };
  for (Index q = 0; q < m; ++q) {
    const Eigen::Vector2d xq(queries.coords(q, 0), queries.coords(q, 1));
    const auto [x0, x1] = bracket(xq.x(), lw);
    const auto [y0, y1] = bracket(xq.y(), lh);
    const std::array<Eigen::Vector2d, 4> v{
        Eigen::Vector2d(cx[static_cast<std::size_t>(x0)], cy[static_cast<std::size_t>(y0)]),
        Eigen::Vector2d(cx[static_cast<std::size_t>(x1)], cy[static_cast<std::size_t>(y0)]),
        Eigen::Vector2d(cx[static_cast<std::size_t>(x0)], cy[static_cast<std::size_t>(y1)]),
        Eigen::Vector2d(cx[static_cast<std::size_t>(x1)], cy[static_cast<std::size_t>(y1)])};
    const auto wq = ensemble_weights(xq, v);
    for (std::size_t t = 0; t < 4; ++t) {
      centers[t].row(q) << v[t].x(), v[t].y();
      offsets[t].row(q) << (xq.x() - v[t].x()) * static_cast<double>(lw),
          (xq.y() - v[t].y()) * static_cast<double>(lh);
      weights[t](q) = wq[t];
    }
  }

  const Index c = cfg.num_classes;
  Tensor<Scalar> acc;
  for (std::size_t t = 0; t < 4; ++t) {
    Tensor<Scalar> where(Shape{m, 2}, centers[t].template cast<Scalar>().template reshaped<Eigen::RowMajor>());
    const Tensor<Scalar> feat = grid_sample_nearest(reduced, where);
    const std::vector<Tensor<Scalar>> parts{feat, global, coordinate_block<Scalar>(offsets[t], n)};
    const Tensor<Scalar> logits = head(model, concat<Scalar>(parts, -1));

    typename Tensor<Scalar>::Array wt(n * m * c);
    for (Index b = 0; b < n; ++b) {
      for (Index q = 0; q < m; ++q) {
        wt.segment((b * m + q) * c, c).setConstant(static_cast<Scalar>(weights[t](q)));
      }
    }
    const Tensor<Scalar> weighted = mul(logits, Tensor<Scalar>({n, m, c}, std::move(wt)));
    acc = acc.defined() ? add(acc, weighted) : weighted;
  }
  return to_channels_first(acc, out_h, out_w);
}

template <typename Scalar>
Tensor<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& image, Index out_h,
                       Index out_w) {
  return decode(model, encode(model, image), out_h, out_w);
}

template <typename Scalar>
Index count_params(const Model<Scalar>& model) {
  Index total = 0;
  for (const auto& p : model.parameters()) total += p.size();
  return total;
}

#define FPLIIF_INSTANTIATE_MODEL(S)                                                          \
  template Model<S> build_model(const ModelConfig&, std::uint64_t);                          \
  template LatentGrid<S> encode(const Model<S>&, const Tensor<S>&);                          \
  template Tensor<S> decode(const Model<S>&, const LatentGrid<S>&, Index, Index);            \
  template Tensor<S> forward(const Model<S>&, const Tensor<S>&, Index, Index);               \
  template Index count_params(const Model<S>&);

FPLIIF_INSTANTIATE_MODEL(float)
FPLIIF_INSTANTIATE_MODEL(double)

#undef FPLIIF_INSTANTIATE_MODEL

}  // namespace fpliif
