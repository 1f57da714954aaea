#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fpliif/tensor.hpp"

namespace fpliif {

enum class DecodeMode {
  kEnsemble,  // four-neighbour local ensemble with relative coordinates
  kBilinear,  // bilinear upsampling of the reduced latent, absolute coordinates
};

std::string to_string(DecodeMode mode);
DecodeMode decode_mode_from_string(std::string_view name);

struct ModelConfig {
  int in_channels = 3;
  int base_width = 64;                      // D
  std::vector<int> group_sizes{2, 6, 16};   // resblocks per group
  std::vector<int> rcmlp_dims{256, 64};     // reduce-channel MLP widths
  int head_width = 256;
  int head_depth = 4;                       // hidden layers before the class layer
  int num_classes = 12;                     // C, background included
  DecodeMode decode_mode = DecodeMode::kEnsemble;
  int input_resolution = 256;
  // Per-channel standardization applied to [0, 1] input; one entry per
  // input channel.
  std::vector<double> input_mean{0.485, 0.456, 0.406};
  std::vector<double> input_std{0.229, 0.224, 0.225};

  // Throws ConfigError.
  void validate() const;
  int latent_channels() const { return rcmlp_dims.back(); }
  int head_inputs() const { return latent_channels() + base_width + 2; }

  bool operator==(const ModelConfig&) const = default;
};

/// Named parameter set plus the configuration that shaped it. Parameter order
/// is the construction order of build_model and is what checkpoints store.
template <typename Scalar>
class Model {
 public:
  Model() = default;
  explicit Model(ModelConfig config) : config_(std::move(config)) {}

  const ModelConfig& config() const { return config_; }

  void add_parameter(std::string name, Tensor<Scalar> value);
  const Tensor<Scalar>& param(std::string_view name) const;
  bool has_param(std::string_view name) const;

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Tensor<Scalar>>& parameters() { return params_; }
  const std::vector<Tensor<Scalar>>& parameters() const { return params_; }

  void zero_grad();
  // Deep copy (fresh leaves, same values).
  Model clone() const;

 private:
  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<Scalar>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Encoder output Z: N x D x (H/4) x (W/4).
template <typename Scalar>
struct LatentGrid {
  Tensor<Scalar> features;
  Index height() const { return features.dim(2); }
  Index width() const { return features.dim(3); }
};

/// Normalized query coordinates for an out_h x out_w output: the cell
/// centers, row-major, each row holding (x, y).
struct QueryGrid {
  Index out_h = 0;
  Index out_w = 0;
  Eigen::Array<double, Eigen::Dynamic, 2, Eigen::RowMajor> coords;
};

/// c_i = -1 + (2i + 1) / n for i = 0..n-1.
std::vector<double> cell_coordinates(Index n);

QueryGrid make_query_grid(Index out_h, Index out_w);

/// Local-ensemble weights for a query and the four surrounding cell centers,
/// ordered (top-left, top-right, bottom-left, bottom-right) as (x, y) pairs.
/// Each weight is the area of the rectangle spanned by the query and the
/// diagonally opposite center, normalized to sum 1. A zero total area gives
/// 0.25 each.
std::array<double, 4> ensemble_weights(const Eigen::Vector2d& query,
                                       const std::array<Eigen::Vector2d, 4>& centers);

template <typename Scalar>
Model<Scalar> build_model(const ModelConfig& config, std::uint64_t seed);

/// image: N x in_channels x H x W with values in [0, 1]; H and W divisible by 4.
template <typename Scalar>
LatentGrid<Scalar> encode(const Model<Scalar>& model, const Tensor<Scalar>& image);

/// Class logits N x C x out_h x out_w decoded from a latent grid.
template <typename Scalar>
Tensor<Scalar> decode(const Model<Scalar>& model, const LatentGrid<Scalar>& latent, Index out_h,
                      Index out_w);

template <typename Scalar>
Tensor<Scalar> forward(const Model<Scalar>& model, const Tensor<Scalar>& image, Index out_h,
                       Index out_w);

template <typename Scalar>
Index count_params(const Model<Scalar>& model);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace fpliif
