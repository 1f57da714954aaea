#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "fpliif/tensor.hpp"

namespace fpliif {

/// Integer class map, H x W.
using LabelMap = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// Boolean per-pixel mask, H x W.
using EdgeMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct LossConfig {
  double lambda = 10.0;  // weight of the edge term
  double tau = 0.5;      // softmax temperature
  bool include_background_in_loss = true;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

/// A pixel is an edge iff one of its in-bounds 8-neighbours carries a
/// different label.
EdgeMask extract_edges(const LabelMap& labels);

// Pixels within `radius` (Chebyshev distance) of an edge pixel.
EdgeMask dilate(const EdgeMask& mask, int radius);

/// Mean over the selected pixels of -log softmax(logits / tau)[label].
/// logits: N x C x H x W, labels: N maps of H x W, mask: optional N maps
/// (empty vector selects every pixel). Returns 0 when nothing is selected.
template <typename Scalar>
Tensor<Scalar> masked_cross_entropy(const Tensor<Scalar>& logits,
                                    const std::vector<LabelMap>& labels,
                                    const std::vector<EdgeMask>& mask, double tau);

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<LabelMap>& labels,
                             double tau);

template <typename Scalar>
Tensor<Scalar> edge_cross_entropy(const Tensor<Scalar>& logits,
                                  const std::vector<LabelMap>& labels,
                                  const std::vector<EdgeMask>& edges, double tau);

template <typename Scalar>
struct LossTerms {
  Tensor<Scalar> total;
  Tensor<Scalar> cce;
  Tensor<Scalar> edge_cce;
};

/// L = L_cce + lambda * L_e_cce with edges taken from the labels.
template <typename Scalar>
LossTerms<Scalar> total_loss(const Tensor<Scalar>& logits, const std::vector<LabelMap>& labels,
                             const LossConfig& config);

}  // namespace fpliif
