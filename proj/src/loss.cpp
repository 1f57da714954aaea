#include "fpliif/loss.hpp"

#include <cmath>
#include <string>

#include "fpliif/errors.hpp"
#include "fpliif/ops.hpp"

namespace fpliif {

void LossConfig::validate() const {
  if (!(lambda >= 0)) throw ConfigError("loss: lambda must be >= 0");
  if (!(tau > 0)) throw ConfigError("loss: tau must be > 0");
}

EdgeMask extract_edges(const LabelMap& labels) {
  const Index h = labels.rows(), w = labels.cols();
  EdgeMask edges = EdgeMask::Constant(h, w, false);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const std::int32_t v = labels(y, x);
      bool edge = false;
      for (Index dy = -1; dy <= 1 && !edge; ++dy) {
        for (Index dx = -1; dx <= 1 && !edge; ++dx) {
          const Index yy = y + dy, xx = x + dx;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          edge = labels(yy, xx) != v;
        }
      }
      edges(y, x) = edge;
    }
  }
  return edges;
}

EdgeMask dilate(const EdgeMask& mask, int radius) {
  const Index h = mask.rows(), w = mask.cols();
  EdgeMask out = EdgeMask::Constant(h, w, false);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (!mask(y, x)) continue;
      const Index y0 = std::max<Index>(0, y - radius), y1 = std::min<Index>(h - 1, y + radius);
      const Index x0 = std::max<Index>(0, x - radius), x1 = std::min<Index>(w - 1, x + radius);
      out.block(y0, x0, y1 - y0 + 1, x1 - x0 + 1).setConstant(true);
    }
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> masked_cross_entropy(const Tensor<Scalar>& logits,
                                    const std::vector<LabelMap>& labels,
                                    const std::vector<EdgeMask>& mask, double tau) {
  if (!(tau > 0)) throw ParameterError("cross_entropy: tau must be > 0");
  if (logits.ndim() != 4) {
    throw DimensionError("cross_entropy: logits must be N x C x H x W, got " + to_string(logits.shape()));
  }
  const Index n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const Index hw = h * w;
  if (static_cast<Index>(labels.size()) != n || (!mask.empty() && static_cast<Index>(mask.size()) != n)) {
    throw DimensionError("cross_entropy: need one label map (and mask) per sample");
  }
  for (Index b = 0; b < n; ++b) {
    const auto& l = labels[static_cast<std::size_t>(b)];
    if (l.rows() != h || l.cols() != w) {
      throw DimensionError("cross_entropy: label map " + std::to_string(l.rows()) + "x" +
                           std::to_string(l.cols()) + " does not match logits " +
                           to_string(logits.shape()));
    }
    if (!mask.empty()) {
      const auto& m = mask[static_cast<std::size_t>(b)];
      if (m.rows() != h || m.cols() != w) throw DimensionError("cross_entropy: mask size mismatch");
    }
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        const std::int32_t v = l(y, x);
        if (v < 0 || v >= c) {
          throw DataError("cross_entropy: label " + std::to_string(v) + " at sample " +
                          std::to_string(b) + " pixel (" + std::to_string(y) + ", " +
                          std::to_string(x) + ") outside [0, " + std::to_string(c) + ")");
        }
      }
    }
  }

  using Array = typename Tensor<Scalar>::Array;
  const Scalar t = static_cast<Scalar>(tau);
  // Per-pixel softmax probabilities are kept for the backward pass.
  auto probs = std::make_shared<Array>(logits.size());
  auto selected = std::make_shared<std::vector<Index>>();  // flat b*hw + p
  double total = 0.0;
  const Array& z = logits.data();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> col(c);
  for (Index b = 0; b < n; ++b) {
    const auto& l = labels[static_cast<std::size_t>(b)];
    for (Index p = 0; p < hw; ++p) {
      for (Index k = 0; k < c; ++k) col(k) = z((b * c + k) * hw + p) / t;
      const Scalar mx = col.maxCoeff();
      col = (col - mx).exp();
      const Scalar s = col.sum();
      for (Index k = 0; k < c; ++k) (*probs)((b * c + k) * hw + p) = col(k) / s;
      const bool use = mask.empty() || mask[static_cast<std::size_t>(b)](p / w, p % w);
      if (!use) continue;
      const std::int32_t label = l(p / w, p % w);
      // -log p_label = log(sum exp) - (z_label/t - max)
      total += static_cast<double>(std::log(s) - (z((b * c + label) * hw + p) / t - mx));
      selected->push_back(b * hw + p);
    }
  }
  const Index count = static_cast<Index>(selected->size());
  Array out(1);
  out(0) = count == 0 ? Scalar(0) : static_cast<Scalar>(total / static_cast<double>(count));

  // Label lookups are captured by value so the graph does not alias caller data.
  auto flat_labels = std::make_shared<std::vector<std::int32_t>>();
  flat_labels->reserve(static_cast<std::size_t>(count));
  for (Index s : *selected) {
    const auto& l = labels[static_cast<std::size_t>(s / hw)];
    flat_labels->push_back(l((s % hw) / w, (s % hw) % w));
  }
  auto backward = [c, hw, t, probs, selected, flat_labels](const Array& g,
                                                           std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    if (selected->empty()) return;
    const Scalar coeff = g(0) / (t * static_cast<Scalar>(selected->size()));
    for (std::size_t i = 0; i < selected->size(); ++i) {
      const Index s = (*selected)[i];
      const Index b = s / hw, p = s % hw;
      const std::int32_t label = (*flat_labels)[i];
      for (Index k = 0; k < c; ++k) {
        const Index idx = (b * c + k) * hw + p;
        gx(idx) += coeff * ((*probs)(idx) - (k == label ? Scalar(1) : Scalar(0)));
      }
    }
  };
  return Tensor<Scalar>::make_result({}, std::move(out), {logits}, std::move(backward),
                                     "cross_entropy");
}

template <typename Scalar>
Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, const std::vector<LabelMap>& labels,
                             double tau) {
  return masked_cross_entropy(logits, labels, {}, tau);
}

template <typename Scalar>
Tensor<Scalar> edge_cross_entropy(const Tensor<Scalar>& logits,
                                  const std::vector<LabelMap>& labels,
                                  const std::vector<EdgeMask>& edges, double tau) {
  if (edges.size() != labels.size()) {
    throw DimensionError("edge_cross_entropy: need one edge mask per label map");
  }
  return masked_cross_entropy(logits, labels, edges, tau);
}

template <typename Scalar>
LossTerms<Scalar> total_loss(const Tensor<Scalar>& logits, const std::vector<LabelMap>& labels,
                             const LossConfig& config) {
  config.validate();
  std::vector<EdgeMask> edges;
  edges.reserve(labels.size());
  for (const auto& l : labels) edges.push_back(extract_edges(l));

  LossTerms<Scalar> terms;
  if (config.include_background_in_loss) {
    terms.cce = cross_entropy(logits, labels, config.tau);
  } else {
    std::vector<EdgeMask> foreground;
    for (const auto& l : labels) foreground.push_back(l != 0);
    terms.cce = masked_cross_entropy(logits, labels, foreground, config.tau);
    for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = edges[i] && foreground[i];
  }
  terms.edge_cce = edge_cross_entropy(logits, labels, edges, config.tau);
  terms.total = add(terms.cce, scale(terms.edge_cce, static_cast<Scalar>(config.lambda)));
  return terms;
}

#define FPLIIF_INSTANTIATE_LOSS(S)                                                                \
  template Tensor<S> masked_cross_entropy(const Tensor<S>&, const std::vector<LabelMap>&,         \
                                          const std::vector<EdgeMask>&, double);                  \
  template Tensor<S> cross_entropy(const Tensor<S>&, const std::vector<LabelMap>&, double);       \
  template Tensor<S> edge_cross_entropy(const Tensor<S>&, const std::vector<LabelMap>&,           \
                                        const std::vector<EdgeMask>&, double);                    \
  template LossTerms<S> total_loss(const Tensor<S>&, const std::vector<LabelMap>&,                \
                                   const LossConfig&);

FPLIIF_INSTANTIATE_LOSS(float)
FPLIIF_INSTANTIATE_LOSS(double)

#undef FPLIIF_INSTANTIATE_LOSS

}  // namespace fpliif
