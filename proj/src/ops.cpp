#include "fpliif/ops.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <string>

#include "fpliif/errors.hpp"

namespace fpliif {

namespace {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using MapM = Eigen::Map<Matrix<Scalar>>;
template <typename Scalar>
using CMapM = Eigen::Map<const Matrix<Scalar>>;

[[noreturn]] void dimension_error(const std::string& op, const std::string& what, const Shape& a,
                                  const Shape& b) {
  throw DimensionError(op + ": " + what + " (" + to_string(a) + " vs " + to_string(b) + ")");
}

void require_ndim(const std::string& op, const Shape& s, std::size_t n) {
  if (s.size() != n) {
    throw DimensionError(op + ": expected " + std::to_string(n) + "-d input, got " + to_string(s));
  }
}

// Output columns [lo, hi) whose tap ix = ox * stride - pad + kx lies inside [0, w).
inline std::pair<Index, Index> valid_range(Index w, Index ow, int stride, int pad, int kx) {
  const Index first = pad - kx;  // ox * stride >= first
  Index lo = first <= 0 ? 0 : (first + stride - 1) / stride;
  const Index last = w - 1 + pad - kx;  // ox * stride <= last
  Index hi = last < 0 ? 0 : last / stride + 1;
  lo = std::min(lo, ow);
  hi = std::clamp(hi, lo, ow);
  return {lo, hi};
}

// im2col for one image: column kk = (ci*k + ky)*k + kx of the P x K result
// holds the input sample under that kernel tap for every output position.
template <typename Scalar>
void im2col(const Scalar* x, Index cin, Index h, Index w, int k, int stride, int pad, Index oh,
            Index ow, Matrix<Scalar>& col) {
  col.resize(oh * ow, cin * k * k);
  for (Index ci = 0; ci < cin; ++ci) {
    const Scalar* plane = x + ci * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        Scalar* dst = col.col((ci * k + ky) * k + kx).data();
        const auto [lo, hi] = valid_range(w, ow, stride, pad, kx);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          Scalar* row = dst + oy * ow;
          if (iy < 0 || iy >= h) {
            std::fill(row, row + ow, Scalar(0));
            continue;
          }
          const Scalar* src = plane + iy * w - pad + kx;
          std::fill(row, row + lo, Scalar(0));
          if (stride == 1) {
            std::copy(src + lo, src + hi, row + lo);
          } else {
            for (Index ox = lo; ox < hi; ++ox) row[ox] = src[ox * stride];
          }
          std::fill(row + hi, row + ow, Scalar(0));
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const Matrix<Scalar>& col, Index cin, Index h, Index w, int k, int stride, int pad,
                Index oh, Index ow, Scalar* dx) {
  for (Index ci = 0; ci < cin; ++ci) {
    Scalar* plane = dx + ci * h * w;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const Scalar* src = col.col((ci * k + ky) * k + kx).data();
        const auto [lo, hi] = valid_range(w, ow, stride, pad, kx);
        for (Index oy = 0; oy < oh; ++oy) {
          const Index iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          Scalar* row = plane + iy * w - pad + kx;
          const Scalar* s = src + oy * ow;
          if (stride == 1) {
            for (Index ox = lo; ox < hi; ++ox) row[ox] += s[ox];
          } else {
            for (Index ox = lo; ox < hi; ++ox) row[ox * stride] += s[ox];
          }
        }
      }
    }
  }
}

struct AxisWeights {
  std::vector<Index> lo, hi;
  std::vector<double> frac;
};

AxisWeights bilinear_axis(Index in, Index out) {
  AxisWeights a;
  a.lo.resize(static_cast<std::size_t>(out));
  a.hi.resize(static_cast<std::size_t>(out));
  a.frac.resize(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const Index lo = static_cast<Index>(std::floor(src));
    const auto i = static_cast<std::size_t>(d);
    a.lo[i] = lo;
    a.hi[i] = std::min(lo + 1, in - 1);
    a.frac[i] = src - static_cast<double>(lo);
  }
  return a;
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias, int stride, int padding) {
  const std::string op = "conv2d";
  require_ndim(op, input.shape(), 4);
  require_ndim(op, weight.shape(), 4);
  const Index n = input.dim(0), cin = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index cout = weight.dim(0);
  const int k = static_cast<int>(weight.dim(2));
  if (weight.dim(1) != cin || weight.dim(3) != k) {
    dimension_error(op, "weight does not match input channels", input.shape(), weight.shape());
  }
  if (k % 2 == 0) throw DimensionError(op + ": kernel size must be odd, got " + std::to_string(k));
  if (stride < 1 || padding < 0) throw ParameterError(op + ": stride must be >= 1 and padding >= 0");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != cout)) {
    dimension_error(op, "bias does not match output channels", weight.shape(), bias.shape());
  }
  const Index oh = (h + 2 * padding - k) / stride + 1;
  const Index ow = (w + 2 * padding - k) / stride + 1;
  if (oh < 1 || ow < 1) dimension_error(op, "input smaller than kernel", input.shape(), weight.shape());
  const Index p = oh * ow;
  const Index kk = cin * k * k;

  typename Tensor<Scalar>::Array out(n * cout * p);
  CMapM<Scalar> wm(weight.data().data(), kk, cout);
  Matrix<Scalar> col;
  for (Index b = 0; b < n; ++b) {
    im2col(input.data().data() + b * cin * h * w, cin, h, w, k, stride, padding, oh, ow, col);
    MapM<Scalar> o(out.data() + b * cout * p, p, cout);
    o.noalias() = col * wm;
    if (bias.defined()) o.rowwise() += bias.data().matrix().transpose();
  }

  std::vector<Tensor<Scalar>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto backward = [n, cin, h, w, cout, k, stride, padding, oh, ow, p, kk](
                      const typename Tensor<Scalar>::Array& g, std::span<Tensor<Scalar>> in) {
    Tensor<Scalar>& x = in[0];
    Tensor<Scalar>& wt = in[1];
    CMapM<Scalar> wm(wt.data().data(), kk, cout);
    Matrix<Scalar> col;
    Matrix<Scalar> dcol;
    for (Index b = 0; b < n; ++b) {
      CMapM<Scalar> go(g.data() + b * cout * p, p, cout);
      if (wt.requires_grad()) {
        im2col(x.data().data() + b * cin * h * w, cin, h, w, k, stride, padding, oh, ow, col);
        MapM<Scalar> gw(wt.grad_storage().data(), kk, cout);
        gw.noalias() += col.transpose() * go;
      }
      if (in.size() > 2 && in[2].requires_grad()) {
        in[2].grad_storage().matrix() += go.colwise().sum().transpose();
      }
      if (x.requires_grad()) {
        dcol.noalias() = go * wm.transpose();
        col2im_add(dcol, cin, h, w, k, stride, padding, oh, ow,
                   x.grad_storage().data() + b * cin * h * w);
      }
    }
  };
  return Tensor<Scalar>::make_result({n, cout, oh, ow}, std::move(out), std::move(inputs),
                                     std::move(backward), op);
}

template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& input, const Tensor<Scalar>& weight,
                      const Tensor<Scalar>& bias) {
  const std::string op = "linear";
  require_ndim(op, weight.shape(), 2);
  if (input.ndim() < 1) throw DimensionError(op + ": input must have at least one axis");
  const Index din = input.dim(-1);
  const Index dout = weight.dim(0);
  if (weight.dim(1) != din) dimension_error(op, "last extent differs from Din", input.shape(), weight.shape());
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != dout)) {
    dimension_error(op, "bias does not match Dout", weight.shape(), bias.shape());
  }
  const Index rows = din == 0 ? 0 : input.size() / din;
  Shape shape = input.shape();
  shape.back() = dout;

  typename Tensor<Scalar>::Array out(rows * dout);
  CMapM<Scalar> x(input.data().data(), din, rows);
  CMapM<Scalar> wt(weight.data().data(), din, dout);
  MapM<Scalar> y(out.data(), dout, rows);
  y.noalias() = wt.transpose() * x;
  if (bias.defined()) y.colwise() += bias.data().matrix();

  std::vector<Tensor<Scalar>> inputs{input, weight};
  if (bias.defined()) inputs.push_back(bias);
  auto backward = [din, dout, rows](const typename Tensor<Scalar>::Array& g,
                                    std::span<Tensor<Scalar>> in) {
    CMapM<Scalar> gy(g.data(), dout, rows);
    CMapM<Scalar> x(in[0].data().data(), din, rows);
    CMapM<Scalar> wt(in[1].data().data(), din, dout);
    if (in[0].requires_grad()) {
      MapM<Scalar> gx(in[0].grad_storage().data(), din, rows);
      gx.noalias() += wt * gy;
    }
    if (in[1].requires_grad()) {
      MapM<Scalar> gw(in[1].grad_storage().data(), din, dout);
      gw.noalias() += x * gy.transpose();
    }
    if (in.size() > 2 && in[2].requires_grad()) {
      in[2].grad_storage().matrix() += gy.rowwise().sum();
    }
  };
  return Tensor<Scalar>::make_result(std::move(shape), std::move(out), std::move(inputs),
                                     std::move(backward), op);
}

template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& input, const Tensor<Scalar>& gamma,
                             const Tensor<Scalar>& beta, Scalar eps) {
  const std::string op = "instance_norm";
  require_ndim(op, input.shape(), 4);
  const Index n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
  if (gamma.size() != c || beta.size() != c) {
    dimension_error(op, "gamma/beta must have C elements", input.shape(), gamma.shape());
  }
  if (s < 1) throw DimensionError(op + ": empty spatial extent " + to_string(input.shape()));
  if (!(eps > 0)) throw ParameterError(op + ": eps must be positive");

  using Array = typename Tensor<Scalar>::Array;
  Array xhat(input.size());
  Array inv_std(n * c);
  Array out(input.size());
  for (Index plane = 0; plane < n * c; ++plane) {
    const Index ch = plane % c;
    auto x = input.data().segment(plane * s, s);
    const Scalar mu = x.mean();
    const Scalar var = (x - mu).square().mean();
    const Scalar inv = Scalar(1) / std::sqrt(var + eps);
    inv_std(plane) = inv;
    xhat.segment(plane * s, s) = (x - mu) * inv;
    out.segment(plane * s, s) = xhat.segment(plane * s, s) * gamma.data()(ch) + beta.data()(ch);
  }

  auto backward = [n, c, s, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                      const Array& g, std::span<Tensor<Scalar>> in) {
    const Tensor<Scalar>& gam = in[1];
    for (Index plane = 0; plane < n * c; ++plane) {
      const Index ch = plane % c;
      auto gy = g.segment(plane * s, s);
      auto xh = xhat.segment(plane * s, s);
      if (in[1].requires_grad()) in[1].grad_storage()(ch) += (gy * xh).sum();
      if (in[2].requires_grad()) in[2].grad_storage()(ch) += gy.sum();
      if (in[0].requires_grad()) {
        const Array gxh = gy * gam.data()(ch);
        const Scalar m1 = gxh.mean();
        const Scalar m2 = (gxh * xh).mean();
        in[0].grad_storage().segment(plane * s, s) += inv_std(plane) * (gxh - m1 - xh * m2);
      }
    }
  };
  return Tensor<Scalar>::make_result(input.shape(), std::move(out), {input, gamma, beta},
                                     std::move(backward), op);
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& input) {
  using Array = typename Tensor<Scalar>::Array;
  Array out = input.data().max(Scalar(0));
  auto backward = [](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    in[0].grad_storage() += (in[0].data() > Scalar(0)).select(g, Scalar(0));
  };
  return Tensor<Scalar>::make_result(input.shape(), std::move(out), {input}, std::move(backward),
                                     "relu");
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& input, Scalar temperature) {
  if (!(temperature > 0)) throw ParameterError("softmax: temperature must be > 0");
  if (input.ndim() < 1) throw DimensionError("softmax: input must have a class axis");
  using Array = typename Tensor<Scalar>::Array;
  const Index c = input.dim(-1);
  const Index rows = c == 0 ? 0 : input.size() / c;
  Array out(input.size());
  for (Index r = 0; r < rows; ++r) {
    auto x = input.data().segment(r * c, c);
    auto y = out.segment(r * c, c);
    y = ((x - x.maxCoeff()) / temperature).exp();
    y /= y.sum();
  }
  auto backward = [c, rows, temperature, y = Array(out)](const Array& g,
                                                         std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index r = 0; r < rows; ++r) {
      auto yr = y.segment(r * c, c);
      auto gr = g.segment(r * c, c);
      const Scalar dot = (yr * gr).sum();
      gx.segment(r * c, c) += yr * (gr - dot) / temperature;
    }
  };
  return Tensor<Scalar>::make_result(input.shape(), std::move(out), {input}, std::move(backward),
                                     "softmax");
}

template <typename Scalar>
Tensor<Scalar> global_avg_pool(const Tensor<Scalar>& input) {
  require_ndim("global_avg_pool", input.shape(), 4);
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1), s = input.dim(2) * input.dim(3);
  if (s < 1) throw DimensionError("global_avg_pool: empty spatial extent");
  Array out(n * c);
  for (Index plane = 0; plane < n * c; ++plane) out(plane) = input.data().segment(plane * s, s).mean();
  auto backward = [n, c, s](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index plane = 0; plane < n * c; ++plane) {
      gx.segment(plane * s, s) += g(plane) / static_cast<Scalar>(s);
    }
  };
  return Tensor<Scalar>::make_result({n, c}, std::move(out), {input}, std::move(backward),
                                     "global_avg_pool");
}

template <typename Scalar>
Tensor<Scalar> unfold3x3(const Tensor<Scalar>& input) {
  require_ndim("unfold3x3", input.shape(), 4);
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index hw = h * w;
  Array out = Array::Zero(n * 9 * c * hw);
  // Visits every (output element, source element) pair once; forward copies,
  // backward accumulates in the opposite direction.
  auto for_each_pair = [=](auto&& fn) {
    for (Index b = 0; b < n; ++b) {
      for (int k = 0; k < 9; ++k) {
        const Index dy = k / 3 - 1, dx = k % 3 - 1;
        for (Index ch = 0; ch < c; ++ch) {
          const Index src_plane = (b * c + ch) * hw;
          const Index dst_plane = ((b * 9 + k) * c + ch) * hw;
          for (Index y = 0; y < h; ++y) {
            const Index sy = y + dy;
            if (sy < 0 || sy >= h) continue;
            for (Index x = 0; x < w; ++x) {
              const Index sx = x + dx;
              if (sx < 0 || sx >= w) continue;
              fn(dst_plane + y * w + x, src_plane + sy * w + sx);
            }
          }
        }
      }
    }
  };
  const Array& src = input.data();
  for_each_pair([&](Index dst, Index s) { out(dst) = src(s); });
  auto backward = [for_each_pair](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for_each_pair([&](Index dst, Index s) { gx(s) += g(dst); });
  };
  return Tensor<Scalar>::make_result({n, 9 * c, h, w}, std::move(out), {input},
                                     std::move(backward), "unfold3x3");
}

template <typename Scalar>
Tensor<Scalar> resize_bilinear(const Tensor<Scalar>& input, Index out_h, Index out_w) {
  require_ndim("resize_bilinear", input.shape(), 4);
  if (out_h < 1 || out_w < 1) throw ParameterError("resize_bilinear: output size must be >= 1");
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  auto ay = std::make_shared<AxisWeights>(bilinear_axis(h, out_h));
  auto ax = std::make_shared<AxisWeights>(bilinear_axis(w, out_w));
  Array out(n * c * out_h * out_w);
  const Array& src = input.data();
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* s = src.data() + plane * h * w;
    Scalar* d = out.data() + plane * out_h * out_w;
    for (Index y = 0; y < out_h; ++y) {
      const auto iy = static_cast<std::size_t>(y);
      const Scalar fy = static_cast<Scalar>(ay->frac[iy]);
      const Scalar* r0 = s + ay->lo[iy] * w;
      const Scalar* r1 = s + ay->hi[iy] * w;
      for (Index x = 0; x < out_w; ++x) {
        const auto ix = static_cast<std::size_t>(x);
        const Scalar fx = static_cast<Scalar>(ax->frac[ix]);
        const Index x0 = ax->lo[ix], x1 = ax->hi[ix];
        const Scalar top = r0[x0] * (1 - fx) + r0[x1] * fx;
        const Scalar bot = r1[x0] * (1 - fx) + r1[x1] * fx;
        d[y * out_w + x] = top * (1 - fy) + bot * fy;
      }
    }
  }
  auto backward = [n, c, h, w, out_h, out_w, ay, ax](const Array& g,
                                                     std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index plane = 0; plane < n * c; ++plane) {
      Scalar* s = gx.data() + plane * h * w;
      const Scalar* d = g.data() + plane * out_h * out_w;
      for (Index y = 0; y < out_h; ++y) {
        const auto iy = static_cast<std::size_t>(y);
        const Scalar fy = static_cast<Scalar>(ay->frac[iy]);
        Scalar* r0 = s + ay->lo[iy] * w;
        Scalar* r1 = s + ay->hi[iy] * w;
        for (Index x = 0; x < out_w; ++x) {
          const auto ix = static_cast<std::size_t>(x);
          const Scalar fx = static_cast<Scalar>(ax->frac[ix]);
          const Index x0 = ax->lo[ix], x1 = ax->hi[ix];
          const Scalar v = d[y * out_w + x];
          r0[x0] += v * (1 - fx) * (1 - fy);
          r0[x1] += v * fx * (1 - fy);
          r1[x0] += v * (1 - fx) * fy;
          r1[x1] += v * fx * fy;
        }
      }
    }
  };
  return Tensor<Scalar>::make_result({n, c, out_h, out_w}, std::move(out), {input},
                                     std::move(backward), "resize_bilinear");
}

Index nearest_cell(double coord, Index n) {
  if (!std::isfinite(coord)) throw InputError("grid_sample_nearest: non-finite coordinate");
  // u is the coordinate in cell units relative to cell 0's center; ceil(u - 0.5)
  // rounds half down so the lower index wins ties.
  const double u = (coord + 1.0) * static_cast<double>(n) / 2.0 - 0.5;
  const auto i = static_cast<Index>(std::ceil(u - 0.5));
  return std::clamp<Index>(i, 0, n - 1);
}

template <typename Scalar>
Tensor<Scalar> grid_sample_nearest(const Tensor<Scalar>& input, const Tensor<Scalar>& coords) {
  require_ndim("grid_sample_nearest", input.shape(), 4);
  if (coords.ndim() != 2 || coords.dim(1) != 2) {
    dimension_error("grid_sample_nearest", "coords must be M x 2", input.shape(), coords.shape());
  }
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const Index m = coords.dim(0);
  auto cells = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(m));
  for (Index q = 0; q < m; ++q) {
    const Index cx = nearest_cell(static_cast<double>(coords.data()(2 * q)), w);
    const Index cy = nearest_cell(static_cast<double>(coords.data()(2 * q + 1)), h);
    (*cells)[static_cast<std::size_t>(q)] = cy * w + cx;
  }
  const Index hw = h * w;
  Array out(n * m * c);
  const Array& src = input.data();
  for (Index b = 0; b < n; ++b) {
    for (Index q = 0; q < m; ++q) {
      const Index cell = (*cells)[static_cast<std::size_t>(q)];
      Scalar* dst = out.data() + (b * m + q) * c;
      for (Index ch = 0; ch < c; ++ch) dst[ch] = src((b * c + ch) * hw + cell);
    }
  }
  auto backward = [n, c, hw, m, cells](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index b = 0; b < n; ++b) {
      for (Index q = 0; q < m; ++q) {
        const Index cell = (*cells)[static_cast<std::size_t>(q)];
        const Scalar* gq = g.data() + (b * m + q) * c;
        for (Index ch = 0; ch < c; ++ch) gx((b * c + ch) * hw + cell) += gq[ch];
      }
    }
  };
  return Tensor<Scalar>::make_result({n, m, c}, std::move(out), {input}, std::move(backward),
                                     "grid_sample_nearest");
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) dimension_error("add", "shape mismatch", a.shape(), b.shape());
  using Array = typename Tensor<Scalar>::Array;
  auto backward = [](const Array& g, std::span<Tensor<Scalar>> in) {
    for (auto& t : in) {
      if (t.requires_grad()) t.grad_storage() += g;
    }
  };
  return Tensor<Scalar>::make_result(a.shape(), a.data() + b.data(), {a, b}, std::move(backward),
                                     "add");
}

template <typename Scalar>
Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (a.shape() != b.shape()) dimension_error("mul", "shape mismatch", a.shape(), b.shape());
  using Array = typename Tensor<Scalar>::Array;
  auto backward = [](const Array& g, std::span<Tensor<Scalar>> in) {
    if (in[0].requires_grad()) in[0].grad_storage() += g * in[1].data();
    if (in[1].requires_grad()) in[1].grad_storage() += g * in[0].data();
  };
  return Tensor<Scalar>::make_result(a.shape(), a.data() * b.data(), {a, b}, std::move(backward),
                                     "mul");
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& a, Scalar factor) {
  using Array = typename Tensor<Scalar>::Array;
  auto backward = [factor](const Array& g, std::span<Tensor<Scalar>> in) {
    if (in[0].requires_grad()) in[0].grad_storage() += g * factor;
  };
  return Tensor<Scalar>::make_result(a.shape(), a.data() * factor, {a}, std::move(backward),
                                     "scale");
}

template <typename Scalar>
Tensor<Scalar> concat(std::span<const Tensor<Scalar>> parts, int axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = parts[0].shape();
  const int nd = static_cast<int>(first.size());
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimensionError("concat: axis out of range for " + to_string(first));
  const auto ax = static_cast<std::size_t>(axis);
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= first[i];
  for (std::size_t i = ax + 1; i < first.size(); ++i) inner *= first[i];
  std::vector<Index> widths;
  Index total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == ax) || s[i] == first[i];
    if (!ok) dimension_error("concat", "non-concatenated extents differ", first, s);
    widths.push_back(s[ax] * inner);
    total += s[ax];
  }
  using Array = typename Tensor<Scalar>::Array;
  const Index row = total * inner;
  Array out(outer * row);
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index wk = widths[k];
    for (Index o = 0; o < outer; ++o) {
      out.segment(o * row + offset, wk) = parts[k].data().segment(o * wk, wk);
    }
    offset += wk;
  }
  Shape shape = first;
  shape[ax] = total;
  auto backward = [outer, row, widths](const Array& g, std::span<Tensor<Scalar>> in) {
    Index off = 0;
    for (std::size_t k = 0; k < in.size(); ++k) {
      const Index wk = widths[k];
      if (in[k].requires_grad()) {
        auto& gk = in[k].grad_storage();
        for (Index o = 0; o < outer; ++o) gk.segment(o * wk, wk) += g.segment(o * row + off, wk);
      }
      off += wk;
    }
  };
  return Tensor<Scalar>::make_result(std::move(shape), std::move(out),
                                     std::vector<Tensor<Scalar>>(parts.begin(), parts.end()),
                                     std::move(backward), "concat");
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const std::vector<Tensor<Scalar>> parts{a, b};
  return concat<Scalar>(parts, 1);
}

template <typename Scalar>
Tensor<Scalar> slice(const Tensor<Scalar>& input, int axis, Index begin, Index end) {
  const Shape& s = input.shape();
  const int nd = input.ndim();
  if (axis < 0) axis += nd;
  if (axis < 0 || axis >= nd) throw DimensionError("slice: axis out of range for " + to_string(s));
  const auto ax = static_cast<std::size_t>(axis);
  if (begin < 0 || end > s[ax] || begin > end) {
    throw DimensionError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") outside " + to_string(s));
  }
  Index outer = 1, inner = 1;
  for (std::size_t i = 0; i < ax; ++i) outer *= s[i];
  for (std::size_t i = ax + 1; i < s.size(); ++i) inner *= s[i];
  const Index row = s[ax] * inner;
  const Index width = (end - begin) * inner;
  const Index off = begin * inner;
  using Array = typename Tensor<Scalar>::Array;
  Array out(outer * width);
  for (Index o = 0; o < outer; ++o) out.segment(o * width, width) = input.data().segment(o * row + off, width);
  Shape shape = s;
  shape[ax] = end - begin;
  auto backward = [outer, row, width, off](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index o = 0; o < outer; ++o) gx.segment(o * row + off, width) += g.segment(o * width, width);
  };
  return Tensor<Scalar>::make_result(std::move(shape), std::move(out), {input}, std::move(backward),
                                     "slice");
}

template <typename Scalar>
Tensor<Scalar> repeat_rows(const Tensor<Scalar>& input, Index m) {
  require_ndim("repeat_rows", input.shape(), 2);
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1);
  Array out(n * m * c);
  for (Index b = 0; b < n; ++b) {
    for (Index q = 0; q < m; ++q) out.segment((b * m + q) * c, c) = input.data().segment(b * c, c);
  }
  auto backward = [n, m, c](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    auto& gx = in[0].grad_storage();
    for (Index b = 0; b < n; ++b) {
      for (Index q = 0; q < m; ++q) gx.segment(b * c, c) += g.segment((b * m + q) * c, c);
    }
  };
  return Tensor<Scalar>::make_result({n, m, c}, std::move(out), {input}, std::move(backward),
                                     "repeat_rows");
}

namespace {

// Batched transpose of a rows x cols block per sample.
template <typename Scalar>
void transpose_blocks(const Scalar* src, Scalar* dst, Index n, Index rows, Index cols, bool add) {
  for (Index b = 0; b < n; ++b) {
    CMapM<Scalar> s(src + b * rows * cols, cols, rows);  // row-major rows x cols
    MapM<Scalar> d(dst + b * rows * cols, rows, cols);   // row-major cols x rows
    if (add) {
      d += s.transpose();
    } else {
      d = s.transpose();
    }
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> to_channels_last(const Tensor<Scalar>& input) {
  require_ndim("to_channels_last", input.shape(), 4);
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(1), hw = input.dim(2) * input.dim(3);
  Array out(input.size());
  transpose_blocks(input.data().data(), out.data(), n, c, hw, false);
  auto backward = [n, c, hw](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    transpose_blocks(g.data(), in[0].grad_storage().data(), n, hw, c, true);
  };
  return Tensor<Scalar>::make_result({n, hw, c}, std::move(out), {input}, std::move(backward),
                                     "to_channels_last");
}

template <typename Scalar>
Tensor<Scalar> to_channels_first(const Tensor<Scalar>& input, Index h, Index w) {
  require_ndim("to_channels_first", input.shape(), 3);
  if (input.dim(1) != h * w) {
    dimension_error("to_channels_first", "row count differs from h*w", input.shape(), {h, w});
  }
  using Array = typename Tensor<Scalar>::Array;
  const Index n = input.dim(0), c = input.dim(2), hw = h * w;
  Array out(input.size());
  transpose_blocks(input.data().data(), out.data(), n, hw, c, false);
  auto backward = [n, c, hw](const Array& g, std::span<Tensor<Scalar>> in) {
    if (!in[0].requires_grad()) return;
    transpose_blocks(g.data(), in[0].grad_storage().data(), n, c, hw, true);
  };
  return Tensor<Scalar>::make_result({n, c, h, w}, std::move(out), {input}, std::move(backward),
                                     "to_channels_first");
}

template <typename Scalar>
Tensor<Scalar> reshape(const Tensor<Scalar>& input, Shape shape) {
  if (numel(shape) != input.size()) dimension_error("reshape", "element count differs", input.shape(), shape);
  using Array = typename Tensor<Scalar>::Array;
  auto backward = [](const Array& g, std::span<Tensor<Scalar>> in) {
    if (in[0].requires_grad()) in[0].grad_storage() += g;
  };
  return Tensor<Scalar>::make_result(std::move(shape), input.data(), {input}, std::move(backward),
                                     "reshape");
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& input) {
  using Array = typename Tensor<Scalar>::Array;
  Array out(1);
  out(0) = input.data().sum();
  auto backward = [](const Array& g, std::span<Tensor<Scalar>> in) {
    if (in[0].requires_grad()) in[0].grad_storage() += g(0);
  };
  return Tensor<Scalar>::make_result({}, std::move(out), {input}, std::move(backward), "sum");
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& input) {
  return scale(sum(input), Scalar(1) / static_cast<Scalar>(std::max<Index>(input.size(), 1)));
}

#define FPLIIF_INSTANTIATE_OPS(S)                                                                 \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int, int);      \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                \
  template Tensor<S> instance_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, S);      \
  template Tensor<S> relu(const Tensor<S>&);                                                      \
  template Tensor<S> softmax(const Tensor<S>&, S);                                                \
  template Tensor<S> global_avg_pool(const Tensor<S>&);                                           \
  template Tensor<S> unfold3x3(const Tensor<S>&);                                                 \
  template Tensor<S> resize_bilinear(const Tensor<S>&, Index, Index);                             \
  template Tensor<S> grid_sample_nearest(const Tensor<S>&, const Tensor<S>&);                     \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                     \
  template Tensor<S> scale(const Tensor<S>&, S);                                                  \
  template Tensor<S> concat(std::span<const Tensor<S>>, int);                                     \
  template Tensor<S> concat_channels(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> slice(const Tensor<S>&, int, Index, Index);                                  \
  template Tensor<S> repeat_rows(const Tensor<S>&, Index);                                        \
  template Tensor<S> to_channels_last(const Tensor<S>&);                                          \
  template Tensor<S> to_channels_first(const Tensor<S>&, Index, Index);                           \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                            \
  template Tensor<S> sum(const Tensor<S>&);                                                       \
  template Tensor<S> mean(const Tensor<S>&);

FPLIIF_INSTANTIATE_OPS(float)
FPLIIF_INSTANTIATE_OPS(double)

#undef FPLIIF_INSTANTIATE_OPS

}  // namespace fpliif
