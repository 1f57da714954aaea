#include <doctest.h>

#include <cmath>
#include <vector>

#include "fpliif/errors.hpp"
#include "fpliif/gradcheck.hpp"
#include "fpliif/ops.hpp"
#include "fpliif/random.hpp"

using namespace fpliif;

namespace {

template <typename S>
Tensor<S> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0,
                        bool requires_grad = false) {
  Rng rng(seed);
  typename Tensor<S>::Array a(numel(shape));
  for (Index i = 0; i < a.size(); ++i) a(i) = static_cast<S>(uniform(rng, lo, hi));
  return Tensor<S>(std::move(shape), std::move(a), requires_grad);
}

// Six nested loops, double accumulation.
std::vector<double> conv_reference(const TensorF& x, const TensorF& w, const TensorF& b, int stride,
                                   int pad, std::vector<double>* abs_scale = nullptr) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index cout = w.dim(0), k = w.dim(2);
  const Index oh = (h + 2 * pad - k) / stride + 1, ow = (wd + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(n * cout * oh * ow));
  if (abs_scale) abs_scale->assign(out.size(), 0.0);
  for (Index bn = 0; bn < n; ++bn)
    for (Index co = 0; co < cout; ++co)
      for (Index oy = 0; oy < oh; ++oy)
        for (Index ox = 0; ox < ow; ++ox) {
          double acc = b.data()(co), mag = std::abs(b.data()(co));
          for (Index ci = 0; ci < cin; ++ci)
            for (Index ky = 0; ky < k; ++ky)
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = oy * stride - pad + ky, ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                const double t = static_cast<double>(x.data()(((bn * cin + ci) * h + iy) * wd + ix)) *
                                 w.data()(((co * cin + ci) * k + ky) * k + kx);
                acc += t;
                mag += std::abs(t);
              }
          const auto idx = static_cast<std::size_t>(((bn * cout + co) * oh + oy) * ow + ox);
          out[idx] = acc;
          if (abs_scale) (*abs_scale)[idx] = mag;
        }
  return out;
}

double max_abs_diff(const TensorD& a, const TensorD& b) { return (a.data() - b.data()).abs().maxCoeff(); }

}  // namespace

TEST_CASE("conv2d zero-padding arithmetic and identity kernel") {
  const auto x = TensorF::full({1, 1, 3, 3}, 1.0f);
  const auto w = TensorF::full({1, 1, 3, 3}, 1.0f);
  const auto b = TensorF::zeros({1});
  const auto y = conv2d(x, w, b, 1, 1);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.data()(4) == 9.0f);
  CHECK(y.data()(0) == 4.0f);
  CHECK(y.data()(2) == 4.0f);
  CHECK(y.data()(6) == 4.0f);
  CHECK(y.data()(8) == 4.0f);

  auto id = TensorF::zeros({2, 2, 3, 3});
  id.data()(((0 * 2 + 0) * 3 + 1) * 3 + 1) = 1.0f;
  id.data()(((1 * 2 + 1) * 3 + 1) * 3 + 1) = 1.0f;
  const auto xin = random_tensor<float>({2, 2, 5, 7}, 3);
  const auto yid = conv2d(xin, id, TensorF::zeros({2}), 1, 1);
  CHECK((yid.data() == xin.data()).all());
}

TEST_CASE("conv2d matches a nested-loop reference") {
  struct Case {
    Shape x;
    Index cout;
    int k, stride, pad;
  };
  const std::vector<Case> cases{{{2, 3, 8, 8}, 4, 3, 1, 1},
                                {{4, 8, 16, 16}, 8, 3, 1, 1},
                                {{3, 5, 9, 11}, 6, 3, 2, 1},
                                {{1, 2, 7, 6}, 3, 1, 1, 0},
                                {{2, 4, 10, 10}, 2, 5, 2, 2}};
  std::uint64_t seed = 100;
  for (const auto& c : cases) {
    const auto x = random_tensor<float>(c.x, ++seed);
    const auto w = random_tensor<float>({c.cout, c.x[1], c.k, c.k}, ++seed);
    const auto b = random_tensor<float>({c.cout}, ++seed);
    const auto y = conv2d(x, w, b, c.stride, c.pad);
    std::vector<double> scale;
    const auto ref = conv_reference(x, w, b, c.stride, c.pad, &scale);
    REQUIRE(static_cast<std::size_t>(y.size()) == ref.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(y.data()(static_cast<Index>(i)) - ref[i]) / std::max(1.0, scale[i]));
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("conv2d rejects mismatched shapes with both shapes in the message") {
  const auto x = TensorF::zeros({1, 3, 8, 8});
  const auto w = TensorF::zeros({4, 2, 3, 3});
  try {
    conv2d(x, w, TensorF::zeros({4}), 1, 1);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[1x3x8x8]") != std::string::npos);
    CHECK(msg.find("[4x2x3x3]") != std::string::npos);
  }
}

TEST_CASE("linear: hand arithmetic, identity, loop oracle, mismatch") {
  const auto x = TensorF::from_values({1, 2}, {1, 2});
  const auto w = TensorF::from_values({2, 2}, {1, 1, 1, -1});
  const auto y = linear(x, w, TensorF::zeros({2}));
  CHECK(y.data()(0) == 3.0f);
  CHECK(y.data()(1) == -1.0f);

  const auto xi = random_tensor<float>({3, 4}, 9);
  auto eye = TensorF::zeros({4, 4});
  for (int i = 0; i < 4; ++i) eye.data()(i * 4 + i) = 1.0f;
  CHECK((linear(xi, eye, TensorF::zeros({4})).data() == xi.data()).all());

  const auto xr = random_tensor<float>({5, 130}, 11);
  const auto wr = random_tensor<float>({7, 130}, 12);
  const auto br = random_tensor<float>({7}, 13);
  const auto yr = linear(xr, wr, br);
  for (Index r = 0; r < 5; ++r) {
    for (Index o = 0; o < 7; ++o) {
      double acc = br.data()(o), mag = std::abs(br.data()(o));
      for (Index i = 0; i < 130; ++i) {
        const double t = static_cast<double>(xr.data()(r * 130 + i)) * wr.data()(o * 130 + i);
        acc += t;
        mag += std::abs(t);
      }
      CHECK(std::abs(yr.data()(r * 7 + o) - acc) <= 1e-6 * std::max(1.0, mag));
    }
  }
  CHECK_THROWS_AS(linear(xr, TensorF::zeros({7, 129}), br), DimensionError);
}

TEST_CASE("instance_norm degenerate cases and moments") {
  const auto gamma = TensorD::full({2}, 1.0);
  const auto beta = TensorD::zeros({2});
  const auto constant = TensorD::full({1, 2, 4, 4}, 3.0);
  CHECK(instance_norm(constant, gamma, beta).data().abs().maxCoeff() == 0.0);

  const auto x = random_tensor<double>({1, 2, 4, 4}, 5);
  const auto flat = instance_norm(x, TensorD::zeros({2}), TensorD::from_values({2}, {0.5, -2.0}));
  for (Index i = 0; i < 16; ++i) {
    CHECK(flat.data()(i) == 0.5);
    CHECK(flat.data()(16 + i) == -2.0);
  }

  const auto xf = random_tensor<float>({2, 4, 6, 6}, 21, -3.0, 5.0);
  const auto y = instance_norm(xf, TensorF::full({4}, 1.0f), TensorF::zeros({4}));
  for (Index p = 0; p < 8; ++p) {
    const auto seg = y.data().segment(p * 36, 36).cast<double>();
    const double mu = seg.mean();
    const double var = (seg - mu).square().mean();
    CHECK(std::abs(mu) <= 1e-6);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
}

TEST_CASE("relu values and gradient mask") {
  const auto y = relu(TensorF::from_values({3}, {-1, 0, 2}));
  CHECK(y.data()(0) == 0.0f);
  CHECK(y.data()(1) == 0.0f);
  CHECK(y.data()(2) == 2.0f);
  CHECK(relu(TensorF::full({4}, -2.0f)).data().abs().maxCoeff() == 0.0f);

  // Points kept away from the kink so finite differences are smooth.
  auto x = random_tensor<double>({20}, 8);
  for (Index i = 0; i < x.size(); ++i) x.data()(i) += x.data()(i) >= 0 ? 0.1 : -0.1;
  x.set_requires_grad(true);
  sum(relu(x)).backward();
  for (Index i = 0; i < x.size(); ++i) CHECK(x.grad()(i) == (x.data()(i) > 0 ? 1.0 : 0.0));
  CHECK(grad_check([](const TensorD& p) { return sum(mul(relu(p), p)); }, x.detach()) <= 1e-8);
}

TEST_CASE("softmax: symmetry, direct formula, sums, argmax invariance, bad temperature") {
  const auto half = softmax(TensorD::from_values({2}, {0, 0}), 1.0);
  CHECK(half.data()(0) == doctest::Approx(0.5).epsilon(1e-15));

  const auto s = softmax(TensorD::from_values({3}, {1, 2, 3}), 0.5);
  const double z = std::exp(2.0) + std::exp(4.0) + std::exp(6.0);
  CHECK(std::abs(s.data()(0) - std::exp(2.0) / z) <= 1e-6);
  CHECK(std::abs(s.data()(1) - std::exp(4.0) / z) <= 1e-6);
  CHECK(std::abs(s.data()(2) - std::exp(6.0) / z) <= 1e-6);

  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto l = random_tensor<float>({6, 9}, 300 + seed, -40.0, 40.0);
    for (float tau : {0.25f, 0.5f, 1.0f, 2.0f}) {
      const auto p = softmax(l, tau);
      for (Index r = 0; r < 6; ++r) {
        CHECK(std::abs(p.data().segment(r * 9, 9).sum() - 1.0f) <= 1e-5f);
        Index a = 0, b = 0;
        l.data().segment(r * 9, 9).maxCoeff(&a);
        p.data().segment(r * 9, 9).maxCoeff(&b);
        CHECK(a == b);
      }
    }
  }
  CHECK_THROWS_AS(softmax(TensorD::zeros({2}), 0.0), ParameterError);
  CHECK_THROWS_AS(softmax(TensorD::zeros({2}), -1.0), ParameterError);
}

TEST_CASE("global_avg_pool: constant, 1x1, loop mean") {
  CHECK(global_avg_pool(TensorF::full({1, 2, 3, 3}, 4.0f)).data()(1) == doctest::Approx(4.0));
  const auto one = random_tensor<float>({2, 3, 1, 1}, 1);
  CHECK((global_avg_pool(one).data() == one.data()).all());
  const auto x = random_tensor<double>({2, 3, 5, 4}, 2);
  const auto g = global_avg_pool(x);
  for (Index p = 0; p < 6; ++p) {
    double acc = 0;
    for (Index i = 0; i < 20; ++i) acc += x.data()(p * 20 + i);
    CHECK(std::abs(g.data()(p) - acc / 20) <= 1e-6);
  }
}

TEST_CASE("unfold3x3: border padding, constant interior, gather oracle, center block") {
  const auto v = TensorF::from_values({1, 1, 1, 1}, {7});
  const auto u = unfold3x3(v);
  REQUIRE(u.shape() == Shape{1, 9, 1, 1});
  for (Index k = 0; k < 9; ++k) CHECK(u.data()(k) == (k == 4 ? 7.0f : 0.0f));

  const auto c = unfold3x3(TensorF::full({1, 1, 6, 6}, 2.5f));
  for (Index k = 0; k < 9; ++k) CHECK(c.data()(k * 36 + 2 * 6 + 3) == 2.5f);

  const auto x = random_tensor<float>({1, 2, 4, 4}, 17);
  const auto g = unfold3x3(x);
  for (Index k = 0; k < 9; ++k) {
    const Index dy = k / 3 - 1, dx = k % 3 - 1;
    for (Index ch = 0; ch < 2; ++ch)
      for (Index y = 0; y < 4; ++y)
        for (Index xx = 0; xx < 4; ++xx) {
          const Index sy = y + dy, sx = xx + dx;
          const float expect = (sy < 0 || sy >= 4 || sx < 0 || sx >= 4) ? 0.0f : x.data()((ch * 4 + sy) * 4 + sx);
          CHECK(g.data()(((k * 2 + ch) * 4 + y) * 4 + xx) == expect);
        }
  }
  const auto big = random_tensor<float>({2, 3, 5, 6}, 18);
  const auto center = slice(unfold3x3(big), 1, 4 * 3, 5 * 3);
  CHECK((center.data() == big.data()).all());
}

TEST_CASE("resize_bilinear: identity, constant, hand weights") {
  const auto x = random_tensor<float>({1, 2, 5, 3}, 4);
  CHECK((resize_bilinear(x, 5, 3).data() == x.data()).all());
  const auto c = resize_bilinear(TensorF::full({1, 1, 3, 3}, 1.5f), 7, 4);
  CHECK((c.data() == 1.5f).all());

  const auto small = TensorD::from_values({1, 1, 2, 2}, {0, 1, 2, 3});
  const auto up = resize_bilinear(small, 4, 4);
  // Source coordinates -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1).
  const double wts[4] = {0.0, 0.25, 0.75, 1.0};
  for (int y = 0; y < 4; ++y) {
    for (int xx = 0; xx < 4; ++xx) {
      const double top = 0.0 * (1 - wts[xx]) + 1.0 * wts[xx];
      const double bot = 2.0 * (1 - wts[xx]) + 3.0 * wts[xx];
      CHECK(std::abs(up.data()(y * 4 + xx) - (top * (1 - wts[y]) + bot * wts[y])) <= 1e-6);
    }
  }
}

TEST_CASE("grid_sample_nearest: centers, clamping, argmin oracle, ties, non-finite") {
  const auto x = random_tensor<float>({2, 3, 4, 5}, 6);
  const auto centers_x = std::vector<double>{-0.8, -0.4, 0.0, 0.4, 0.8};
  const auto centers_y = std::vector<double>{-0.75, -0.25, 0.25, 0.75};
  auto at = [&](Index b, Index ch, Index cy, Index cx) { return x.data()(((b * 3 + ch) * 4 + cy) * 5 + cx); };

  const auto exact = grid_sample_nearest(x, TensorF::from_values({1, 2}, {0.4f, -0.25f}));
  for (Index ch = 0; ch < 3; ++ch) CHECK(exact.data()(ch) == at(0, ch, 1, 3));
  const auto corner = grid_sample_nearest(x, TensorF::from_values({1, 2}, {-1.0f, -1.0f}));
  for (Index ch = 0; ch < 3; ++ch) CHECK(corner.data()(ch) == at(0, ch, 0, 0));

  const auto coords = random_tensor<double>({200, 2}, 7, -1.0, 1.0);
  const auto xd = cast<double>(x);
  const auto s = grid_sample_nearest(xd, coords);
  for (Index q = 0; q < 200; ++q) {
    Index bx = 0, by = 0;
    double best = 1e9;
    for (Index cy = 0; cy < 4; ++cy)
      for (Index cx = 0; cx < 5; ++cx) {
        const double dx = coords.data()(2 * q) - centers_x[static_cast<std::size_t>(cx)];
        const double dy = coords.data()(2 * q + 1) - centers_y[static_cast<std::size_t>(cy)];
        const double d = dx * dx + dy * dy;
        if (d < best) {
          best = d;
          bx = cx;
          by = cy;
        }
      }
    for (Index b = 0; b < 2; ++b)
      for (Index ch = 0; ch < 3; ++ch) CHECK(s.data()((b * 200 + q) * 3 + ch) == static_cast<double>(at(b, ch, by, bx)));
  }

  // Midpoint between cells 1 and 2 of a 4-cell axis is 0: lower index wins.
  CHECK(nearest_cell(0.0, 4) == 1);
  CHECK(nearest_cell(-0.5, 4) == 0);
  CHECK(nearest_cell(0.5, 4) == 2);
  CHECK(nearest_cell(5.0, 4) == 3);
  CHECK_THROWS_AS(grid_sample_nearest(x, TensorF::from_values({1, 2}, {NAN, 0.0f})), InputError);
}

TEST_CASE("elementwise ops and concat") {
  const auto a = random_tensor<double>({2, 3, 4}, 30);
  CHECK((add(a, TensorD::zeros({2, 3, 4})).data() == a.data()).all());
  CHECK_THROWS_AS(add(a, TensorD::zeros({2, 3, 5})), DimensionError);
  CHECK_THROWS_AS(mul(a, TensorD::zeros({3, 2, 4})), DimensionError);
  CHECK(scale(a, 2.0).data()(5) == 2.0 * a.data()(5));

  const auto b = random_tensor<double>({2, 5, 4}, 31);
  const auto c = concat_channels(a, b);
  CHECK(c.shape() == Shape{2, 8, 4});
  CHECK((slice(c, 1, 0, 3).data() == a.data()).all());
  CHECK((slice(c, 1, 3, 8).data() == b.data()).all());
  CHECK_THROWS_AS(concat_channels(a, TensorD::zeros({3, 5, 4})), DimensionError);

  // d(sum(a*b))/da = b
  auto av = a.detach();
  av.set_requires_grad(true);
  const auto bb = random_tensor<double>({2, 3, 4}, 32);
  sum(mul(av, bb)).backward();
  CHECK(max_abs_diff(TensorD(av.shape(), av.grad()), bb) == 0.0);
  CHECK(grad_check([&](const TensorD& p) { return sum(mul(p, bb)); }, a) <= 1e-8);
}

TEST_CASE("backward contract") {
  auto x = TensorD::from_values({2}, {1, 2}, true);
  sum(x).backward();
  CHECK(x.grad()(0) == 1.0);
  CHECK(x.grad()(1) == 1.0);

  x.zero_grad();
  auto loss = sum(mul(x, x));
  loss.backward();
  CHECK(x.grad()(0) == 2.0);
  CHECK(x.grad()(1) == 4.0);
  CHECK_THROWS_AS(loss.backward(), ContractError);

  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);  // not scalar
  CHECK_THROWS_AS(sum(x.detach()).backward(), ContractError);

  // Gradients accumulate across backward calls on fresh graphs.
  x.zero_grad();
  sum(x).backward();
  sum(x).backward();
  CHECK(x.grad()(0) == 2.0);

  // A shared subexpression feeds two consumers; each node runs once.
  x.zero_grad();
  const auto y = mul(x, x);
  sum(add(y, y)).backward();
  CHECK(x.grad()(1) == 8.0);
}

TEST_CASE("grad_check utility") {
  const auto p = random_tensor<double>({6}, 40);
  const auto w = random_tensor<double>({6}, 41);
  CHECK(grad_check([&](const TensorD& x) { return sum(mul(x, w)); }, p) <= 1e-9);
  CHECK(grad_check([](const TensorD& x) { return sum(mul(x, x)); }, p) <= 1e-8);

  const auto img = random_tensor<double>({1, 2, 5, 5}, 42);
  const auto bias = random_tensor<double>({3}, 43);
  const auto wt = random_tensor<double>({3, 2, 3, 3}, 44);
  const double err = grad_check([&](const TensorD& wp) { return sum(mul(conv2d(img, wp, bias, 1, 1), conv2d(img, wp, bias, 1, 1))); }, wt);
  CHECK(err <= 1e-6);
}

TEST_CASE("every differentiable op passes grad_check over five seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const std::uint64_t s = seed * 1000;
    const auto probe4 = random_tensor<double>({2, 3, 5, 4}, s + 1);
    auto quad = [](const TensorD& y, const TensorD& r) { return sum(mul(y, r)); };

    const auto x = random_tensor<double>({2, 3, 5, 4}, s + 2);
    const auto w = random_tensor<double>({4, 3, 3, 3}, s + 3);
    const auto b = random_tensor<double>({4}, s + 4);
    const auto rc1 = random_tensor<double>({2, 4, 5, 4}, s + 5);
    const auto rc2 = random_tensor<double>({2, 4, 3, 2}, s + 6);
    CHECK(grad_check([&](const TensorD& p) { return quad(conv2d(p, w, b, 1, 1), rc1); }, x) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(conv2d(x, p, b, 1, 1), rc1); }, w) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(conv2d(x, w, p, 1, 1), rc1); }, b) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(conv2d(p, w, b, 2, 1), rc2); }, x) <= 1e-4);

    const auto lx = random_tensor<double>({3, 2, 5}, s + 7);
    const auto lw = random_tensor<double>({4, 5}, s + 8);
    const auto lb = random_tensor<double>({4}, s + 9);
    const auto lr = random_tensor<double>({3, 2, 4}, s + 10);
    CHECK(grad_check([&](const TensorD& p) { return quad(linear(p, lw, lb), lr); }, lx) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(linear(lx, p, lb), lr); }, lw) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(linear(lx, lw, p), lr); }, lb) <= 1e-4);

    const auto gam = random_tensor<double>({3}, s + 11, 0.5, 1.5);
    const auto bet = random_tensor<double>({3}, s + 12);
    CHECK(grad_check([&](const TensorD& p) { return quad(instance_norm(p, gam, bet), probe4); }, x.clone()) <= 1e-4);
    const auto xn = random_tensor<double>({2, 3, 5, 4}, s + 13);
    CHECK(grad_check([&](const TensorD& p) { return quad(instance_norm(xn, p, bet), probe4); }, gam) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(instance_norm(xn, gam, p), probe4); }, bet) <= 1e-4);

    const auto sx = random_tensor<double>({4, 6}, s + 14, -3, 3);
    const auto sr = random_tensor<double>({4, 6}, s + 15);
    CHECK(grad_check([&](const TensorD& p) { return quad(softmax(p, 0.5), sr); }, sx) <= 1e-4);

    const auto gr = random_tensor<double>({2, 3}, s + 16);
    CHECK(grad_check([&](const TensorD& p) { return quad(global_avg_pool(p), gr); }, x) <= 1e-4);
    const auto ur = random_tensor<double>({2, 27, 5, 4}, s + 17);
    CHECK(grad_check([&](const TensorD& p) { return quad(unfold3x3(p), ur); }, x) <= 1e-4);
    const auto br = random_tensor<double>({2, 3, 7, 9}, s + 18);
    CHECK(grad_check([&](const TensorD& p) { return quad(resize_bilinear(p, 7, 9), br); }, x) <= 1e-4);
    const auto coords = random_tensor<double>({11, 2}, s + 19);
    const auto gsr = random_tensor<double>({2, 11, 3}, s + 20);
    CHECK(grad_check([&](const TensorD& p) { return quad(grid_sample_nearest(p, coords), gsr); }, x) <= 1e-4);

    const auto y = random_tensor<double>({2, 3, 5, 4}, s + 21);
    CHECK(grad_check([&](const TensorD& p) { return quad(add(p, y), probe4); }, x) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(mul(p, y), probe4); }, x) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(scale(p, -1.7), probe4); }, x) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return sum(mul(relu(p), p)); }, x) <= 1e-4);
    const auto cr = random_tensor<double>({2, 6, 5, 4}, s + 22);
    CHECK(grad_check([&](const TensorD& p) { return quad(concat_channels(p, y), cr); }, x) <= 1e-4);
    const auto rr = random_tensor<double>({2, 4, 3}, s + 23);
    CHECK(grad_check([&](const TensorD& p) { return quad(repeat_rows(p, 4), rr); }, gr) <= 1e-4);
    const auto tl = random_tensor<double>({2, 20, 3}, s + 24);
    CHECK(grad_check([&](const TensorD& p) { return quad(to_channels_last(p), tl); }, x) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return quad(to_channels_first(p, 5, 4), probe4); }, tl) <= 1e-4);
    CHECK(grad_check([&](const TensorD& p) { return mean(mul(p, p)); }, x) <= 1e-4);
  }
}
