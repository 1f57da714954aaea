#include "fpliif/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <thread>

#include "fpliif/errors.hpp"
#include "fpliif/random.hpp"
#include "fpliif/runtime.hpp"

namespace fpliif {

ConfusionMatrix::ConfusionMatrix(int num_classes) {
  if (num_classes < 1) throw ParameterError("confusion matrix needs at least one class");
  counts.setZero(num_classes, num_classes);
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes() != num_classes()) {
    throw DimensionError("confusion merge: " + std::to_string(num_classes()) + " vs " +
                         std::to_string(other.num_classes()) + " classes");
  }
  counts += other.counts;
  return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt, const EdgeMask* region) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) {
    throw DimensionError("confusion: prediction is " + std::to_string(pred.rows()) + "x" +
                         std::to_string(pred.cols()) + " but ground truth is " +
                         std::to_string(gt.rows()) + "x" + std::to_string(gt.cols()));
  }
  if (region != nullptr && (region->rows() != gt.rows() || region->cols() != gt.cols())) {
    throw DimensionError("confusion: region mask differs in shape from the label maps");
  }
  const int c = cm.num_classes();
  for (Index y = 0; y < gt.rows(); ++y) {
    for (Index x = 0; x < gt.cols(); ++x) {
      if (region != nullptr && !(*region)(y, x)) continue;
      const std::int32_t t = gt(y, x), p = pred(y, x);
      if (t < 0 || t >= c || p < 0 || p >= c) {
        throw DataError("confusion: class id out of range at (" + std::to_string(y) + ", " +
                        std::to_string(x) + ")");
      }
      ++cm.counts(t, p);
    }
  }
}

ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                          const EdgeMask* region) {
  ConfusionMatrix cm(num_classes);
  accumulate(cm, pred, gt, region);
  return cm;
}

namespace {

template <typename Score>
ClassScores class_scores(const ConfusionMatrix& cm, const std::set<int>& ignore, Score score) {
  ClassScores out;
  const int c = cm.num_classes();
  out.per_class.resize(static_cast<std::size_t>(c));
  double sum = 0.0;
  for (int k = 0; k < c; ++k) {
    const double tp = static_cast<double>(cm.counts(k, k));
    const double fn = static_cast<double>(cm.counts.row(k).sum()) - tp;
    const double fp = static_cast<double>(cm.counts.col(k).sum()) - tp;
    if (ignore.count(k) || tp + fn + fp == 0) continue;
    const double v = score(tp, fp, fn);
    out.per_class[static_cast<std::size_t>(k)] = v;
    sum += v;
    ++out.included;
  }
  out.mean = out.included > 0 ? sum / out.included : 0.0;
  return out;
}

}  // namespace

ClassScores f1_scores(const ConfusionMatrix& cm, const std::set<int>& ignore) {
  return class_scores(cm, ignore, [](double tp, double fp, double fn) { return 2 * tp / (2 * tp + fp + fn); });
}

ClassScores iou_scores(const ConfusionMatrix& cm, const std::set<int>& ignore) {
  return class_scores(cm, ignore, [](double tp, double fp, double fn) { return tp / (tp + fp + fn); });
}

double miou(const ConfusionMatrix& cm, const std::set<int>& ignore) { return iou_scores(cm, ignore).mean; }

template <typename Scalar>
std::vector<LabelMap> predict_labels(const Tensor<Scalar>& logits) {
  if (logits.ndim() != 4) throw DimensionError("predict_labels: expected N x C x H x W, got " + to_string(logits.shape()));
  const Index n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const Index plane = h * w;
  std::vector<LabelMap> out;
  const auto& d = logits.data();
  for (Index b = 0; b < n; ++b) {
    LabelMap m = LabelMap::Zero(h, w);
    Eigen::Array<Scalar, Eigen::Dynamic, 1> best = d.segment(b * c * plane, plane);
    for (Index k = 1; k < c; ++k) {
      const auto v = d.segment((b * c + k) * plane, plane);
      for (Index i = 0; i < plane; ++i) {
        if (v(i) > best(i)) {
          best(i) = v(i);
          m.data()[i] = static_cast<std::int32_t>(k);
        }
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<SegSample>& samples,
                    const EvalOptions& options) {
  const ModelConfig& cfg = model.config();
  const Index in_res = cfg.input_resolution;
  const Index out_res = options.out_res > 0 ? options.out_res : in_res;
  const Index score_res = options.score_res > 0 ? options.score_res : out_res;
  if (options.batch_size < 1) throw ParameterError("evaluate: batch_size must be >= 1");
  for (const auto& s : samples) {
    const std::int32_t top = s.labels.size() ? s.labels.maxCoeff() : 0;
    if (top >= cfg.num_classes) {
      throw DataError("evaluate: sample '" + s.id + "' has class " + std::to_string(top) +
                      " but the model predicts " + std::to_string(cfg.num_classes));
    }
  }

  const std::size_t count = samples.size();
  const auto batch = static_cast<std::size_t>(options.batch_size);
  const std::size_t num_batches = (count + batch - 1) / batch;
  const int workers = std::max(1, std::min<int>(options.threads, static_cast<int>(std::max<std::size_t>(num_batches, 1))));

  std::vector<EvalResult> partial(static_cast<std::size_t>(workers));
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
  auto work = [&](int id) {
    try {
      NoGradGuard no_grad;
      EvalResult& r = partial[static_cast<std::size_t>(id)];
      r.all = ConfusionMatrix(cfg.num_classes);
      r.boundary = ConfusionMatrix(cfg.num_classes);
      for (std::size_t bi = static_cast<std::size_t>(id); bi < num_batches; bi += static_cast<std::size_t>(workers)) {
        std::vector<RgbImage> images;
        const std::size_t end = std::min(count, (bi + 1) * batch);
        for (std::size_t i = bi * batch; i < end; ++i) images.push_back(resize_bicubic(samples[i].image, in_res, in_res));
        std::vector<const RgbImage*> ptrs;
        for (const auto& im : images) ptrs.push_back(&im);
        const auto preds = predict_labels(forward(model, stack_images<Scalar>(ptrs), out_res, out_res));
        for (std::size_t i = bi * batch; i < end; ++i) {
          const LabelMap pred = resize_nearest(preds[i - bi * batch], score_res, score_res);
          const LabelMap gt = resize_nearest(samples[i].labels, score_res, score_res);
          accumulate(r.all, pred, gt);
          if (options.boundary_radius >= 0) {
            const EdgeMask band = dilate(extract_edges(gt), options.boundary_radius);
            accumulate(r.boundary, pred, gt, &band);
          }
        }
      }
    } catch (...) {
      errors[static_cast<std::size_t>(id)] = std::current_exception();
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int id = 0; id < workers; ++id) pool.emplace_back(work, id);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  EvalResult total;
  total.all = ConfusionMatrix(cfg.num_classes);
  total.boundary = ConfusionMatrix(cfg.num_classes);
  for (const auto& r : partial) {
    total.all += r.all;
    total.boundary += r.boundary;
  }
  return total;
}

FlopsEstimate flops_estimate(const ModelConfig& config, Index out_h, Index out_w, DecodeMode mode) {
  config.validate();
  if (out_h < 1 || out_w < 1) throw ParameterError("flops_estimate: output size must be >= 1");
  const double d = config.base_width;
  const double conv_dd = 9.0 * d * d;
  double h = config.input_resolution, w = config.input_resolution;

  double enc = 9.0 * config.in_channels * d * h * w;  // stem
  for (std::size_t g = 0; g < config.group_sizes.size(); ++g) {
    enc += 2.0 * config.group_sizes[g] * conv_dd * h * w;
    if (g + 1 < config.group_sizes.size()) {
      h = std::floor((h - 1) / 2) + 1;
      w = std::floor((w - 1) / 2) + 1;
      enc += conv_dd * h * w;
    }
  }

  double rc = 0.0, width = 9.0 * d;
  for (int r : config.rcmlp_dims) {
    rc += width * r;
    width = r;
  }
  rc *= h * w;

  const double per_query = config.head_inputs() * static_cast<double>(config.head_width) +
                           (config.head_depth - 1.0) * config.head_width * config.head_width +
                           static_cast<double>(config.head_width) * config.num_classes;
  const double passes = mode == DecodeMode::kEnsemble ? 4.0 : 1.0;
  const double head = passes * per_query * static_cast<double>(out_h) * static_cast<double>(out_w);

  FlopsEstimate f;
  f.encoder_gflops = 2.0 * enc / 1e9;
  f.rcmlp_gflops = 2.0 * rc / 1e9;
  f.head_gflops = 2.0 * head / 1e9;
  f.total_gflops = f.encoder_gflops + f.rcmlp_gflops + f.head_gflops;
  f.total_gmacs = f.total_gflops / 2.0;
  f.convention = std::string("2 FLOPs per multiply-accumulate; conv 2*k^2*Cin*Cout*H'*W'; linear 2*Din*Dout per site; "
                             "bias/norm/activation/sampling not counted; head x") +
                 (mode == DecodeMode::kEnsemble ? "4 (ensemble)" : "1 (bilinear)");
  return f;
}

FlopsEstimate flops_estimate(const ModelConfig& config, Index out_h, Index out_w) {
  return flops_estimate(config, out_h, out_w, config.decode_mode);
}

template <typename Scalar>
BenchResult fps_benchmark(const Model<Scalar>& model, Index input_res, Index out_res, int warmup,
                          int iters, std::uint64_t seed) {
  if (iters < 1) throw ParameterError("fps_benchmark: iters must be >= 1");
  if (warmup < 0) throw ParameterError("fps_benchmark: warmup must be >= 0");
  const int c = model.config().in_channels;
  Rng rng = make_rng(seed, Stream::kBench);
  typename Tensor<Scalar>::Array pixels(static_cast<Index>(c) * input_res * input_res);
  for (Index i = 0; i < pixels.size(); ++i) pixels(i) = static_cast<Scalar>(uniform01(rng));
  const Tensor<Scalar> image({1, c, input_res, input_res}, std::move(pixels));

  NoGradGuard no_grad;
  for (int i = 0; i < warmup; ++i) forward(model, image, out_res, out_res);
  std::vector<double> times;
  for (int i = 0; i < iters; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    const Tensor<Scalar> logits = forward(model, image, out_res, out_res);
    times.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    if (!std::isfinite(static_cast<double>(logits.data()(0)))) throw TrainingError("fps_benchmark: non-finite logits");
  }
  std::sort(times.begin(), times.end());
  const std::size_t mid = times.size() / 2;
  const double median = times.size() % 2 ? times[mid] : 0.5 * (times[mid - 1] + times[mid]);

  BenchResult r;
  r.input_res = input_res;
  r.out_res = out_res;
  r.warmup = warmup;
  r.iters = iters;
  r.median_seconds = median;
  r.fps = 1.0 / median;
  r.host = host_descriptor();
  r.threads = Eigen::nbThreads();
  r.precision = sizeof(Scalar) == 4 ? "f32" : "f64";
  return r;
}

std::map<std::string, SeedStat> multi_seed_report(
    const std::function<std::map<std::string, double>(std::uint64_t)>& run,
    std::span<const std::uint64_t> seeds) {
  if (seeds.size() < 2) throw ParameterError("multi_seed_report: needs at least two seeds");
  std::map<std::string, SeedStat> out;
  for (std::uint64_t s : seeds) {
    for (const auto& [name, value] : run(s)) out[name].values.push_back(value);
  }
  for (auto& [name, stat] : out) {
    if (stat.values.size() != seeds.size()) {
      throw ContractError("multi_seed_report: metric '" + name + "' missing for some seeds");
    }
    const double n = static_cast<double>(stat.values.size());
    double sum = 0.0;
    for (double v : stat.values) sum += v;
    stat.mean = sum / n;
    double sq = 0.0;
    for (double v : stat.values) sq += (v - stat.mean) * (v - stat.mean);
    stat.sd = std::sqrt(sq / (n - 1.0));
  }
  return out;
}

MetricsReport make_report(const EvalResult& result, Index params) {
  MetricsReport r;
  const ClassScores f1 = f1_scores(result.all);
  r.class_f1 = f1.per_class;
  r.mean_f1 = f1.mean;
  r.mean_iou = miou(result.all);
  if (result.boundary.num_classes() > 0 && result.boundary.total() > 0) {
    r.boundary_mean_f1 = f1_scores(result.boundary).mean;
  }
  r.params = params;
  return r;
}

namespace {

nlohmann::json optional_list(const std::vector<std::optional<double>>& v) {
  nlohmann::json a = nlohmann::json::array();
  for (const auto& x : v) a.push_back(x ? nlohmann::json(*x) : nlohmann::json(nullptr));
  return a;
}

}  // namespace

void to_json(nlohmann::json& j, const ClassScores& s) {
  j = {{"per_class", optional_list(s.per_class)}, {"mean", s.mean}, {"included", s.included}};
}

void to_json(nlohmann::json& j, const FlopsEstimate& f) {
  j = {{"encoder_gflops", f.encoder_gflops}, {"rcmlp_gflops", f.rcmlp_gflops},
       {"head_gflops", f.head_gflops},       {"total_gflops", f.total_gflops},
       {"total_gmacs", f.total_gmacs},       {"convention", f.convention}};
}

void to_json(nlohmann::json& j, const BenchResult& b) {
  j = {{"input_res", b.input_res}, {"out_res", b.out_res},     {"warmup", b.warmup},
       {"iters", b.iters},         {"median_seconds", b.median_seconds}, {"fps", b.fps},
       {"host", b.host},           {"threads", b.threads},     {"precision", b.precision}};
}

void to_json(nlohmann::json& j, const SeedStat& s) {
  j = {{"mean", s.mean}, {"sd", s.sd}, {"values", s.values}};
}

void to_json(nlohmann::json& j, const MetricsReport& r) {
  j = {{"class_f1", optional_list(r.class_f1)},
       {"mean_f1", r.mean_f1},
       {"mean_iou", r.mean_iou},
       {"params", r.params},
       {"background_ignored", true}};
  if (r.boundary_mean_f1) j["boundary_mean_f1"] = *r.boundary_mean_f1;
  if (r.flops) j["flops"] = *r.flops;
  if (r.fps) j["fps"] = *r.fps;
  if (!r.seeds.empty()) j["seeds"] = r.seeds;
}

template std::vector<LabelMap> predict_labels(const Tensor<float>&);
template std::vector<LabelMap> predict_labels(const Tensor<double>&);
template EvalResult evaluate(const Model<float>&, const std::vector<SegSample>&, const EvalOptions&);
template EvalResult evaluate(const Model<double>&, const std::vector<SegSample>&, const EvalOptions&);
template BenchResult fps_benchmark(const Model<float>&, Index, Index, int, int, std::uint64_t);
template BenchResult fps_benchmark(const Model<double>&, Index, Index, int, int, std::uint64_t);

}  // namespace fpliif
