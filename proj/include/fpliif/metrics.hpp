#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpliif/data.hpp"
#include "fpliif/loss.hpp"
#include "fpliif/model.hpp"

namespace fpliif {

/// C x C pixel counts, rows = ground truth, columns = prediction.
struct ConfusionMatrix {
  Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(int num_classes);
  int num_classes() const { return static_cast<int>(counts.rows()); }
  std::int64_t total() const { return counts.sum(); }
  // Associative, commutative merge.
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

/// Counts pixels of equal-shaped maps; region (optional, same shape) limits
/// the count to the selected pixels. Throws DimensionError on shape
/// mismatch and DataError on ids outside [0, C).
ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& gt, int num_classes,
                          const EdgeMask* region = nullptr);
void accumulate(ConfusionMatrix& cm, const LabelMap& pred, const LabelMap& gt,
                const EdgeMask* region = nullptr);

/// Per-class scores; classes that are ignored or absent from both
/// prediction and ground truth carry no value and stay out of the mean.
struct ClassScores {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;
  int included = 0;
};

inline const std::set<int> kIgnoreBackground{0};

// F1_c = 2 TP / (2 TP + FP + FN).
ClassScores f1_scores(const ConfusionMatrix& cm, const std::set<int>& ignore = kIgnoreBackground);
// IoU_c = TP / (TP + FP + FN).
ClassScores iou_scores(const ConfusionMatrix& cm, const std::set<int>& ignore = kIgnoreBackground);
double miou(const ConfusionMatrix& cm, const std::set<int>& ignore = kIgnoreBackground);

/// Argmax over the class axis of N x C x H x W logits; ties go to the lower
/// class id.
template <typename Scalar>
std::vector<LabelMap> predict_labels(const Tensor<Scalar>& logits);

struct EvalOptions {
  Index out_res = 0;    // prediction resolution; 0 = the model's input resolution
  Index score_res = 0;  // scoring resolution; 0 = out_res
  int boundary_radius = 2;  // band around ground-truth edges; < 0 disables
  int batch_size = 8;
  int threads = 1;
};

/// Images are resized (bicubic) to the model's input resolution and decoded
/// at out_res. The argmax map is then nearest-resized to score_res and
/// scored against the ground truth nearest-resized to score_res.
struct EvalResult {
  ConfusionMatrix all;
  ConfusionMatrix boundary;  // pixels within boundary_radius of a GT edge
};

template <typename Scalar>
EvalResult evaluate(const Model<Scalar>& model, const std::vector<SegSample>& samples,
                    const EvalOptions& options = {});

/// Analytic cost. Convention: one multiply-accumulate counts as 2 FLOPs;
/// convs 2 k^2 Cin Cout H' W', linears 2 Din Dout per site, biases,
/// normalization and activations not counted; the ensemble head runs 4 times
/// per query.
struct FlopsEstimate {
  double encoder_gflops = 0.0;
  double rcmlp_gflops = 0.0;
  double head_gflops = 0.0;
  double total_gflops = 0.0;
  double total_gmacs = 0.0;
  std::string convention;
};

FlopsEstimate flops_estimate(const ModelConfig& config, Index out_h, Index out_w, DecodeMode mode);
// Uses config.decode_mode.
FlopsEstimate flops_estimate(const ModelConfig& config, Index out_h, Index out_w);

struct BenchResult {
  Index input_res = 0;
  Index out_res = 0;
  int warmup = 0;
  int iters = 0;
  double median_seconds = 0.0;
  double fps = 0.0;
  std::string host;
  int threads = 1;
  std::string precision;
};

/// Single-image inference throughput: median wall time of `iters` forward
/// passes after `warmup` unmeasured ones; fps = 1 / median.
template <typename Scalar>
BenchResult fps_benchmark(const Model<Scalar>& model, Index input_res, Index out_res, int warmup,
                          int iters, std::uint64_t seed = 0);

struct SeedStat {
  double mean = 0.0;
  double sd = 0.0;  // sample standard deviation (n - 1)
  std::vector<double> values;
};

/// Runs `run` once per seed and aggregates every metric it reports. Needs at
/// least two seeds.
std::map<std::string, SeedStat> multi_seed_report(
    const std::function<std::map<std::string, double>(std::uint64_t)>& run,
    std::span<const std::uint64_t> seeds);

struct MetricsReport {
  std::vector<std::optional<double>> class_f1;
  double mean_f1 = 0.0;
  double mean_iou = 0.0;
  std::optional<double> boundary_mean_f1;
  Index params = 0;
  std::optional<FlopsEstimate> flops;
  std::optional<double> fps;
  std::map<std::string, SeedStat> seeds;
};

MetricsReport make_report(const EvalResult& result, Index params);

void to_json(nlohmann::json& j, const ClassScores& s);
void to_json(nlohmann::json& j, const FlopsEstimate& f);
void to_json(nlohmann::json& j, const BenchResult& b);
void to_json(nlohmann::json& j, const SeedStat& s);
void to_json(nlohmann::json& j, const MetricsReport& r);

}  // namespace fpliif
