#include "fpliif/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>

#include "fpliif/checkpoint.hpp"
#include "fpliif/config_io.hpp"
#include "fpliif/data.hpp"
#include "fpliif/errors.hpp"
#include "fpliif/metrics.hpp"
#include "fpliif/model.hpp"
#include "fpliif/random.hpp"
#include "fpliif/train.hpp"

namespace fpliif {

namespace fs = std::filesystem;

const std::vector<std::array<std::uint8_t, 3>>& class_palette() {
  static const std::vector<std::array<std::uint8_t, 3>> palette{
      {0, 0, 0},       {255, 200, 160}, {120, 60, 20},   {0, 120, 255},   {0, 200, 120},
      {160, 80, 200},  {255, 140, 0},   {220, 20, 60},   {255, 255, 0},   {0, 255, 255},
      {255, 0, 255},   {128, 128, 0},   {0, 128, 128},   {128, 0, 128},   {64, 160, 64},
      {200, 200, 200}, {100, 100, 255}, {255, 100, 100}, {100, 255, 100}, {40, 40, 120}};
  return palette;
}

namespace {

struct ModelFlags {
  std::optional<int> res, classes, width, head_width, head_depth;
  std::optional<std::string> mode;
  std::vector<int> groups;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
  cmd->add_option("--res", f.res, "Input resolution (multiple of 4)");
  cmd->add_option("--classes", f.classes, "Number of classes, background included");
  cmd->add_option("--width", f.width, "Encoder width D");
  cmd->add_option("--groups", f.groups, "Resblocks per group, three values")->delimiter(',');
  cmd->add_option("--head-width", f.head_width, "Decoder head width");
  cmd->add_option("--head-depth", f.head_depth, "Decoder head hidden layers");
  cmd->add_option("--mode", f.mode, "Decoder mode")->check(CLI::IsMember({"ensemble", "bilinear"}));
}

void apply(const ModelFlags& f, ModelConfig& c) {
  if (f.res) c.input_resolution = *f.res;
  if (f.classes) c.num_classes = *f.classes;
  if (f.width) c.base_width = *f.width;
  if (!f.groups.empty()) c.group_sizes = f.groups;
  if (f.head_width) c.head_width = *f.head_width;
  if (f.head_depth) c.head_depth = *f.head_depth;
  if (f.mode) c.decode_mode = decode_mode_from_string(*f.mode);
}

// Same parameters under a different decoder mode (both modes share weights).
Model<float> with_mode(const Model<float>& m, DecodeMode mode) {
  ModelConfig cfg = m.config();
  cfg.decode_mode = mode;
  Model<float> out(cfg);
  for (std::size_t i = 0; i < m.names().size(); ++i) out.add_parameter(m.names()[i], m.parameters()[i]);
  return out;
}

void write_json(const Json& j, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << j.dump(2) << '\n';
    return;
  }
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::trunc);
  f << j.dump(2) << '\n';
  if (!f) throw DataError("cannot write " + path);
}

void echo(std::ostream& out, const Json& effective) { out << "effective config: " << effective.dump() << std::endl; }

RgbImage overlay(const RgbImage& image, const LabelMap& mask) {
  RgbImage out = image;
  const auto& pal = class_palette();
  for (Index y = 0; y < mask.rows(); ++y) {
    for (Index x = 0; x < mask.cols(); ++x) {
      const int k = mask(y, x);
      if (k == 0) continue;
      const auto& c = pal[static_cast<std::size_t>(k) % pal.size()];
      for (std::size_t ch = 0; ch < 3; ++ch) {
        out.channels[ch](y, x) = 0.5f * image.channels[ch](y, x) + 0.5f * static_cast<float>(c[ch]) / 255.0f;
      }
    }
  }
  return out;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Face parsing with a local implicit image function decoder"};
  app.require_subcommand(1);
  app.name(args.empty() ? "fpliif" : args.front());

  // synth
  auto* synth = app.add_subcommand("synth", "Write procedural face samples in the dataset layout");
  int synth_n = 50, synth_res = 128, synth_classes = kSynthClasses;
  std::uint64_t synth_seed = 0;
  std::string synth_data, synth_split = "train";
  synth->add_option("--n", synth_n, "Number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--res", synth_res, "Side length")->check(CLI::Range(32, 4096));
  synth->add_option("--seed", synth_seed, "Root seed");
  synth->add_option("--classes", synth_classes, "Declared classes (>= 8)");
  synth->add_option("--data", synth_data, "Dataset root")->required();
  synth->add_option("--split", synth_split, "Split name");

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset split");
  std::string train_config, train_data, train_split = "train", train_val = "val", train_out;
  std::optional<std::uint64_t> train_seed;
  std::optional<int> epochs, batch, threads, ckpt_every;
  std::optional<double> lr, lambda, tau;
  bool deterministic = false, no_augment = false;
  ModelFlags train_model;
  train->add_option("--config", train_config, "JSON config with optional model/train sections");
  train->add_option("--data", train_data, "Dataset root")->required();
  train->add_option("--split", train_split, "Training split");
  train->add_option("--val-split", train_val, "Validation split (skipped when its list is missing)");
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--seed", train_seed, "Root seed");
  train->add_option("--epochs", epochs, "Epochs");
  train->add_option("--batch", batch, "Batch size");
  train->add_option("--lr", lr, "Initial learning rate");
  train->add_option("--lambda", lambda, "Edge loss weight");
  train->add_option("--tau", tau, "Softmax temperature");
  train->add_option("--checkpoint-every", ckpt_every, "Extra checkpoint period in epochs");
  train->add_option("--threads", threads, "Evaluation workers");
  train->add_flag("--deterministic", deterministic, "Single worker, fixed reduction order");
  train->add_flag("--no-augment", no_augment, "Disable augmentation");
  add_model_flags(train, train_model);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  std::string eval_ckpt, eval_data, eval_split = "val", eval_report, eval_mode;
  int out_res = 0, score_res = 0, eval_threads = 1, eval_radius = 2;
  bool eval_det = false;
  eval->add_option("--ckpt", eval_ckpt, "Checkpoint")->required();
  eval->add_option("--data", eval_data, "Dataset root")->required();
  eval->add_option("--split", eval_split, "Split");
  eval->add_option("--out-res", out_res, "Prediction resolution (default: model input)");
  eval->add_option("--score-res", score_res, "Scoring resolution (default: out-res)");
  eval->add_option("--boundary-radius", eval_radius, "Boundary band radius in pixels (< 0 disables)");
  eval->add_option("--threads", eval_threads, "Workers")->check(CLI::PositiveNumber);
  eval->add_option("--mode", eval_mode, "Decoder mode override")->check(CLI::IsMember({"ensemble", "bilinear"}));
  eval->add_option("--report", eval_report, "Report path (default: stdout)");
  eval->add_flag("--deterministic", eval_det, "Single worker");

  // infer
  auto* infer = app.add_subcommand("infer", "Predict one image");
  std::string infer_ckpt, infer_image, infer_mask, infer_overlay, infer_mode;
  int infer_res = 0;
  infer->add_option("--ckpt", infer_ckpt, "Checkpoint")->required();
  infer->add_option("--image", infer_image, "Input PNG")->required()->check(CLI::ExistingFile);
  infer->add_option("--out-res", infer_res, "Output resolution (default: model input)");
  infer->add_option("--mask", infer_mask, "Indexed mask PNG to write")->required();
  infer->add_option("--overlay", infer_overlay, "Colour overlay PNG to write");
  infer->add_option("--mode", infer_mode, "Decoder mode override")->check(CLI::IsMember({"ensemble", "bilinear"}));

  // bench
  auto* bench = app.add_subcommand("bench", "Parameters, FLOPs and throughput over output resolutions");
  std::string bench_ckpt, bench_config, bench_report;
  std::vector<int> ladder{64, 96, 128, 192, 256};
  int warmup = 1, iters = 5, bench_threads = 1;
  std::uint64_t bench_seed = 0;
  ModelFlags bench_model;
  bench->add_option("--ckpt", bench_ckpt, "Checkpoint (default: freshly initialized model)");
  bench->add_option("--config", bench_config, "JSON config for a fresh model");
  bench->add_option("--out-res", ladder, "Output resolutions")->delimiter(',');
  bench->add_option("--warmup", warmup, "Unmeasured passes")->check(CLI::NonNegativeNumber);
  bench->add_option("--iters", iters, "Measured passes")->check(CLI::PositiveNumber);
  bench->add_option("--seed", bench_seed, "Init / input seed");
  bench->add_option("--threads", bench_threads, "Eigen threads")->check(CLI::PositiveNumber);
  bench->add_option("--report", bench_report, "Report path (default: stdout)");
  add_model_flags(bench, bench_model);

  try {
    std::vector<std::string> rest(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rest.begin(), rest.end());
    app.parse(rest);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (synth->parsed()) {
      if (synth_classes < kSynthClasses) {
        throw ConfigError("synth: --classes must be >= " + std::to_string(kSynthClasses));
      }
      echo(out, {{"command", "synth"}, {"n", synth_n}, {"res", synth_res}, {"seed", synth_seed},
                 {"classes", synth_classes}, {"data", synth_data}, {"split", synth_split}});
      std::vector<SegSample> samples;
      for (int i = 0; i < synth_n; ++i) {
        SegSample s = synth_face(derive_seed(synth_seed, static_cast<std::uint64_t>(i)), synth_res, synth_classes);
        char id[64];
        std::snprintf(id, sizeof id, "%s_%06d", synth_split.c_str(), i);
        s.id = id;
        samples.push_back(std::move(s));
      }
      write_dataset(synth_data, synth_split, samples);
      out << "wrote " << samples.size() << " samples to " << synth_data << '\n';
      return 0;
    }

    if (train->parsed()) {
      RunFileConfig rc;
      if (!train_config.empty()) rc = read_config_file(train_config);
      apply(train_model, rc.model);
      TrainConfig& tc = rc.train;
      if (train_seed) tc.seed = *train_seed;
      if (epochs) tc.epochs = *epochs;
      if (batch) tc.batch_size = *batch;
      if (lr) tc.initial_lr = *lr;
      if (lambda) tc.loss.lambda = *lambda;
      if (tau) tc.loss.tau = *tau;
      if (ckpt_every) tc.checkpoint_every = *ckpt_every;
      if (threads) tc.threads = *threads;
      if (deterministic) tc.deterministic = true;
      if (no_augment) tc.augment = false;
      if (tc.deterministic && tc.threads > 1) {
        throw ConfigError("--deterministic pins one worker but --threads is " + std::to_string(tc.threads));
      }
      rc.model.validate();
      tc.validate();
      echo(out, {{"command", "train"}, {"model", rc.model}, {"train", tc}, {"data", train_data},
                 {"split", train_split}, {"val_split", train_val}, {"out", train_out}});

      const auto train_set = load_dataset(train_data, train_split, rc.model.num_classes);
      std::vector<SegSample> val_set;
      if (fs::exists(fs::path(train_data) / (train_val + ".txt"))) {
        val_set = load_dataset(train_data, train_val, rc.model.num_classes);
      }
      Model<float> model = build_model<float>(rc.model, tc.seed);
      FitOutputs fo;
      fo.dir = train_out;
      fo.quiet = true;
      const auto result = fit(model, train_set, val_set, tc, fo, [&](const EpochLog& e) {
        out << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.train_loss << " val_mean_f1 "
            << e.val_mean_f1 << " (" << std::fixed << std::setprecision(1) << e.wall_seconds << " s)"
            << std::defaultfloat << std::setprecision(6) << std::endl;
      });
      out << "best epoch " << result.best_epoch << " val_mean_f1 " << result.best_val_f1 << '\n';
      return 0;
    }

    if (eval->parsed()) {
      if (eval_det && eval_threads > 1) {
        throw ConfigError("--deterministic pins one worker but --threads is " + std::to_string(eval_threads));
      }
      Model<float> model = load_checkpoint<float>(eval_ckpt);
      if (!eval_mode.empty()) model = with_mode(model, decode_mode_from_string(eval_mode));
      EvalOptions eo;
      eo.out_res = out_res;
      eo.score_res = score_res;
      eo.threads = eval_threads;
      eo.boundary_radius = eval_radius;
      const Index effective_out = out_res > 0 ? out_res : model.config().input_resolution;
      const Index effective_score = score_res > 0 ? score_res : effective_out;
      echo(out, {{"command", "eval"}, {"ckpt", eval_ckpt}, {"model", model.config()}, {"data", eval_data},
                 {"split", eval_split}, {"out_res", effective_out}, {"score_res", effective_score},
                 {"boundary_radius", eval_radius}, {"threads", eval_threads}});
      const auto samples = load_dataset(eval_data, eval_split, model.config().num_classes);
      const EvalResult r = evaluate(model, samples, eo);
      MetricsReport report = make_report(r, count_params(model));
      Json j = report;
      j["split"] = eval_split;
      j["samples"] = samples.size();
      j["out_res"] = effective_out;
      j["score_res"] = effective_score;
      j["mean_iou_all"] = miou(r.all, {});
      write_json(j, eval_report, out);
      out << "mean_f1 " << report.mean_f1 << " mean_iou " << report.mean_iou << '\n';
      return 0;
    }

    if (infer->parsed()) {
      Model<float> model = load_checkpoint<float>(infer_ckpt);
      if (!infer_mode.empty()) model = with_mode(model, decode_mode_from_string(infer_mode));
      const Index in_res = model.config().input_resolution;
      const Index res = infer_res > 0 ? infer_res : in_res;
      echo(out, {{"command", "infer"}, {"ckpt", infer_ckpt}, {"image", infer_image}, {"out_res", res},
                 {"model", model.config()}});
      const RgbImage image = read_png_rgb(infer_image);
      const RgbImage input = resize_bicubic(image, in_res, in_res);
      NoGradGuard no_grad;
      const LabelMap mask = predict_labels(forward(model, stack_images<float>({&input}), res, res)).front();
      write_png_labels(infer_mask, mask);
      if (!infer_overlay.empty()) write_png_rgb(infer_overlay, overlay(resize_bicubic(image, res, res), mask));
      out << "wrote " << infer_mask << '\n';
      return 0;
    }

    if (bench->parsed()) {
      Model<float> model;
      if (!bench_ckpt.empty()) {
        model = load_checkpoint<float>(bench_ckpt);
        ModelConfig cfg = model.config();
        apply(bench_model, cfg);
        if (!(cfg == model.config())) {
          if (bench_model.mode && cfg.decode_mode != model.config().decode_mode) {
            model = with_mode(model, cfg.decode_mode);
          }
          ModelConfig mode_only = model.config();
          mode_only.decode_mode = cfg.decode_mode;
          if (!(mode_only == cfg)) throw ConfigError("bench: architecture flags conflict with --ckpt");
        }
      } else {
        ModelConfig cfg;
        if (!bench_config.empty()) cfg = read_config_file(bench_config).model;
        apply(bench_model, cfg);
        model = build_model<float>(cfg, bench_seed);
      }
      Eigen::setNbThreads(bench_threads);
      const ModelConfig& cfg = model.config();
      echo(out, {{"command", "bench"}, {"model", cfg}, {"out_res", ladder}, {"warmup", warmup},
                 {"iters", iters}, {"threads", bench_threads}});
      Json rows = Json::array();
      const Index params = count_params(model);
      out << "params " << params << '\n';
      out << "out_res  gflops   gmacs    fps\n";
      for (int r : ladder) {
        const FlopsEstimate f = flops_estimate(cfg, r, r);
        const BenchResult b = fps_benchmark(model, cfg.input_resolution, r, warmup, iters, bench_seed);
        out << std::setw(7) << r << std::setw(9) << std::fixed << std::setprecision(2) << f.total_gflops
            << std::setw(8) << f.total_gmacs << std::setw(8) << b.fps << std::defaultfloat
            << std::setprecision(6) << '\n';
        rows.push_back({{"out_res", r}, {"flops", f}, {"bench", b}});
      }
      if (!bench_report.empty()) write_json({{"params", params}, {"model", cfg}, {"rows", rows}}, bench_report, out);
      return 0;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  return dispatch(std::vector<std::string>(argv, argv + argc), out, err);
}

}  // namespace fpliif
