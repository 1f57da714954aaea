#include "fpliif/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fpliif/checkpoint.hpp"
#include "fpliif/config_io.hpp"
#include "fpliif/errors.hpp"
#include "fpliif/metrics.hpp"
#include "fpliif/random.hpp"

namespace fpliif {

template <typename Scalar>
OptimState<Scalar> make_optim_state(const std::vector<Tensor<Scalar>>& params) {
  OptimState<Scalar> s;
  for (const auto& p : params) {
    s.m.push_back(OptimState<Scalar>::Array::Zero(p.size()));
    s.v.push_back(OptimState<Scalar>::Array::Zero(p.size()));
  }
  return s;
}

template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, OptimState<Scalar>& state, double lr) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) +
                        " tensors, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) {
      throw ContractError("adam_step: parameter " + std::to_string(i) + " has no gradient");
    }
    if (state.m[i].size() != params[i].size()) {
      throw ContractError("adam_step: moment shape does not match parameter " + std::to_string(i));
    }
  }
  ++state.step;
  const auto t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const auto b1 = static_cast<Scalar>(state.beta1), b2 = static_cast<Scalar>(state.beta2);
  const auto step_size = static_cast<Scalar>(lr / c1);
  const auto root_c2 = static_cast<Scalar>(std::sqrt(c2));
  const auto eps = static_cast<Scalar>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.square();
    // p -= lr * m_hat / (sqrt(v_hat) + eps)
    params[i].data() -= step_size * m / (v.sqrt() / root_c2 + eps);
  }
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("invalid train config: " + what); };
  if (epochs < 1) fail("epochs must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (!(initial_lr > 0)) fail("initial_lr must be > 0");
  if (!(decay_factor > 0 && decay_factor <= 1)) fail("decay_factor must lie in (0, 1]");
  if (decay_every < 1) fail("decay_every must be >= 1");
  if (min_lr < 0) fail("min_lr must be >= 0");
  if (checkpoint_every < 0) fail("checkpoint_every must be >= 0");
  if (eval_batch < 1) fail("eval_batch must be >= 1");
  if (threads < 1) fail("threads must be >= 1");
  loss.validate();
}

double lr_at(int epoch, const TrainConfig& config) {
  if (epoch < 0) throw ParameterError("lr_at: epoch must be >= 0");
  const int decays = epoch / config.decay_every;
  return std::max(config.initial_lr * std::pow(config.decay_factor, decays), config.min_lr);
}

std::uint64_t SeedPlan::shuffle_for(int epoch) const {
  return derive_seed(shuffle, static_cast<std::uint64_t>(epoch));
}

std::uint64_t SeedPlan::augment_for(int epoch) const {
  return derive_seed(augment, static_cast<std::uint64_t>(epoch));
}

SeedPlan seed_all(std::uint64_t root) {
  return {derive_seed(root, Stream::kInit), derive_seed(root, Stream::kShuffle),
          derive_seed(root, Stream::kAugment)};
}

namespace {

std::string log_line(const EpochLog& e) {
  const nlohmann::json j{{"epoch", e.epoch},
                         {"lr", e.lr},
                         {"train_loss", e.train_loss},
                         {"val_mean_f1", e.val_mean_f1},
                         {"wall_seconds", e.wall_seconds}};
  return j.dump();
}

}  // namespace

template <typename Scalar>
FitResult<Scalar> fit(Model<Scalar>& model, const std::vector<SegSample>& train,
                      const std::vector<SegSample>& val, const TrainConfig& config,
                      const FitOutputs& outputs, const std::function<void(const EpochLog&)>& on_epoch) {
  config.validate();
  if (train.empty()) throw DataError("fit: training set is empty");
  const ModelConfig& mc = model.config();
  const int res = mc.input_resolution;

  std::vector<SegSample> samples;
  samples.reserve(train.size());
  for (const auto& s : train) {
    const std::int32_t top = s.labels.size() ? s.labels.maxCoeff() : 0;
    if (top >= mc.num_classes) {
      throw DataError("fit: sample '" + s.id + "' has class " + std::to_string(top) + " but the model has " +
                      std::to_string(mc.num_classes));
    }
    samples.push_back(s.height() == res && s.width() == res ? s : resize_sample(s, res));
  }
  AugmentPolicy policy = config.augment_policy;
  if (policy.crop == 0) policy.crop = res;

  const SeedPlan plan = seed_all(config.seed);
  OptimState<Scalar> state = make_optim_state(model.parameters());

  std::ofstream log_file;
  if (!outputs.dir.empty()) {
    std::filesystem::create_directories(outputs.dir);
    log_file.open(outputs.dir / "train_log.jsonl", std::ios::trunc);
    if (!log_file) throw DataError("fit: cannot write " + (outputs.dir / "train_log.jsonl").string());
  }

  FitResult<Scalar> result;
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    const auto order = batch_indices(samples.size(), static_cast<std::size_t>(config.batch_size),
                                     plan.shuffle_for(epoch));
    Rng aug_rng(plan.augment_for(epoch));
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < order.size(); ++bi) {
      Batch<Scalar> batch;
      if (config.augment) {
        std::vector<SegSample> augmented;
        for (std::size_t i : order[bi]) augmented.push_back(augment(samples[i], policy, aug_rng));
        std::vector<std::size_t> all(augmented.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        batch = make_batch<Scalar>(augmented, all);
      } else {
        batch = make_batch<Scalar>(samples, order[bi]);
      }

      model.zero_grad();
      const Tensor<Scalar> logits = forward(model, batch.images, res, res);
      LossTerms<Scalar> terms = total_loss(logits, batch.labels, config.loss);
      const double value = static_cast<double>(terms.total.item());
      if (!std::isfinite(value)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << bi << ": total=" << value
            << " cce=" << static_cast<double>(terms.cce.item())
            << " edge_cce=" << static_cast<double>(terms.edge_cce.item());
        throw TrainingError(msg.str());
      }
      terms.total.backward();
      adam_step(model.parameters(), state, lr);
      loss_sum += value * static_cast<double>(order[bi].size());
    }

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(samples.size());
    if (!val.empty()) {
      EvalOptions eo;
      eo.boundary_radius = -1;
      eo.batch_size = config.eval_batch;
      eo.threads = config.deterministic ? 1 : config.threads;
      entry.val_mean_f1 = f1_scores(evaluate(model, val, eo).all).mean;
    }
    entry.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(entry);

    const bool improved = val.empty() || entry.val_mean_f1 > result.best_val_f1;
    if (improved) {
      result.best = model.clone();
      result.best_epoch = epoch;
      result.best_val_f1 = entry.val_mean_f1;
    }
    if (!outputs.dir.empty()) {
      const nlohmann::json meta{{"epoch", epoch}, {"val_mean_f1", entry.val_mean_f1}, {"train", config}};
      save_checkpoint(model, outputs.dir / "last.fplf", meta);
      if (improved) save_checkpoint(model, outputs.dir / "best.fplf", meta);
      if (config.checkpoint_every > 0 && (epoch + 1) % config.checkpoint_every == 0) {
        save_checkpoint(model, outputs.dir / ("epoch_" + std::to_string(epoch + 1) + ".fplf"), meta);
      }
      log_file << log_line(entry) << '\n' << std::flush;
    }
    if (!outputs.quiet) std::cerr << log_line(entry) << '\n';
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

template OptimState<float> make_optim_state(const std::vector<Tensor<float>>&);
template OptimState<double> make_optim_state(const std::vector<Tensor<double>>&);
template void adam_step(std::vector<Tensor<float>>&, OptimState<float>&, double);
template void adam_step(std::vector<Tensor<double>>&, OptimState<double>&, double);
template FitResult<float> fit(Model<float>&, const std::vector<SegSample>&, const std::vector<SegSample>&,
                              const TrainConfig&, const FitOutputs&, const std::function<void(const EpochLog&)>&);
template FitResult<double> fit(Model<double>&, const std::vector<SegSample>&, const std::vector<SegSample>&,
                               const TrainConfig&, const FitOutputs&, const std::function<void(const EpochLog&)>&);

}  // namespace fpliif
