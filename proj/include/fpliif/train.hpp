#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "fpliif/data.hpp"
#include "fpliif/loss.hpp"
#include "fpliif/model.hpp"

namespace fpliif {

/// Adam moments and step counter for one parameter list.
template <typename Scalar>
struct OptimState {
  using Array = typename Tensor<Scalar>::Array;
  std::vector<Array> m;
  std::vector<Array> v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename Scalar>
OptimState<Scalar> make_optim_state(const std::vector<Tensor<Scalar>>& params);

/// One bias-corrected Adam update using each parameter's accumulated grad.
/// Throws ContractError if a parameter has no grad or the state does not
/// match the parameter shapes.
template <typename Scalar>
void adam_step(std::vector<Tensor<Scalar>>& params, OptimState<Scalar>& state, double lr);

struct TrainConfig {
  int epochs = 400;
  int batch_size = 32;
  double initial_lr = 5e-4;
  double decay_factor = 0.1;
  int decay_every = 20;
  double min_lr = 1e-7;
  LossConfig loss;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // 0: only last and best
  bool augment = true;
  AugmentPolicy augment_policy;
  int eval_batch = 8;
  bool deterministic = true;
  int threads = 1;  // evaluation workers (ignored in deterministic mode)

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// max(initial_lr * decay_factor^floor(epoch / decay_every), min_lr).
double lr_at(int epoch, const TrainConfig& config);

/// Substream seeds derived from one root.
struct SeedPlan {
  std::uint64_t init = 0;
  std::uint64_t shuffle = 0;
  std::uint64_t augment = 0;

  // Per-epoch shuffle and augmentation seeds.
  std::uint64_t shuffle_for(int epoch) const;
  std::uint64_t augment_for(int epoch) const;
};

SeedPlan seed_all(std::uint64_t root);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_mean_f1 = 0.0;
  double wall_seconds = 0.0;
};

template <typename Scalar>
struct FitResult {
  std::vector<EpochLog> log;
  Model<Scalar> best;
  int best_epoch = -1;
  double best_val_f1 = -1.0;
};

struct FitOutputs {
  std::filesystem::path dir;  // empty: nothing written
  bool quiet = true;          // echo log lines to stderr when false
};

/// Trains in place. Samples are brought to the model's input resolution
/// once; each epoch shuffles, optionally augments, and steps Adam per batch,
/// then scores validation mean F1 (when val is non-empty). With an output
/// directory the log goes to train_log.jsonl and checkpoints to last.fplf,
/// best.fplf and epoch_<k>.fplf. Non-finite losses throw TrainingError.
template <typename Scalar>
FitResult<Scalar> fit(Model<Scalar>& model, const std::vector<SegSample>& train,
                      const std::vector<SegSample>& val, const TrainConfig& config,
                      const FitOutputs& outputs = {},
                      const std::function<void(const EpochLog&)>& on_epoch = {});

}  // namespace fpliif
