#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "imamoe/dataset.hpp"
#include "imamoe/model.hpp"
#include "imamoe/optim.hpp"

namespace imamoe {

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  Scalar lr = 1e-4;
  Scalar weight_decay = 1e-4;
  int warmup_epochs = 5;
  Scalar beta1 = 0.9;
  Scalar beta2 = 0.999;
  Scalar epsilon = 1e-8;
  std::uint64_t seed = 0;  // batch order

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0.0;
  double lr = 0.0;  // rate used by the epoch's last step
  std::int64_t steps = 0;
  double wall_seconds = 0.0;

  /// One structured log line; wall time is the only non-deterministic field.
  nlohmann::json to_json() const;
};

/// Everything needed to continue a run deterministically.
struct TrainState {
  int epochs_done = 0;
  OptimState optim;
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  TrainState state;
};

Schedule make_schedule(const TrainConfig& config, std::size_t train_size);

/// Seeded mini-batch AdamW on the mean cross-entropy. The last partial batch
/// is kept; the final-epoch parameters are what remains in `params`.
/// Passing `resume` continues from its state instead of from scratch.
TrainResult train(ModelParams& params, const ModelConfig& model, const MeasureSchema& schema,
                  const Dataset& train_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {},
                  const TrainState* resume = nullptr);

/// Batch order of one epoch.
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

}  // namespace imamoe
