#include "imamoe/train.hpp"

#include <chrono>
#include <numeric>

#include "imamoe/errors.hpp"
#include "imamoe/random.hpp"

namespace imamoe {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
  if (warmup_epochs < 0 || warmup_epochs > epochs) {
    throw ConfigError("warmup epochs must lie in [0, epochs]");
  }
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("betas must lie in [0, 1)");
  }
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"batch_size", batch_size}, {"lr", lr},
          {"weight_decay", weight_decay}, {"warmup_epochs", warmup_epochs}, {"beta1", beta1},
          {"beta2", beta2},         {"epsilon", epsilon},       {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.epochs = j.at("epochs").get<int>();
    c.batch_size = j.at("batch_size").get<int>();
    c.lr = j.at("lr").get<Scalar>();
    c.weight_decay = j.at("weight_decay").get<Scalar>();
    c.warmup_epochs = j.at("warmup_epochs").get<int>();
    c.beta1 = j.at("beta1").get<Scalar>();
    c.beta2 = j.at("beta2").get<Scalar>();
    c.epsilon = j.at("epsilon").get<Scalar>();
    c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed training config: ") + ex.what());
  }
  c.validate();
  return c;
}

nlohmann::json EpochLog::to_json() const {
  return {{"epoch", epoch},
          {"mean_loss", mean_loss},
          {"lr", lr},
          {"steps", steps},
          {"wall_seconds", wall_seconds}};
}

Schedule make_schedule(const TrainConfig& config, std::size_t train_size) {
  Schedule s;
  s.warmup_epochs = config.warmup_epochs;
  s.total_epochs = config.epochs;
  s.base_lr = config.lr;
  const auto bs = static_cast<std::size_t>(config.batch_size);
  s.steps_per_epoch = static_cast<std::int64_t>((train_size + bs - 1) / bs);
  return s;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(derive_seed(seed, "epoch"), static_cast<std::uint64_t>(epoch)));
  rng.shuffle(order);
  return order;
}

TrainResult train(ModelParams& params, const ModelConfig& model, const MeasureSchema& schema,
                  const Dataset& train_set, const TrainConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch,
                  const TrainState* resume) {
  config.validate();
  model.validate();
  if (train_set.empty()) throw DataError("training set is empty");

  std::vector<Parameter*> ps;
  for (const ParamRef& ref : parameters(params)) ps.push_back(ref.param);

  TrainResult result;
  if (resume != nullptr) {
    result.state = *resume;
  } else {
    result.state.optim.weight_decay = config.weight_decay;
    result.state.optim.beta1 = config.beta1;
    result.state.optim.beta2 = config.beta2;
    result.state.optim.epsilon = config.epsilon;
  }
  TrainState& state = result.state;
  const Schedule schedule = make_schedule(config, train_set.size());
  const auto records = pointers(train_set);
  const auto bs = static_cast<std::size_t>(config.batch_size);

  for (int epoch = state.epochs_done + 1; epoch <= config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto order = epoch_order(train_set.size(), config.seed, epoch);
    EpochLog log;
    log.epoch = epoch;
    double loss_sum = 0.0;
    std::vector<const SubjectRecord*> batch;
    for (std::size_t at = 0; at < order.size(); at += bs) {
      batch.clear();
      for (std::size_t i = at; i < std::min(order.size(), at + bs); ++i) {
        batch.push_back(records[order[i]]);
      }
      for (Parameter* p : ps) p->zero_grad();
      Tape tape;
      Var loss = batch_loss(tape, params, model, schema, batch);
      tape.backward(loss);
      const Scalar lr = lr_at(state.optim.step + 1, schedule);
      adamw_step(ps, state.optim, lr);
      loss_sum += loss.value()(0, 0) * static_cast<double>(batch.size());
      log.lr = lr;
      ++log.steps;
    }
    log.mean_loss = loss_sum / static_cast<double>(train_set.size());
    log.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.epochs_done = epoch;
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace imamoe
