#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "quiver/data_io.hpp"
#include "quiver/mlp.hpp"

namespace quiver {

enum class Optimizer { sgd, momentum, adam };

std::string_view to_string(Optimizer o) noexcept;
Optimizer parse_optimizer(std::string_view name);

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  double lr = 1e-3;
  std::size_t batch_size = 128;
  std::size_t epochs = 1;
  // Multiply the learning rate by 0.1 every lr_step epochs; 0 disables.
  std::size_t lr_step = 0;
  double weight_decay = 0.0;
  double dropout = 0.0;
  std::uint64_t seed = 0;

  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
  double lr_at(std::size_t epoch) const;

  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

struct TrainResult {
  Mlp model;
  std::vector<EpochStats> curves;
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// Mini-batch training with softmax cross-entropy in float32. The shuffle
/// order, dropout masks and reduction order depend only on cfg.seed, so equal
/// inputs give bitwise-equal models on one machine. Test columns of the
/// curves are zero when no test set is given.
TrainResult train(const Mlp& init, const Dataset& train_set, const Dataset* test_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Mean loss and accuracy without dropout, evaluated in float32.
std::pair<double, double> evaluate(const Mlp& mlp, const Dataset& data);

}  // namespace quiver
