#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "wavy/autodiff.hpp"
#include "wavy/blocks.hpp"
#include "wavy/optim.hpp"
#include "wavy/tasks.hpp"

namespace wavy {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 32;
  double lr = 1e-3;
  double weight_decay = 0.01;
  double warmup_frac = 0.1;
  std::uint64_t seed = 0;
  std::size_t eval_every = 50;
  std::size_t val_sequences = 512;
  AdamWConfig adam{};  // weight_decay above overrides adam.weight_decay

  void validate() const;
};

struct MetricsRecord {
  std::size_t step = 0;
  double loss = 0.0;        // validation loss
  double accuracy = 0.0;    // validation accuracy over target positions
  double lr = 0.0;          // rate used for this step
  double train_loss = 0.0;  // loss of this step's batch
  std::optional<double> lambda_mean;

  friend bool operator==(const MetricsRecord&, const MetricsRecord&) = default;
};

struct TrainResult {
  ModelParams model;  // last finite model
  std::vector<MetricsRecord> log;
  bool diverged = false;
  std::string error;
};

struct EvalResult {
  double loss;
  double accuracy;
};

/// Mean cross-entropy of the model on a batch, recorded on ops.
Var model_loss(TapeOps& ops, const ModelParams& m, const Batch& batch);

/// Forward-only loss and accuracy over target positions.
EvalResult evaluate(const ModelParams& m, const Batch& batch);

/// AdamW with warmup/linear decay. Validation metrics every eval_every steps
/// and at the final step. A non-finite loss or update stops training with
/// diverged set and the model from before the failing step.
TrainResult train(ModelParams model, const TaskSpec& task, const TrainConfig& cfg);

/// JSON lines: {"step","loss","accuracy","lr","lambda_mean","train_loss"}.
std::string metrics_jsonl(const std::vector<MetricsRecord>& log);

}  // namespace wavy
