#include "wavy/train.hpp"

#include <cmath>

#include "wavy/diagnostics.hpp"
#include "wavy/flows.hpp"

namespace wavy {

void TrainConfig::validate() const {
  if (batch == 0) fail(ErrorCode::kInvalidArgument, "batch must be positive");
  if (!(lr >= 0)) fail(ErrorCode::kInvalidArgument, "lr must be nonnegative");
  if (!(weight_decay >= 0)) fail(ErrorCode::kInvalidArgument, "weight_decay must be nonnegative");
  if (!(warmup_frac >= 0 && warmup_frac <= 1)) fail(ErrorCode::kInvalidArgument, "warmup_frac must lie in [0, 1]");
  if (eval_every == 0) fail(ErrorCode::kInvalidArgument, "eval_every must be positive");
  if (val_sequences == 0) fail(ErrorCode::kInvalidArgument, "val_sequences must be positive");
}

Var model_loss(TapeOps& ops, const ModelParams& m, const Batch& batch) {
  auto f = flows::model_forward(ops, batch.tokens, batch.seq_len, m);
  return ops.cross_entropy(f.logits, batch.targets);
}

EvalResult evaluate(const ModelParams& m, const Batch& batch) {
  const ModelOutput out = model_forward(batch.tokens, batch.seq_len, m);
  const Matrix& z = out.logits;
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < batch.targets.size(); ++i) {
    const int y = batch.targets[i];
    if (y == -1) continue;
    const auto row = z.row(i);
    std::size_t arg = 0;
    double mx = row[0];
    for (std::size_t j = 1; j < row.size(); ++j) {
      if (row[j] > mx) {
        mx = row[j];
        arg = j;
      }
    }
    double se = 0.0;
    for (double v : row) se += std::exp(v - mx);
    loss += mx + std::log(se) - row[static_cast<std::size_t>(y)];
    correct += arg == static_cast<std::size_t>(y) ? 1 : 0;
    ++count;
  }
  if (count == 0) fail(ErrorCode::kInvalidArgument, "evaluation batch has no targets");
  return {loss / static_cast<double>(count), static_cast<double>(correct) / static_cast<double>(count)};
}

namespace {

bool model_finite(ModelParams& m) {
  for (const auto& p : m.parameters()) {
    if (!all_finite(*p.value)) return false;
  }
  return true;
}

}  // namespace

TrainResult train(ModelParams model, const TaskSpec& task, const TrainConfig& cfg) {
  cfg.validate();
  task.validate();
  model.validate();
  if (task.input_vocab() > model.vocab() || task.output_vocab() > model.vocab_out()) {
    fail(ErrorCode::kVocabOverflow, "task vocabulary exceeds the model's");
  }
  if (task.seq_len > model.max_len()) fail(ErrorCode::kShapeMismatch, "task sequence exceeds max_len");

  Prng root(cfg.seed);
  TaskGenerator train_gen = make_task(task, root.split());
  TaskGenerator val_gen = make_task(task, Prng(task.seed));
  const Batch val = val_gen.next(cfg.val_sequences);

  TrainResult result;
  AdamWConfig adam = cfg.adam;
  adam.weight_decay = cfg.weight_decay;
  AdamW opt(adam);
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const Batch batch = train_gen.next(cfg.batch);
    const double lr = lr_schedule(step, cfg.steps, cfg.lr, cfg.warmup_frac);

    Tape tape;
    TapeOps ops(tape);
    Var loss;
    try {
      loss = model_loss(ops, model, batch);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNonFinite) throw;
      result.diverged = true;
      result.error = "non-finite forward pass at step " + std::to_string(step) + ": " + e.what();
      break;
    }
    const double train_loss = tape.value(loss)(0, 0);
    if (!std::isfinite(train_loss)) {
      result.diverged = true;
      result.error = "non-finite loss at step " + std::to_string(step);
      break;
    }
    tape.backward(loss);
    const auto params = model.parameters();
    std::vector<Matrix> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(ops.param_grad(*p.value));

    ModelParams before = model;
    opt.step(params, grads, lr);
    if (!model_finite(model)) {
      model = std::move(before);
      result.diverged = true;
      result.error = "non-finite parameters after step " + std::to_string(step);
      break;
    }

    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      EvalResult ev;
      try {
        ev = evaluate(model, val);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::kNonFinite) throw;
        model = std::move(before);
        result.diverged = true;
        result.error = std::string("validation diverged: ") + e.what();
        break;
      }
      result.log.push_back({step, ev.loss, ev.accuracy, lr, train_loss, model.lambda_mean()});
    }
  }
  result.model = std::move(model);
  return result;
}

std::string metrics_jsonl(const std::vector<MetricsRecord>& log) {
  std::string out;
  for (const auto& r : log) {
    out += "{\"step\":" + std::to_string(r.step) + ",\"loss\":" + format_double(r.loss) +
           ",\"accuracy\":" + format_double(r.accuracy) + ",\"lr\":" + format_double(r.lr) +
           ",\"lambda_mean\":" + (r.lambda_mean ? format_double(*r.lambda_mean) : std::string("null")) +
           ",\"train_loss\":" + format_double(r.train_loss) + "}\n";
  }
  return out;
}

}  // namespace wavy
