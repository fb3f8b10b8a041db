#include "wavy/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace wavy {

std::string_view to_string(TaskKind k) {
  return k == TaskKind::kMajorityToken ? "majority_token" : "masked_copy";
}

std::optional<TaskKind> parse_task_kind(std::string_view name) {
  if (name == "majority_token") return TaskKind::kMajorityToken;
  if (name == "masked_copy") return TaskKind::kMaskedCopy;
  return std::nullopt;
}

void TaskSpec::validate() const {
  if (vocab < 2) fail(ErrorCode::kInvalidArgument, "task vocab must be at least 2");
  if (seq_len < 2) fail(ErrorCode::kInvalidArgument, "task sequence length must be at least 2");
  if (!(mask_fraction > 0 && mask_fraction < 1)) {
    fail(ErrorCode::kInvalidArgument, "mask fraction must lie in (0, 1)");
  }
  if (!(majority_bias >= 0 && majority_bias <= 1)) {
    fail(ErrorCode::kInvalidArgument, "majority bias must lie in [0, 1]");
  }
}

int majority_label(std::span<const int> seq) {
  if (seq.empty()) fail(ErrorCode::kInvalidArgument, "empty sequence has no majority");
  const int hi = *std::max_element(seq.begin(), seq.end());
  if (*std::min_element(seq.begin(), seq.end()) < 0) fail(ErrorCode::kInvalidArgument, "negative token id");
  std::vector<std::size_t> counts(static_cast<std::size_t>(hi) + 1, 0);
  for (int t : seq) ++counts[static_cast<std::size_t>(t)];
  // max_element returns the first maximum, i.e. the smallest id.
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

TaskGenerator::TaskGenerator(TaskSpec spec, Prng prng) : spec_(spec), prng_(prng) { spec_.validate(); }

TaskGenerator make_task(const TaskSpec& spec, Prng prng) { return TaskGenerator(spec, prng); }

Batch TaskGenerator::next(std::size_t sequences) {
  const std::size_t n = spec_.seq_len;
  Batch b;
  b.seq_len = n;
  b.sequences = sequences;
  b.tokens.assign(sequences * n, 0);
  b.targets.assign(sequences * n, -1);
  for (std::size_t s = 0; s < sequences; ++s) {
    const std::span<int> tok(b.tokens.data() + s * n, n);
    const std::span<int> tgt(b.targets.data() + s * n, n);
    if (spec_.kind == TaskKind::kMajorityToken) {
      majority_sequence(tok, tgt);
    } else {
      masked_copy_sequence(tok, tgt);
    }
  }
  return b;
}

void TaskGenerator::majority_sequence(std::span<int> tokens, std::span<int> targets) {
  const std::uint64_t v = spec_.vocab;
  const auto planted = prng_.uniform_index(v);
  for (int& t : tokens) {
    if (prng_.uniform() < spec_.majority_bias) {
      t = static_cast<int>(planted);
    } else {
      const auto other = prng_.uniform_index(v - 1);
      t = static_cast<int>(other >= planted ? other + 1 : other);
    }
  }
  std::fill(targets.begin(), targets.end(), majority_label(tokens));
}

void TaskGenerator::masked_copy_sequence(std::span<int> tokens, std::span<int> targets) {
  const std::size_t n = tokens.size();
  const std::size_t half = n / 2;
  for (std::size_t i = 0; i < n - half; ++i) tokens[i] = static_cast<int>(prng_.uniform_index(spec_.vocab));
  for (std::size_t i = n - half; i < n; ++i) tokens[i] = tokens[i - (n - half)];

  const auto masked = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec_.mask_fraction * n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = 0; i < masked; ++i) {
    const std::size_t j = i + prng_.uniform_index(n - i);
    std::swap(order[i], order[j]);
    targets[order[i]] = tokens[order[i]];
    tokens[order[i]] = spec_.mask_id();
  }
}

}  // namespace wavy
