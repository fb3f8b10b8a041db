#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "wavy/numerics.hpp"

namespace wavy {

enum class TaskKind { kMajorityToken, kMaskedCopy };

std::string_view to_string(TaskKind k);
std::optional<TaskKind> parse_task_kind(std::string_view name);

struct TaskSpec {
  TaskKind kind = TaskKind::kMajorityToken;
  std::size_t vocab = 16;
  std::size_t seq_len = 16;
  double mask_fraction = 0.15;  // masked_copy
  /// majority_token: probability that a position holds the planted token.
  double majority_bias = 0.4;
  std::uint64_t seed = 0;

  void validate() const;
  /// masked_copy reserves id vocab as MASK.
  std::size_t input_vocab() const noexcept { return kind == TaskKind::kMaskedCopy ? vocab + 1 : vocab; }
  std::size_t output_vocab() const noexcept { return vocab; }
  int mask_id() const noexcept { return static_cast<int>(vocab); }
};

/// batch sequences stored back to back; targets are -1 where no loss applies.
struct Batch {
  std::vector<int> tokens;
  std::vector<int> targets;
  std::size_t seq_len = 0;
  std::size_t sequences = 0;
};

/// Modal token, ties broken toward the smaller id.
int majority_label(std::span<const int> seq);

class TaskGenerator {
 public:
  TaskGenerator(TaskSpec spec, Prng prng);
  Batch next(std::size_t sequences);
  const TaskSpec& spec() const noexcept { return spec_; }

 private:
  void majority_sequence(std::span<int> tokens, std::span<int> targets);
  void masked_copy_sequence(std::span<int> tokens, std::span<int> targets);

  TaskSpec spec_;
  Prng prng_;
};

/// majority_token: each position is a planted token with probability
/// majority_bias, otherwise uniform over the remaining ids; every position is
/// labelled with the sequence's mode.
/// masked_copy: the second half repeats the first; round(mask_fraction * n)
/// positions (at least one) are replaced by MASK and labelled with their
/// original id.
TaskGenerator make_task(const TaskSpec& spec, Prng prng);

}  // namespace wavy
