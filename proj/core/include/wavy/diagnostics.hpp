#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "wavy/attention.hpp"
#include "wavy/dynamics.hpp"
#include "wavy/numerics.hpp"

namespace wavy {

/// Mean pairwise cosine similarity over ordered pairs i != j. Needs n >= 2;
/// throws ZeroRow when a row norm is below 1e-300.
double cosine_similarity(const Matrix& x);

/// X-bar = A X
Matrix attention_weighted_mean(const Matrix& x, const AttentionMatrix& a);

/// Symmetry tolerance for the energy diagnostics.
inline constexpr double kSymmetryTolerance = 1e-10;

struct PotentialEnergyForms {
  double quadratic;  // 1/2 sum_ij X_i^T (I - A)_ij X_j
  double pairwise;   // 1/4 sum_ij A_ij |X_j - X_i|^2
};

/// Both forms, unchecked apart from symmetry. The quadratic form is evaluated
/// on column-centred X, which leaves it unchanged for doubly stochastic A.
PotentialEnergyForms potential_energy_forms(const Matrix& x, const AttentionMatrix& a_sym);

/// Pairwise-form value after cross-checking the quadratic form to 1e-10
/// relative. Throws AsymmetricInput or FormMismatch.
double potential_energy(const Matrix& x, const AttentionMatrix& a_sym);

/// 1/2 sum_i |Y_i|^2 + U(X)
double wave_energy(const Matrix& x, const Matrix& y, const AttentionMatrix& a_sym);

/// |(X' - AX) - (1 - tau)(X - AX)|_inf
double deviation_contraction_residual(const Matrix& x_next, const Matrix& x, const AttentionMatrix& a,
                                      double tau);

/// |X - AX|_F
double deviation_norm(const Matrix& x, const AttentionMatrix& a);

struct TraceRecord {
  std::size_t step = 0;
  double cos_sim = 0.0;
  double potential_energy = 0.0;
  std::optional<double> wave_energy;
  double deviation_norm = 0.0;
  double max_abs = 0.0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct Trace {
  std::vector<TraceRecord> records;

  /// Strictly increasing steps, finite values.
  void validate() const;
};

/// One record per rollout state, steps numbered from 0.
Trace record_trace(const std::vector<DynamicsState>& rollout, const AttentionMatrix& a_sym);

/// One record per layer snapshot. Energies are measured against the uniform
/// attention graph; wave_energy is absent.
Trace record_trace(const std::vector<Matrix>& layer_states);

inline constexpr std::string_view kTraceCsvHeader =
    "step,cos_sim,potential_energy,wave_energy,deviation_norm,max_abs";

/// Header plus one row per record, %.17g floats, '\n' endings. An absent
/// wave_energy is an empty field.
std::string emit_csv(const Trace& trace);
void write_csv(const Trace& trace, const std::string& path);
Trace parse_trace_csv(std::string_view csv);

/// %.17g rendering shared by every text output.
std::string format_double(double v);

}  // namespace wavy
