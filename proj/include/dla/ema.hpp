#pragma once

#include <cstdint>

#include "dla/params.hpp"

namespace dla {

/// Dynamic teacher: larger momentum, updated every `n_update` iterations.
/// Static teacher: smaller momentum, updated once per epoch.
struct TeacherSchedule {
  double pi_dynamic = 0.99;
  double pi_static = 0.60;
  std::int64_t n_update = 1;

  /// Requires 0 <= pi_static <= pi_dynamic <= 1 and n_update >= 1.
  void validate() const;
};

struct DualTeacherState {
  ModelParameters static_params;
  ModelParameters dynamic_params;
  ModelParameters student_params;
  std::uint64_t iteration = 0;
  std::uint64_t epoch = 0;

  /// All three models start as copies of the source weights.
  static DualTeacherState from_source(const ModelParameters& source);
};

/// teacher <- pi * teacher + (1 - pi) * student, as a fresh parameter set.
ModelParameters ema_update(const ModelParameters& teacher, const ModelParameters& student, double pi);
void ema_update_inplace(ModelParameters& teacher, const ModelParameters& student, double pi);

/// Advances the iteration counter, refreshes the dynamic teacher when the
/// new count is a multiple of n_update, and the static teacher (plus the
/// epoch counter) when `epoch_ended` is set.
DualTeacherState tick(DualTeacherState state, const TeacherSchedule& schedule, bool epoch_ended);

}  // namespace dla
