#include "dla/ema.hpp"

#include <string>

namespace dla {

void TeacherSchedule::validate() const {
  if (!(pi_dynamic >= 0.0 && pi_dynamic <= 1.0)) throw ConfigError("pi_dynamic must lie in [0,1]");
  if (!(pi_static >= 0.0 && pi_static <= 1.0)) throw ConfigError("pi_static must lie in [0,1]");
  if (pi_static > pi_dynamic)
    throw ConfigError("pi_static (" + std::to_string(pi_static) + ") must not exceed pi_dynamic (" +
                      std::to_string(pi_dynamic) + ")");
  if (n_update < 1) throw ConfigError("n_update must be >= 1");
}

DualTeacherState DualTeacherState::from_source(const ModelParameters& source) {
  return {clone_params(source), clone_params(source), clone_params(source), 0, 0};
}

void ema_update_inplace(ModelParameters& teacher, const ModelParameters& student, double pi) {
  if (!(pi >= 0.0 && pi <= 1.0)) throw ContractViolation("EMA momentum outside [0,1]");
  teacher.require_same_schema(student, "ema_update");
  auto s = student.tensors().begin();
  for (auto& [name, t] : teacher.tensors()) {
    const auto& sv = s->second.values;
    for (std::size_t i = 0; i < t.values.size(); ++i)
      t.values[i] = pi * t.values[i] + (1.0 - pi) * sv[i];
    ++s;
  }
}

ModelParameters ema_update(const ModelParameters& teacher, const ModelParameters& student, double pi) {
  ModelParameters out = teacher;
  ema_update_inplace(out, student, pi);
  return out;
}

DualTeacherState tick(DualTeacherState state, const TeacherSchedule& schedule, bool epoch_ended) {
  ++state.iteration;
  if (state.iteration % static_cast<std::uint64_t>(schedule.n_update) == 0)
    ema_update_inplace(state.dynamic_params, state.student_params, schedule.pi_dynamic);
  if (epoch_ended) {
    ema_update_inplace(state.static_params, state.student_params, schedule.pi_static);
    ++state.epoch;
  }
  return state;
}

}  // namespace dla
