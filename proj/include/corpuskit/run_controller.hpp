#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <deque>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "corpuskit/errors.hpp"

namespace corpuskit::run {

// Linear warmup from 0 to peak, then linear decay to 0 at total_steps.
struct LrSchedule {
  double peak = 1e-4;
  std::uint64_t warmup_steps = 2000;
  std::uint64_t total_steps = 0;

  void validate() const {
    if (!(peak > 0.0)) throw std::invalid_argument("peak learning rate must be positive");
    if (warmup_steps == 0 || warmup_steps >= total_steps)
      throw std::invalid_argument("need 0 < warmup_steps < total_steps");
  }
};

inline double lr_at(std::uint64_t step, const LrSchedule& s) {
  s.validate();
  if (step > s.total_steps)
    throw OutOfRange("step " + std::to_string(step) + " beyond total_steps " + std::to_string(s.total_steps));
  if (step <= s.warmup_steps) return s.peak * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  return s.peak * (static_cast<double>(s.total_steps - step) / static_cast<double>(s.total_steps - s.warmup_steps));
}

using TokenId = std::uint32_t;

template <typename F>
concept ConditionalProbability = requires(F f, std::span<const TokenId> prefix, TokenId next) {
  { f(prefix, next) } -> std::convertible_to<double>;
};

struct CrossEntropy {
  double nats_per_token = 0.0;
  double perplexity = 1.0;
};

// -(1/T) sum_t ln P(x_t | x_<t). The oracle is queried once per position
// with the prefix and the observed next token.
template <ConditionalProbability Oracle>
CrossEntropy cross_entropy(Oracle&& oracle, std::span<const TokenId> seq) {
  if (seq.empty()) throw std::invalid_argument("sequence must contain at least one token");
  double sum = 0.0;
  double comp = 0.0;  // Kahan compensation
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const double p = static_cast<double>(oracle(seq.first(t), seq[t]));
    if (!(p > 0.0) || !(p <= 1.0))
      throw InvalidDistribution("probability " + std::to_string(p) + " at position " + std::to_string(t));
    const double y = -std::log(p) - comp;
    const double next = sum + y;
    comp = (next - sum) - y;
    sum = next;
  }
  const double ce = sum / static_cast<double>(seq.size());
  return {ce, std::exp(ce)};
}

struct Checkpoint {
  std::uint64_t step = 0;
  std::string tag;
  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

struct ControllerConfig {
  std::size_t window = 50;        // losses in the rolling window
  double k = 4.0;                 // spike when loss > mean + k * std
  std::uint64_t stable_steps = 200;  // calm steps before the multiplier is restored
  double reduced_multiplier = 0.7;
};

enum class Phase { Normal, Recovering };

struct ControllerState {
  Phase phase = Phase::Normal;
  double lr_multiplier = 1.0;
  std::deque<double> loss_window;
  std::vector<Checkpoint> checkpoints;
  std::uint64_t stable_count = 0;
  std::uint64_t current_step = 0;

  friend bool operator==(const ControllerState&, const ControllerState&) = default;
};

enum class ActionKind { None, Rollback, RestoreLr };

struct Action {
  ActionKind kind = ActionKind::None;
  std::uint64_t to_step = 0;  // Rollback only
  double lr_multiplier = 1.0;

  friend bool operator==(const Action&, const Action&) = default;
};

inline const char* to_string(ActionKind k) {
  switch (k) {
    case ActionKind::None: return "NONE";
    case ActionKind::Rollback: return "ROLLBACK";
    case ActionKind::RestoreLr: return "RESTORE_LR";
  }
  return "?";
}

inline ControllerState record_checkpoint(ControllerState state, std::uint64_t step, std::string tag) {
  if (!state.checkpoints.empty() && step <= state.checkpoints.back().step)
    throw NonMonotonicStep("checkpoint step " + std::to_string(step) + " is not after " +
                           std::to_string(state.checkpoints.back().step));
  state.checkpoints.push_back({step, std::move(tag)});
  return state;
}

inline std::optional<Checkpoint> latest_before(const ControllerState& state, std::uint64_t step) {
  std::optional<Checkpoint> best;
  for (const auto& c : state.checkpoints)
    if (c.step < step) best = c;
  return best;
}

inline bool is_spike(const ControllerState& state, double loss, const ControllerConfig& cfg) {
  if (!std::isfinite(loss)) return true;
  if (cfg.window == 0 || state.loss_window.size() < cfg.window) return false;
  double mean = 0.0;
  for (const double v : state.loss_window) mean += v;
  mean /= static_cast<double>(state.loss_window.size());
  double var = 0.0;
  for (const double v : state.loss_window) var += (v - mean) * (v - mean);
  var /= static_cast<double>(state.loss_window.size());
  return loss > mean + cfg.k * std::sqrt(var);
}

// One loss observation for state.current_step.
//  - spike: roll back to the newest checkpoint strictly before the current
//    step, scale LR by the reduced multiplier, clear the window. Checkpoints
//    after the target belong to the abandoned timeline and are dropped.
//  - recovering and `stable_steps` calm steps in a row: restore the LR.
//  - otherwise: append the loss and advance.
inline std::pair<ControllerState, Action> controller_step(ControllerState state, double loss,
                                                          const ControllerConfig& cfg = {}) {
  if (is_spike(state, loss, cfg)) {
    const auto target = latest_before(state, state.current_step);
    if (!target) throw NoCheckpointAvailable();
    std::erase_if(state.checkpoints, [&](const Checkpoint& c) { return c.step > target->step; });
    state.phase = Phase::Recovering;
    state.lr_multiplier = cfg.reduced_multiplier;
    state.current_step = target->step;
    state.loss_window.clear();
    state.stable_count = 0;
    return {std::move(state), Action{ActionKind::Rollback, target->step, cfg.reduced_multiplier}};
  }

  state.loss_window.push_back(loss);
  while (state.loss_window.size() > cfg.window) state.loss_window.pop_front();
  ++state.current_step;
  ++state.stable_count;

  if (state.phase == Phase::Recovering && state.stable_count >= cfg.stable_steps) {
    state.phase = Phase::Normal;
    state.lr_multiplier = 1.0;
    return {std::move(state), Action{ActionKind::RestoreLr, 0, 1.0}};
  }
  return {std::move(state), Action{ActionKind::None, 0, state.lr_multiplier}};
}

inline double effective_lr(const ControllerState& state, const LrSchedule& schedule) {
  return lr_at(state.current_step, schedule) * state.lr_multiplier;
}

struct TraceRow {
  std::uint64_t step = 0;     // step the loss was observed at
  double effective_lr = 0.0;  // LR in force for that step
  Action action;

  friend bool operator==(const TraceRow&, const TraceRow&) = default;
};

// Replays the controller over a loss stream. A checkpoint is recorded
// whenever the step counter reaches a positive multiple of the interval
// (i.e. after that many steps have completed).
inline std::vector<TraceRow> simulate_run(const LrSchedule& schedule, std::span<const double> losses,
                                          std::uint64_t checkpoint_interval, const ControllerConfig& cfg = {}) {
  schedule.validate();
  if (losses.empty()) throw std::invalid_argument("loss stream is empty");
  if (checkpoint_interval == 0) throw std::invalid_argument("checkpoint interval must be positive");
  ControllerState state;
  std::vector<TraceRow> trace;
  trace.reserve(losses.size());
  for (const double loss : losses) {
    const std::uint64_t step = state.current_step;
    if (step > 0 && step % checkpoint_interval == 0 &&
        (state.checkpoints.empty() || state.checkpoints.back().step < step))
      state = record_checkpoint(std::move(state), step, "step-" + std::to_string(step));
    const double lr = effective_lr(state, schedule);
    auto [next, action] = controller_step(std::move(state), loss, cfg);
    state = std::move(next);
    trace.push_back({step, lr, action});
  }
  return trace;
}

}  // namespace corpuskit::run
