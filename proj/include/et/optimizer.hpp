#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "et/preconditioner.hpp"
#include "et/tensor_index.hpp"

namespace et {

struct LrSchedule {
  enum class Kind { PaperWarmupInvSqrt, Constant };

  Kind kind = Kind::PaperWarmupInvSqrt;
  double c = 1.0;               // global multiplier, shared across groups
  double warmup_slope = 1e-6;

  // eta_t = c * min(slope * t, t^(-1/2)) for the warmup/inv-sqrt kind.
  double lr_at(long t) const {
    if (t < 1) throw std::invalid_argument("lr_at: step must be >= 1");
    if (kind == Kind::Constant) return c;
    const double td = static_cast<double>(t);
    return c * std::min(warmup_slope * td, 1.0 / std::sqrt(td));
  }
};

inline LrSchedule constant_schedule(double c) {
  return LrSchedule{LrSchedule::Kind::Constant, c, 1e-6};
}

enum class Variant { ExtremeTensoring, EtInfinity, Sgd };

// One scalar accumulator per parameter group: running (optionally
// decayed) sum of squared l2 gradient norms.
struct ScalarAccumulator {
  double sum = 0.0;
  double epsilon = 1e-8;
  double beta2 = 1.0;
};

struct ParamGroup {
  std::string name;
  Eigen::VectorXd params;
  Variant variant = Variant::Sgd;
  std::optional<SliceAccumulators> acc;  // ExtremeTensoring only
  ScalarAccumulator scalar;              // EtInfinity only

  static ParamGroup extreme_tensoring(std::string name, Eigen::VectorXd params,
                                      TensorIndex index, double epsilon = 1e-8,
                                      double beta2 = 1.0) {
    if (params.size() != index.total())
      throw std::invalid_argument("ParamGroup: params length must equal index total");
    ParamGroup g;
    g.name = std::move(name);
    g.params = std::move(params);
    g.variant = Variant::ExtremeTensoring;
    g.acc.emplace(std::move(index), epsilon, beta2);
    return g;
  }

  static ParamGroup et_infinity(std::string name, Eigen::VectorXd params,
                                double epsilon = 1e-8, double beta2 = 1.0) {
    ParamGroup g;
    g.name = std::move(name);
    g.params = std::move(params);
    g.variant = Variant::EtInfinity;
    g.scalar = ScalarAccumulator{0.0, epsilon, beta2};
    return g;
  }

  static ParamGroup sgd(std::string name, Eigen::VectorXd params) {
    ParamGroup g;
    g.name = std::move(name);
    g.params = std::move(params);
    g.variant = Variant::Sgd;
    return g;
  }
};

namespace detail {
inline void check_step_args(const ParamGroup& group, const Eigen::VectorXd& grad, double eta) {
  if (grad.size() != group.params.size())
    throw std::invalid_argument("step: gradient length mismatch for group " + group.name);
  if (!(eta > 0)) throw std::invalid_argument("step: eta must be > 0");
}
}  // namespace detail

// Accumulate slice sums, then x[j] -= eta * delta[j] * g[j] with delta
// computed from the post-update accumulators. The step sizes are fused
// into the update; no length-d scratch vector is kept.
inline void et_step(ParamGroup& group, const Eigen::VectorXd& grad, double eta) {
  detail::check_step_args(group, grad, eta);
  SliceAccumulators& acc = *group.acc;
  acc.accumulate(grad);
  MultiIndexCursor cursor(acc.index());
  for (Index j = 0; j < grad.size(); ++j, cursor.advance())
    group.params(j) -= eta * acc.step_size_at(cursor.multi()) * grad(j);
}

inline void et_inf_step(ParamGroup& group, const Eigen::VectorXd& grad, double eta) {
  detail::check_step_args(group, grad, eta);
  if (!grad.allFinite()) throw std::invalid_argument("et_inf_step: non-finite gradient");
  ScalarAccumulator& s = group.scalar;
  s.sum = s.beta2 * s.sum + grad.squaredNorm();
  group.params -= eta / std::sqrt(s.epsilon + s.sum) * grad;
}

inline void sgd_step(ParamGroup& group, const Eigen::VectorXd& grad, double eta) {
  detail::check_step_args(group, grad, eta);
  group.params -= eta * grad;
}

inline void step(ParamGroup& group, const Eigen::VectorXd& grad, double eta) {
  switch (group.variant) {
    case Variant::ExtremeTensoring: et_step(group, grad, eta); break;
    case Variant::EtInfinity: et_inf_step(group, grad, eta); break;
    case Variant::Sgd: sgd_step(group, grad, eta); break;
  }
}

// Gradient for group `gi` at its current params, queried each step.
using GradOracle =
    std::function<Eigen::VectorXd(long t, std::size_t gi, const Eigen::VectorXd& params)>;

// Invoked after every full iteration, on the coordinator context.
using StepHook = std::function<void(long t, double eta, const std::vector<ParamGroup>& groups,
                                    const std::vector<Eigen::VectorXd>& grads)>;

struct RunSummary {
  long steps = 0;
  double final_eta = 0.0;
};

// The iteration loop: all groups share eta_t; iteration t+1 begins only
// after every group finished iteration t.
inline RunSummary run(std::vector<ParamGroup>& groups, const GradOracle& grad_oracle,
                      const LrSchedule& schedule, long T, const StepHook& hook = {}) {
  if (T < 1) throw std::invalid_argument("run: T must be >= 1");
  RunSummary summary;
  std::vector<Eigen::VectorXd> grads(groups.size());
  for (long t = 1; t <= T; ++t) {
    const double eta = schedule.lr_at(t);
    try {
      for (std::size_t gi = 0; gi < groups.size(); ++gi)
        grads[gi] = grad_oracle(t, gi, groups[gi].params);
    } catch (const std::exception& e) {
      throw std::runtime_error("run: gradient oracle failed at step " + std::to_string(t) +
                               ": " + e.what());
    }
    for (std::size_t gi = 0; gi < groups.size(); ++gi) step(groups[gi], grads[gi], eta);
    if (hook) {
      try {
        hook(t, eta, groups, grads);
      } catch (const std::exception& e) {
        throw std::runtime_error("run: hook failed at step " + std::to_string(t) + ": " +
                                 e.what());
      }
    }
    summary.steps = t;
    summary.final_eta = eta;
  }
  return summary;
}

// Proposes near-equal factor dims for a flat length d at depth p:
// prime-factorizes d and greedily multiplies the largest remaining
// factor into the currently-smallest bucket. A convenience only; the
// result is always overridable with explicit dims.
inline std::vector<Index> auto_shape(Index d, Index p) {
  if (d < 1 || p < 1) throw std::invalid_argument("auto_shape: d and p must be >= 1");
  if (p == 1) return {d};
  std::vector<Index> factors;
  Index rem = d;
  for (Index f = 2; f * f <= rem; ++f)
    while (rem % f == 0) {
      factors.push_back(f);
      rem /= f;
    }
  if (rem > 1) factors.push_back(rem);
  if (static_cast<Index>(factors.size()) < p)
    throw std::invalid_argument("auto_shape: " + std::to_string(d) + " has fewer than " +
                                std::to_string(p) + " prime factors");
  std::sort(factors.rbegin(), factors.rend());
  std::vector<Index> dims(p, 1);
  for (Index f : factors)
    *std::min_element(dims.begin(), dims.end()) *= f;
  std::sort(dims.rbegin(), dims.rend());
  return dims;
}

}  // namespace et
