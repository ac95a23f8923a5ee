#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "et/preconditioner.hpp"
#include "et/tensor_index.hpp"

namespace et {

// Dense oracles exist to verify, not to scale; they refuse above this.
inline constexpr Index kDenseLimit = 10000;

// Relative tolerance for the dominance check (64-bit diagnostics path).
inline constexpr double kDominanceTol = 1e-12;

namespace detail {
// (eps + s)^(1/(2p)); the p = 1 case takes the same sqrt path as the
// dense AdaGrad diagonal so the corollary holds bit-exactly.
inline double axis_root(double base, Index p) {
  if (p == 1) return std::sqrt(base);
  return std::pow(base, 1.0 / (2.0 * static_cast<double>(p)));
}

inline void check_dense(const std::vector<Eigen::VectorXd>& grads, Index d) {
  if (d > kDenseLimit)
    throw std::invalid_argument("dense oracle: d exceeds the dense limit of " +
                                std::to_string(kDenseLimit));
  for (const auto& g : grads)
    if (g.size() != d) throw std::invalid_argument("dense oracle: gradient length mismatch");
}
}  // namespace detail

// Diagonal of the dense AdaGrad regularizer: entry j = sqrt(eps + sum_t g_t[j]^2).
inline Eigen::VectorXd dense_h_hat(const std::vector<Eigen::VectorXd>& grads, double epsilon) {
  if (grads.empty()) throw std::invalid_argument("dense_h_hat: empty gradient sequence");
  const Index d = grads.front().size();
  detail::check_dense(grads, d);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  for (const auto& g : grads) sq += g.cwiseAbs2();
  return (sq.array() + epsilon).sqrt();
}

// Diagonal of the tensor-product regularizer, per-axis-epsilon form:
// entry j = prod_i (eps + sum_t slice_sum_i[multi(j)_i])^(1/(2p)).
inline Eigen::VectorXd dense_h(const std::vector<Eigen::VectorXd>& grads,
                               const TensorIndex& index, double epsilon) {
  if (grads.empty()) throw std::invalid_argument("dense_h: empty gradient sequence");
  detail::check_dense(grads, index.total());
  SliceAccumulators acc(index, 0.0, 1.0);
  for (const auto& g : grads) acc.accumulate(g);
  Eigen::VectorXd h(index.total());
  MultiIndexCursor cursor(index);
  for (Index j = 0; j < index.total(); ++j, cursor.advance()) {
    double prod = 1.0;
    for (Index i = 0; i < index.order(); ++i)
      prod *= detail::axis_root(epsilon + acc.sums()[i](cursor.multi()[i]), index.order());
    h(j) = prod;
  }
  return h;
}

struct DominanceReport {
  double max_violation = 0.0;  // max relative excess of h_hat over h
  bool pass = true;
};

// Checks h_hat[j] <= h[j] at every prefix t <= T and every coordinate.
inline DominanceReport check_dominance(const std::vector<Eigen::VectorXd>& grads,
                                       const TensorIndex& index, double epsilon) {
  if (grads.empty()) throw std::invalid_argument("check_dominance: empty gradient sequence");
  detail::check_dense(grads, index.total());
  const Index d = index.total();
  SliceAccumulators acc(index, 0.0, 1.0);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(d);
  DominanceReport report;
  for (const auto& g : grads) {
    acc.accumulate(g);
    sq += g.cwiseAbs2();
    MultiIndexCursor cursor(index);
    for (Index j = 0; j < d; ++j, cursor.advance()) {
      const double h_hat = std::sqrt(epsilon + sq(j));
      double h = 1.0;
      for (Index i = 0; i < index.order(); ++i)
        h *= detail::axis_root(epsilon + acc.sums()[i](cursor.multi()[i]), index.order());
      const double scale = std::max(h_hat, 1.0);
      report.max_violation = std::max(report.max_violation, (h_hat - h) / scale);
    }
  }
  report.pass = report.max_violation <= kDominanceTol;
  return report;
}

struct TraceReport {
  double trace_h = 0.0;
  double trace_h_hat = 0.0;
  double ratio = 0.0;  // sqrt(trace_h / trace_h_hat)
};

// Streaming trace computation: O(d) state, no stored gradient history.
class TraceAccumulator {
 public:
  explicit TraceAccumulator(TensorIndex index)
      : index_(std::move(index)),
        acc_(index_, 0.0, 1.0),
        sq_(Eigen::VectorXd::Zero(index_.total())) {}

  void add(const Eigen::VectorXd& grad) {
    acc_.accumulate(grad);
    sq_ += grad.cwiseAbs2();
  }

  TraceReport finalize(double epsilon) const {
    TraceReport r;
    // Sequential sums in flat order, so the p = 1 traces are identical.
    for (Index j = 0; j < index_.total(); ++j) r.trace_h_hat += std::sqrt(epsilon + sq_(j));
    MultiIndexCursor cursor(index_);
    for (Index j = 0; j < index_.total(); ++j, cursor.advance()) {
      double prod = 1.0;
      for (Index i = 0; i < index_.order(); ++i)
        prod *= detail::axis_root(epsilon + acc_.sums()[i](cursor.multi()[i]), index_.order());
      r.trace_h += prod;
    }
    if (r.trace_h_hat == 0.0)
      throw std::domain_error("traces_and_ratio: Tr(H_hat) = 0, ratio undefined");
    r.ratio = std::sqrt(r.trace_h / r.trace_h_hat);
    return r;
  }

 private:
  TensorIndex index_;
  SliceAccumulators acc_;
  Eigen::VectorXd sq_;
};

inline TraceReport traces_and_ratio(const std::vector<Eigen::VectorXd>& grads,
                                    const TensorIndex& index, double epsilon) {
  detail::check_dense(grads, index.total());
  TraceAccumulator ta(index);
  for (const auto& g : grads) ta.add(g);
  return ta.finalize(epsilon);
}

// One online convex loss f_t: value and gradient at a point.
struct LossFn {
  std::function<double(const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> grad;
};

// Deterministic full-gradient descent with Armijo backtracking on the
// summed loss. Stops at gradient norm <= tol.
inline Eigen::VectorXd hindsight_optimum(const std::vector<LossFn>& losses, Index d,
                                         double tol = 1e-9, long max_iters = 1000000) {
  auto total_value = [&](const Eigen::VectorXd& x) {
    double v = 0.0;
    for (const auto& f : losses) v += f.value(x);
    return v;
  };
  auto total_grad = [&](const Eigen::VectorXd& x) {
    Eigen::VectorXd g = Eigen::VectorXd::Zero(d);
    for (const auto& f : losses) g += f.grad(x);
    return g;
  };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(d);
  double fx = total_value(x);
  // Absolute resolution of the summed objective; decreases smaller than this
  // are invisible to an Armijo test, so the line search switches to a
  // gradient-based acceptance criterion once it reaches that regime.
  const auto f_floor = [&]() { return 1e-12 * std::max(1.0, std::abs(fx)); };
  double step = 1.0;
  for (long it = 0; it < max_iters; ++it) {
    Eigen::VectorXd g = total_grad(x);
    const double gnorm = g.norm();
    if (gnorm <= tol) return x;
    // Estimate the curvature along -g from a gradient probe at the last
    // accepted step length; for near-quadratic objectives this yields the
    // exact line-search step gnorm^2 / (g^T H g), which stays reliable even
    // when function-value differences fall below the resolution of fx.
    {
      const double probe = std::clamp(step, 1e-12, 1e12);
      const Eigen::VectorXd gp = total_grad(x - probe * g);
      const double curv = (g - gp).dot(g) / probe;
      if (curv > 0.0 && std::isfinite(curv))
        step = gnorm * gnorm / curv;
      else
        step = std::min(step * 2.0, 1e12);
    }
    while (true) {
      Eigen::VectorXd cand = x - step * g;
      const double fc = total_value(cand);
      if (fc <= fx - 1e-4 * step * gnorm * gnorm) {
        x = std::move(cand);
        fx = fc;
        break;
      }
      // Noise regime: the required decrease is below fx's resolution.
      // Accept on non-increase of f (up to its resolution) plus strict
      // gradient-norm contraction, which the curvature-matched step
      // delivers for smooth convex objectives.
      if (1e-4 * step * gnorm * gnorm <= f_floor() && fc <= fx + f_floor() &&
          total_grad(cand).norm() < gnorm) {
        x = std::move(cand);
        fx = std::min(fc, fx);
        break;
      }
      step *= 0.5;
      if (step < 1e-300)
        throw std::runtime_error("hindsight_optimum: line search collapsed");
    }
  }
  throw std::runtime_error("hindsight_optimum: no convergence within iteration cap");
}

struct RegretRecord {
  long T = 0;
  double regret = 0.0;       // sum f_t(x_t) - sum f_t(x*)
  double d_inf = 0.0;        // max_t ||x_t - x*||_inf
  double trace_h = 0.0;
  double trace_h_hat = 0.0;
  double bound = 0.0;        // d_inf * sqrt(2 * trace_h * trace_h_hat)
  double ratio = 0.0;
  Eigen::VectorXd x_star;
};

inline RegretRecord regret_report(const std::vector<LossFn>& losses,
                                  const std::vector<Eigen::VectorXd>& iterates,
                                  const std::vector<Eigen::VectorXd>& grads,
                                  const TensorIndex& index, double epsilon) {
  if (losses.size() != iterates.size() || losses.size() != grads.size())
    throw std::invalid_argument("regret_report: losses, iterates, grads must align");
  RegretRecord r;
  r.T = static_cast<long>(losses.size());
  r.x_star = hindsight_optimum(losses, index.total());
  for (std::size_t t = 0; t < losses.size(); ++t) {
    r.regret += losses[t].value(iterates[t]) - losses[t].value(r.x_star);
    r.d_inf = std::max(r.d_inf, (iterates[t] - r.x_star).lpNorm<Eigen::Infinity>());
  }
  const TraceReport tr = traces_and_ratio(grads, index, epsilon);
  r.trace_h = tr.trace_h;
  r.trace_h_hat = tr.trace_h_hat;
  r.ratio = tr.ratio;
  r.bound = r.d_inf * std::sqrt(2.0 * r.trace_h * r.trace_h_hat);
  return r;
}

// The constant learning rate for which the two regret terms balance:
// eta = D_inf * sqrt(Tr H) / sqrt(2 Tr H_hat).
inline double prescribed_eta(const RegretRecord& r) {
  return r.d_inf * std::sqrt(r.trace_h) / std::sqrt(2.0 * r.trace_h_hat);
}

// ---- memory accounting ----

struct GroupShapeSpec {
  std::string name;
  std::vector<Index> shape;
  // level name -> explicit accumulator dims for that level
  std::vector<std::pair<std::string, std::vector<Index>>> levels;
};

struct MemoryRow {
  std::string group;
  std::string level;
  Index count = 0;
};

struct MemoryReport {
  std::vector<MemoryRow> rows;
  std::map<std::string, Index> totals;  // per level, summed over groups
};

inline Index shape_total(const std::vector<Index>& shape) {
  Index total = 1;
  for (Index s : shape) total *= s;
  return total;
}

// Per group: sum_i d_i for each configured level, plus the fixed
// conventions adagrad = d, etinf = 1, and both SGD conventions
// (0 state scalars; 1 under the global-learning-rate counting).
inline MemoryReport memory_report(const std::vector<GroupShapeSpec>& groups) {
  MemoryReport report;
  auto emit = [&](const std::string& group, const std::string& level, Index count) {
    report.rows.push_back({group, level, count});
    report.totals[level] += count;
  };
  for (const auto& g : groups) {
    const Index d = shape_total(g.shape);
    for (const auto& [level, dims] : g.levels) {
      if (shape_total(dims) != d)
        throw std::invalid_argument("memory_report: dims product for level '" + level +
                                    "' of group '" + g.name + "' does not match shape");
      Index count = 0;
      for (Index di : dims) count += di;
      emit(g.name, level, count);
    }
    emit(g.name, "adagrad", d);
    emit(g.name, "etinf", 1);
    emit(g.name, "sgd_state", 0);
  }
  // SGD stores no per-group state; the single scalar is the global
  // learning rate, counted once under the other convention.
  report.totals["sgd_table1"] = groups.empty() ? 0 : 1;
  return report;
}

}  // namespace et
