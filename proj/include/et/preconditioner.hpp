#pragma once

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "et/tensor_index.hpp"

namespace et {

// Per-axis second-moment accumulators S^(1..p). Axis i holds, for each
// slice index j, the (optionally decayed) running sum of squared gradient
// entries over the slice with component i equal to j. One writer per
// instance; distinct instances may be updated in parallel.
class SliceAccumulators {
 public:
  SliceAccumulators(TensorIndex index, double epsilon = 1e-8, double beta2 = 1.0)
      : index_(std::move(index)), epsilon_(epsilon), beta2_(beta2) {
    if (epsilon_ < 0) throw std::invalid_argument("SliceAccumulators: epsilon must be >= 0");
    if (beta2_ <= 0 || beta2_ > 1)
      throw std::invalid_argument("SliceAccumulators: beta2 must be in (0, 1]");
    sums_.reserve(index_.dims().size());
    for (Index d : index_.dims()) sums_.push_back(Eigen::VectorXd::Zero(d));
  }

  const TensorIndex& index() const { return index_; }
  const std::vector<Eigen::VectorXd>& sums() const { return sums_; }
  double epsilon() const { return epsilon_; }
  double beta2() const { return beta2_; }
  long steps_seen() const { return steps_seen_; }

  // Decays the stored sums, then adds the fresh slice sums of grad^2.
  // Each gradient coordinate is read exactly once.
  template <typename Derived>
  void accumulate(const Eigen::MatrixBase<Derived>& grad) {
    if (grad.size() != index_.total())
      throw std::invalid_argument("accumulate: gradient length mismatch");
    if (beta2_ != 1.0) {
      for (auto& s : sums_) s *= beta2_;
    }
    const std::size_t p = sums_.size();
    MultiIndexCursor cursor(index_);
    for (Index j = 0; j < index_.total(); ++j, cursor.advance()) {
      const double g = grad(j);
      if (!std::isfinite(g)) throw std::invalid_argument("accumulate: non-finite gradient entry");
      const double g2 = g * g;
      for (std::size_t i = 0; i < p; ++i) sums_[i](cursor.multi()[i]) += g2;
    }
    ++steps_seen_;
  }

  // delta[I] = (eps + prod_i S^(i)[I_i])^(-1/(2p)), given the multi-index.
  double step_size_at(std::span<const Index> multi) const {
    const std::size_t p = sums_.size();
    double prod = 1.0;
    for (std::size_t i = 0; i < p; ++i) prod *= sums_[i](multi[i]);
    const double base = epsilon_ + prod;
    if (base <= 0.0)
      throw std::domain_error("step_sizes: zero slice-sum product with epsilon = 0");
    // p = 1 takes the same arithmetic path as diagonal AdaGrad.
    if (p == 1) return 1.0 / std::sqrt(base);
    return std::pow(base, -1.0 / (2.0 * static_cast<double>(p)));
  }

  // Materializes the full length-d step-size vector. The optimizer fuses
  // this into the parameter update instead; this form exists for
  // diagnostics and tests.
  Eigen::VectorXd step_sizes() const {
    Eigen::VectorXd delta(index_.total());
    MultiIndexCursor cursor(index_);
    for (Index j = 0; j < index_.total(); ++j, cursor.advance())
      delta(j) = step_size_at(cursor.multi());
    return delta;
  }

  // Count of stored accumulator scalars: sum_i d_i.
  Index memory_footprint() const {
    Index n = 0;
    for (const auto& s : sums_) n += s.size();
    return n;
  }

  // Checkpoint support: overwrite the sums with saved state.
  void restore(std::vector<Eigen::VectorXd> sums, long steps_seen) {
    if (sums.size() != sums_.size()) throw std::invalid_argument("restore: axis count mismatch");
    for (std::size_t i = 0; i < sums.size(); ++i)
      if (sums[i].size() != sums_[i].size())
        throw std::invalid_argument("restore: axis length mismatch");
    sums_ = std::move(sums);
    steps_seen_ = steps_seen;
  }

 private:
  TensorIndex index_;
  std::vector<Eigen::VectorXd> sums_;
  double epsilon_;
  double beta2_;
  long steps_seen_ = 0;
};

}  // namespace et
