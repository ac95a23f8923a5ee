#pragma once

#include <Eigen/Core>

#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace et {

using Index = Eigen::Index;

// Bijection between flat coordinates [0, d) and a p-dimensional grid
// [0,d_1) x ... x [0,d_p), fixed to row-major, zero-based layout
// (last axis varies fastest). Immutable after construction.
class TensorIndex {
 public:
  explicit TensorIndex(std::vector<Index> dims) : dims_(std::move(dims)) {
    if (dims_.empty()) throw std::invalid_argument("TensorIndex: dims must be nonempty");
    for (Index d : dims_) {
      if (d < 1) throw std::invalid_argument("TensorIndex: every dim must be >= 1");
    }
    strides_.assign(dims_.size(), 1);
    total_ = 1;
    for (std::size_t i = dims_.size(); i-- > 0;) {
      strides_[i] = total_;
      if (total_ > std::numeric_limits<Index>::max() / dims_[i])
        throw std::overflow_error("TensorIndex: product of dims overflows");
      total_ *= dims_[i];
    }
  }

  Index total() const { return total_; }
  Index order() const { return static_cast<Index>(dims_.size()); }
  const std::vector<Index>& dims() const { return dims_; }
  const std::vector<Index>& strides() const { return strides_; }

  std::vector<Index> flat_to_multi(Index j) const {
    if (j < 0 || j >= total_)
      throw std::out_of_range("flat_to_multi: index " + std::to_string(j) + " out of range");
    std::vector<Index> multi(dims_.size());
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      multi[i] = j / strides_[i];
      j -= multi[i] * strides_[i];
    }
    return multi;
  }

  Index multi_to_flat(std::span<const Index> multi) const {
    if (multi.size() != dims_.size())
      throw std::out_of_range("multi_to_flat: expected arity " + std::to_string(dims_.size()));
    Index j = 0;
    for (std::size_t i = 0; i < dims_.size(); ++i) {
      if (multi[i] < 0 || multi[i] >= dims_[i])
        throw std::out_of_range("multi_to_flat: component " + std::to_string(i) + " out of range");
      j += multi[i] * strides_[i];
    }
    return j;
  }

  Index multi_to_flat(std::initializer_list<Index> multi) const {
    return multi_to_flat(std::span<const Index>(multi.begin(), multi.size()));
  }

  bool operator==(const TensorIndex& other) const { return dims_ == other.dims_; }

 private:
  std::vector<Index> dims_;
  std::vector<Index> strides_;
  Index total_ = 0;
};

inline TensorIndex make_index(std::vector<Index> dims) { return TensorIndex(std::move(dims)); }

// Row-major odometer over the grid of `dims`. Visits flat indices
// 0..total-1 in order while maintaining the multi-index incrementally,
// so fused loops avoid per-coordinate divisions.
class MultiIndexCursor {
 public:
  explicit MultiIndexCursor(const TensorIndex& index)
      : dims_(index.dims()), multi_(index.dims().size(), 0) {}

  const std::vector<Index>& multi() const { return multi_; }

  void advance() {
    for (std::size_t i = multi_.size(); i-- > 0;) {
      if (++multi_[i] < dims_[i]) return;
      multi_[i] = 0;
    }
  }

 private:
  const std::vector<Index>& dims_;
  std::vector<Index> multi_;
};

}  // namespace et
