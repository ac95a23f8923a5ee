#pragma once

#include <Eigen/Core>
#include <Eigen/QR>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "et/diagnostics.hpp"
#include "et/optimizer.hpp"
#include "et/tensor_index.hpp"

namespace et {

// Gaussian draws via Box-Muller on mt19937_64, so sampling is
// bit-reproducible (std::normal_distribution is implementation-defined).
class GaussianSampler {
 public:
  explicit GaussianSampler(std::uint64_t seed) : rng_(seed) {}

  double operator()() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform_(rng_);
    } while (u1 <= 0.0);
    u2 = uniform_(rng_);
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  double uniform() { return uniform_(rng_); }

  Eigen::MatrixXd matrix(Index rows, Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j) m(i, j) = (*this)();
    return m;
  }

 private:
  std::mt19937_64 rng_;
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  double spare_ = 0.0;
  bool have_spare_ = false;
};

struct SyntheticProblem {
  Eigen::MatrixXd data;     // n x d_feat samples x_i (rows)
  Eigen::VectorXi labels;   // n labels in [0, k)
  Eigen::MatrixXd w_true;   // k x d_feat generator W
  double cond_target = 1.0;
  std::uint64_t seed = 0;

  Index n() const { return data.rows(); }
  Index d_feat() const { return data.cols(); }
  Index k() const { return w_true.rows(); }
};

// Samples z ~ N(0, I), scales axis i by a log-spaced factor in
// [1, sqrt(cond_target)] (covariance eigenvalues then log-spaced in
// [1, cond_target]) and applies a random orthogonal rotation. Labels
// drawn from the softmax of W x.
inline SyntheticProblem generate(Index n, Index d_feat, Index k, double cond_target,
                                 std::uint64_t seed) {
  if (n < 1 || d_feat < 1 || k < 1)
    throw std::invalid_argument("generate: n, d_feat, k must be >= 1");
  if (cond_target < 1.0) throw std::invalid_argument("generate: cond_target must be >= 1");
  GaussianSampler gauss(seed);

  Eigen::VectorXd scales(d_feat);
  const double log_max = 0.5 * std::log(cond_target);
  for (Index i = 0; i < d_feat; ++i) {
    const double frac = d_feat == 1 ? 0.0 : static_cast<double>(i) / (d_feat - 1);
    scales(i) = std::exp(frac * log_max);
  }

  // Orthogonal rotation: Q from the QR of a Gaussian matrix, with the
  // sign fixed by R's diagonal so the draw is unique.
  Eigen::MatrixXd a = gauss.matrix(d_feat, d_feat);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Index i = 0; i < d_feat; ++i)
    if (r(i, i) < 0) q.col(i) = -q.col(i);

  SyntheticProblem prob;
  prob.cond_target = cond_target;
  prob.seed = seed;
  Eigen::MatrixXd z = gauss.matrix(n, d_feat);
  prob.data = z * scales.asDiagonal() * q.transpose();
  prob.w_true = gauss.matrix(k, d_feat);

  prob.labels.resize(n);
  for (Index i = 0; i < n; ++i) {
    Eigen::VectorXd logits = prob.w_true * prob.data.row(i).transpose();
    Eigen::VectorXd probs = (logits.array() - logits.maxCoeff()).exp();
    probs /= probs.sum();
    const double u = gauss.uniform();
    double cum = 0.0;
    Index label = k - 1;
    for (Index j = 0; j < k; ++j) {
      cum += probs(j);
      if (u < cum) {
        label = j;
        break;
      }
    }
    prob.labels(i) = static_cast<int>(label);
  }
  return prob;
}

// Mean negative log-probability of the labels under softmax(W x) and its
// gradient, flattened row-major over the k x d_feat parameter (class
// axis first, matching a (k, d_1, ..., d_m) tensor index on the
// feature axis).
inline std::pair<double, Eigen::VectorXd> loss_and_grad(
    const SyntheticProblem& prob, const Eigen::VectorXd& w_flat,
    const std::vector<Index>& batch = {}) {
  const Index k = prob.k();
  const Index d = prob.d_feat();
  if (w_flat.size() != k * d)
    throw std::invalid_argument("loss_and_grad: parameter length must be k * d_feat");
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> w(
      w_flat.data(), k, d);

  Eigen::MatrixXd x;     // b x d
  Eigen::VectorXi y;     // b
  if (batch.empty()) {
    x = prob.data;
    y = prob.labels;
  } else {
    x.resize(static_cast<Index>(batch.size()), d);
    y.resize(static_cast<Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      if (batch[i] < 0 || batch[i] >= prob.n())
        throw std::out_of_range("loss_and_grad: batch index out of range");
      x.row(static_cast<Index>(i)) = prob.data.row(batch[i]);
      y(static_cast<Index>(i)) = prob.labels(batch[i]);
    }
  }
  const Index b = x.rows();
  if (b == 0) throw std::invalid_argument("loss_and_grad: empty batch");

  Eigen::MatrixXd scores = x * w.transpose();  // b x k
  Eigen::VectorXd row_max = scores.rowwise().maxCoeff();
  Eigen::MatrixXd p = (scores.colwise() - row_max).array().exp();
  Eigen::VectorXd z = p.rowwise().sum();
  double loss = 0.0;
  for (Index i = 0; i < b; ++i) {
    p.row(i) /= z(i);
    loss -= scores(i, y(i)) - row_max(i) - std::log(z(i));
  }
  loss /= static_cast<double>(b);

  for (Index i = 0; i < b; ++i) p(i, y(i)) -= 1.0;  // p - onehot(y)
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> grad_mat =
      (p.transpose() * x) / static_cast<double>(b);
  return {loss, Eigen::Map<Eigen::VectorXd>(grad_mat.data(), k * d)};
}

struct SweepLevel {
  std::string name;
  std::vector<Index> dims;  // product must equal k * d_feat
};

inline Index shape_total_of(const std::vector<Index>& dims) {
  Index total = 1;
  for (Index d : dims) total *= d;
  return total;
}

struct LevelResult {
  std::string name;
  std::vector<Index> dims;
  Index memory = 0;        // sum of dims
  double best_c = 0.0;
  double final_loss = 0.0;
  double trace_ratio = 0.0;   // sqrt(Tr H_T / Tr H_hat_T) over the final run
  std::vector<double> curve;  // curve[t-1] = f(x_t); last entry is the post-run loss
  std::vector<double> etas;
};

inline std::vector<double> default_c_grid() {
  // 10^{-3..2} in half-decade steps
  std::vector<double> grid;
  for (int e = -6; e <= 4; ++e) grid.push_back(std::pow(10.0, 0.5 * e));
  return grid;
}

namespace detail {
inline LevelResult run_level(const SyntheticProblem& prob, const SweepLevel& level, double c,
                             long T, double epsilon, double beta2) {
  TensorIndex index(level.dims);
  ParamGroup group = ParamGroup::extreme_tensoring(
      level.name, Eigen::VectorXd::Zero(index.total()), index, epsilon, beta2);
  LrSchedule sched{LrSchedule::Kind::PaperWarmupInvSqrt, c, 1e-6};
  LevelResult res;
  res.name = level.name;
  res.dims = level.dims;
  for (Index d : level.dims) res.memory += d;
  res.best_c = c;

  std::vector<ParamGroup> groups;
  groups.push_back(std::move(group));
  TraceAccumulator traces(index);
  run(
      groups,
      [&](long, std::size_t, const Eigen::VectorXd& w) {
        auto [loss, grad] = loss_and_grad(prob, w);
        res.curve.push_back(loss);  // loss at the pre-step iterate
        traces.add(grad);
        return grad;
      },
      sched, T,
      [&](long t, double eta, const std::vector<ParamGroup>&,
          const std::vector<Eigen::VectorXd>&) {
        (void)t;
        res.etas.push_back(eta);
      });
  // curve[t-1] holds f(x_t); append the post-run loss as the final value.
  res.final_loss = loss_and_grad(prob, groups[0].params).first;
  res.curve.push_back(res.final_loss);
  res.trace_ratio = traces.finalize(epsilon).ratio;
  return res;
}
}  // namespace detail

// For each level: tune c over the grid on a short prefix (best final
// loss kept), then run the full horizon with the winner.
inline std::vector<LevelResult> run_sweep(const SyntheticProblem& prob,
                                          const std::vector<SweepLevel>& levels, long T,
                                          const std::vector<double>& c_grid = default_c_grid(),
                                          long tune_steps = 0, double epsilon = 1e-8,
                                          double beta2 = 1.0) {
  if (T < 1) throw std::invalid_argument("run_sweep: T must be >= 1");
  if (c_grid.empty()) throw std::invalid_argument("run_sweep: empty tuning grid");
  const Index total = prob.k() * prob.d_feat();
  for (const auto& level : levels)
    if (shape_total_of(level.dims) != total)
      throw std::invalid_argument("run_sweep: dims product mismatch for level " + level.name);
  if (tune_steps <= 0) tune_steps = std::min<long>(T, 500);

  std::vector<LevelResult> results;
  for (const auto& level : levels) {
    double best_c = c_grid.front();
    double best_loss = std::numeric_limits<double>::infinity();
    for (double c : c_grid) {
      LevelResult probe = detail::run_level(prob, level, c, tune_steps, epsilon, beta2);
      if (std::isfinite(probe.final_loss) && probe.final_loss < best_loss) {
        best_loss = probe.final_loss;
        best_c = c;
      }
    }
    results.push_back(detail::run_level(prob, level, best_c, T, epsilon, beta2));
  }
  return results;
}

// ---- binary persistence ----
// Layout: magic "ETSYN001", then int64 n, d_feat, k, uint64 seed,
// float64 cond_target, then row-major float64 samples, int64 labels,
// row-major float64 W. Little-endian throughout.

inline void save_problem(const SyntheticProblem& prob, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_problem: cannot open " + path);
  out.write("ETSYN001", 8);
  auto put_i64 = [&](std::int64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  auto put_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  put_i64(prob.n());
  put_i64(prob.d_feat());
  put_i64(prob.k());
  put_i64(static_cast<std::int64_t>(prob.seed));
  put_f64(prob.cond_target);
  for (Index i = 0; i < prob.n(); ++i)
    for (Index j = 0; j < prob.d_feat(); ++j) put_f64(prob.data(i, j));
  for (Index i = 0; i < prob.n(); ++i) put_i64(prob.labels(i));
  for (Index i = 0; i < prob.k(); ++i)
    for (Index j = 0; j < prob.d_feat(); ++j) put_f64(prob.w_true(i, j));
  if (!out) throw std::runtime_error("save_problem: write failed for " + path);
}

inline SyntheticProblem load_problem(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_problem: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::string(magic, 8) != "ETSYN001")
    throw std::runtime_error("load_problem: bad magic in " + path);
  auto get_i64 = [&]() {
    std::int64_t v;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto get_f64 = [&]() {
    double v;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  const Index n = get_i64();
  const Index d = get_i64();
  const Index k = get_i64();
  SyntheticProblem prob;
  prob.seed = static_cast<std::uint64_t>(get_i64());
  prob.cond_target = get_f64();
  prob.data.resize(n, d);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < d; ++j) prob.data(i, j) = get_f64();
  prob.labels.resize(n);
  for (Index i = 0; i < n; ++i) prob.labels(i) = static_cast<int>(get_i64());
  prob.w_true.resize(k, d);
  for (Index i = 0; i < k; ++i)
    for (Index j = 0; j < d; ++j) prob.w_true(i, j) = get_f64();
  if (!in) throw std::runtime_error("load_problem: truncated file " + path);
  return prob;
}

}  // namespace et
