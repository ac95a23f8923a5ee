#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "et/diagnostics.hpp"
#include "et/optimizer.hpp"

using Eigen::VectorXd;
using et::Index;
using et::LossFn;
using et::TensorIndex;

namespace {

VectorXd random_vec(std::mt19937& rng, Index d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = normal(rng);
  return v;
}

std::vector<VectorXd> random_grads(std::mt19937& rng, Index d, int T) {
  std::vector<VectorXd> grads;
  for (int t = 0; t < T; ++t) grads.push_back(random_vec(rng, d));
  return grads;
}

// flat (1,0,0,1) reshaped to 2x2 is the identity pattern
std::vector<VectorXd> identity_pattern() {
  VectorXd g(4);
  g << 1, 0, 0, 1;
  return {g};
}

}  // namespace

TEST_CASE("dense_h_hat basics") {
  VectorXd g(4);
  g << 1, 0, 0, 1;
  CHECK(et::dense_h_hat({g}, 0.0).isApprox(g));

  VectorXd a(2), b(2);
  a << 3, 4;
  b << 0, 0;
  CHECK(et::dense_h_hat({a, b}, 0.0).isApprox(a));
}

TEST_CASE("dense_h_hat matches a naive loop") {
  std::mt19937 rng(2);
  auto grads = random_grads(rng, 8, 5);
  VectorXd got = et::dense_h_hat(grads, 1e-8);
  for (Index j = 0; j < 8; ++j) {
    double s = 1e-8;
    for (const auto& g : grads) s += g(j) * g(j);
    CHECK(got(j) == doctest::Approx(std::sqrt(s)).epsilon(1e-14));
  }
}

TEST_CASE("dense_h on the identity pattern") {
  VectorXd h = et::dense_h(identity_pattern(), TensorIndex({2, 2}), 0.0);
  for (Index j = 0; j < 4; ++j) CHECK(h(j) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("dense_h with p=1 equals dense_h_hat") {
  std::mt19937 rng(6);
  auto grads = random_grads(rng, 12, 7);
  for (double eps : {0.0, 1e-8, 1e-2})
    CHECK(et::dense_h(grads, TensorIndex({12}), eps)
              .isApprox(et::dense_h_hat(grads, eps), 1e-14));
}

TEST_CASE("dense_h all-zero grads gives uniform sqrt(eps)") {
  std::vector<VectorXd> grads = {VectorXd::Zero(6), VectorXd::Zero(6)};
  VectorXd h = et::dense_h(grads, TensorIndex({2, 3}), 1e-4);
  for (Index j = 0; j < 6; ++j) CHECK(h(j) == doctest::Approx(1e-2).epsilon(1e-12));
}

TEST_CASE("dense oracles refuse beyond the dense limit") {
  std::vector<VectorXd> grads = {VectorXd::Zero(et::kDenseLimit + 1)};
  CHECK_THROWS_AS(et::dense_h_hat(grads, 0.0), std::invalid_argument);
}

TEST_CASE("dominance on the identity pattern") {
  auto report = et::check_dominance(identity_pattern(), TensorIndex({2, 2}), 0.0);
  CHECK(report.pass);
  CHECK(report.max_violation <= 0.0);
}

TEST_CASE("dominance holds on random sequences") {
  std::mt19937 rng(8);
  std::vector<std::vector<Index>> shapes = {{64}, {8, 8}, {4, 4, 4}, {2, 4, 2, 4}};
  for (int trial = 0; trial < 25; ++trial) {
    for (const auto& dims : shapes) {
      TensorIndex index(dims);
      auto grads = random_grads(rng, index.total(), 8);
      for (double eps : {0.0, 1e-8, 1e-2})
        CHECK(et::check_dominance(grads, index, eps).pass);
    }
  }
}

TEST_CASE("dominance violation is exactly zero at p=1") {
  std::mt19937 rng(10);
  auto grads = random_grads(rng, 16, 6);
  auto report = et::check_dominance(grads, TensorIndex({16}), 1e-8);
  CHECK(report.max_violation == 0.0);
}

TEST_CASE("traces and ratio on the identity pattern") {
  auto tr = et::traces_and_ratio(identity_pattern(), TensorIndex({2, 2}), 0.0);
  CHECK(tr.trace_h == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(tr.trace_h_hat == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(tr.ratio == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("ratio is exactly 1 at p=1 and >= 1 otherwise") {
  std::mt19937 rng(12);
  auto grads = random_grads(rng, 16, 5);
  auto tr1 = et::traces_and_ratio(grads, TensorIndex({16}), 1e-8);
  CHECK(std::abs(tr1.ratio - 1.0) <= 1e-14);
  auto tr2 = et::traces_and_ratio(grads, TensorIndex({4, 4}), 1e-8);
  CHECK(tr2.ratio >= 1.0);
}

TEST_CASE("undefined ratio with zero grads and eps = 0") {
  std::vector<VectorXd> grads = {VectorXd::Zero(4)};
  CHECK_THROWS_AS(et::traces_and_ratio(grads, TensorIndex({2, 2}), 0.0), std::domain_error);
}

TEST_CASE("fused step sizes equal 1/dense_h at eps = 0 on positive-sum coordinates") {
  std::mt19937 rng(14);
  TensorIndex index({3, 4});
  auto grads = random_grads(rng, 12, 6);
  et::SliceAccumulators acc(index, 0.0, 1.0);
  for (const auto& g : grads) acc.accumulate(g);
  VectorXd h = et::dense_h(grads, index, 0.0);
  VectorXd delta = acc.step_sizes();
  for (Index j = 0; j < 12; ++j) CHECK(delta(j) == doctest::Approx(1.0 / h(j)).epsilon(1e-13));
}

TEST_CASE("hindsight optimum of a quadratic") {
  // f(x) = ||x - b||^2 summed over 3 copies
  VectorXd b(3);
  b << 1, -2, 0.5;
  std::vector<LossFn> losses;
  for (int i = 0; i < 3; ++i)
    losses.push_back(LossFn{[b](const VectorXd& x) { return (x - b).squaredNorm(); },
                            [b](const VectorXd& x) { return (2.0 * (x - b)).eval(); }});
  VectorXd x_star = et::hindsight_optimum(losses, 3);
  CHECK((x_star - b).norm() < 1e-8);
}

TEST_CASE("regret report on identical 1-D quadratics") {
  // f_t(x) = (x - 1)^2, optimizer converging toward 1
  const int T = 50;
  std::vector<LossFn> losses;
  std::vector<VectorXd> iterates, grads;
  VectorXd x = VectorXd::Zero(1);
  for (int t = 0; t < T; ++t) {
    losses.push_back(LossFn{[](const VectorXd& v) { return (v(0) - 1) * (v(0) - 1); },
                            [](const VectorXd& v) {
                              return VectorXd::Constant(1, 2 * (v(0) - 1)).eval();
                            }});
    iterates.push_back(x);
    grads.push_back(VectorXd::Constant(1, 2 * (x(0) - 1)));
    x(0) += 0.25 * (1 - x(0));  // any convergent update
  }
  auto record = et::regret_report(losses, iterates, grads, TensorIndex({1}), 1e-8);
  CHECK(std::abs(record.x_star(0) - 1.0) < 1e-7);
  double expected_regret = 0.0;
  for (const auto& it : iterates) expected_regret += (it(0) - 1) * (it(0) - 1);
  CHECK(record.regret == doctest::Approx(expected_regret).epsilon(1e-6));
  CHECK(record.d_inf == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(record.bound >= 0.0);
}

TEST_CASE("regret report on zero losses") {
  std::vector<LossFn> losses;
  std::vector<VectorXd> iterates, grads;
  for (int t = 0; t < 5; ++t) {
    losses.push_back(LossFn{[](const VectorXd&) { return 0.0; },
                            [](const VectorXd& v) { return VectorXd::Zero(v.size()).eval(); }});
    iterates.push_back(VectorXd::Constant(2, 0.5));
    grads.push_back(VectorXd::Zero(2));
  }
  auto record = et::regret_report(losses, iterates, grads, TensorIndex({2}), 1e-8);
  CHECK(record.regret == doctest::Approx(0.0));
  CHECK(record.bound >= 0.0);
}

TEST_CASE("bound is nondecreasing as losses are appended") {
  // losses share a minimizer so x* stays put; traces and D_inf then only grow
  std::mt19937 rng(19);
  const Index d = 8;
  TensorIndex index({2, 4});
  const VectorXd b = random_vec(rng, d);
  std::vector<LossFn> losses;
  std::vector<VectorXd> iterates, grads;
  VectorXd x = VectorXd::Zero(d);
  double prev_bound = 0.0;
  for (int t = 0; t < 12; ++t) {
    const VectorXd a = random_vec(rng, d).cwiseAbs() + VectorXd::Constant(d, 0.1);
    losses.push_back(LossFn{
        [a, b](const VectorXd& v) { return 0.5 * (a.array() * (v - b).array().square()).sum(); },
        [a, b](const VectorXd& v) { return VectorXd((a.array() * (v - b).array()).matrix()); }});
    iterates.push_back(x);
    grads.push_back((a.array() * (x - b).array()).matrix());
    x -= 0.1 * grads.back();
    auto record = et::regret_report(losses, iterates, grads, index, 1e-8);
    CHECK(record.bound >= prev_bound - 1e-9);
    prev_bound = record.bound;
  }
}

TEST_CASE("memory report fixtures") {
  std::vector<et::GroupShapeSpec> groups = {
      {"attn", {512, 512}, {{"et1", {512, 512}}, {"et2", {16, 32, 16, 32}},
                            {"et3", {4, 4, 4, 8, 4, 4, 4, 8}}}},
      {"embed", {2000, 512}, {{"et3", {5, 8, 5, 10, 4, 4, 4, 8}}}},
      {"bias", {512}, {}},
  };
  auto report = et::memory_report(groups);
  auto count_of = [&](const std::string& group, const std::string& level) {
    for (const auto& row : report.rows)
      if (row.group == group && row.level == level) return row.count;
    return Index(-1);
  };
  CHECK(count_of("attn", "et1") == 1024);
  CHECK(count_of("attn", "et2") == 96);
  CHECK(count_of("attn", "et3") == 40);
  CHECK(count_of("embed", "et3") == 48);
  CHECK(count_of("bias", "adagrad") == 512);
  CHECK(count_of("bias", "etinf") == 1);
  CHECK(count_of("bias", "sgd_state") == 0);
  CHECK(report.totals.at("sgd_table1") == 1);
}

TEST_CASE("memory report rejects mismatched dims") {
  std::vector<et::GroupShapeSpec> groups = {{"w", {4, 4}, {{"et2", {2, 2, 2}}}}};
  CHECK_THROWS_AS(et::memory_report(groups), std::invalid_argument);
}
