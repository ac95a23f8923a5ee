// etopt: experiments, verification suites, and memory reports.
// Exit codes: 0 = pass, 1 = property failure, 2 = usage/config error.

#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "et/diagnostics.hpp"
#include "et/io.hpp"
#include "et/optimizer.hpp"
#include "et/synthetic.hpp"
#include "et/tensor_index.hpp"

using Eigen::VectorXd;
using nlohmann::json;
using et::Index;
using et::TensorIndex;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitPropertyFailure = 1;
constexpr int kExitUsage = 2;

json load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return json::parse(in);
}

VectorXd gaussian_vec(std::mt19937_64& rng, Index d) {
  std::normal_distribution<double> normal(0.0, 1.0);
  VectorXd v(d);
  for (Index i = 0; i < d; ++i) v(i) = normal(rng);
  return v;
}

void write_json(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open output file: " + path);
  out << j.dump(2) << "\n";
}

// ---------- verify ----------

json default_verify_config() {
  return json{
      {"seed", 1},
      {"epsilon", 1e-8},
      {"dominance", {{"trials", 20}, {"max_T", 20},
                     {"shapes", json::array({{64}, {8, 8}, {4, 4, 4}, {2, 2, 4, 4}})}}},
      {"equivalence", {{"d", 64}, {"T", 200}}},
      {"regret", {{"dims", {4, 8}}, {"T", 500}, {"trials", 5}}},
  };
}

struct QuadraticSequence {
  std::vector<VectorXd> curvatures;
  std::vector<VectorXd> centers;
};

et::RegretRecord regret_once(const QuadraticSequence& seq, const TensorIndex& index, double eta,
                             double epsilon) {
  const Index d = index.total();
  std::vector<et::ParamGroup> groups;
  groups.push_back(et::ParamGroup::extreme_tensoring("x", VectorXd::Zero(d), index, epsilon, 1.0));
  std::vector<VectorXd> iterates, grads;
  et::run(
      groups,
      [&](long t, std::size_t, const VectorXd& x) {
        iterates.push_back(x);
        VectorXd g = (seq.curvatures[t - 1].array() * (x - seq.centers[t - 1]).array()).matrix();
        grads.push_back(g);
        return g;
      },
      et::constant_schedule(eta), static_cast<long>(seq.centers.size()));
  std::vector<et::LossFn> losses;
  for (std::size_t t = 0; t < seq.centers.size(); ++t) {
    const VectorXd a = seq.curvatures[t], b = seq.centers[t];
    losses.push_back(et::LossFn{
        [a, b](const VectorXd& x) { return 0.5 * (a.array() * (x - b).array().square()).sum(); },
        [a, b](const VectorXd& x) { return VectorXd((a.array() * (x - b).array()).matrix()); }});
  }
  return et::regret_report(losses, iterates, grads, index, epsilon);
}

int cmd_verify(const json& cfg, const std::string& out_dir) {
  const std::uint64_t seed = cfg.value("seed", 1);
  const double epsilon = cfg.value("epsilon", 1e-8);
  std::mt19937_64 rng(seed);
  json report;
  bool all_pass = true;

  // Guard: epsilon = 0 cannot support zero-gradient prefixes.
  if (epsilon == 0.0) {
    et::SliceAccumulators probe(TensorIndex({2, 2}), 0.0, 1.0);
    probe.accumulate(VectorXd::Zero(4));
    try {
      probe.step_sizes();
    } catch (const std::domain_error& e) {
      std::cerr << "config error: epsilon = 0 is unusable (division by zero: " << e.what()
                << "); set epsilon > 0\n";
      return kExitUsage;
    }
  }

  {
    const auto& dcfg = cfg.at("dominance");
    const int trials = dcfg.value("trials", 20);
    const int max_T = dcfg.value("max_T", 20);
    double worst = 0.0;
    bool pass = true;
    for (int trial = 0; trial < trials; ++trial) {
      for (const auto& shape : dcfg.at("shapes")) {
        TensorIndex index(shape.get<std::vector<Index>>());
        std::vector<VectorXd> grads;
        const int T = 1 + static_cast<int>(rng() % max_T);
        for (int t = 0; t < T; ++t) grads.push_back(gaussian_vec(rng, index.total()));
        auto rep = et::check_dominance(grads, index, epsilon);
        worst = std::max(worst, rep.max_violation);
        pass = pass && rep.pass;
        if (index.order() == 1 && rep.max_violation > 0.0) pass = false;  // exact at p=1
      }
    }
    report["dominance"] = {{"max_violation", worst}, {"pass", pass}};
    all_pass = all_pass && pass;
  }

  {
    const auto& ecfg = cfg.at("equivalence");
    const Index d = ecfg.value("d", 64);
    const long T = ecfg.value("T", 200);
    auto group =
        et::ParamGroup::extreme_tensoring("w", VectorXd::Zero(d), TensorIndex({d}), epsilon, 1.0);
    VectorXd x_ref = VectorXd::Zero(d), sq = VectorXd::Zero(d);
    VectorXd a = gaussian_vec(rng, d).cwiseAbs() + VectorXd::Constant(d, 0.1);
    VectorXd b = gaussian_vec(rng, d);
    double max_rel = 0.0;
    for (long t = 1; t <= T; ++t) {
      VectorXd g = (a.array() * (group.params - b).array()).matrix();
      et::et_step(group, g, 0.5);
      VectorXd gr = (a.array() * (x_ref - b).array()).matrix();
      sq += gr.cwiseAbs2();
      for (Index j = 0; j < d; ++j) x_ref(j) -= 0.5 * gr(j) / std::sqrt(epsilon + sq(j));
      for (Index j = 0; j < d; ++j)
        max_rel = std::max(max_rel, std::abs(group.params(j) - x_ref(j)) /
                                        std::max(1.0, std::abs(x_ref(j))));
    }
    const bool pass = max_rel <= 1e-12;
    report["equivalence"] = {{"max_rel_deviation", max_rel}, {"pass", pass}};
    all_pass = all_pass && pass;
  }

  {
    const auto& rcfg = cfg.at("regret");
    TensorIndex index(rcfg.at("dims").get<std::vector<Index>>());
    const long T = rcfg.value("T", 500);
    const int trials = rcfg.value("trials", 5);
    int passed = 0;
    for (int trial = 0; trial < trials; ++trial) {
      QuadraticSequence seq;
      for (long t = 0; t < T; ++t) {
        seq.curvatures.push_back(gaussian_vec(rng, index.total()).cwiseAbs() * 0.45 +
                                 VectorXd::Constant(index.total(), 0.1));
        seq.centers.push_back(gaussian_vec(rng, index.total()));
      }
      auto probe = regret_once(seq, index, 0.1, epsilon);
      auto final = regret_once(seq, index, et::prescribed_eta(probe), epsilon);
      if (final.regret <= final.bound) ++passed;
    }
    const bool pass = passed == trials;
    report["regret"] = {{"trials", trials}, {"trials_passed", passed}, {"pass", pass}};
    all_pass = all_pass && pass;
  }

  report["pass"] = all_pass;
  if (!out_dir.empty()) write_json(report, out_dir + "/verify_report.json");
  std::cout << report.dump(2) << "\n";
  return all_pass ? kExitPass : kExitPropertyFailure;
}

// ---------- synthetic ----------

json preset_config(const std::string& preset) {
  if (preset == "paper")
    return json{{"n", 10000}, {"d_feat", 512}, {"k", 10}, {"cond", 1e4},
                {"seed", 2024}, {"T", 5000},
                {"levels", {{{"name", "et1"}, {"dims", {10, 512}}},
                            {{"name", "et2"}, {"dims", {10, 16, 32}}},
                            {{"name", "et3"}, {"dims", {10, 8, 8, 8}}}}}};
  if (preset == "ci")
    return json{{"n", 2000}, {"d_feat", 128}, {"k", 10}, {"cond", 1e4},
                {"seed", 2025}, {"T", 5000},
                {"levels", {{{"name", "et1"}, {"dims", {10, 128}}},
                            {{"name", "et2"}, {"dims", {10, 8, 16}}},
                            {{"name", "et3"}, {"dims", {10, 4, 8, 4}}}}}};
  throw std::runtime_error("unknown preset: " + preset);
}

// Tunes c and runs one non-tensored variant (etinf or sgd) the same way
// run_sweep treats tensor levels.
et::LevelResult run_scalar_level(const et::SyntheticProblem& prob, const std::string& variant,
                                 long T, const std::vector<double>& c_grid, double epsilon) {
  auto run_once = [&](double c, long steps) {
    et::ParamGroup group =
        variant == "etinf"
            ? et::ParamGroup::et_infinity(variant, VectorXd::Zero(prob.k() * prob.d_feat()),
                                          epsilon, 1.0)
            : et::ParamGroup::sgd(variant, VectorXd::Zero(prob.k() * prob.d_feat()));
    et::LrSchedule sched{et::LrSchedule::Kind::PaperWarmupInvSqrt, c, 1e-6};
    et::LevelResult res;
    res.name = variant;
    res.memory = variant == "etinf" ? 1 : 0;
    res.best_c = c;
    std::vector<et::ParamGroup> groups;
    groups.push_back(std::move(group));
    et::run(
        groups,
        [&](long, std::size_t, const VectorXd& w) {
          auto [loss, grad] = et::loss_and_grad(prob, w);
          res.curve.push_back(loss);
          return grad;
        },
        sched, steps,
        [&](long, double eta, const auto&, const auto&) { res.etas.push_back(eta); });
    res.final_loss = et::loss_and_grad(prob, groups[0].params).first;
    res.curve.push_back(res.final_loss);
    res.trace_ratio = 1.0;  // non-tensored preconditioner: p=1 corollary case
    return res;
  };
  const long tune_steps = std::min<long>(T, 500);
  double best_c = c_grid.front();
  double best_loss = std::numeric_limits<double>::infinity();
  for (double c : c_grid) {
    auto probe = run_once(c, tune_steps);
    if (std::isfinite(probe.final_loss) && probe.final_loss < best_loss) {
      best_loss = probe.final_loss;
      best_c = c;
    }
  }
  return run_once(best_c, T);
}

int cmd_synthetic(json cfg, const std::string& out_dir, const std::string& level_filter) {
  if (out_dir.empty() || !std::filesystem::is_directory(out_dir)) {
    std::cerr << "config error: --out must name an existing directory\n";
    return kExitUsage;
  }
  auto prob = et::generate(cfg.at("n").get<Index>(), cfg.at("d_feat").get<Index>(),
                           cfg.at("k").get<Index>(), cfg.at("cond").get<double>(),
                           cfg.at("seed").get<std::uint64_t>());
  const long T = cfg.value("T", 5000L);
  const double epsilon = cfg.value("epsilon", 1e-8);
  std::vector<double> c_grid = et::default_c_grid();
  if (cfg.contains("c_grid")) c_grid = cfg.at("c_grid").get<std::vector<double>>();

  const Index total = prob.k() * prob.d_feat();
  std::vector<et::SweepLevel> tensor_levels;
  std::vector<std::string> scalar_levels;
  auto want = [&](const std::string& name) {
    return level_filter.empty() || level_filter == name;
  };
  for (const auto& level : cfg.at("levels")) {
    const std::string name = level.at("name").get<std::string>();
    if (want(name)) tensor_levels.push_back({name, level.at("dims").get<std::vector<Index>>()});
  }
  if (want("adagrad") && level_filter == "adagrad")
    tensor_levels.push_back({"adagrad", {total}});
  for (const std::string& v : {"etinf", "sgd"})
    if (level_filter == v) scalar_levels.push_back(v);
  if (tensor_levels.empty() && scalar_levels.empty()) {
    std::cerr << "config error: no levels selected (filter '" << level_filter << "')\n";
    return kExitUsage;
  }

  std::vector<et::LevelResult> results;
  if (!tensor_levels.empty()) results = et::run_sweep(prob, tensor_levels, T, c_grid,
                                                      0, epsilon);
  for (const auto& v : scalar_levels)
    results.push_back(run_scalar_level(prob, v, T, c_grid, epsilon));

  json summary = json::array();
  for (const auto& r : results) {
    et::CsvWriter csv(out_dir + "/curves_" + r.name + ".csv", {"step", "loss", "eta"});
    for (std::size_t i = 0; i + 1 < r.curve.size(); ++i)
      csv.row({std::to_string(i + 1), et::format_double(r.curve[i]),
               et::format_double(r.etas[i])});
    summary.push_back({{"level", r.name},
                       {"memory", r.memory},
                       {"best_c", r.best_c},
                       {"final_loss", r.final_loss},
                       {"trace_ratio", r.trace_ratio}});
  }
  write_json(summary, out_dir + "/summary.json");
  std::cout << summary.dump(2) << "\n";
  return kExitPass;
}

// ---------- memory report ----------

int cmd_memory_report(const json& cfg, const std::string& out_dir) {
  std::vector<et::GroupShapeSpec> groups;
  for (const auto& g : cfg.at("groups")) {
    et::GroupShapeSpec spec;
    spec.name = g.at("name").get<std::string>();
    spec.shape = g.at("shape").get<std::vector<Index>>();
    if (g.contains("levels"))
      for (const auto& [level, dims] : g.at("levels").items())
        spec.levels.emplace_back(level, dims.get<std::vector<Index>>());
    groups.push_back(std::move(spec));
  }
  auto report = et::memory_report(groups);

  std::printf("%-24s %-12s %10s\n", "group", "level", "count");
  for (const auto& row : report.rows)
    std::printf("%-24s %-12s %10lld\n", row.group.c_str(), row.level.c_str(),
                static_cast<long long>(row.count));
  std::printf("totals:\n");
  json jtotals;
  for (const auto& [level, total] : report.totals) {
    std::printf("%-24s %-12s %10lld\n", "", level.c_str(), static_cast<long long>(total));
    jtotals[level] = total;
  }

  if (!out_dir.empty()) {
    json out;
    out["rows"] = json::array();
    for (const auto& row : report.rows)
      out["rows"].push_back({{"group", row.group}, {"level", row.level}, {"count", row.count}});
    out["totals"] = jtotals;
    write_json(out, out_dir + "/memory_report.json");
  }
  return kExitPass;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"extreme-tensoring optimizer experiments and verification"};
  app.require_subcommand(1);

  std::string config_path, out_dir, preset, level;
  std::uint64_t seed = 0;

  auto* verify = app.add_subcommand("verify", "run the verification property suite");
  auto* synthetic = app.add_subcommand("synthetic", "run the synthetic convex experiment");
  auto* memory = app.add_subcommand("memory-report", "accumulator-count report for shapes");

  CLI::Option* seed_opt = nullptr;
  for (auto* sub : {verify, synthetic, memory}) {
    sub->add_option("--config", config_path, "JSON config file");
    sub->add_option("--out", out_dir, "output directory");
    seed_opt = sub->add_option("--seed", seed, "RNG seed override");
  }
  synthetic->add_option("--preset", preset, "named preset: paper or ci")
      ->check(CLI::IsMember({"paper", "ci"}));
  synthetic->add_option("--level", level, "run a single level")
      ->check(CLI::IsMember({"adagrad", "et1", "et2", "et3", "etinf", "sgd"}));

  CLI11_PARSE(app, argc, argv);
  bool seed_set = false;
  for (auto* sub : {verify, synthetic, memory})
    if (sub->parsed() && sub->count("--seed") > 0) seed_set = true;
  (void)seed_opt;

  try {
    json cfg;
    if (!config_path.empty()) cfg = load_config(config_path);

    if (verify->parsed()) {
      if (cfg.is_null()) cfg = default_verify_config();
      if (seed_set) cfg["seed"] = seed;
      return cmd_verify(cfg, out_dir);
    }
    if (synthetic->parsed()) {
      if (cfg.is_null()) cfg = preset_config(preset.empty() ? "ci" : preset);
      else if (!preset.empty()) cfg = preset_config(preset);
      if (seed_set) cfg["seed"] = seed;
      return cmd_synthetic(cfg, out_dir, level);
    }
    if (memory->parsed()) {
      if (cfg.is_null()) {
        std::cerr << "config error: memory-report requires --config\n";
        return kExitUsage;
      }
      return cmd_memory_report(cfg, out_dir);
    }
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
