#include "hpcf/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "hpcf/rng.hpp"

namespace hpcf {

double GradReport::worst_rel() const {
  double worst = 0.0;
  for (const auto& in : inputs) worst = std::max(worst, in.max_rel_diff);
  return worst;
}

std::string GradReport::summary() const {
  std::string s;
  char line[256];
  std::snprintf(line, sizeof(line), "%-28s %s (tol %.1e)\n", op.c_str(),
                pass ? "PASS" : "FAIL", tol);
  s += line;
  for (const auto& in : inputs) {
    std::snprintf(line, sizeof(line),
                  "  %-24s rel %.3e abs %.3e at [%zu] analytic=%.6e numeric=%.6e (%zu checked)%s\n",
                  in.name.c_str(), in.max_rel_diff, in.max_abs_diff, in.worst_index, in.analytic_at_worst,
                  in.numeric_at_worst, in.checked, in.pass ? "" : "  <-- FAIL");
    s += line;
  }
  return s;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                        double eps) {
  if (eps <= 0) throw Error("finite_diff_grad: eps must be positive");
  NoGradGuard off;
  Tensor probe = Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()));
  std::vector<double> g(x.numel());
  auto vals = probe.raw_data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double saved = vals[i];
    vals[i] = saved + eps;
    const double fp = f(probe);
    vals[i] = saved - eps;
    const double fm = f(probe);
    vals[i] = saved;
    g[i] = (fp - fm) / (2.0 * eps);
  }
  return Tensor::from_data(x.shape(), std::move(g));
}

namespace {

std::vector<std::size_t> sample_indices(std::size_t n, int k, Rng rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (k <= 0 || static_cast<std::size_t>(k) >= n) return idx;
  // Partial Fisher-Yates: the first k slots become the sample.
  for (int i = 0; i < k; ++i) {
    const int j = rng.uniform_int(i, static_cast<int>(n) - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradReport gradcheck(std::string op_name, const std::function<Tensor()>& forward,
                     std::span<const std::pair<std::string, Tensor>> leaves,
                     const GradCheckOptions& opt) {
  GradReport report;
  report.op = std::move(op_name);
  report.tol = opt.tol;

  // Analytic pass.
  std::vector<std::vector<double>> analytic;
  analytic.reserve(leaves.size());
  {
    for (auto& [name, leaf] : leaves) {
      if (!leaf.requires_grad()) {
        throw Error("gradcheck: leaf '" + name + "' does not require grad");
      }
      Tensor(leaf).zero_grad();
    }
    Tensor loss = forward();
    loss.backward();
    for (auto& [name, leaf] : leaves) {
      auto g = leaf.grad();
      analytic.emplace_back(g.begin(), g.end());
      if (analytic.back().empty()) analytic.back().assign(leaf.numel(), 0.0);
    }
  }

  // Numeric passes with the tape disabled.
  NoGradGuard off;
  Rng seed_rng(opt.sample_seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    const auto& name = leaves[li].first;
    Tensor leaf = leaves[li].second;
    auto vals = leaf.raw_data();
    GradReport::InputReport ir;
    ir.name = name;
    const auto indices =
        sample_indices(leaf.numel(), opt.max_samples_per_input, seed_rng.stream(name));
    for (std::size_t i : indices) {
      const double saved = vals[i];
      vals[i] = saved + opt.eps;
      const double fp = forward().value();
      vals[i] = saved - opt.eps;
      const double fm = forward().value();
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * opt.eps);
      const double a = analytic[li][i];
      const double abs_diff = std::abs(a - numeric);
      const double rel =
          abs_diff / std::max({std::abs(a), std::abs(numeric), opt.rel_floor});
      if (rel > ir.max_rel_diff) {
        ir.max_rel_diff = rel;
        ir.worst_index = i;
        ir.analytic_at_worst = a;
        ir.numeric_at_worst = numeric;
      }
      ir.max_abs_diff = std::max(ir.max_abs_diff, abs_diff);
      ++ir.checked;
    }
    ir.pass = ir.max_rel_diff <= opt.tol;
    report.pass = report.pass && ir.pass;
    report.inputs.push_back(std::move(ir));
  }
  return report;
}

}  // namespace hpcf
