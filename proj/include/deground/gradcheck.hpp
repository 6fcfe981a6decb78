#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "deground/tape.hpp"

namespace deground {

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  /// Denominator floor for the relative error, so gradients that are zero
  /// in both routes compare as abs error / floor.
  double floor = 1e-6;
  /// Only parameters for which this returns true are checked (all if empty).
  std::function<bool(const std::string&)> filter;
};

/// Scalar loss built on a fresh tape bound to the store.
using LossFn = std::function<Var(Tape&)>;

inline double eval_loss(const LossFn& fn, ParamStore& params) {
  Tape tape(params);
  auto loss = fn(tape);
  const double v = loss.value().item();
  if (!std::isfinite(v)) throw Error("gradcheck: non-finite loss");
  return v;
}

/// Compares tape gradients with central differences (f(w+e) - f(w-e)) / 2e,
/// element by element. rel-err = |a - n| / max(|a|, |n|, floor).
inline GradCheckReport grad_check(const LossFn& fn, ParamStore& params,
                                  const GradCheckOptions& opt = {}) {
  if (!(opt.eps > 0.0)) throw Error("gradcheck: eps must be > 0");
  params.zero_grad();
  {
    Tape tape(params);
    auto loss = fn(tape);
    if (!std::isfinite(loss.value().item())) throw Error("gradcheck: non-finite loss");
    tape.backward(loss);
  }
  GradCheckReport report;
  for (const auto& name : params.names()) {
    if (opt.filter && !opt.filter(name)) continue;
    const std::vector<double> analytic(params.grad(name).begin(), params.grad(name).end());
    const auto original = params.value(name);
    GradCheckEntry entry{name};
    for (std::size_t i = 0; i < original.size(); ++i) {
      const double w = original[i];
      params.update(name, [&](std::span<double> v) { v[i] = w + opt.eps; });
      const double up = eval_loss(fn, params);
      params.update(name, [&](std::span<double> v) { v[i] = w - opt.eps; });
      const double down = eval_loss(fn, params);
      params.set(name, original);
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double abs_err = std::abs(analytic[i] - numeric);
      const double rel =
          abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), opt.floor});
      entry.max_abs_err = std::max(entry.max_abs_err, abs_err);
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.checked;
    }
    entry.pass = entry.max_rel_err <= opt.tol;
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  params.zero_grad();
  return report;
}

}  // namespace deground
