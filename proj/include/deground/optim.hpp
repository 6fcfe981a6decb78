#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "deground/params.hpp"

namespace deground {

enum class OptimizerKind { kSgd, kAdam };
enum class LrSchedule { kConstant, kCosine };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled: w -= lr * wd * w
  LrSchedule schedule = LrSchedule::kConstant;  // applied by the training loop
};

/// SGD or Adam with decoupled weight decay. Holds per-parameter moments;
/// step() consumes the gradients in the store and zeroes them.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {
    if (!(config_.lr > 0.0)) throw Error("optimizer: learning rate must be > 0");
  }

  const OptimizerConfig& config() const { return config_; }

  void set_lr(double lr) {
    if (!(lr > 0.0)) throw Error("optimizer: learning rate must be > 0");
    config_.lr = lr;
  }
  std::size_t steps() const { return steps_; }

  void step(ParamStore& params) {
    ++steps_;
    const double lr = config_.lr, wd = config_.weight_decay;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (const auto& name : params.names()) {
      auto g = params.grad(name);
      if (config_.kind == OptimizerKind::kSgd) {
        params.update(name, [&](std::span<double> w) {
          for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * (g[i] + wd * w[i]);
        });
      } else {
        auto& st = state_[name];
        if (st.m.empty()) {
          st.m.assign(g.size(), 0.0);
          st.v.assign(g.size(), 0.0);
        }
        params.update(name, [&](std::span<double> w) {
          for (std::size_t i = 0; i < w.size(); ++i) {
            st.m[i] = config_.beta1 * st.m[i] + (1.0 - config_.beta1) * g[i];
            st.v[i] = config_.beta2 * st.v[i] + (1.0 - config_.beta2) * g[i] * g[i];
            const double mhat = st.m[i] / bc1;
            const double vhat = st.v[i] / bc2;
            w[i] -= lr * (mhat / (std::sqrt(vhat) + config_.eps) + wd * w[i]);
          }
        });
      }
    }
    params.zero_grad();
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  OptimizerConfig config_;
  std::size_t steps_ = 0;
  std::map<std::string, Moments> state_;
};

/// Half-cosine decay from `base` at step 0 towards 0 at step `total`.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double t = static_cast<double>(step) / static_cast<double>(total);
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

}  // namespace deground
