#pragma once

#include <cmath>
#include <map>
#include <string>

#include "evmatch/tensor.hpp"

namespace evmatch {

// Adam with decoupled weight decay and cosine learning-rate decay over a
// fixed step budget. Moment buffers are exposed so checkpoints can carry
// the full optimizer state (bitwise-resumable training).
class AdamW {
 public:
  struct Options {
    double lr = 6e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-1;
    int64_t total_steps = 1000;  // cosine horizon
  };

  AdamW() : AdamW(Options()) {}
  explicit AdamW(Options opt) : opt_(opt) {}

  double lr_at(int64_t step) const {
    double t = std::min<double>(1.0, static_cast<double>(step) / std::max<int64_t>(1, opt_.total_steps));
    return opt_.lr * 0.5 * (1.0 + std::cos(M_PI * t));
  }

  // One update for a named parameter given its (already averaged) gradient.
  void update(const std::string& name, Tensor& param, const Tensor& grad) {
    require(param.same_shape(grad), "AdamW: grad shape mismatch for " + name);
    State& s = state_[name];
    if (!s.m.defined()) {
      s.m = Tensor(param.shape());
      s.v = Tensor(param.shape());
    }
    double lr = lr_at(step_);
    double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(step_ + 1));
    double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(step_ + 1));
    for (int64_t i = 0; i < param.numel(); ++i) {
      s.m[i] = opt_.beta1 * s.m[i] + (1.0 - opt_.beta1) * grad[i];
      s.v[i] = opt_.beta2 * s.v[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
      double mhat = s.m[i] / bc1;
      double vhat = s.v[i] / bc2;
      param[i] -= lr * (mhat / (std::sqrt(vhat) + opt_.eps) + opt_.weight_decay * param[i]);
    }
  }

  void advance() { ++step_; }
  int64_t step() const { return step_; }
  void set_step(int64_t s) { step_ = s; }
  const Options& options() const { return opt_; }

  struct State {
    Tensor m, v;
  };
  std::map<std::string, State>& state() { return state_; }
  const std::map<std::string, State>& state() const { return state_; }

 private:
  Options opt_;
  int64_t step_ = 0;
  std::map<std::string, State> state_;
};

}  // namespace evmatch
