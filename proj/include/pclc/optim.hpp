#pragma once

#include <cstdint>
#include <vector>

#include "pclc/autodiff.hpp"

namespace pclc::ad {

struct AdamConfig {
  double lr = 0.0005;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Adam with bias correction. Moment buffers follow the store's registration
// order, so a store and its optimizer must be created together.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update from the populated grads, then clears them.
  void step(ParameterStore& params);

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return steps_; }

  // Exposed for checkpointing.
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  AdamConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

}  // namespace pclc::ad
