#include "pclc/optim.hpp"

#include <cmath>

#include "pclc/error.hpp"

namespace pclc::ad {

void Adam::step(ParameterStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& p = params[i];
    if (p.grad.empty()) throw Error("adam", "parameter '" + p.name + "' has no gradient");
    if (!p.grad.same_shape(p.value)) {
      throw Error("adam", "gradient shape " + p.grad.shape_string() + " does not match '" + p.name + "' " +
                              p.value.shape_string());
    }
  }
  if (m_.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_.emplace_back(params[i].value.rows(), params[i].value.cols());
      v_.emplace_back(params[i].value.rows(), params[i].value.cols());
    }
  }
  if (m_.size() != params.size()) throw Error("adam", "parameter count changed after the first step");

  ++steps_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = config_.beta1 * m[k] + (1.0 - config_.beta1) * g;
      v[k] = config_.beta2 * v[k] + (1.0 - config_.beta2) * g * g;
      p.value[k] -= config_.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + config_.epsilon);
    }
  }
  params.clear_grad();
}

void Adam::restore(std::uint64_t steps, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != v.size()) throw Error("adam", "moment buffer counts differ");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace pclc::ad
