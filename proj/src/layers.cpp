#include "pclc/layers.hpp"

#include <cmath>
#include <vector>

#include "pclc/error.hpp"

namespace pclc {

namespace {

ad::Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, Rng& rng) {
  ad::Tensor t(rows, cols);
  for (double& x : t.data()) x = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

Linear::Linear(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& init) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = &store.add(prefix + ".weight", uniform_tensor(in, out, bound, init));
  bias_ = &store.add(prefix + ".bias", uniform_tensor(1, out, bound, init));
}

ad::Var Linear::operator()(ad::Tape& tape, const ad::Var& x) const {
  return ad::add(ad::matmul(x, tape.param(*weight_)), tape.param(*bias_));
}

Lstm::Lstm(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& init)
    : hidden_(hidden) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  w_input_ = &store.add(prefix + ".w_input", uniform_tensor(in, 4 * hidden, bound, init));
  w_hidden_ = &store.add(prefix + ".w_hidden", uniform_tensor(hidden, 4 * hidden, bound, init));
  bias_ = &store.add(prefix + ".bias", uniform_tensor(1, 4 * hidden, bound, init));
}

ad::Var Lstm::run(ad::Tape& tape, const ad::Var& inputs, bool reverse) const {
  const auto steps = inputs.value().rows();
  if (steps == 0) throw Error("lstm", "empty sequence");
  if (inputs.value().cols() != w_input_->value.rows()) {
    throw Error("lstm", "input width " + std::to_string(inputs.value().cols()) + " does not match " +
                            std::to_string(w_input_->value.rows()));
  }
  const auto h = hidden_;
  const auto projected = ad::add(ad::matmul(inputs, tape.param(*w_input_)), tape.param(*bias_));
  const auto w_hidden = tape.param(*w_hidden_);

  std::vector<ad::Var> outputs(steps);
  ad::Var state, cell;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto t = reverse ? steps - 1 - k : k;
    auto gates = ad::slice_rows(projected, t, t + 1);
    if (k > 0) gates = ad::add(gates, ad::matmul(state, w_hidden));
    const auto in_gate = ad::sigmoid(ad::slice_cols(gates, 0, h));
    const auto candidate = ad::tanh(ad::slice_cols(gates, 2 * h, 3 * h));
    const auto out_gate = ad::sigmoid(ad::slice_cols(gates, 3 * h, 4 * h));
    if (k == 0) {
      cell = ad::mul(in_gate, candidate);
    } else {
      const auto forget = ad::sigmoid(ad::slice_cols(gates, h, 2 * h));
      cell = ad::add(ad::mul(forget, cell), ad::mul(in_gate, candidate));
    }
    state = ad::mul(out_gate, ad::tanh(cell));
    outputs[t] = state;
  }
  return steps == 1 ? outputs[0] : ad::concat(outputs, 0);
}

BiLstm::BiLstm(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& init)
    : forward_(store, prefix + ".fwd", in, hidden, init), backward_(store, prefix + ".bwd", in, hidden, init) {}

ad::Var BiLstm::run(ad::Tape& tape, const ad::Var& inputs) const {
  const ad::Var parts[] = {forward_.run(tape, inputs, false), backward_.run(tape, inputs, true)};
  return ad::concat(parts, 1);
}

ad::Var BiLstm::final_states(ad::Tape& tape, const ad::Var& inputs) const {
  const auto steps = inputs.value().rows();
  const auto fwd = forward_.run(tape, inputs, false);
  const auto bwd = backward_.run(tape, inputs, true);
  const ad::Var parts[] = {steps == 1 ? fwd : ad::slice_rows(fwd, steps - 1, steps),
                           steps == 1 ? bwd : ad::slice_rows(bwd, 0, 1)};
  return ad::concat(parts, 1);
}

}  // namespace pclc
