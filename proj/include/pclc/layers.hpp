#pragma once

#include <string>

#include "pclc/autodiff.hpp"
#include "pclc/rng.hpp"

namespace pclc {

// y = x W + b, with W stored input x output.
class Linear {
 public:
  Linear(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out, Rng& init);

  ad::Var operator()(ad::Tape& tape, const ad::Var& x) const;
  std::size_t in() const { return weight_->value.rows(); }
  std::size_t out() const { return weight_->value.cols(); }
  ad::Parameter& weight() const { return *weight_; }
  ad::Parameter& bias() const { return *bias_; }

 private:
  ad::Parameter* weight_;
  ad::Parameter* bias_;
};

// Single-direction, single-layer LSTM over the rows of a T x in matrix.
// Gate order in the packed weights is input, forget, cell, output.
class Lstm {
 public:
  Lstm(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& init);

  // T x hidden. With `reverse`, rows are consumed back to front but output
  // row t still corresponds to input row t.
  ad::Var run(ad::Tape& tape, const ad::Var& inputs, bool reverse) const;
  std::size_t hidden() const { return hidden_; }

 private:
  ad::Parameter* w_input_;
  ad::Parameter* w_hidden_;
  ad::Parameter* bias_;
  std::size_t hidden_;
};

class BiLstm {
 public:
  BiLstm(ad::ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, Rng& init);

  // T x 2*hidden, forward states then backward states per row.
  ad::Var run(ad::Tape& tape, const ad::Var& inputs) const;
  // 1 x 2*hidden: last forward state next to the last backward state (row 0).
  ad::Var final_states(ad::Tape& tape, const ad::Var& inputs) const;
  std::size_t hidden() const { return forward_.hidden(); }

 private:
  Lstm forward_;
  Lstm backward_;
};

}  // namespace pclc
