#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pclc/rng.hpp"

namespace pclc::ad {

// Dense row-major matrix of doubles. Vectors are 1xN rows, scalars are 1x1.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::size_t rows, std::size_t cols, double fill = 0.0);
  Tensor(std::size_t rows, std::size_t cols, std::vector<double> values);

  static Tensor row(std::vector<double> values);
  static Tensor scalar(double value) { return Tensor(1, 1, value); }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }
  std::array<std::size_t, 2> shape() const { return {rows_, cols_}; }
  std::string shape_string() const;

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  const std::vector<double>& values() const { return data_; }

  // Scalar value of a 1x1 tensor.
  double item() const;

  void fill(double value);
  bool same_shape(const Tensor& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// A named trainable tensor that outlives any single tape.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // empty until a backward pass or zero_grad() touches it
};

// Registration-ordered parameter collection; addresses are stable.
class ParameterStore {
 public:
  Parameter& add(const std::string& name, Tensor init);
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  std::size_t scalar_count() const;
  void zero_grad();
  void clear_grad();
  double grad_norm() const;
  void scale_grad(double factor);

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

enum class OpKind {
  kParameter,
  kConstant,
  kMatMul,
  kAdd,
  kSub,
  kMul,
  kScale,
  kConcat,
  kTanh,
  kSigmoid,
  kExp,
  kEmbeddingLookup,
  kDropout,
  kLogSumExp,
  kLogSoftmax,
  kCosineSimilarity,
  kSum,
  kSliceRows,
  kSliceCols,
  kTranspose,
  kGather,
};

const char* op_name(OpKind kind);

enum class Mode { kTrain, kEval };

class Tape;

// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Tensor& grad() const;
  bool requires_grad() const;
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive applications in creation order; one tape per forward pass.
class Tape {
 public:
  using Backprop = std::function<void(Tape&, const Tensor& out_grad)>;

  explicit Tape(Mode mode = Mode::kTrain) : mode_(mode) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Mode mode() const { return mode_; }
  bool training() const { return mode_ == Mode::kTrain; }

  Var constant(Tensor value);
  // Leaf bound to a persistent parameter; backward() accumulates into p.grad.
  // Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  // Reverse sweep from a 1x1 loss. Gradients accumulate into parameters.
  void backward(const Var& loss);

  std::size_t size() const { return nodes_.size(); }
  OpKind op(std::size_t id) const { return nodes_[id].op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_[id].inputs; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Used by primitives.
  Var record(OpKind op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop);
  Tensor& grad_buffer(std::size_t id);

 private:
  struct Node {
    OpKind op;
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    Backprop backprop;
    Parameter* sink = nullptr;
  };

  Mode mode_;
  bool backward_done_ = false;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

// Primitives. All shape errors throw pclc::Error naming the op and shapes.
Var matmul(const Var& a, const Var& b);
// Elementwise with broadcasting of size-1 rows/columns on either side.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var concat(std::span<const Var> parts, int axis);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var exp(const Var& a);
// Rows of `table` selected by `ids`; result is ids.size() x table.cols().
Var embedding_lookup(const Var& table, std::span<const std::size_t> ids);
// Inverted dropout; identity (same node) in eval mode or when rate == 0.
Var dropout(const Var& a, double rate, Rng& rng);
Var log_sum_exp(const Var& a, int axis);
Var log_softmax(const Var& a, int axis);
Var cosine_similarity(const Var& a, const Var& b);
Var sum(const Var& a);
Var slice_rows(const Var& a, std::size_t begin, std::size_t end);
Var slice_cols(const Var& a, std::size_t begin, std::size_t end);
Var transpose(const Var& a);
// Elements at (row, col) positions, returned as a 1xN row.
Var gather(const Var& a, std::span<const std::pair<std::size_t, std::size_t>> positions);

// Uniform entry point over the core primitive set.
enum class PrimitiveKind { kMatMul, kAdd, kMul, kConcat, kTanh, kSigmoid, kEmbeddingLookup, kDropout };

struct PrimitiveParams {
  int axis = 0;
  double rate = 0.0;
  std::vector<std::size_t> ids;
  Rng* rng = nullptr;
};

Var apply_primitive(PrimitiveKind kind, std::span<const Var> inputs, const PrimitiveParams& params = {});

// Value-level helpers shared by ops and callers that do not need a tape.
double log_sum_exp(std::span<const double> xs);
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace pclc::ad
