#include "pclc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "pclc/error.hpp"

namespace pclc::ad {

Tensor::Tensor(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Tensor::Tensor(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), data_(std::move(values)) {
  if (data_.size() != rows * cols) {
    throw Error("tensor", "expected " + std::to_string(rows * cols) + " values for shape " +
                              std::to_string(rows) + "x" + std::to_string(cols) + ", got " +
                              std::to_string(data_.size()));
  }
}

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor(1, n, std::move(values));
}

std::string Tensor::shape_string() const {
  return std::to_string(rows_) + "x" + std::to_string(cols_);
}

double Tensor::item() const {
  if (rows_ != 1 || cols_ != 1) throw Error("tensor", "item() on non-scalar " + shape_string());
  return data_[0];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Parameter& ParameterStore::add(const std::string& name, Tensor init) {
  if (contains(name)) throw Error("parameters", "duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(init), Tensor{}}));
  return *params_.back();
}

Parameter& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("parameters", "no parameter named '" + name + "'");
  return *params_[it->second];
}

const Parameter& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("parameters", "no parameter named '" + name + "'");
  return *params_[it->second];
}

std::size_t ParameterStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : params_) p->grad = Tensor(p->value.rows(), p->value.cols());
}

void ParameterStore::clear_grad() {
  for (auto& p : params_) p->grad = Tensor{};
}

double ParameterStore::grad_norm() const {
  double total = 0.0;
  for (const auto& p : params_)
    for (double g : p->grad.data()) total += g * g;
  return std::sqrt(total);
}

void ParameterStore::scale_grad(double factor) {
  for (auto& p : params_)
    for (double& g : p->grad.data()) g *= factor;
}

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kParameter: return "parameter";
    case OpKind::kConstant: return "constant";
    case OpKind::kMatMul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kConcat: return "concat";
    case OpKind::kTanh: return "tanh";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kExp: return "exp";
    case OpKind::kEmbeddingLookup: return "embedding_lookup";
    case OpKind::kDropout: return "dropout";
    case OpKind::kLogSumExp: return "log_sum_exp";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kCosineSimilarity: return "cosine_similarity";
    case OpKind::kSum: return "sum";
    case OpKind::kSliceRows: return "slice_rows";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kGather: return "gather";
  }
  return "unknown";
}

const Tensor& Var::value() const { return tape_->value(id_); }
const Tensor& Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{OpKind::kConstant, std::move(value), Tensor{}, false, {}, nullptr, nullptr});
  return Var(this, nodes_.size() - 1);
}

Var Tape::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  nodes_.push_back(Node{OpKind::kParameter, p.value, Tensor{}, true, {}, nullptr, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(OpKind op, Tensor value, std::vector<std::size_t> inputs, Backprop backprop) {
  bool needs = false;
  for (auto id : inputs) needs = needs || nodes_[id].requires_grad;
  if (!needs) backprop = nullptr;
  nodes_.push_back(Node{op, std::move(value), Tensor{}, needs, std::move(inputs), std::move(backprop), nullptr});
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.rows(), node.value.cols());
  return node.grad;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error("backward", "loss belongs to a different tape");
  const auto& lv = nodes_[loss.id()].value;
  if (lv.rows() != 1 || lv.cols() != 1) throw Error("backward", "loss must be scalar, got " + lv.shape_string());
  if (backward_done_) throw Error("backward", "tape already differentiated; rebuild it per forward pass");
  backward_done_ = true;
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.requires_grad || node.grad.empty()) continue;
    if (node.backprop) {
      node.backprop(*this, node.grad);
    } else if (node.sink != nullptr) {
      auto& target = node.sink->grad;
      if (target.empty()) target = Tensor(node.value.rows(), node.value.cols());
      for (std::size_t k = 0; k < target.size(); ++k) target[k] += node.grad[k];
    }
  }
}

namespace {

[[noreturn]] void shape_error(OpKind op, const Tensor& a, const Tensor& b) {
  throw Error(op_name(op), "incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

Tape& same_tape(const Var& a, const Var& b, OpKind op) {
  if (!a.valid() || a.tape() != b.tape()) throw Error(op_name(op), "operands live on different tapes");
  return *a.tape();
}

std::size_t broadcast_dim(std::size_t x, std::size_t y, bool& ok) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  ok = false;
  return 0;
}

// Adds `grad` (in broadcast output shape) into `target`, summing over broadcast dims.
void reduce_into(Tensor& target, const Tensor& grad, double sign = 1.0) {
  const bool rb = target.rows() == 1 && grad.rows() != 1;
  const bool cb = target.cols() == 1 && grad.cols() != 1;
  for (std::size_t r = 0; r < grad.rows(); ++r)
    for (std::size_t c = 0; c < grad.cols(); ++c) target(rb ? 0 : r, cb ? 0 : c) += sign * grad(r, c);
}

Tape::Backprop unary_backprop(std::size_t in, std::size_t out,
                              double (*dfdx)(double x, double y)) {
  return [in, out, dfdx](Tape& t, const Tensor& g) {
    if (!t.requires_grad(in)) return;
    const auto& x = t.value(in);
    const auto& y = t.value(out);
    auto& gx = t.grad_buffer(in);
    for (std::size_t k = 0; k < g.size(); ++k) gx[k] += g[k] * dfdx(x[k], y[k]);
  };
}

void check_axis(int axis, OpKind op) {
  if (axis != 0 && axis != 1) throw Error(op_name(op), "axis must be 0 or 1, got " + std::to_string(axis));
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b, OpKind::kMatMul);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.cols() != bv.rows()) shape_error(OpKind::kMatMul, av, bv);
  const auto n = av.rows(), k = av.cols(), m = bv.cols();
  Tensor out(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av(i, p);
      if (aip == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += aip * bv(p, j);
    }
  const auto ia = a.id(), ib = b.id();
  return tape.record(OpKind::kMatMul, std::move(out), {ia, ib}, [ia, ib, n, k, m](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) {
      const auto& bv = t.value(ib);
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += g(i, j) * bv(p, j);
          ga(i, p) += s;
        }
    }
    if (t.requires_grad(ib)) {
      const auto& av = t.value(ia);
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av(i, p);
          if (aip == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb(p, j) += aip * g(i, j);
        }
    }
  });
}

Var add(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b, OpKind::kAdd);
  const auto& av = a.value();
  const auto& bv = b.value();
  bool ok = true;
  const auto rows = broadcast_dim(av.rows(), bv.rows(), ok);
  const auto cols = broadcast_dim(av.cols(), bv.cols(), ok);
  if (!ok) shape_error(OpKind::kAdd, av, bv);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = av(av.rows() == 1 ? 0 : r, av.cols() == 1 ? 0 : c) + bv(bv.rows() == 1 ? 0 : r, bv.cols() == 1 ? 0 : c);
  const auto ia = a.id(), ib = b.id();
  return tape.record(OpKind::kAdd, std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) reduce_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) reduce_into(t.grad_buffer(ib), g);
  });
}

Var sub(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b, OpKind::kSub);
  const auto& av = a.value();
  const auto& bv = b.value();
  bool ok = true;
  const auto rows = broadcast_dim(av.rows(), bv.rows(), ok);
  const auto cols = broadcast_dim(av.cols(), bv.cols(), ok);
  if (!ok) shape_error(OpKind::kSub, av, bv);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = av(av.rows() == 1 ? 0 : r, av.cols() == 1 ? 0 : c) - bv(bv.rows() == 1 ? 0 : r, bv.cols() == 1 ? 0 : c);
  const auto ia = a.id(), ib = b.id();
  return tape.record(OpKind::kSub, std::move(out), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    if (t.requires_grad(ia)) reduce_into(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) reduce_into(t.grad_buffer(ib), g, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b, OpKind::kMul);
  const auto& av = a.value();
  const auto& bv = b.value();
  bool ok = true;
  const auto rows = broadcast_dim(av.rows(), bv.rows(), ok);
  const auto cols = broadcast_dim(av.cols(), bv.cols(), ok);
  if (!ok) shape_error(OpKind::kMul, av, bv);
  Tensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      out(r, c) = av(av.rows() == 1 ? 0 : r, av.cols() == 1 ? 0 : c) * bv(bv.rows() == 1 ? 0 : r, bv.cols() == 1 ? 0 : c);
  const auto ia = a.id(), ib = b.id();
  return tape.record(OpKind::kMul, std::move(out), {ia, ib}, [ia, ib, rows, cols](Tape& t, const Tensor& g) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    auto at = [](const Tensor& x, std::size_t r, std::size_t c) {
      return x(x.rows() == 1 ? 0 : r, x.cols() == 1 ? 0 : c);
    };
    if (t.requires_grad(ia)) {
      Tensor ga(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) ga(r, c) = g(r, c) * at(bv, r, c);
      reduce_into(t.grad_buffer(ia), ga);
    }
    if (t.requires_grad(ib)) {
      Tensor gb(rows, cols);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb(r, c) = g(r, c) * at(av, r, c);
      reduce_into(t.grad_buffer(ib), gb);
    }
  });
}

Var scale(const Var& a, double factor) {
  auto& tape = *a.tape();
  Tensor out = a.value();
  for (double& x : out.data()) x *= factor;
  const auto ia = a.id();
  return tape.record(OpKind::kScale, std::move(out), {ia}, [ia, factor](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += factor * g[k];
  });
}

Var concat(std::span<const Var> parts, int axis) {
  check_axis(axis, OpKind::kConcat);
  if (parts.empty()) throw Error("concat", "no inputs");
  auto& tape = *parts[0].tape();
  std::vector<std::size_t> ids;
  std::size_t rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (p.tape() != &tape) throw Error("concat", "operands live on different tapes");
    const auto& v = p.value();
    if (axis == 0) {
      if (!ids.empty() && v.cols() != cols) shape_error(OpKind::kConcat, parts[0].value(), v);
      cols = v.cols();
      rows += v.rows();
    } else {
      if (!ids.empty() && v.rows() != rows) shape_error(OpKind::kConcat, parts[0].value(), v);
      rows = v.rows();
      cols += v.cols();
    }
    ids.push_back(p.id());
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const auto& v = p.value();
    for (std::size_t r = 0; r < v.rows(); ++r)
      for (std::size_t c = 0; c < v.cols(); ++c) {
        if (axis == 0) out(offset + r, c) = v(r, c);
        else out(r, offset + c) = v(r, c);
      }
    offset += axis == 0 ? v.rows() : v.cols();
  }
  auto captured = ids;
  return tape.record(OpKind::kConcat, std::move(out), std::move(ids), [captured, axis](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (auto id : captured) {
      const auto& v = t.value(id);
      if (t.requires_grad(id)) {
        auto& gi = t.grad_buffer(id);
        for (std::size_t r = 0; r < v.rows(); ++r)
          for (std::size_t c = 0; c < v.cols(); ++c) gi(r, c) += axis == 0 ? g(offset + r, c) : g(r, offset + c);
      }
      offset += axis == 0 ? v.rows() : v.cols();
    }
  });
}

namespace {

Var elementwise(const Var& a, OpKind op, double (*f)(double), double (*dfdx)(double x, double y)) {
  auto& tape = *a.tape();
  const auto& av = a.value();
  Tensor out(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = f(av[k]);
  const auto ia = a.id();
  const auto next = tape.size();
  return tape.record(op, std::move(out), {ia}, unary_backprop(ia, next, dfdx));
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

Var tanh(const Var& a) {
  return elementwise(a, OpKind::kTanh, [](double x) { return std::tanh(x); },
                     [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return elementwise(a, OpKind::kSigmoid, sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return elementwise(a, OpKind::kExp, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var embedding_lookup(const Var& table, std::span<const std::size_t> ids) {
  auto& tape = *table.tape();
  const auto& tv = table.value();
  Tensor out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw Error("embedding_lookup", "index " + std::to_string(ids[r]) + " out of range for table " + tv.shape_string());
    }
    for (std::size_t c = 0; c < tv.cols(); ++c) out(r, c) = tv(ids[r], c);
  }
  const auto it = table.id();
  std::vector<std::size_t> rows(ids.begin(), ids.end());
  return tape.record(OpKind::kEmbeddingLookup, std::move(out), {it}, [it, rows](Tape& t, const Tensor& g) {
    auto& gt = t.grad_buffer(it);
    for (std::size_t r = 0; r < rows.size(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) gt(rows[r], c) += g(r, c);
  });
}

Var dropout(const Var& a, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error("dropout", "rate must be in [0, 1), got " + std::to_string(rate));
  auto& tape = *a.tape();
  if (!tape.training() || rate == 0.0) return a;
  const auto& av = a.value();
  const double keep = 1.0 - rate;
  Tensor mask(av.rows(), av.cols());
  for (std::size_t k = 0; k < mask.size(); ++k) mask[k] = rng.uniform() < rate ? 0.0 : 1.0 / keep;
  Tensor out(av.rows(), av.cols());
  for (std::size_t k = 0; k < av.size(); ++k) out[k] = av[k] * mask[k];
  const auto ia = a.id();
  return tape.record(OpKind::kDropout, std::move(out), {ia}, [ia, mask = std::move(mask)](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * mask[k];
  });
}

double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) throw Error("log_sum_exp", "empty axis");
  const double m = *std::max_element(xs.begin(), xs.end());
  if (std::isinf(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

namespace {

// Runs f(slice index, strided accessor) over every slice along `axis`.
struct AxisView {
  std::size_t slices;
  std::size_t length;
  int axis;
  std::size_t index(std::size_t slice, std::size_t k, std::size_t cols) const {
    return axis == 1 ? slice * cols + k : k * cols + slice;
  }
};

AxisView axis_view(const Tensor& x, int axis, OpKind op) {
  check_axis(axis, op);
  AxisView v{axis == 1 ? x.rows() : x.cols(), axis == 1 ? x.cols() : x.rows(), axis};
  if (v.length == 0) throw Error(op_name(op), "empty axis " + std::to_string(axis) + " in " + x.shape_string());
  return v;
}

}  // namespace

Var log_sum_exp(const Var& a, int axis) {
  auto& tape = *a.tape();
  const auto& x = a.value();
  const auto view = axis_view(x, axis, OpKind::kLogSumExp);
  Tensor out = axis == 1 ? Tensor(x.rows(), 1) : Tensor(1, x.cols());
  std::vector<double> buf(view.length);
  for (std::size_t s = 0; s < view.slices; ++s) {
    for (std::size_t k = 0; k < view.length; ++k) buf[k] = x[view.index(s, k, x.cols())];
    out[s] = log_sum_exp(buf);
  }
  const auto ia = a.id();
  const auto io = tape.size();
  return tape.record(OpKind::kLogSumExp, std::move(out), {ia}, [ia, io, view](Tape& t, const Tensor& g) {
    const auto& x = t.value(ia);
    const auto& y = t.value(io);
    auto& gx = t.grad_buffer(ia);
    for (std::size_t s = 0; s < view.slices; ++s)
      for (std::size_t k = 0; k < view.length; ++k) {
        const auto idx = view.index(s, k, x.cols());
        gx[idx] += g[s] * std::exp(x[idx] - y[s]);
      }
  });
}

Var log_softmax(const Var& a, int axis) {
  auto& tape = *a.tape();
  const auto& x = a.value();
  const auto view = axis_view(x, axis, OpKind::kLogSoftmax);
  Tensor out(x.rows(), x.cols());
  std::vector<double> buf(view.length);
  for (std::size_t s = 0; s < view.slices; ++s) {
    for (std::size_t k = 0; k < view.length; ++k) buf[k] = x[view.index(s, k, x.cols())];
    const double lse = log_sum_exp(buf);
    for (std::size_t k = 0; k < view.length; ++k) out[view.index(s, k, x.cols())] = buf[k] - lse;
  }
  const auto ia = a.id();
  const auto io = tape.size();
  return tape.record(OpKind::kLogSoftmax, std::move(out), {ia}, [ia, io, view](Tape& t, const Tensor& g) {
    const auto& y = t.value(io);
    auto& gx = t.grad_buffer(ia);
    const auto cols = y.cols();
    for (std::size_t s = 0; s < view.slices; ++s) {
      double total = 0.0;
      for (std::size_t k = 0; k < view.length; ++k) total += g[view.index(s, k, cols)];
      for (std::size_t k = 0; k < view.length; ++k) {
        const auto idx = view.index(s, k, cols);
        gx[idx] += g[idx] - std::exp(y[idx]) * total;
      }
    }
  });
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw Error("cosine_similarity", "length mismatch " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) throw Error("cosine_similarity", "zero-norm input");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

Var cosine_similarity(const Var& a, const Var& b) {
  auto& tape = same_tape(a, b, OpKind::kCosineSimilarity);
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.size() != bv.size()) shape_error(OpKind::kCosineSimilarity, av, bv);
  const double value = cosine_similarity(av.data(), bv.data());
  const auto ia = a.id(), ib = b.id();
  return tape.record(OpKind::kCosineSimilarity, Tensor::scalar(value), {ia, ib}, [ia, ib](Tape& t, const Tensor& g) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    double dot = 0.0, na2 = 0.0, nb2 = 0.0;
    for (std::size_t i = 0; i < av.size(); ++i) {
      dot += av[i] * bv[i];
      na2 += av[i] * av[i];
      nb2 += bv[i] * bv[i];
    }
    const double na = std::sqrt(na2), nb = std::sqrt(nb2);
    const double cos = dot / (na * nb);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g[0] * (bv[i] / (na * nb) - cos * av[i] / na2);
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib);
      for (std::size_t i = 0; i < bv.size(); ++i) gb[i] += g[0] * (av[i] / (na * nb) - cos * bv[i] / nb2);
    }
  });
}

Var sum(const Var& a) {
  auto& tape = *a.tape();
  double total = 0.0;
  for (double x : a.value().data()) total += x;
  const auto ia = a.id();
  return tape.record(OpKind::kSum, Tensor::scalar(total), {ia}, [ia](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (double& x : ga.data()) x += g[0];
  });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t end) {
  auto& tape = *a.tape();
  const auto& av = a.value();
  if (begin >= end || end > av.rows()) {
    throw Error("slice_rows", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + av.shape_string());
  }
  const auto cols = av.cols();
  Tensor out(end - begin, cols,
             std::vector<double>(av.data().begin() + static_cast<std::ptrdiff_t>(begin * cols),
                                 av.data().begin() + static_cast<std::ptrdiff_t>(end * cols)));
  const auto ia = a.id();
  return tape.record(OpKind::kSliceRows, std::move(out), {ia}, [ia, begin, cols](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t k = 0; k < g.size(); ++k) ga[begin * cols + k] += g[k];
  });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t end) {
  auto& tape = *a.tape();
  const auto& av = a.value();
  if (begin >= end || end > av.cols()) {
    throw Error("slice_cols", "range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " + av.shape_string());
  }
  Tensor out(av.rows(), end - begin);
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = av(r, c);
  const auto ia = a.id();
  return tape.record(OpKind::kSliceCols, std::move(out), {ia}, [ia, begin](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
  });
}

Var transpose(const Var& a) {
  auto& tape = *a.tape();
  const auto& av = a.value();
  Tensor out(av.cols(), av.rows());
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out(c, r) = av(r, c);
  const auto ia = a.id();
  return tape.record(OpKind::kTranspose, std::move(out), {ia}, [ia](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t r = 0; r < g.rows(); ++r)
      for (std::size_t c = 0; c < g.cols(); ++c) ga(c, r) += g(r, c);
  });
}

Var gather(const Var& a, std::span<const std::pair<std::size_t, std::size_t>> positions) {
  auto& tape = *a.tape();
  const auto& av = a.value();
  if (positions.empty()) throw Error("gather", "no positions");
  Tensor out(1, positions.size());
  for (std::size_t k = 0; k < positions.size(); ++k) {
    const auto [r, c] = positions[k];
    if (r >= av.rows() || c >= av.cols()) {
      throw Error("gather", "position (" + std::to_string(r) + ", " + std::to_string(c) + ") outside " + av.shape_string());
    }
    out[k] = av(r, c);
  }
  const auto ia = a.id();
  std::vector<std::pair<std::size_t, std::size_t>> pos(positions.begin(), positions.end());
  return tape.record(OpKind::kGather, std::move(out), {ia}, [ia, pos = std::move(pos)](Tape& t, const Tensor& g) {
    auto& ga = t.grad_buffer(ia);
    for (std::size_t k = 0; k < pos.size(); ++k) ga(pos[k].first, pos[k].second) += g[k];
  });
}

Var apply_primitive(PrimitiveKind kind, std::span<const Var> inputs, const PrimitiveParams& params) {
  auto need = [&](std::size_t n, const char* name) {
    if (inputs.size() != n) {
      throw Error(name, "expected " + std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case PrimitiveKind::kMatMul: need(2, "matmul"); return matmul(inputs[0], inputs[1]);
    case PrimitiveKind::kAdd: need(2, "add"); return add(inputs[0], inputs[1]);
    case PrimitiveKind::kMul: need(2, "mul"); return mul(inputs[0], inputs[1]);
    case PrimitiveKind::kConcat: return concat(inputs, params.axis);
    case PrimitiveKind::kTanh: need(1, "tanh"); return tanh(inputs[0]);
    case PrimitiveKind::kSigmoid: need(1, "sigmoid"); return sigmoid(inputs[0]);
    case PrimitiveKind::kEmbeddingLookup: need(1, "embedding_lookup"); return embedding_lookup(inputs[0], params.ids);
    case PrimitiveKind::kDropout:
      need(1, "dropout");
      if (params.rng == nullptr) throw Error("dropout", "no generator supplied");
      return dropout(inputs[0], params.rate, *params.rng);
  }
  throw Error("apply_primitive", "unknown primitive");
}

}  // namespace pclc::ad
