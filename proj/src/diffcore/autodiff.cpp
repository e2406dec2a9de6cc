#include "vcwn/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

#include "vcwn/error.hpp"

namespace vcwn {

namespace {

using RowMatrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

MatMap as_matrix(Tensor& t) {
  return MatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                static_cast<Eigen::Index>(t.cols()));
}

ConstMatMap as_matrix(const Tensor& t) {
  return ConstMatMap(t.data(), static_cast<Eigen::Index>(t.rows()),
                     static_cast<Eigen::Index>(t.cols()));
}

std::vector<std::size_t> mat_shape(std::size_t r, std::size_t c) { return {r, c}; }

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  require(a.size() == b.size() && a.rows() == b.rows(),
          ErrorCode::kInvalidArgument,
          std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
              b.shape_string());
}

Tape* same_tape(Var a, Var b) {
  require(a.valid() && b.valid() && a.tape == b.tape,
          ErrorCode::kInvalidArgument, "ops on vars from different tapes");
  return a.tape;
}

}  // namespace

// --- ParameterSet ---------------------------------------------------------

Parameter& ParameterSet::add(std::string name, Tensor value) {
  require(find(name) == nullptr, ErrorCode::kInvalidArgument,
          "duplicate parameter name '" + name + "'");
  Tensor grad = Tensor::zeros_like(value);
  items_.push_back(Parameter{std::move(name), std::move(value), std::move(grad)});
  return items_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter& ParameterSet::get(const std::string& name) {
  Parameter* p = find(name);
  require(p != nullptr, ErrorCode::kInvalidArgument, "no parameter '" + name + "'");
  return *p;
}

const Parameter& ParameterSet::get(const std::string& name) const {
  const Parameter* p = find(name);
  require(p != nullptr, ErrorCode::kInvalidArgument, "no parameter '" + name + "'");
  return *p;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& p : items_) {
    if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
    else p.grad.fill(0.0);
  }
}

// --- Tape -----------------------------------------------------------------

const Tensor& Var::value() const { return tape->value(id); }

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var{this, static_cast<int>(nodes_.size() - 1)};
}

Var Tape::input(Tensor value) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  if (!p.grad.same_shape(p.value)) p.grad = Tensor::zeros_like(p.value);
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::record(const char* op, Tensor value, std::vector<int> inputs,
                 BackwardFn backward) {
  if (!value.all_finite())
    fail(ErrorCode::kNonFinite,
         std::string("non-finite value produced by op '") + op + "'");
  Node n;
  n.op = op;
  n.value = std::move(value);
  for (int in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor& Tape::grad_slot(int id) {
  Node& n = nodes_[id];
  if (!n.grad.same_shape(n.value)) n.grad = Tensor::zeros_like(n.value);
  return n.grad;
}

Tensor Tape::gradient(Var v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.same_shape(n.value)) return n.grad;
  return Tensor::zeros_like(n.value);
}

std::size_t Tape::op_count() const {
  return static_cast<std::size_t>(std::count_if(
      nodes_.begin(), nodes_.end(), [](const Node& n) { return !n.inputs.empty(); }));
}

void Tape::backward(Var loss) {
  require(loss.tape == this, ErrorCode::kInvalidArgument,
          "backward: loss belongs to another tape");
  require(nodes_[loss.id].value.is_scalar(), ErrorCode::kInvalidArgument,
          "backward: loss must be scalar, got shape " +
              nodes_[loss.id].value.shape_string());
  for (auto& n : nodes_) n.grad = Tensor();
  grad_slot(loss.id).fill(1.0);

  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || !n.grad.same_shape(n.value)) continue;
    if (!n.grad.all_finite())
      fail(ErrorCode::kNonFinite,
           std::string("non-finite gradient flowing into op '") + n.op + "'");
    if (n.param != nullptr) {
      double* dst = n.param->grad.data();
      const double* src = n.grad.data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) dst[i] += src[i];
    } else if (n.backward) {
      n.backward(*this, id);
    }
  }
}

// --- ops ------------------------------------------------------------------

namespace ops {

namespace {

void accumulate(Tape& t, int id, const Tensor& g, double factor = 1.0) {
  if (!t.requires_grad(id)) return;
  Tensor& dst = t.grad_slot(id);
  double* d = dst.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * s[i];
}

// Elementwise unary op helper: forward value f(x), local derivative computed
// from (x, y) in backward.
template <class Fwd, class Deriv>
Var unary(const char* name, Var a, Fwd fwd, Deriv deriv) {
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = fwd(x[i]);
  const int ia = a.id;
  return a.tape->record(name, std::move(y), {ia}, [ia, deriv](Tape& t, int self) {
    if (!t.requires_grad(ia)) return;
    const Tensor& xv = t.value(ia);
    const Tensor& yv = t.value(self);
    const Tensor& g = t.grad_slot(self);
    Tensor& dx = t.grad_slot(ia);
    for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * deriv(xv[i], yv[i]);
  });
}

}  // namespace

Var add(Var a, Var b) {
  Tape* tape = same_tape(a, b);
  check_same_shape("add", a.value(), b.value());
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += b.value()[i];
  const int ia = a.id, ib = b.id;
  return tape->record("add", std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g);
  });
}

Var sub(Var a, Var b) {
  Tape* tape = same_tape(a, b);
  check_same_shape("sub", a.value(), b.value());
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= b.value()[i];
  const int ia = a.id, ib = b.id;
  return tape->record("sub", std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ia, g);
    accumulate(t, ib, g, -1.0);
  });
}

Var mul(Var a, Var b) {
  Tape* tape = same_tape(a, b);
  check_same_shape("mul", a.value(), b.value());
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= b.value()[i];
  const int ia = a.id, ib = b.id;
  return tape->record("mul", std::move(y), {ia, ib}, [ia, ib](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    const Tensor& av = t.value(ia);
    const Tensor& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor& da = t.grad_slot(ia);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_slot(ib);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  Tensor y = a.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= s;
  const int ia = a.id;
  return a.tape->record("scale", std::move(y), {ia}, [ia, s](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ia, g, s);
  });
}

Var add_bias(Var x, Var bias) {
  Tape* tape = same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& bv = bias.value();
  require(bv.size() == xv.rows(), ErrorCode::kInvalidArgument,
          "add_bias: bias " + bv.shape_string() + " vs input " + xv.shape_string());
  Tensor y = xv;
  as_matrix(y).colwise() += Eigen::Map<const Eigen::VectorXd>(
      bv.data(), static_cast<Eigen::Index>(bv.size()));
  const int ix = x.id, ib = bias.id;
  return tape->record("add_bias", std::move(y), {ix, ib}, [ix, ib](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    accumulate(t, ix, g);
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_slot(ib);
      Eigen::Map<Eigen::VectorXd>(db.data(), static_cast<Eigen::Index>(db.size())) +=
          as_matrix(g).rowwise().sum();
    }
  });
}

Var matmul(Var w, Var x) {
  Tape* tape = same_tape(w, x);
  const Tensor& wv = w.value();
  const Tensor& xv = x.value();
  require(wv.cols() == xv.rows(), ErrorCode::kInvalidArgument,
          "matmul: " + wv.shape_string() + " x " + xv.shape_string());
  Tensor y(mat_shape(wv.rows(), xv.cols()));
  as_matrix(y).noalias() = as_matrix(wv) * as_matrix(xv);
  const int iw = w.id, ix = x.id;
  return tape->record("matmul", std::move(y), {iw, ix}, [iw, ix](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(iw)) {
      Tensor& dw = t.grad_slot(iw);
      as_matrix(dw).noalias() += as_matrix(g) * as_matrix(t.value(ix)).transpose();
    }
    if (t.requires_grad(ix)) {
      Tensor& dx = t.grad_slot(ix);
      as_matrix(dx).noalias() += as_matrix(t.value(iw)).transpose() * as_matrix(g);
    }
  });
}

Var tanh(Var a) {
  return unary(
      "tanh", a, [](double x) { return std::tanh(x); },
      [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(
      "exp", a, [](double x) { return std::exp(x); },
      [](double, double y) { return y; });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const int ia = a.id;
  return a.tape->record("sum", Tensor::scalar(s), {ia}, [ia](Tape& t, int self) {
    if (!t.requires_grad(ia)) return;
    const double g = t.grad_slot(self)[0];
    Tensor& da = t.grad_slot(ia);
    for (std::size_t i = 0; i < da.size(); ++i) da[i] += g;
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var concat_rows(Var a, Var b) {
  Tape* tape = same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require(av.cols() == bv.cols(), ErrorCode::kInvalidArgument,
          "concat_rows: " + av.shape_string() + " vs " + bv.shape_string());
  Tensor y(mat_shape(av.rows() + bv.rows(), av.cols()));
  std::copy(av.data(), av.data() + av.size(), y.data());
  std::copy(bv.data(), bv.data() + bv.size(), y.data() + av.size());
  const int ia = a.id, ib = b.id;
  const std::size_t na = av.size();
  return tape->record("concat_rows", std::move(y), {ia, ib}, [ia, ib, na](Tape& t, int self) {
    const Tensor& g = t.grad_slot(self);
    if (t.requires_grad(ia)) {
      Tensor& da = t.grad_slot(ia);
      for (std::size_t i = 0; i < na; ++i) da[i] += g[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_slot(ib);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += g[na + i];
    }
  });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require(begin + count <= av.rows() && count > 0, ErrorCode::kInvalidArgument,
          "slice_rows out of range for " + av.shape_string());
  const std::size_t cols = av.cols();
  Tensor y(mat_shape(count, cols));
  std::copy(av.data() + begin * cols, av.data() + (begin + count) * cols, y.data());
  const int ia = a.id;
  return a.tape->record("slice_rows", std::move(y), {ia},
                        [ia, begin, cols](Tape& t, int self) {
                          if (!t.requires_grad(ia)) return;
                          const Tensor& g = t.grad_slot(self);
                          Tensor& da = t.grad_slot(ia);
                          double* dst = da.data() + begin * cols;
                          for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                        });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require(begin + count <= av.cols() && count > 0, ErrorCode::kInvalidArgument,
          "slice_cols out of range for " + av.shape_string());
  const std::size_t rows = av.rows(), cols = av.cols();
  Tensor y(mat_shape(rows, count));
  for (std::size_t r = 0; r < rows; ++r)
    std::copy(av.data() + r * cols + begin, av.data() + r * cols + begin + count,
              y.data() + r * count);
  const int ia = a.id;
  return a.tape->record("slice_cols", std::move(y), {ia},
                        [ia, begin, rows, cols, count](Tape& t, int self) {
                          if (!t.requires_grad(ia)) return;
                          const Tensor& g = t.grad_slot(self);
                          Tensor& da = t.grad_slot(ia);
                          for (std::size_t r = 0; r < rows; ++r)
                            for (std::size_t c = 0; c < count; ++c)
                              da[r * cols + begin + c] += g[r * count + c];
                        });
}

Var conv1d_causal(Var x, Var weights, std::size_t dilation) {
  Tape* tape = same_tape(x, weights);
  require(dilation >= 1, ErrorCode::kInvalidArgument, "conv1d_causal: dilation must be >= 1");
  const Tensor& xv = x.value();
  const Tensor& wv = weights.value();
  const auto channels = static_cast<Eigen::Index>(xv.rows());
  const auto steps = static_cast<Eigen::Index>(xv.cols());
  require(wv.cols() == 2 * xv.rows(), ErrorCode::kInvalidArgument,
          "conv1d_causal: weights " + wv.shape_string() + " do not match " +
              std::to_string(channels) + " input channels");
  const auto d = static_cast<Eigen::Index>(dilation);
  Tensor y(mat_shape(wv.rows(), xv.cols()));
  auto ym = as_matrix(y);
  auto wm = as_matrix(wv);
  auto xm = as_matrix(xv);
  ym.noalias() = wm.rightCols(channels) * xm;
  if (d < steps)
    ym.rightCols(steps - d).noalias() += wm.leftCols(channels) * xm.leftCols(steps - d);

  const int ix = x.id, iw = weights.id;
  return tape->record(
      "conv1d_causal", std::move(y), {ix, iw},
      [ix, iw, d, channels, steps](Tape& t, int self) {
        const auto g = as_matrix(t.grad_slot(self));
        const auto xm = as_matrix(t.value(ix));
        if (t.requires_grad(iw)) {
          auto dw = as_matrix(t.grad_slot(iw));
          dw.rightCols(channels).noalias() += g * xm.transpose();
          if (d < steps)
            dw.leftCols(channels).noalias() +=
                g.rightCols(steps - d) * xm.leftCols(steps - d).transpose();
        }
        if (t.requires_grad(ix)) {
          const auto wm = as_matrix(t.value(iw));
          auto dx = as_matrix(t.grad_slot(ix));
          dx.noalias() += wm.rightCols(channels).transpose() * g;
          if (d < steps)
            dx.leftCols(steps - d).noalias() +=
                wm.leftCols(channels).transpose() * g.rightCols(steps - d);
        }
      });
}

Var embedding(Var table, std::span<const int> codes) {
  const Tensor& tv = table.value();
  const std::size_t channels = tv.rows();
  const std::size_t vocab = tv.cols();
  const std::size_t steps = codes.size();
  Tensor y(mat_shape(channels, steps));
  for (std::size_t t = 0; t < steps; ++t) {
    require(codes[t] >= 0 && static_cast<std::size_t>(codes[t]) < vocab,
            ErrorCode::kInvalidArgument, "embedding: code out of range");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = tv.data() + c * vocab;
    double* out = y.data() + c * steps;
    for (std::size_t t = 0; t < steps; ++t) out[t] = row[codes[t]];
  }
  auto kept = std::make_shared<std::vector<int>>(codes.begin(), codes.end());
  const int it = table.id;
  return table.tape->record(
      "embedding", std::move(y), {it}, [it, kept, channels, vocab](Tape& t, int self) {
        if (!t.requires_grad(it)) return;
        const Tensor& g = t.grad_slot(self);
        Tensor& dt = t.grad_slot(it);
        const std::size_t steps = kept->size();
        for (std::size_t c = 0; c < channels; ++c) {
          double* row = dt.data() + c * vocab;
          const double* gr = g.data() + c * steps;
          for (std::size_t s = 0; s < steps; ++s) row[(*kept)[s]] += gr[s];
        }
      });
}

Var softmax_cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = logits.value();
  const std::size_t classes = lv.rows();
  const std::size_t steps = lv.cols();
  require(targets.size() == steps && steps > 0, ErrorCode::kInvalidArgument,
          "softmax_cross_entropy: " + std::to_string(targets.size()) +
              " targets for logits " + lv.shape_string());
  auto probs = std::make_shared<Tensor>(lv.shape());
  std::vector<double> col_max(steps, -INFINITY), col_sum(steps, 0.0);
  for (std::size_t r = 0; r < classes; ++r) {
    const double* row = lv.data() + r * steps;
    for (std::size_t t = 0; t < steps; ++t) col_max[t] = std::max(col_max[t], row[t]);
  }
  for (std::size_t r = 0; r < classes; ++r) {
    const double* row = lv.data() + r * steps;
    double* pr = probs->data() + r * steps;
    for (std::size_t t = 0; t < steps; ++t) {
      pr[t] = std::exp(row[t] - col_max[t]);
      col_sum[t] += pr[t];
    }
  }
  double loss = 0.0;
  for (std::size_t t = 0; t < steps; ++t) {
    const int target = targets[t];
    require(target >= 0 && static_cast<std::size_t>(target) < classes,
            ErrorCode::kInvalidArgument, "softmax_cross_entropy: target out of range");
    loss += std::log(col_sum[t]) + col_max[t] - lv.at(target, t);
  }
  for (std::size_t r = 0; r < classes; ++r) {
    double* pr = probs->data() + r * steps;
    for (std::size_t t = 0; t < steps; ++t) pr[t] /= col_sum[t];
  }
  auto kept = std::make_shared<std::vector<int>>(targets.begin(), targets.end());
  const int il = logits.id;
  return logits.tape->record(
      "softmax_cross_entropy", Tensor::scalar(loss / static_cast<double>(steps)), {il},
      [il, probs, kept](Tape& t, int self) {
        if (!t.requires_grad(il)) return;
        const std::size_t steps = kept->size();
        const double g = t.grad_slot(self)[0] / static_cast<double>(steps);
        Tensor& dl = t.grad_slot(il);
        for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += g * (*probs)[i];
        for (std::size_t s = 0; s < steps; ++s)
          dl.data()[static_cast<std::size_t>((*kept)[s]) * steps + s] -= g;
      });
}

Var gaussian_nll(Var prediction, Var target) {
  Tape* tape = same_tape(prediction, target);
  check_same_shape("gaussian_nll", prediction.value(), target.value());
  const Tensor& pv = prediction.value();
  const Tensor& tv = target.value();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double e = tv[i] - pv[i];
    s += e * e;
  }
  const int ip = prediction.id, it = target.id;
  return tape->record("gaussian_nll", Tensor::scalar(0.5 * s), {ip, it},
                      [ip, it](Tape& t, int self) {
                        const double g = t.grad_slot(self)[0];
                        const Tensor& pv = t.value(ip);
                        const Tensor& tv = t.value(it);
                        if (t.requires_grad(ip)) {
                          Tensor& dp = t.grad_slot(ip);
                          for (std::size_t i = 0; i < dp.size(); ++i)
                            dp[i] += g * (pv[i] - tv[i]);
                        }
                        if (t.requires_grad(it)) {
                          Tensor& dt = t.grad_slot(it);
                          for (std::size_t i = 0; i < dt.size(); ++i)
                            dt[i] += g * (tv[i] - pv[i]);
                        }
                      });
}

Var gaussian_kl(Var mu, Var logvar) {
  Tape* tape = same_tape(mu, logvar);
  check_same_shape("gaussian_kl", mu.value(), logvar.value());
  const Tensor& mv = mu.value();
  const Tensor& lv = logvar.value();
  double s = 0.0;
  for (std::size_t i = 0; i < mv.size(); ++i)
    s += 0.5 * (mv[i] * mv[i] + std::exp(lv[i]) - 1.0 - lv[i]);
  const int im = mu.id, il = logvar.id;
  return tape->record("gaussian_kl", Tensor::scalar(s), {im, il}, [im, il](Tape& t, int self) {
    const double g = t.grad_slot(self)[0];
    if (t.requires_grad(im)) {
      const Tensor& mv = t.value(im);
      Tensor& dm = t.grad_slot(im);
      for (std::size_t i = 0; i < dm.size(); ++i) dm[i] += g * mv[i];
    }
    if (t.requires_grad(il)) {
      const Tensor& lv = t.value(il);
      Tensor& dl = t.grad_slot(il);
      for (std::size_t i = 0; i < dl.size(); ++i) dl[i] += g * 0.5 * (std::exp(lv[i]) - 1.0);
    }
  });
}

Var reparameterize(Var mu, Var logvar, const Tensor& noise) {
  Tape* tape = same_tape(mu, logvar);
  check_same_shape("reparameterize", mu.value(), logvar.value());
  check_same_shape("reparameterize", mu.value(), noise);
  const Tensor& mv = mu.value();
  const Tensor& lv = logvar.value();
  Tensor z(mv.shape());
  for (std::size_t i = 0; i < z.size(); ++i)
    z[i] = mv[i] + std::exp(0.5 * lv[i]) * noise[i];
  auto eps = std::make_shared<Tensor>(noise);
  const int im = mu.id, il = logvar.id;
  return tape->record("reparameterize", std::move(z), {im, il},
                      [im, il, eps](Tape& t, int self) {
                        const Tensor& g = t.grad_slot(self);
                        accumulate(t, im, g);
                        if (t.requires_grad(il)) {
                          const Tensor& lv = t.value(il);
                          Tensor& dl = t.grad_slot(il);
                          for (std::size_t i = 0; i < dl.size(); ++i)
                            dl[i] += g[i] * 0.5 * std::exp(0.5 * lv[i]) * (*eps)[i];
                        }
                      });
}

}  // namespace ops

}  // namespace vcwn
