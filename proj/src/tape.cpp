#include "dccl/tape.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "dccl/util.hpp"

namespace dccl::ad {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

bool is_row_vector(const Tensor& t) { return t.rank() == 2 && t.shape()[0] == 1; }

// C += A (m x k) * B (k x n)
void matmul_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A^T (k x m -> m x k view) * B, where A is (k x m), B is (k x n), C is (m x n)
void matmul_at_acc(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                   std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C += A (m x k) * B^T, where B is (n x k), C is (m x n)
void matmul_bt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      crow[j] += s;
    }
  }
}

}  // namespace

const Tensor& Var::value() const {
  if (!tape_) throw std::logic_error("Var::value: unbound handle");
  return tape_->value_of(*this);
}

const Tensor& GradientMap::at(Var v) const {
  auto it = grads_.find(v.id());
  if (it == grads_.end()) throw std::out_of_range("GradientMap::at: no gradient for this var");
  return it->second;
}

const char* Tape::op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kAddRow: return "add(row broadcast)";
    case Op::kSub: return "sub";
    case Op::kSubRow: return "sub(row broadcast)";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kMatMul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmaxRows: return "softmax_rows";
    case Op::kLayerNormRows: return "layer_norm_rows";
    case Op::kConcatCols: return "concat_cols";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSumAll: return "sum_all";
    case Op::kMeanAll: return "mean_all";
    case Op::kMse: return "mse";
  }
  return "?";
}

Tape::Node& Tape::node(Var v) { return nodes_[static_cast<std::size_t>(v.id_)]; }
const Tape::Node& Tape::node(Var v) const { return nodes_[static_cast<std::size_t>(v.id_)]; }

void Tape::check_owned(Var v, const char* op) const {
  if (v.tape_ != this || v.id_ < 0 || static_cast<std::size_t>(v.id_) >= nodes_.size()) {
    throw std::logic_error(cat(op, ": operand does not belong to this tape"));
  }
}

const Tensor& Tape::value_of(Var v) const {
  check_owned(v, "value_of");
  return node(v).value;
}

void Tape::reset() { nodes_.clear(); }

Var Tape::push(Op op, Tensor value, std::int32_t in0, std::int32_t in1, std::int32_t in2,
               std::size_t a, std::size_t b, double c) {
  if (!value.all_finite()) {
    throw std::runtime_error(cat("non-finite values produced by op '", op_name(op), "'"));
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.in0 = in0;
  n.in1 = in1;
  n.in2 = in2;
  n.a = a;
  n.b = b;
  n.c = c;
  n.requires_grad = (in0 >= 0 && nodes_[in0].requires_grad) ||
                    (in1 >= 0 && nodes_[in1].requires_grad) ||
                    (in2 >= 0 && nodes_[in2].requires_grad);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::leaf(Tensor value, bool requires_grad, std::string name) {
  if (!value.all_finite()) {
    throw std::runtime_error(cat("non-finite values in leaf tensor '",
                                 name.empty() ? "<unnamed>" : name, "'"));
  }
  Node n;
  n.value = std::move(value);
  n.op = Op::kLeaf;
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<std::int32_t>(nodes_.size() - 1));
}

Var Tape::add(Var a, Var b) {
  check_owned(a, "add");
  check_owned(b, "add");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.same_shape(tb)) {
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += tb[i];
    return push(Op::kAdd, std::move(out), a.id_, b.id_);
  }
  if (ta.rank() == 2 && is_row_vector(tb) && ta.cols() == tb.cols()) {
    Tensor out = ta;
    const std::size_t r = ta.rows(), c = ta.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += tb[j];
    return push(Op::kAddRow, std::move(out), a.id_, b.id_);
  }
  throw std::invalid_argument(cat("add: incompatible shapes ", shape_to_string(ta.shape()), " and ",
                                  shape_to_string(tb.shape())));
}

Var Tape::sub(Var a, Var b) {
  check_owned(a, "sub");
  check_owned(b, "sub");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  if (ta.same_shape(tb)) {
    Tensor out = ta;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= tb[i];
    return push(Op::kSub, std::move(out), a.id_, b.id_);
  }
  if (ta.rank() == 2 && is_row_vector(tb) && ta.cols() == tb.cols()) {
    Tensor out = ta;
    const std::size_t r = ta.rows(), c = ta.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] -= tb[j];
    return push(Op::kSubRow, std::move(out), a.id_, b.id_);
  }
  throw std::invalid_argument(cat("sub: incompatible shapes ", shape_to_string(ta.shape()), " and ",
                                  shape_to_string(tb.shape())));
}

Var Tape::mul(Var a, Var b) {
  check_owned(a, "mul");
  check_owned(b, "mul");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require(ta.same_shape(tb), cat("mul: shape mismatch ", shape_to_string(ta.shape()), " vs ",
                                 shape_to_string(tb.shape())));
  Tensor out = ta;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= tb[i];
  return push(Op::kMul, std::move(out), a.id_, b.id_);
}

Var Tape::scale(Var a, double c) {
  check_owned(a, "scale");
  Tensor out = node(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return push(Op::kScale, std::move(out), a.id_, -1, -1, 0, 0, c);
}

Var Tape::matmul(Var a, Var b) {
  check_owned(a, "matmul");
  check_owned(b, "matmul");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require(ta.rank() == 2 && tb.rank() == 2, "matmul: rank-2 tensors required");
  require(ta.cols() == tb.rows(), cat("matmul: inner dimensions differ, ",
                                      shape_to_string(ta.shape()), " vs ",
                                      shape_to_string(tb.shape())));
  const std::size_t m = ta.rows(), k = ta.cols(), n = tb.cols();
  Tensor out({m, n});
  matmul_acc(ta.data(), tb.data(), out.data(), m, k, n);
  return push(Op::kMatMul, std::move(out), a.id_, b.id_);
}

Var Tape::transpose(Var a) {
  check_owned(a, "transpose");
  const Tensor& ta = node(a).value;
  require(ta.rank() == 2, "transpose: rank-2 tensor required");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ta[i * c + j];
  return push(Op::kTranspose, std::move(out), a.id_);
}

Var Tape::tanh(Var a) {
  check_owned(a, "tanh");
  Tensor out = node(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return push(Op::kTanh, std::move(out), a.id_);
}

Var Tape::sigmoid(Var a) {
  check_owned(a, "sigmoid");
  Tensor out = node(a).value;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
  return push(Op::kSigmoid, std::move(out), a.id_);
}

Var Tape::softmax_rows(Var a) {
  check_owned(a, "softmax_rows");
  const Tensor& ta = node(a).value;
  require(ta.rank() == 2, "softmax_rows: rank-2 tensor required");
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* x = ta.data() + i * c;
    double* y = out.data() + i * c;
    double mx = x[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      y[j] = std::exp(x[j] - mx);
      sum += y[j];
    }
    for (std::size_t j = 0; j < c; ++j) y[j] /= sum;
  }
  return push(Op::kSoftmaxRows, std::move(out), a.id_);
}

Var Tape::layer_norm_rows(Var x, Var gain, Var bias, double eps) {
  check_owned(x, "layer_norm_rows");
  check_owned(gain, "layer_norm_rows");
  check_owned(bias, "layer_norm_rows");
  const Tensor& tx = node(x).value;
  const Tensor& tg = node(gain).value;
  const Tensor& tb = node(bias).value;
  require(tx.rank() == 2, "layer_norm_rows: rank-2 input required");
  require(is_row_vector(tg) && tg.cols() == tx.cols(), "layer_norm_rows: gain must be 1 x cols");
  require(is_row_vector(tb) && tb.cols() == tx.cols(), "layer_norm_rows: bias must be 1 x cols");
  require(eps > 0, "layer_norm_rows: eps must be positive");
  const std::size_t r = tx.rows(), c = tx.cols();
  Tensor out({r, c});
  for (std::size_t i = 0; i < r; ++i) {
    const double* xi = tx.data() + i * c;
    double* yi = out.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xi[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xi[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double inv_sigma = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < c; ++j) {
      yi[j] = (xi[j] - mean) * inv_sigma * tg[j] + tb[j];
    }
  }
  return push(Op::kLayerNormRows, std::move(out), x.id_, gain.id_, bias.id_, 0, 0, eps);
}

Var Tape::concat_cols(Var a, Var b) {
  check_owned(a, "concat_cols");
  check_owned(b, "concat_cols");
  const Tensor& ta = node(a).value;
  const Tensor& tb = node(b).value;
  require(ta.rank() == 2 && tb.rank() == 2 && ta.rows() == tb.rows(),
          "concat_cols: rank-2 tensors with equal row counts required");
  const std::size_t r = ta.rows(), ca = ta.cols(), cb = tb.cols();
  Tensor out({r, ca + cb});
  for (std::size_t i = 0; i < r; ++i) {
    std::memcpy(out.data() + i * (ca + cb), ta.data() + i * ca, ca * sizeof(double));
    std::memcpy(out.data() + i * (ca + cb) + ca, tb.data() + i * cb, cb * sizeof(double));
  }
  return push(Op::kConcatCols, std::move(out), a.id_, b.id_, -1, ca);
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t count) {
  check_owned(a, "slice_cols");
  const Tensor& ta = node(a).value;
  require(ta.rank() == 2, "slice_cols: rank-2 tensor required");
  require(count >= 1 && start + count <= ta.cols(),
          cat("slice_cols: range [", start, ", ", start + count, ") out of ", ta.cols(), " columns"));
  const std::size_t r = ta.rows(), c = ta.cols();
  Tensor out({r, count});
  for (std::size_t i = 0; i < r; ++i) {
    std::memcpy(out.data() + i * count, ta.data() + i * c + start, count * sizeof(double));
  }
  return push(Op::kSliceCols, std::move(out), a.id_, -1, -1, start, count);
}

Var Tape::slice_rows(Var a, std::size_t start, std::size_t count) {
  check_owned(a, "slice_rows");
  const Tensor& ta = node(a).value;
  require(ta.rank() == 2, "slice_rows: rank-2 tensor required");
  require(count >= 1 && start + count <= ta.rows(),
          cat("slice_rows: range [", start, ", ", start + count, ") out of ", ta.rows(), " rows"));
  const std::size_t c = ta.cols();
  Tensor out({count, c});
  std::memcpy(out.data(), ta.data() + start * c, count * c * sizeof(double));
  return push(Op::kSliceRows, std::move(out), a.id_, -1, -1, start, count);
}

Var Tape::sum_all(Var a) {
  check_owned(a, "sum_all");
  const Tensor& ta = node(a).value;
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  return push(Op::kSumAll, Tensor::scalar(s), a.id_);
}

Var Tape::mean_all(Var a) {
  check_owned(a, "mean_all");
  const Tensor& ta = node(a).value;
  double s = 0.0;
  for (std::size_t i = 0; i < ta.size(); ++i) s += ta[i];
  return push(Op::kMeanAll, Tensor::scalar(s / static_cast<double>(ta.size())), a.id_);
}

Var Tape::mse(Var pred, Var target) {
  check_owned(pred, "mse");
  check_owned(target, "mse");
  const Tensor& tp = node(pred).value;
  const Tensor& tt = node(target).value;
  require(tp.same_shape(tt), cat("mse: shape mismatch ", shape_to_string(tp.shape()), " vs ",
                                 shape_to_string(tt.shape())));
  double s = 0.0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const double d = tp[i] - tt[i];
    s += d * d;
  }
  return push(Op::kMse, Tensor::scalar(s / static_cast<double>(tp.size())), pred.id_, target.id_);
}

std::vector<double>& Tape::grad_buffer(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward_node(std::int32_t id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::vector<double>& g = n.grad;
  const std::size_t sz = n.value.size();

  auto wants = [&](std::int32_t in) { return in >= 0 && nodes_[in].requires_grad; };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.in1)) {
        auto& gb = grad_buffer(n.in1);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i];
      }
      break;
    }
    case Op::kAddRow:
    case Op::kSubRow: {
      const double sign = n.op == Op::kAddRow ? 1.0 : -1.0;
      const std::size_t c = n.value.cols();
      const std::size_t r = n.value.rows();
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.in1)) {
        auto& gb = grad_buffer(n.in1);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) gb[j] += sign * g[i * c + j];
      }
      break;
    }
    case Op::kSub: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i];
      }
      if (wants(n.in1)) {
        auto& gb = grad_buffer(n.in1);
        for (std::size_t i = 0; i < sz; ++i) gb[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& ta = nodes_[n.in0].value;
      const Tensor& tb = nodes_[n.in1].value;
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * tb[i];
      }
      if (wants(n.in1)) {
        auto& gb = grad_buffer(n.in1);
        for (std::size_t i = 0; i < sz; ++i) gb[i] += g[i] * ta[i];
      }
      break;
    }
    case Op::kScale: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) ga[i] += g[i] * n.c;
      }
      break;
    }
    case Op::kMatMul: {
      const Tensor& ta = nodes_[n.in0].value;
      const Tensor& tb = nodes_[n.in1].value;
      const std::size_t m = ta.rows(), k = ta.cols(), nn = tb.cols();
      if (wants(n.in0)) {
        // dA += G * B^T
        matmul_bt_acc(g.data(), tb.data(), grad_buffer(n.in0).data(), m, nn, k);
      }
      if (wants(n.in1)) {
        // dB += A^T * G
        matmul_at_acc(ta.data(), g.data(), grad_buffer(n.in1).data(), m, k, nn);
      }
      break;
    }
    case Op::kTranspose: {
      if (wants(n.in0)) {
        const std::size_t r = n.value.rows(), c = n.value.cols();  // output shape
        auto& ga = grad_buffer(n.in0);                             // input is c x r
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[j * r + i] += g[i * c + j];
      }
      break;
    }
    case Op::kTanh: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) {
          const double y = n.value[i];
          ga[i] += g[i] * (1.0 - y * y);
        }
      }
      break;
    }
    case Op::kSigmoid: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < sz; ++i) {
          const double y = n.value[i];
          ga[i] += g[i] * y * (1.0 - y);
        }
      }
      break;
    }
    case Op::kSoftmaxRows: {
      if (wants(n.in0)) {
        const std::size_t r = n.value.rows(), c = n.value.cols();
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < r; ++i) {
          const double* y = n.value.data() + i * c;
          const double* gi = g.data() + i * c;
          double dot = 0.0;
          for (std::size_t j = 0; j < c; ++j) dot += gi[j] * y[j];
          for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += y[j] * (gi[j] - dot);
        }
      }
      break;
    }
    case Op::kLayerNormRows: {
      const Tensor& tx = nodes_[n.in0].value;
      const Tensor& tg = nodes_[n.in1].value;
      const std::size_t r = tx.rows(), c = tx.cols();
      const double eps = n.c;
      std::vector<double> norm(c);
      for (std::size_t i = 0; i < r; ++i) {
        const double* xi = tx.data() + i * c;
        const double* gi = g.data() + i * c;
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += xi[j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          const double d = xi[j] - mean;
          var += d * d;
        }
        var /= static_cast<double>(c);
        const double inv_sigma = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < c; ++j) norm[j] = (xi[j] - mean) * inv_sigma;

        if (wants(n.in2)) {
          auto& gb = grad_buffer(n.in2);
          for (std::size_t j = 0; j < c; ++j) gb[j] += gi[j];
        }
        if (wants(n.in1)) {
          auto& gg = grad_buffer(n.in1);
          for (std::size_t j = 0; j < c; ++j) gg[j] += gi[j] * norm[j];
        }
        if (wants(n.in0)) {
          auto& gx = grad_buffer(n.in0);
          double mean_dn = 0.0, mean_dn_norm = 0.0;
          for (std::size_t j = 0; j < c; ++j) {
            const double dn = gi[j] * tg[j];
            mean_dn += dn;
            mean_dn_norm += dn * norm[j];
          }
          mean_dn /= static_cast<double>(c);
          mean_dn_norm /= static_cast<double>(c);
          for (std::size_t j = 0; j < c; ++j) {
            const double dn = gi[j] * tg[j];
            gx[i * c + j] += inv_sigma * (dn - mean_dn - norm[j] * mean_dn_norm);
          }
        }
      }
      break;
    }
    case Op::kConcatCols: {
      const std::size_t ca = n.a;
      const std::size_t r = n.value.rows(), cout = n.value.cols();
      const std::size_t cb = cout - ca;
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * cout + j];
      }
      if (wants(n.in1)) {
        auto& gb = grad_buffer(n.in1);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < cb; ++j) gb[i * cb + j] += g[i * cout + ca + j];
      }
      break;
    }
    case Op::kSliceCols: {
      if (wants(n.in0)) {
        const std::size_t start = n.a, count = n.b;
        const std::size_t r = n.value.rows();
        const std::size_t cin = nodes_[n.in0].value.cols();
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < count; ++j) ga[i * cin + start + j] += g[i * count + j];
      }
      break;
    }
    case Op::kSliceRows: {
      if (wants(n.in0)) {
        const std::size_t start = n.a, count = n.b;
        const std::size_t c = n.value.cols();
        auto& ga = grad_buffer(n.in0);
        for (std::size_t i = 0; i < count; ++i)
          for (std::size_t j = 0; j < c; ++j) ga[(start + i) * c + j] += g[i * c + j];
      }
      break;
    }
    case Op::kSumAll: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        const double gv = g[0];
        for (double& x : ga) x += gv;
      }
      break;
    }
    case Op::kMeanAll: {
      if (wants(n.in0)) {
        auto& ga = grad_buffer(n.in0);
        const double gv = g[0] / static_cast<double>(nodes_[n.in0].value.size());
        for (double& x : ga) x += gv;
      }
      break;
    }
    case Op::kMse: {
      const Tensor& tp = nodes_[n.in0].value;
      const Tensor& tt = nodes_[n.in1].value;
      const double scale = 2.0 * g[0] / static_cast<double>(tp.size());
      if (wants(n.in0)) {
        auto& gp = grad_buffer(n.in0);
        for (std::size_t i = 0; i < tp.size(); ++i) gp[i] += scale * (tp[i] - tt[i]);
      }
      if (wants(n.in1)) {
        auto& gt = grad_buffer(n.in1);
        for (std::size_t i = 0; i < tp.size(); ++i) gt[i] -= scale * (tp[i] - tt[i]);
      }
      break;
    }
  }
}

GradientMap Tape::backward(Var loss) {
  check_owned(loss, "backward");
  const Node& ln = node(loss);
  if (ln.value.size() != 1) {
    throw std::invalid_argument(cat("backward: loss must be scalar, got shape ",
                                    shape_to_string(ln.value.shape())));
  }

  if (ln.requires_grad) {
    grad_buffer(loss.id_)[0] = 1.0;
    for (std::int32_t id = loss.id_; id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.requires_grad || n.grad.empty()) continue;
      for (double gv : n.grad) {
        if (!std::isfinite(gv)) {
          throw std::runtime_error(cat("non-finite gradient encountered at op '", op_name(n.op),
                                       n.op == Op::kLeaf ? cat("' (leaf '", n.name, "')") : "'"));
        }
      }
      backward_node(id);
    }
  }

  GradientMap out;
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    Node& n = nodes_[i];
    if (n.op != Op::kLeaf || !n.requires_grad) continue;
    Tensor g(n.value.shape());
    if (!n.grad.empty() && static_cast<std::int32_t>(i) <= loss.id_) {
      std::copy(n.grad.begin(), n.grad.end(), g.values().begin());
    }
    out.grads_.emplace(static_cast<std::int32_t>(i), std::move(g));
    n.grad.clear();
  }
  // Drop intermediate grad buffers so the tape can be reused for another pass.
  for (Node& n : nodes_) n.grad.clear();
  return out;
}

}  // namespace dccl::ad
