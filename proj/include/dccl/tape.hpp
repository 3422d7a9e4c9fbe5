#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "dccl/tensor.hpp"

namespace dccl::ad {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid until the
/// owning tape is reset or destroyed.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  std::int32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::int32_t id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  std::int32_t id_ = -1;
};

/// Gradients of a scalar loss with respect to every requires-grad leaf.
class GradientMap {
 public:
  bool contains(Var v) const { return grads_.count(v.id()) != 0; }
  const Tensor& at(Var v) const;
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::int32_t, Tensor> grads_;
};

/// Reverse-mode autodiff tape over dense tensors.
///
/// Nodes are recorded in topological order (operands always precede their
/// consumers), values are frozen once recorded, and every op result is
/// checked for NaN/Inf on entry. The op set is the closure needed by the
/// two forecasters; each op has a hand-written backward rule that is
/// finite-difference checked in the test suite.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Record an input tensor. Leaves with requires_grad=true appear in the
  /// gradient map returned by backward(). `name` is used in diagnostics.
  Var leaf(Tensor value, bool requires_grad = false, std::string name = {});
  Var constant(Tensor value) { return leaf(std::move(value)); }
  Var constant(double v) { return leaf(Tensor::scalar(v)); }

  // Elementwise; add/sub also accept a 1xC right operand broadcast over the
  // rows of an RxC left operand.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);

  Var matmul(Var a, Var b);
  Var transpose(Var a);

  Var tanh(Var a);
  Var sigmoid(Var a);
  /// Softmax along the last axis of a rank-2 tensor (independently per row).
  Var softmax_rows(Var a);
  /// Layer normalization along the last axis with learnable 1xC gain/bias.
  Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5);

  Var concat_cols(Var a, Var b);
  Var slice_cols(Var a, std::size_t start, std::size_t count);
  Var slice_rows(Var a, std::size_t start, std::size_t count);

  Var sum_all(Var a);
  Var mean_all(Var a);
  /// Mean squared error over all entries; scalar result.
  Var mse(Var pred, Var target);

  /// Reverse pass from a scalar loss. Gradients of all requires-grad leaves
  /// are returned (zero tensors for leaves the loss does not depend on).
  GradientMap backward(Var loss);

  const Tensor& value_of(Var v) const;
  std::size_t node_count() const { return nodes_.size(); }

  /// Drop all nodes but keep allocated capacity (reuse across batches).
  void reset();

 private:
  enum class Op : std::uint8_t {
    kLeaf,
    kAdd,
    kAddRow,
    kSub,
    kSubRow,
    kMul,
    kScale,
    kMatMul,
    kTranspose,
    kTanh,
    kSigmoid,
    kSoftmaxRows,
    kLayerNormRows,
    kConcatCols,
    kSliceCols,
    kSliceRows,
    kSumAll,
    kMeanAll,
    kMse,
  };

  struct Node {
    Tensor value;
    std::vector<double> grad;  // allocated during backward
    std::int32_t in0 = -1, in1 = -1, in2 = -1;
    std::size_t a = 0, b = 0;  // op parameters (slice offsets etc.)
    double c = 0.0;            // scale factor / layer-norm epsilon
    Op op = Op::kLeaf;
    bool requires_grad = false;
    std::string name;  // leaves only
  };

  static const char* op_name(Op op);
  Var push(Op op, Tensor value, std::int32_t in0, std::int32_t in1 = -1, std::int32_t in2 = -1,
           std::size_t a = 0, std::size_t b = 0, double c = 0.0);
  Node& node(Var v);
  const Node& node(Var v) const;
  void check_owned(Var v, const char* op) const;
  std::vector<double>& grad_buffer(std::int32_t id);
  void backward_node(std::int32_t id);

  std::vector<Node> nodes_;
};

}  // namespace dccl::ad
