#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "adaforge/tensor.hpp"

namespace adaforge {

/// Inputs to log() are clamped to this floor so adversarial losses stay finite
/// when the discriminator saturates.
inline constexpr double kLogClamp = 1e-12;

enum class OpKind {
  Leaf,
  Constant,
  Matmul,
  Add,
  Mul,
  Relu,
  Sigmoid,
  Log,
  Neg,
  Mean,
  Sum,
  Conv2d,
  Maxpool2x2,
  Upsample2x,
  Reshape,
  Concat,
  SoftmaxRows,
  SliceChannel,
};

const char* op_name(OpKind k);
OpKind op_kind_from_name(const std::string& name);

namespace detail {
struct Node {
  Tensor data;
  Tensor grad;  // allocated on first use
  Tensor tmp;   // per-backward-pass scratch
  OpKind op = OpKind::Leaf;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;

  Tensor& grad_ref() {
    if (grad.empty()) grad = Tensor::zeros(data.shape);
    return grad;
  }
};
}  // namespace detail

/// Handle to one node of a define-by-run reverse-mode graph. Copies share the
/// underlying node. The graph is rebuilt on every forward pass.
class Value {
 public:
  Value() = default;
  explicit Value(std::shared_ptr<detail::Node> n) : n_(std::move(n)) {}

  static Value leaf(Tensor data, bool requires_grad);
  static Value constant(Tensor data);
  static Value constant(const Shape& s, double fill);
  static Value scalar(double x) { return constant(Shape{1}, x); }

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->data.shape; }
  int64_t numel() const { return n_->data.numel(); }

  const Tensor& data() const { return n_->data; }
  Tensor& data() { return n_->data; }
  const Tensor& grad() const { return n_->grad_ref(); }
  void zero_grad() { n_->grad_ref().zero(); }

  bool requires_grad() const { return n_->requires_grad; }
  OpKind op() const { return n_->op; }
  size_t num_parents() const { return n_->parents.size(); }
  Value parent(size_t i) const { return Value(n_->parents.at(i)); }

  double item() const;

  detail::Node* node() const { return n_.get(); }
  const std::shared_ptr<detail::Node>& handle() const { return n_; }

 private:
  std::shared_ptr<detail::Node> n_;
};

/// While alive, newly built ops carry no parents, closures, or gradients.
/// Used for evaluation-only forward passes.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

bool grad_enabled();

/// Which of the three optimizer groups a trainable array belongs to. Loss
/// terms are routed per group: the task head sees only the supervised loss,
/// the discriminator only its own loss, the encoder both.
enum class ParamGroup { Encoder, Task, Discriminator };
const char* group_name(ParamGroup g);
ParamGroup group_from_name(const std::string& name);

struct Parameter {
  Value value;
  std::string name;  // hierarchical, unique within a model
  ParamGroup group = ParamGroup::Encoder;
};

void zero_grad(const std::vector<Parameter>& params);

// Forward operations. Each validates input shapes and reports the op kind and
// offending dims on mismatch.
Value matmul(const Value& a, const Value& b);
Value add(const Value& a, const Value& b);  // same-shape, row bias, channel bias
Value mul(const Value& a, const Value& b);  // elementwise
Value relu(const Value& x);
Value sigmoid(const Value& x);
Value log(const Value& x);  // log(max(x, kLogClamp))
Value neg(const Value& x);
Value mean(const Value& x);  // over all elements -> scalar
Value sum(const Value& x);   // over all elements -> scalar
Value conv2d(const Value& x, const Value& w, const Value& b);  // stride 1, same padding
Value maxpool2x2(const Value& x);
Value upsample2x(const Value& x);  // nearest neighbour
Value reshape(const Value& x, const Shape& target);
Value concat(const Value& a, const Value& b, int axis);
Value softmax_rows(const Value& x);
Value slice_channel(const Value& x, int64_t channel);

struct OpAttrs {
  int axis = 0;
  int64_t channel = 0;
  Shape shape;
};

/// Uniform dispatcher over the op vocabulary above.
Value forward_op(OpKind kind, const std::vector<Value>& inputs, const OpAttrs& attrs = {});
Value forward_op(const std::string& kind, const std::vector<Value>& inputs,
                 const OpAttrs& attrs = {});

/// Reverse-mode sweep from a scalar root. Gradients accumulate into .grad of
/// every reachable node with requires_grad; repeated calls without zero_grad
/// keep accumulating.
void backward(const Value& root);

}  // namespace adaforge
