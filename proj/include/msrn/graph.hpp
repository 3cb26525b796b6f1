#pragma once

#include <map>
#include <string>
#include <vector>

#include "msrn/tensor.hpp"

namespace msrn {

using NodeId = int32_t;

enum class Op {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kScalarMul,
  kMatmul,
  kTranspose,
  kExp,
  kLog,
  kLeakyRelu,
  kElu,
  kTanh,
  kSigmoid,
  kSoftmax,           // joint softmax over attrs.axes, per remaining coordinate
  kMaskedRowSoftmax,  // 2D scores + binary mask, softmax over masked row entries
  kSum,               // reduce attrs.axes away
  kConcat,            // along attrs.axis
  kSlice,             // attrs.axis, attrs.start, attrs.len
  kReshape,
  kExpand,  // insert repeated axis at attrs.axis with size attrs.len
  kConv1x1,
  kConv3x3,  // stride 1, zero padding 1
  kMaxPool2,
  kBceWithLogits,  // scalar sum over elements, stable form
  kSqDist,         // scalar sum of squared differences
};

const char* op_name(Op op);

struct Node {
  Op op = Op::kLeaf;
  std::vector<NodeId> inputs;
  Tensor value;
  Tensor grad;  // allocated during backward for nodes that need it
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or depends on such a leaf
  std::string name;         // named leaves only
  // op attributes
  std::vector<int> axes;
  Shape target_shape;
  int axis = 0;
  int64_t start = 0;
  int64_t len = 0;
  double scalar = 0.0;
};

using Bindings = std::map<std::string, Tensor>;
using GradMap = std::map<std::string, Tensor>;

// Static compute graph with eager evaluation: every builder call both
// records the op and computes its value, so construction doubles as the
// first forward pass. forward(bindings) re-evaluates the whole graph
// with new leaf values in construction order (which is topological by
// construction); backward runs reverse accumulation from a scalar or a
// seeded output.
class Graph {
 public:
  NodeId leaf(std::string name, Tensor value, bool requires_grad);
  NodeId constant(Tensor value);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scalar_mul(NodeId x, double c);
  NodeId matmul(NodeId a, NodeId b);
  NodeId transpose(NodeId x);
  NodeId exp(NodeId x);
  NodeId log(NodeId x);
  NodeId leaky_relu(NodeId x, double slope);
  NodeId elu(NodeId x, double alpha = 1.0);
  NodeId tanh(NodeId x);
  NodeId sigmoid(NodeId x);
  NodeId softmax(NodeId x, std::vector<int> axes);
  NodeId masked_row_softmax(NodeId scores, NodeId mask);
  NodeId sum(NodeId x, std::vector<int> axes);
  NodeId concat(const std::vector<NodeId>& parts, int axis);
  NodeId slice(NodeId x, int axis, int64_t start, int64_t len);
  NodeId reshape(NodeId x, Shape shape);
  NodeId expand(NodeId x, int axis, int64_t count);
  NodeId conv1x1(NodeId x, NodeId w, NodeId b);
  NodeId conv3x3(NodeId x, NodeId w, NodeId b);
  NodeId maxpool2(NodeId x);
  NodeId bce_with_logits(NodeId logits, NodeId targets);
  NodeId sqdist(NodeId a, NodeId b);

  size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(static_cast<size_t>(id)); }
  NodeId leaf_id(const std::string& name) const;
  std::vector<std::string> grad_leaf_names() const;  // requires_grad leaves, sorted
  const Tensor& value(NodeId id) const { return node(id).value; }
  const Tensor& grad(NodeId id) const;
  NodeId last() const { return static_cast<NodeId>(nodes_.size()) - 1; }

  // Rebind named leaves and re-evaluate every node; returns value(out).
  // Unmentioned leaves keep their current values.
  Tensor forward(const Bindings& bindings, NodeId out);
  Tensor forward(const Bindings& bindings);

  // Reverse accumulation from `out` seeded with `seed` (same shape as
  // out's value). Returns gradients of all named requires_grad leaves;
  // per-node gradients stay readable through grad(id).
  GradMap backward(NodeId out, const Tensor& seed);
  GradMap backward(NodeId out);  // seed of ones

  // Smallest distance to a nondifferentiable point seen during the last
  // (re-)evaluation: |input| for LeakyReLU, top-two margin for max-pool.
  double kink_margin() const { return kink_margin_; }

 private:
  NodeId push(Node n);
  void eval(Node& n);
  void backprop(const Node& n);
  Tensor& grad_buffer(NodeId id);

  std::vector<Node> nodes_;
  std::map<std::string, NodeId> leaf_ids_;
  double kink_margin_ = 1e300;
  bool forward_done_ = false;
};

}  // namespace msrn
