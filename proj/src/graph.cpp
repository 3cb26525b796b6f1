#include "msrn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace msrn {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScalarMul: return "scalar_mul";
    case Op::kMatmul: return "matmul";
    case Op::kTranspose: return "transpose";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kElu: return "elu";
    case Op::kTanh: return "tanh";
    case Op::kSigmoid: return "sigmoid";
    case Op::kSoftmax: return "softmax";
    case Op::kMaskedRowSoftmax: return "masked_row_softmax";
    case Op::kSum: return "sum";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kReshape: return "reshape";
    case Op::kExpand: return "expand";
    case Op::kConv1x1: return "conv1x1";
    case Op::kConv3x3: return "conv3x3";
    case Op::kMaxPool2: return "maxpool2";
    case Op::kBceWithLogits: return "bce_with_logits";
    case Op::kSqDist: return "sqdist";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

void check_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) shape_error(op, "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

void check_axes(Op op, const Shape& shape, const std::vector<int>& axes) {
  if (axes.empty()) shape_error(op, "no axes given");
  std::vector<int> sorted(axes);
  std::sort(sorted.begin(), sorted.end());
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (sorted[i] < 0 || sorted[i] >= static_cast<int>(shape.size()))
      shape_error(op, "axis " + std::to_string(sorted[i]) + " out of range for " + shape_str(shape));
    if (i > 0 && sorted[i] == sorted[i - 1]) shape_error(op, "duplicate axis " + std::to_string(sorted[i]));
  }
}

// Per-element group index over the axes NOT being reduced; group count
// is the product of the kept dims.
std::vector<int64_t> group_ids(const Shape& shape, const std::vector<int>& reduced_axes) {
  int rank = static_cast<int>(shape.size());
  std::vector<bool> reduced(static_cast<size_t>(rank), false);
  for (int a : reduced_axes) reduced[static_cast<size_t>(a)] = true;
  int64_t numel = shape_numel(shape);
  std::vector<int64_t> gid(static_cast<size_t>(numel));
  std::vector<int64_t> coord(static_cast<size_t>(rank), 0);
  int64_t g = 0;
  // group stride per axis
  std::vector<int64_t> gstride(static_cast<size_t>(rank), 0);
  int64_t s = 1;
  for (int a = rank - 1; a >= 0; --a) {
    if (!reduced[static_cast<size_t>(a)]) {
      gstride[static_cast<size_t>(a)] = s;
      s *= shape[static_cast<size_t>(a)];
    }
  }
  for (int64_t flat = 0; flat < numel; ++flat) {
    gid[static_cast<size_t>(flat)] = g;
    for (int a = rank - 1; a >= 0; --a) {
      size_t ua = static_cast<size_t>(a);
      if (++coord[ua] < shape[ua]) {
        g += gstride[ua];
        break;
      }
      coord[ua] = 0;
      g -= gstride[ua] * (shape[ua] - 1);
    }
  }
  return gid;
}

Shape reduced_shape(const Shape& shape, const std::vector<int>& axes) {
  std::vector<bool> reduced(shape.size(), false);
  for (int a : axes) reduced[static_cast<size_t>(a)] = true;
  Shape out;
  for (size_t i = 0; i < shape.size(); ++i)
    if (!reduced[i]) out.push_back(shape[i]);
  return out;
}

struct Block {
  int64_t outer = 1, axis = 1, inner = 1;
};

Block block_dims(const Shape& shape, int axis) {
  Block b;
  for (int i = 0; i < axis; ++i) b.outer *= shape[static_cast<size_t>(i)];
  b.axis = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) b.inner *= shape[i];
  return b;
}

double stable_bce_term(double z, double y) {
  // -[y log s(z) + (1-y) log(1-s(z))] without overflow
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

NodeId Graph::push(Node n) {
  n.needs_grad = n.requires_grad;
  for (NodeId in : n.inputs) {
    if (in < 0 || in >= static_cast<NodeId>(nodes_.size()))
      throw std::logic_error("graph: invalid input node id " + std::to_string(in));
    if (nodes_[static_cast<size_t>(in)].needs_grad) n.needs_grad = true;
  }
  nodes_.push_back(std::move(n));
  try {
    eval(nodes_.back());
  } catch (...) {
    nodes_.pop_back();
    throw;
  }
  forward_done_ = true;
  return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Graph::leaf(std::string name, Tensor value, bool requires_grad) {
  if (name.empty()) throw std::invalid_argument("leaf: empty name");
  if (leaf_ids_.count(name)) throw std::invalid_argument("leaf: duplicate name '" + name + "'");
  Node n;
  n.op = Op::kLeaf;
  n.name = name;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  NodeId id = push(std::move(n));
  leaf_ids_[name] = id;
  return id;
}

NodeId Graph::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) { return push({.op = Op::kAdd, .inputs = {a, b}}); }
NodeId Graph::sub(NodeId a, NodeId b) { return push({.op = Op::kSub, .inputs = {a, b}}); }
NodeId Graph::mul(NodeId a, NodeId b) { return push({.op = Op::kMul, .inputs = {a, b}}); }

NodeId Graph::scalar_mul(NodeId x, double c) {
  Node n{.op = Op::kScalarMul, .inputs = {x}};
  n.scalar = c;
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) { return push({.op = Op::kMatmul, .inputs = {a, b}}); }
NodeId Graph::transpose(NodeId x) { return push({.op = Op::kTranspose, .inputs = {x}}); }
NodeId Graph::exp(NodeId x) { return push({.op = Op::kExp, .inputs = {x}}); }
NodeId Graph::log(NodeId x) { return push({.op = Op::kLog, .inputs = {x}}); }

NodeId Graph::leaky_relu(NodeId x, double slope) {
  Node n{.op = Op::kLeakyRelu, .inputs = {x}};
  n.scalar = slope;
  return push(std::move(n));
}

NodeId Graph::elu(NodeId x, double alpha) {
  Node n{.op = Op::kElu, .inputs = {x}};
  n.scalar = alpha;
  return push(std::move(n));
}

NodeId Graph::tanh(NodeId x) { return push({.op = Op::kTanh, .inputs = {x}}); }
NodeId Graph::sigmoid(NodeId x) { return push({.op = Op::kSigmoid, .inputs = {x}}); }

NodeId Graph::softmax(NodeId x, std::vector<int> axes) {
  Node n{.op = Op::kSoftmax, .inputs = {x}};
  n.axes = std::move(axes);
  return push(std::move(n));
}

NodeId Graph::masked_row_softmax(NodeId scores, NodeId mask) {
  if (nodes_[static_cast<size_t>(mask)].needs_grad)
    throw std::invalid_argument("masked_row_softmax: mask must not require grad");
  return push({.op = Op::kMaskedRowSoftmax, .inputs = {scores, mask}});
}

NodeId Graph::sum(NodeId x, std::vector<int> axes) {
  Node n{.op = Op::kSum, .inputs = {x}};
  n.axes = std::move(axes);
  return push(std::move(n));
}

NodeId Graph::concat(const std::vector<NodeId>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Node n{.op = Op::kConcat, .inputs = parts};
  n.axis = axis;
  return push(std::move(n));
}

NodeId Graph::slice(NodeId x, int axis, int64_t start, int64_t len) {
  Node n{.op = Op::kSlice, .inputs = {x}};
  n.axis = axis;
  n.start = start;
  n.len = len;
  return push(std::move(n));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  Node n{.op = Op::kReshape, .inputs = {x}};
  n.target_shape = std::move(shape);
  return push(std::move(n));
}

NodeId Graph::expand(NodeId x, int axis, int64_t count) {
  Node n{.op = Op::kExpand, .inputs = {x}};
  n.axis = axis;
  n.len = count;
  return push(std::move(n));
}

NodeId Graph::conv1x1(NodeId x, NodeId w, NodeId b) { return push({.op = Op::kConv1x1, .inputs = {x, w, b}}); }
NodeId Graph::conv3x3(NodeId x, NodeId w, NodeId b) { return push({.op = Op::kConv3x3, .inputs = {x, w, b}}); }
NodeId Graph::maxpool2(NodeId x) { return push({.op = Op::kMaxPool2, .inputs = {x}}); }

NodeId Graph::bce_with_logits(NodeId logits, NodeId targets) {
  if (nodes_[static_cast<size_t>(targets)].needs_grad)
    throw std::invalid_argument("bce_with_logits: targets must not require grad");
  return push({.op = Op::kBceWithLogits, .inputs = {logits, targets}});
}

NodeId Graph::sqdist(NodeId a, NodeId b) { return push({.op = Op::kSqDist, .inputs = {a, b}}); }

void Graph::eval(Node& n) {
  auto in = [&](size_t i) -> const Tensor& { return nodes_[static_cast<size_t>(n.inputs[i])].value; };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      break;
    case Op::kAdd:
    case Op::kSub:
    case Op::kMul: {
      const Tensor &a = in(0), &b = in(1);
      check_same_shape(n.op, a, b);
      n.value = Tensor(a.shape());
      int64_t m = a.numel();
      if (n.op == Op::kAdd)
        for (int64_t i = 0; i < m; ++i) n.value[i] = a[i] + b[i];
      else if (n.op == Op::kSub)
        for (int64_t i = 0; i < m; ++i) n.value[i] = a[i] - b[i];
      else
        for (int64_t i = 0; i < m; ++i) n.value[i] = a[i] * b[i];
      break;
    }
    case Op::kScalarMul: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] * n.scalar;
      break;
    }
    case Op::kMatmul: {
      const Tensor &a = in(0), &b = in(1);
      if (a.rank() != 2 || b.rank() != 2)
        shape_error(n.op, "expects rank-2 operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      if (a.dim(1) != b.dim(0))
        shape_error(n.op, "incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
      int64_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
      n.value = Tensor({p, r});
      const double* pa = a.data();
      const double* pb = b.data();
      double* po = n.value.data();
      for (int64_t i = 0; i < p; ++i) {
        double* orow = po + i * r;
        for (int64_t k = 0; k < q; ++k) {
          double aik = pa[i * q + k];
          if (aik == 0.0) continue;
          const double* brow = pb + k * r;
          for (int64_t j = 0; j < r; ++j) orow[j] += aik * brow[j];
        }
      }
      break;
    }
    case Op::kTranspose: {
      const Tensor& a = in(0);
      if (a.rank() != 2) shape_error(n.op, "expects rank-2 operand, got " + shape_str(a.shape()));
      int64_t p = a.dim(0), q = a.dim(1);
      n.value = Tensor({q, p});
      for (int64_t i = 0; i < p; ++i)
        for (int64_t j = 0; j < q; ++j) n.value[j * p + i] = a[i * q + j];
      break;
    }
    case Op::kExp: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = std::exp(a[i]);
      break;
    }
    case Op::kLog: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = std::log(a[i]);
      break;
    }
    case Op::kLeakyRelu: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) {
        n.value[i] = a[i] > 0.0 ? a[i] : n.scalar * a[i];
        kink_margin_ = std::min(kink_margin_, std::abs(a[i]));
      }
      break;
    }
    case Op::kElu: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = a[i] > 0.0 ? a[i] : n.scalar * std::expm1(a[i]);
      break;
    }
    case Op::kTanh: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = std::tanh(a[i]);
      break;
    }
    case Op::kSigmoid: {
      const Tensor& a = in(0);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < a.numel(); ++i) n.value[i] = 1.0 / (1.0 + std::exp(-a[i]));
      break;
    }
    case Op::kSoftmax: {
      const Tensor& a = in(0);
      check_axes(n.op, a.shape(), n.axes);
      auto gid = group_ids(a.shape(), n.axes);
      int64_t groups = 1;
      for (int64_t d : reduced_shape(a.shape(), n.axes)) groups *= d;
      std::vector<double> gmax(static_cast<size_t>(groups), -1e308);
      std::vector<double> gsum(static_cast<size_t>(groups), 0.0);
      int64_t m = a.numel();
      for (int64_t i = 0; i < m; ++i) gmax[static_cast<size_t>(gid[static_cast<size_t>(i)])] =
          std::max(gmax[static_cast<size_t>(gid[static_cast<size_t>(i)])], a[i]);
      n.value = Tensor(a.shape());
      for (int64_t i = 0; i < m; ++i) {
        double e = std::exp(a[i] - gmax[static_cast<size_t>(gid[static_cast<size_t>(i)])]);
        n.value[i] = e;
        gsum[static_cast<size_t>(gid[static_cast<size_t>(i)])] += e;
      }
      for (int64_t i = 0; i < m; ++i) n.value[i] /= gsum[static_cast<size_t>(gid[static_cast<size_t>(i)])];
      break;
    }
    case Op::kMaskedRowSoftmax: {
      const Tensor &s = in(0), &mask = in(1);
      if (s.rank() != 2) shape_error(n.op, "expects rank-2 scores, got " + shape_str(s.shape()));
      check_same_shape(n.op, s, mask);
      int64_t rows = s.dim(0), cols = s.dim(1);
      n.value = Tensor(s.shape());
      for (int64_t i = 0; i < rows; ++i) {
        double m = -1e308;
        bool any = false;
        for (int64_t j = 0; j < cols; ++j)
          if (mask[i * cols + j] != 0.0) {
            m = std::max(m, s[i * cols + j]);
            any = true;
          }
        if (!any) shape_error(n.op, "row " + std::to_string(i) + " has empty support");
        double z = 0.0;
        for (int64_t j = 0; j < cols; ++j) {
          if (mask[i * cols + j] != 0.0) {
            double e = std::exp(s[i * cols + j] - m);
            n.value[i * cols + j] = e;
            z += e;
          } else {
            n.value[i * cols + j] = 0.0;
          }
        }
        for (int64_t j = 0; j < cols; ++j) n.value[i * cols + j] /= z;
      }
      break;
    }
    case Op::kSum: {
      const Tensor& a = in(0);
      check_axes(n.op, a.shape(), n.axes);
      auto gid = group_ids(a.shape(), n.axes);
      n.value = Tensor(reduced_shape(a.shape(), n.axes));
      for (int64_t i = 0; i < a.numel(); ++i) n.value[gid[static_cast<size_t>(i)]] += a[i];
      break;
    }
    case Op::kConcat: {
      const Tensor& first = in(0);
      int rank = first.rank();
      if (n.axis < 0 || n.axis >= rank)
        shape_error(n.op, "axis " + std::to_string(n.axis) + " out of range for " + shape_str(first.shape()));
      int64_t total_axis = 0;
      for (size_t p = 0; p < n.inputs.size(); ++p) {
        const Tensor& t = in(p);
        if (t.rank() != rank) shape_error(n.op, "rank mismatch " + shape_str(first.shape()) + " vs " + shape_str(t.shape()));
        for (int a = 0; a < rank; ++a)
          if (a != n.axis && t.dim(a) != first.dim(a))
            shape_error(n.op, "shape mismatch " + shape_str(first.shape()) + " vs " + shape_str(t.shape()));
        total_axis += t.dim(n.axis);
      }
      Shape out_shape = first.shape();
      out_shape[static_cast<size_t>(n.axis)] = total_axis;
      n.value = Tensor(out_shape);
      Block ob = block_dims(out_shape, n.axis);
      int64_t offset = 0;
      for (size_t p = 0; p < n.inputs.size(); ++p) {
        const Tensor& t = in(p);
        Block tb = block_dims(t.shape(), n.axis);
        for (int64_t o = 0; o < tb.outer; ++o) {
          const double* src = t.data() + o * tb.axis * tb.inner;
          double* dst = n.value.data() + o * ob.axis * ob.inner + offset * ob.inner;
          std::copy(src, src + tb.axis * tb.inner, dst);
        }
        offset += tb.axis;
      }
      break;
    }
    case Op::kSlice: {
      const Tensor& a = in(0);
      if (n.axis < 0 || n.axis >= a.rank())
        shape_error(n.op, "axis " + std::to_string(n.axis) + " out of range for " + shape_str(a.shape()));
      if (n.start < 0 || n.len <= 0 || n.start + n.len > a.dim(n.axis))
        shape_error(n.op, "range [" + std::to_string(n.start) + "," + std::to_string(n.start + n.len) +
                              ") invalid for axis size " + std::to_string(a.dim(n.axis)));
      Shape out_shape = a.shape();
      out_shape[static_cast<size_t>(n.axis)] = n.len;
      n.value = Tensor(out_shape);
      Block ab = block_dims(a.shape(), n.axis);
      for (int64_t o = 0; o < ab.outer; ++o) {
        const double* src = a.data() + (o * ab.axis + n.start) * ab.inner;
        double* dst = n.value.data() + o * n.len * ab.inner;
        std::copy(src, src + n.len * ab.inner, dst);
      }
      break;
    }
    case Op::kReshape: {
      const Tensor& a = in(0);
      if (shape_numel(n.target_shape) != a.numel())
        shape_error(n.op, "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(n.target_shape));
      n.value = Tensor::from(n.target_shape, a.vec());
      break;
    }
    case Op::kExpand: {
      const Tensor& a = in(0);
      if (n.axis < 0 || n.axis > a.rank())
        shape_error(n.op, "axis " + std::to_string(n.axis) + " out of range for " + shape_str(a.shape()));
      if (n.len <= 0) shape_error(n.op, "count must be positive");
      Shape out_shape = a.shape();
      out_shape.insert(out_shape.begin() + n.axis, n.len);
      n.value = Tensor(out_shape);
      // treat input as [outer, inner] split at the insertion point
      int64_t outer = 1, inner = 1;
      for (int i = 0; i < n.axis; ++i) outer *= a.dim(i);
      for (int i = n.axis; i < a.rank(); ++i) inner *= a.dim(i);
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = a.data() + o * inner;
        for (int64_t r = 0; r < n.len; ++r) {
          double* dst = n.value.data() + (o * n.len + r) * inner;
          std::copy(src, src + inner, dst);
        }
      }
      break;
    }
    case Op::kConv1x1: {
      const Tensor &x = in(0), &w = in(1), &b = in(2);
      if (x.rank() != 3) shape_error(n.op, "expects W x H x C input, got " + shape_str(x.shape()));
      if (w.rank() != 2 || b.rank() != 1 || w.dim(0) != b.dim(0))
        shape_error(n.op, "weight/bias shapes " + shape_str(w.shape()) + " and " + shape_str(b.shape()));
      if (w.dim(1) != x.dim(2))
        shape_error(n.op, "channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
      int64_t W = x.dim(0), H = x.dim(1), C = x.dim(2), O = w.dim(0);
      n.value = Tensor({W, H, O});
      for (int64_t p = 0; p < W * H; ++p) {
        const double* xp = x.data() + p * C;
        double* op = n.value.data() + p * O;
        for (int64_t o = 0; o < O; ++o) {
          const double* wr = w.data() + o * C;
          double acc = b[o];
          for (int64_t c = 0; c < C; ++c) acc += xp[c] * wr[c];
          op[o] = acc;
        }
      }
      break;
    }
    case Op::kConv3x3: {
      const Tensor &x = in(0), &w = in(1), &b = in(2);
      if (x.rank() != 3) shape_error(n.op, "expects W x H x C input, got " + shape_str(x.shape()));
      if (w.rank() != 4 || w.dim(1) != 3 || w.dim(2) != 3)
        shape_error(n.op, "expects O x 3 x 3 x C weight, got " + shape_str(w.shape()));
      if (b.rank() != 1 || b.dim(0) != w.dim(0))
        shape_error(n.op, "weight/bias shapes " + shape_str(w.shape()) + " and " + shape_str(b.shape()));
      if (w.dim(3) != x.dim(2))
        shape_error(n.op, "channel mismatch: input " + shape_str(x.shape()) + ", weight " + shape_str(w.shape()));
      int64_t W = x.dim(0), H = x.dim(1), C = x.dim(2), O = w.dim(0);
      n.value = Tensor({W, H, O});
      for (int64_t wi = 0; wi < W; ++wi) {
        for (int64_t hi = 0; hi < H; ++hi) {
          double* op = n.value.data() + (wi * H + hi) * O;
          for (int64_t o = 0; o < O; ++o) op[o] = b[o];
          for (int64_t dw = 0; dw < 3; ++dw) {
            int64_t sw = wi + dw - 1;
            if (sw < 0 || sw >= W) continue;
            for (int64_t dh = 0; dh < 3; ++dh) {
              int64_t sh = hi + dh - 1;
              if (sh < 0 || sh >= H) continue;
              const double* xp = x.data() + (sw * H + sh) * C;
              const double* wp = w.data() + (dw * 3 + dh) * C;
              for (int64_t o = 0; o < O; ++o) {
                const double* wr = wp + o * 9 * C;
                double acc = 0.0;
                for (int64_t c = 0; c < C; ++c) acc += xp[c] * wr[c];
                op[o] += acc;
              }
            }
          }
        }
      }
      break;
    }
    case Op::kMaxPool2: {
      const Tensor& x = in(0);
      if (x.rank() != 3) shape_error(n.op, "expects W x H x C input, got " + shape_str(x.shape()));
      int64_t W = x.dim(0), H = x.dim(1), C = x.dim(2);
      if (W % 2 != 0 || H % 2 != 0) shape_error(n.op, "spatial dims of " + shape_str(x.shape()) + " not divisible by 2");
      n.value = Tensor({W / 2, H / 2, C});
      for (int64_t wo = 0; wo < W / 2; ++wo) {
        for (int64_t ho = 0; ho < H / 2; ++ho) {
          for (int64_t c = 0; c < C; ++c) {
            double best = -1e308, second = -1e308;
            for (int64_t dw = 0; dw < 2; ++dw)
              for (int64_t dh = 0; dh < 2; ++dh) {
                double v = x[((2 * wo + dw) * H + (2 * ho + dh)) * C + c];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            n.value[(wo * (H / 2) + ho) * C + c] = best;
            kink_margin_ = std::min(kink_margin_, best - second);
          }
        }
      }
      break;
    }
    case Op::kBceWithLogits: {
      const Tensor &z = in(0), &y = in(1);
      check_same_shape(n.op, z, y);
      double total = 0.0;
      for (int64_t i = 0; i < z.numel(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) shape_error(n.op, "targets must be 0/1");
        total += stable_bce_term(z[i], y[i]);
      }
      n.value = Tensor::scalar(total);
      break;
    }
    case Op::kSqDist: {
      const Tensor &a = in(0), &b = in(1);
      check_same_shape(n.op, a, b);
      double total = 0.0;
      for (int64_t i = 0; i < a.numel(); ++i) {
        double d = a[i] - b[i];
        total += d * d;
      }
      n.value = Tensor::scalar(total);
      break;
    }
  }
  if (!n.value.all_finite()) throw std::runtime_error(std::string(op_name(n.op)) + ": non-finite result");
}

NodeId Graph::leaf_id(const std::string& name) const {
  auto it = leaf_ids_.find(name);
  if (it == leaf_ids_.end()) throw std::invalid_argument("graph: unknown leaf '" + name + "'");
  return it->second;
}

std::vector<std::string> Graph::grad_leaf_names() const {
  std::vector<std::string> names;
  for (const auto& [name, id] : leaf_ids_)
    if (nodes_[static_cast<size_t>(id)].requires_grad) names.push_back(name);
  return names;
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (n.grad.empty() && n.value.numel() > 0)
    throw std::logic_error("graph: no gradient recorded for node " + std::to_string(id));
  return n.grad;
}

Tensor Graph::forward(const Bindings& bindings, NodeId out) {
  if (out < 0 || out >= static_cast<NodeId>(nodes_.size()))
    throw std::invalid_argument("forward: invalid output node id " + std::to_string(out));
  for (const auto& [name, value] : bindings) {
    auto it = leaf_ids_.find(name);
    if (it == leaf_ids_.end()) throw std::invalid_argument("forward: unknown leaf '" + name + "'");
    Node& ln = nodes_[static_cast<size_t>(it->second)];
    if (!ln.value.same_shape(value))
      throw std::invalid_argument("forward: leaf '" + name + "' bound with shape " + shape_str(value.shape()) +
                                  ", declared " + shape_str(ln.value.shape()));
    ln.value = value;
  }
  kink_margin_ = 1e300;
  for (Node& n : nodes_) {
    n.grad = Tensor();
    eval(n);
  }
  forward_done_ = true;
  return nodes_[static_cast<size_t>(out)].value;
}

Tensor Graph::forward(const Bindings& bindings) {
  if (nodes_.empty()) throw std::logic_error("forward: empty graph");
  return forward(bindings, last());
}

Tensor& Graph::grad_buffer(NodeId id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

GradMap Graph::backward(NodeId out) {
  if (!forward_done_ || nodes_.empty()) throw std::logic_error("backward: no forward pass has run");
  if (out < 0 || out >= static_cast<NodeId>(nodes_.size()))
    throw std::invalid_argument("backward: invalid output node id " + std::to_string(out));
  return backward(out, Tensor::full(nodes_[static_cast<size_t>(out)].value.shape(), 1.0));
}

GradMap Graph::backward(NodeId out, const Tensor& seed) {
  if (!forward_done_ || nodes_.empty()) throw std::logic_error("backward: no forward pass has run");
  if (out < 0 || out >= static_cast<NodeId>(nodes_.size()))
    throw std::invalid_argument("backward: invalid output node id " + std::to_string(out));
  const Node& on = nodes_[static_cast<size_t>(out)];
  if (!seed.same_shape(on.value))
    throw std::invalid_argument("backward: seed shape " + shape_str(seed.shape()) + " does not match output shape " +
                                shape_str(on.value.shape()));
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(out) = seed;
  for (NodeId id = out; id >= 0; --id) {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.op == Op::kLeaf || n.op == Op::kConst) continue;
    backprop(n);
  }
  GradMap grads;
  for (const auto& [name, id] : leaf_ids_) {
    Node& ln = nodes_[static_cast<size_t>(id)];
    if (!ln.requires_grad) continue;
    if (ln.grad.empty()) ln.grad = Tensor(ln.value.shape());
    grads[name] = ln.grad;
  }
  return grads;
}

void Graph::backprop(const Node& n) {
  const Tensor& g = n.grad;
  auto in = [&](size_t i) -> const Node& { return nodes_[static_cast<size_t>(n.inputs[i])]; };
  auto wants = [&](size_t i) { return in(i).needs_grad; };
  auto gin = [&](size_t i) -> Tensor& { return grad_buffer(n.inputs[i]); };
  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      break;
    case Op::kAdd: {
      for (size_t s = 0; s < 2; ++s)
        if (wants(s)) {
          Tensor& d = gin(s);
          for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
        }
      break;
    }
    case Op::kSub: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
      }
      if (wants(1)) {
        Tensor& d = gin(1);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor &a = in(0).value, &b = in(1).value;
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * b[i];
      }
      if (wants(1)) {
        Tensor& d = gin(1);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kScalarMul: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * n.scalar;
      }
      break;
    }
    case Op::kMatmul: {
      const Tensor &a = in(0).value, &b = in(1).value;
      int64_t p = a.dim(0), q = a.dim(1), r = b.dim(1);
      if (wants(0)) {
        Tensor& da = gin(0);  // dA = g . B^T
        for (int64_t i = 0; i < p; ++i)
          for (int64_t k = 0; k < q; ++k) {
            const double* grow = g.data() + i * r;
            const double* brow = b.data() + k * r;
            double acc = 0.0;
            for (int64_t j = 0; j < r; ++j) acc += grow[j] * brow[j];
            da[i * q + k] += acc;
          }
      }
      if (wants(1)) {
        Tensor& db = gin(1);  // dB = A^T . g
        for (int64_t k = 0; k < q; ++k)
          for (int64_t i = 0; i < p; ++i) {
            double aik = a[i * q + k];
            if (aik == 0.0) continue;
            const double* grow = g.data() + i * r;
            double* drow = db.data() + k * r;
            for (int64_t j = 0; j < r; ++j) drow[j] += aik * grow[j];
          }
      }
      break;
    }
    case Op::kTranspose: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor& d = gin(0);
        int64_t p = a.dim(0), q = a.dim(1);
        for (int64_t i = 0; i < p; ++i)
          for (int64_t j = 0; j < q; ++j) d[i * q + j] += g[j * p + i];
      }
      break;
    }
    case Op::kExp: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * n.value[i];
      }
      break;
    }
    case Op::kLog: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] / a[i];
      }
      break;
    }
    case Op::kLeakyRelu: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * (a[i] > 0.0 ? 1.0 : n.scalar);
      }
      break;
    }
    case Op::kElu: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * (a[i] > 0.0 ? 1.0 : n.scalar * std::exp(a[i]));
      }
      break;
    }
    case Op::kTanh: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      }
      break;
    }
    case Op::kSigmoid: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      }
      break;
    }
    case Op::kSoftmax: {
      if (wants(0)) {
        const Tensor& y = n.value;
        auto gid = group_ids(y.shape(), n.axes);
        int64_t groups = 1;
        for (int64_t dsz : reduced_shape(y.shape(), n.axes)) groups *= dsz;
        std::vector<double> dot(static_cast<size_t>(groups), 0.0);
        for (int64_t i = 0; i < y.numel(); ++i) dot[static_cast<size_t>(gid[static_cast<size_t>(i)])] += g[i] * y[i];
        Tensor& d = gin(0);
        for (int64_t i = 0; i < y.numel(); ++i)
          d[i] += y[i] * (g[i] - dot[static_cast<size_t>(gid[static_cast<size_t>(i)])]);
      }
      break;
    }
    case Op::kMaskedRowSoftmax: {
      if (wants(0)) {
        const Tensor& y = n.value;
        const Tensor& mask = in(1).value;
        int64_t rows = y.dim(0), cols = y.dim(1);
        Tensor& d = gin(0);
        for (int64_t i = 0; i < rows; ++i) {
          double dot = 0.0;
          for (int64_t j = 0; j < cols; ++j)
            if (mask[i * cols + j] != 0.0) dot += g[i * cols + j] * y[i * cols + j];
          for (int64_t j = 0; j < cols; ++j)
            if (mask[i * cols + j] != 0.0) d[i * cols + j] += y[i * cols + j] * (g[i * cols + j] - dot);
        }
      }
      break;
    }
    case Op::kSum: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        auto gid = group_ids(a.shape(), n.axes);
        Tensor& d = gin(0);
        for (int64_t i = 0; i < a.numel(); ++i) d[i] += g[gid[static_cast<size_t>(i)]];
      }
      break;
    }
    case Op::kConcat: {
      Block ob = block_dims(n.value.shape(), n.axis);
      int64_t offset = 0;
      for (size_t p = 0; p < n.inputs.size(); ++p) {
        const Tensor& t = in(p).value;
        Block tb = block_dims(t.shape(), n.axis);
        if (wants(p)) {
          Tensor& d = gin(p);
          for (int64_t o = 0; o < tb.outer; ++o) {
            const double* src = g.data() + o * ob.axis * ob.inner + offset * ob.inner;
            double* dst = d.data() + o * tb.axis * tb.inner;
            for (int64_t i = 0; i < tb.axis * tb.inner; ++i) dst[i] += src[i];
          }
        }
        offset += tb.axis;
      }
      break;
    }
    case Op::kSlice: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Block ab = block_dims(a.shape(), n.axis);
        Tensor& d = gin(0);
        for (int64_t o = 0; o < ab.outer; ++o) {
          const double* src = g.data() + o * n.len * ab.inner;
          double* dst = d.data() + (o * ab.axis + n.start) * ab.inner;
          for (int64_t i = 0; i < n.len * ab.inner; ++i) dst[i] += src[i];
        }
      }
      break;
    }
    case Op::kReshape: {
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < g.numel(); ++i) d[i] += g[i];
      }
      break;
    }
    case Op::kExpand: {
      if (wants(0)) {
        const Tensor& a = in(0).value;
        Tensor& d = gin(0);
        int64_t outer = 1, inner = 1;
        for (int i = 0; i < n.axis; ++i) outer *= a.dim(i);
        for (int i = n.axis; i < a.rank(); ++i) inner *= a.dim(i);
        for (int64_t o = 0; o < outer; ++o) {
          double* dst = d.data() + o * inner;
          for (int64_t r = 0; r < n.len; ++r) {
            const double* src = g.data() + (o * n.len + r) * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
          }
        }
      }
      break;
    }
    case Op::kConv1x1: {
      const Tensor &x = in(0).value, &w = in(1).value;
      int64_t W = x.dim(0), H = x.dim(1), C = x.dim(2), O = w.dim(0);
      for (int64_t p = 0; p < W * H; ++p) {
        const double* gp = g.data() + p * O;
        const double* xp = x.data() + p * C;
        if (wants(0)) {
          double* dx = gin(0).data() + p * C;
          for (int64_t o = 0; o < O; ++o) {
            const double* wr = w.data() + o * C;
            double go = gp[o];
            for (int64_t c = 0; c < C; ++c) dx[c] += go * wr[c];
          }
        }
        if (wants(1)) {
          double* dw = gin(1).data();
          for (int64_t o = 0; o < O; ++o) {
            double go = gp[o];
            double* dwr = dw + o * C;
            for (int64_t c = 0; c < C; ++c) dwr[c] += go * xp[c];
          }
        }
        if (wants(2)) {
          double* db = gin(2).data();
          for (int64_t o = 0; o < O; ++o) db[o] += gp[o];
        }
      }
      break;
    }
    case Op::kConv3x3: {
      const Tensor &x = in(0).value, &w = in(1).value;
      int64_t W = x.dim(0), H = x.dim(1), C = x.dim(2), O = w.dim(0);
      for (int64_t wi = 0; wi < W; ++wi) {
        for (int64_t hi = 0; hi < H; ++hi) {
          const double* gp = g.data() + (wi * H + hi) * O;
          if (wants(2)) {
            double* db = gin(2).data();
            for (int64_t o = 0; o < O; ++o) db[o] += gp[o];
          }
          for (int64_t dw2 = 0; dw2 < 3; ++dw2) {
            int64_t sw = wi + dw2 - 1;
            if (sw < 0 || sw >= W) continue;
            for (int64_t dh = 0; dh < 3; ++dh) {
              int64_t sh = hi + dh - 1;
              if (sh < 0 || sh >= H) continue;
              const double* xp = x.data() + (sw * H + sh) * C;
              const double* wp = w.data() + (dw2 * 3 + dh) * C;
              if (wants(0)) {
                double* dxp = gin(0).data() + (sw * H + sh) * C;
                for (int64_t o = 0; o < O; ++o) {
                  const double* wr = wp + o * 9 * C;
                  double go = gp[o];
                  for (int64_t c = 0; c < C; ++c) dxp[c] += go * wr[c];
                }
              }
              if (wants(1)) {
                double* dwp = gin(1).data() + (dw2 * 3 + dh) * C;
                for (int64_t o = 0; o < O; ++o) {
                  double* dwr = dwp + o * 9 * C;
                  double go = gp[o];
                  for (int64_t c = 0; c < C; ++c) dwr[c] += go * xp[c];
                }
              }
            }
          }
        }
      }
      break;
    }
    case Op::kMaxPool2: {
      if (wants(0)) {
        const Tensor& x = in(0).value;
        int64_t H = x.dim(1), C = x.dim(2);
        int64_t Wo = n.value.dim(0), Ho = n.value.dim(1);
        Tensor& d = gin(0);
        for (int64_t wo = 0; wo < Wo; ++wo)
          for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t c = 0; c < C; ++c) {
              // argmax recomputed; ties go to the first window slot scanned
              double best = -1e308;
              int64_t bw = 0, bh = 0;
              for (int64_t dw2 = 0; dw2 < 2; ++dw2)
                for (int64_t dh = 0; dh < 2; ++dh) {
                  double v = x[((2 * wo + dw2) * H + (2 * ho + dh)) * C + c];
                  if (v > best) {
                    best = v;
                    bw = 2 * wo + dw2;
                    bh = 2 * ho + dh;
                  }
                }
              d[(bw * H + bh) * C + c] += g[(wo * Ho + ho) * C + c];
            }
      }
      break;
    }
    case Op::kBceWithLogits: {
      if (wants(0)) {
        const Tensor &z = in(0).value, &y = in(1).value;
        double seed = g.item();
        Tensor& d = gin(0);
        for (int64_t i = 0; i < z.numel(); ++i) {
          double s = 1.0 / (1.0 + std::exp(-z[i]));
          d[i] += seed * (s - y[i]);
        }
      }
      break;
    }
    case Op::kSqDist: {
      const Tensor &a = in(0).value, &b = in(1).value;
      double seed = g.item();
      if (wants(0)) {
        Tensor& d = gin(0);
        for (int64_t i = 0; i < a.numel(); ++i) d[i] += seed * 2.0 * (a[i] - b[i]);
      }
      if (wants(1)) {
        Tensor& d = gin(1);
        for (int64_t i = 0; i < a.numel(); ++i) d[i] -= seed * 2.0 * (a[i] - b[i]);
      }
      break;
    }
  }
}

}  // namespace msrn
