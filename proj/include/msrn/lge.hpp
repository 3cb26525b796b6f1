#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "msrn/graph.hpp"
#include "msrn/label_graph.hpp"

namespace msrn {

// One graph-attention layer: U projects v-dim features to w dims, the
// 1 x 2w attention vector P scores [Uv_i || Uv_j] pairs.
struct GatLayerParams {
  Tensor U;  // w x v
  Tensor P;  // 1 x 2w
  double slope = 0.2;

  int64_t out_dim() const { return U.dim(0); }
  void validate(int64_t in_dim) const;
};

// Pooling of n label embeddings into m group embeddings: one GAT-style
// propagation over the label graph followed by a linear map to cluster
// logits, row-softmaxed into the soft assignment S.
struct PoolParams {
  GatLayerParams prop;  // d -> d
  Tensor assign;        // d x m
  int64_t groups() const { return assign.dim(1); }
};

struct Embeddings {
  Tensor E_l;  // n x d
  Tensor E_g;  // m x d
  Tensor S;    // n x m, row-stochastic
  std::vector<int64_t> hard_assignment;  // argmax_k S_ik, ties to lowest k
};

// In-graph builders. `mask` is the 0/1 neighborhood membership matrix;
// it enters the graph as a frozen constant.
struct GatNodes {
  NodeId projected;  // n x w, rows Uv_i
  NodeId alpha;      // n x n attention, zero outside N_i
  NodeId out;        // n x w, ELU(alpha . H + H)
};
GatNodes build_gat_layer(Graph& g, NodeId e, NodeId u, NodeId p, const Tensor& mask, double slope);

struct PoolNodes {
  NodeId S;    // n x m
  NodeId E_g;  // m x d
};
PoolNodes build_diffpool(Graph& g, NodeId e_l, NodeId u, NodeId p, NodeId assign, const Tensor& mask, double slope);

// Squared distance between each label embedding and its hard-assigned
// group embedding; the assignment is frozen as a selection constant so
// no gradient flows through the argmax.
NodeId build_group_loss(Graph& g, NodeId e_l, NodeId e_g, const std::vector<int64_t>& hard_assignment);

std::vector<int64_t> hard_assign(const Tensor& s);

// Value-level surface used by tests and tools; each call evaluates a
// scratch graph.
Tensor gat_attention(const Tensor& e, const LabelGraph& graph, const GatLayerParams& params);
Tensor gat_layer(const Tensor& e, const LabelGraph& graph, const GatLayerParams& params);
std::pair<Tensor, Tensor> diffpool(const Tensor& e_l, const LabelGraph& graph, const PoolParams& pool);  // (E_g, S)
Embeddings lge_forward(const LabelGraph& graph, const GatLayerParams& layer1, const GatLayerParams& layer2,
                       const PoolParams& pool);
double group_loss(const Tensor& e_l, const Tensor& e_g, const std::vector<int64_t>& hard_assignment);

}  // namespace msrn
