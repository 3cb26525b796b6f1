#include "msrn/lge.hpp"

#include <stdexcept>
#include <string>

namespace msrn {

void GatLayerParams::validate(int64_t in_dim) const {
  if (U.rank() != 2 || P.rank() != 2 || P.dim(0) != 1)
    throw std::invalid_argument("gat: U must be w x v and P 1 x 2w, got " + shape_str(U.shape()) + " and " +
                                shape_str(P.shape()));
  if (U.dim(1) != in_dim)
    throw std::invalid_argument("gat: input feature dim " + std::to_string(in_dim) + " vs U " + shape_str(U.shape()));
  if (P.dim(1) != 2 * U.dim(0))
    throw std::invalid_argument("gat: P must have 2x the U rows, got " + shape_str(P.shape()) + " for U " +
                                shape_str(U.shape()));
}

GatNodes build_gat_layer(Graph& g, NodeId e, NodeId u, NodeId p, const Tensor& mask, double slope) {
  const Tensor& ev = g.value(e);
  int64_t n = ev.dim(0);
  int64_t w = g.value(u).dim(0);
  if (mask.rank() != 2 || mask.dim(0) != n || mask.dim(1) != n)
    throw std::invalid_argument("gat: mask must be " + shape_str({n, n}) + ", got " + shape_str(mask.shape()));

  NodeId h = g.matmul(e, g.transpose(u));  // rows Uv_i
  NodeId p_self = g.slice(p, 1, 0, w);
  NodeId p_neigh = g.slice(p, 1, w, w);
  NodeId a_self = g.matmul(h, g.transpose(p_self));    // n x 1
  NodeId a_neigh = g.matmul(h, g.transpose(p_neigh));  // n x 1
  // scores_ij = a_self_i + a_neigh_j via rank-1 outer sums
  NodeId ones_row = g.constant(Tensor::full({1, n}, 1.0));
  NodeId ones_col = g.constant(Tensor::full({n, 1}, 1.0));
  NodeId scores = g.add(g.matmul(a_self, ones_row), g.matmul(ones_col, g.transpose(a_neigh)));
  NodeId mask_const = g.constant(mask);
  GatNodes nodes;
  nodes.projected = h;
  nodes.alpha = g.masked_row_softmax(g.leaky_relu(scores, slope), mask_const);
  nodes.out = g.elu(g.add(g.matmul(nodes.alpha, h), h));
  return nodes;
}

PoolNodes build_diffpool(Graph& g, NodeId e_l, NodeId u, NodeId p, NodeId assign, const Tensor& mask, double slope) {
  int64_t n = g.value(e_l).dim(0);
  int64_t m = g.value(assign).dim(1);
  if (m > n)
    throw std::invalid_argument("diffpool: " + std::to_string(m) + " groups for " + std::to_string(n) + " labels");
  GatNodes prop = build_gat_layer(g, e_l, u, p, mask, slope);
  PoolNodes nodes;
  nodes.S = g.softmax(g.matmul(prop.out, assign), {1});
  nodes.E_g = g.matmul(g.transpose(nodes.S), e_l);
  return nodes;
}

NodeId build_group_loss(Graph& g, NodeId e_l, NodeId e_g, const std::vector<int64_t>& hard_assignment) {
  int64_t n = g.value(e_l).dim(0);
  int64_t m = g.value(e_g).dim(0);
  if (static_cast<int64_t>(hard_assignment.size()) != n)
    throw std::invalid_argument("group_loss: assignment size " + std::to_string(hard_assignment.size()) + " vs " +
                                std::to_string(n) + " labels");
  Tensor select({n, m});
  for (int64_t i = 0; i < n; ++i) {
    int64_t k = hard_assignment[static_cast<size_t>(i)];
    if (k < 0 || k >= m) throw std::invalid_argument("group_loss: cluster index " + std::to_string(k) + " out of range");
    select[i * m + k] = 1.0;
  }
  return g.sqdist(g.matmul(g.constant(select), e_g), e_l);
}

std::vector<int64_t> hard_assign(const Tensor& s) {
  if (s.rank() != 2) throw std::invalid_argument("hard_assign: S must be rank 2, got " + shape_str(s.shape()));
  int64_t n = s.dim(0), m = s.dim(1);
  std::vector<int64_t> out(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t k = 1; k < m; ++k)
      if (s[i * m + k] > s[i * m + best]) best = k;
    out[static_cast<size_t>(i)] = best;
  }
  return out;
}

namespace {

NodeId scratch_gat(Graph& g, const Tensor& e, const LabelGraph& graph, const GatLayerParams& params, bool want_alpha) {
  params.validate(e.dim(1));
  if (e.dim(0) != graph.n)
    throw std::invalid_argument("gat: feature rows " + std::to_string(e.dim(0)) + " vs " + std::to_string(graph.n) +
                                " labels");
  NodeId en = g.constant(e);
  NodeId un = g.constant(params.U);
  NodeId pn = g.constant(params.P);
  GatNodes nodes = build_gat_layer(g, en, un, pn, adjacency_mask(graph.A), params.slope);
  return want_alpha ? nodes.alpha : nodes.out;
}

}  // namespace

Tensor gat_attention(const Tensor& e, const LabelGraph& graph, const GatLayerParams& params) {
  Graph g;
  return g.value(scratch_gat(g, e, graph, params, true));
}

Tensor gat_layer(const Tensor& e, const LabelGraph& graph, const GatLayerParams& params) {
  Graph g;
  return g.value(scratch_gat(g, e, graph, params, false));
}

std::pair<Tensor, Tensor> diffpool(const Tensor& e_l, const LabelGraph& graph, const PoolParams& pool) {
  pool.prop.validate(e_l.dim(1));
  if (pool.assign.rank() != 2 || pool.assign.dim(0) != pool.prop.out_dim())
    throw std::invalid_argument("diffpool: assign must be " + shape_str({pool.prop.out_dim(), pool.groups()}) +
                                ", got " + shape_str(pool.assign.shape()));
  Graph g;
  NodeId en = g.constant(e_l);
  PoolNodes nodes = build_diffpool(g, en, g.constant(pool.prop.U), g.constant(pool.prop.P), g.constant(pool.assign),
                                   adjacency_mask(graph.A), pool.prop.slope);
  return {g.value(nodes.E_g), g.value(nodes.S)};
}

Embeddings lge_forward(const LabelGraph& graph, const GatLayerParams& layer1, const GatLayerParams& layer2,
                       const PoolParams& pool) {
  layer1.validate(graph.v);
  layer2.validate(layer1.out_dim());
  Tensor e1 = gat_layer(graph.V, graph, layer1);
  Embeddings emb;
  emb.E_l = gat_layer(e1, graph, layer2);
  auto [e_g, s] = diffpool(emb.E_l, graph, pool);
  emb.E_g = std::move(e_g);
  emb.S = std::move(s);
  emb.hard_assignment = hard_assign(emb.S);
  return emb;
}

double group_loss(const Tensor& e_l, const Tensor& e_g, const std::vector<int64_t>& hard_assignment) {
  Graph g;
  NodeId loss = build_group_loss(g, g.constant(e_l), g.constant(e_g), hard_assignment);
  return g.value(loss).item();
}

}  // namespace msrn
