#include "msrn/sga.hpp"

#include <stdexcept>

namespace msrn {

namespace {

void check_branch(const Tensor& f, const Tensor& e) {
  if (f.rank() != 3) throw std::invalid_argument("sga: feature map must be W x H x d, got " + shape_str(f.shape()));
  if (e.rank() != 2) throw std::invalid_argument("sga: embeddings must be k x d, got " + shape_str(e.shape()));
  if (f.dim(2) != e.dim(1))
    throw std::invalid_argument("sga: channel dim " + std::to_string(f.dim(2)) + " vs embedding dim " +
                                std::to_string(e.dim(1)));
}

}  // namespace

NodeId build_compatibility(Graph& g, NodeId f, NodeId e) {
  const Tensor& fv = g.value(f);
  const Tensor& ev = g.value(e);
  check_branch(fv, ev);
  int64_t w = fv.dim(0), h = fv.dim(1), k = ev.dim(0);
  NodeId f_exp = g.expand(f, 2, k);                  // W x H x k x d
  NodeId e_exp = g.expand(g.expand(e, 0, h), 0, w);  // W x H x k x d
  return g.mul(f_exp, e_exp);
}

NodeId build_attention(Graph& g, NodeId scores) { return g.softmax(scores, {0, 1}); }

NodeId build_attend(Graph& g, NodeId attention, NodeId f) {
  const Tensor& av = g.value(attention);
  int64_t k = av.dim(2);
  NodeId f_exp = g.expand(f, 2, k);
  return g.sum(g.mul(attention, f_exp), {0, 1});  // k x d
}

NodeId build_sga_branch(Graph& g, NodeId f, NodeId e) {
  return build_attend(g, build_attention(g, build_compatibility(g, f, e)), f);
}

NodeId build_sga_concat(Graph& g, const std::vector<NodeId>& branch_feats, NodeId e) {
  if (branch_feats.empty()) throw std::invalid_argument("sga: no branches");
  std::vector<NodeId> parts;
  parts.reserve(branch_feats.size());
  for (NodeId f : branch_feats) parts.push_back(build_sga_branch(g, f, e));
  if (parts.size() == 1) return parts[0];
  return g.concat(parts, 1);
}

Tensor project_branch(const Tensor& raw, const Tensor& w, const Tensor& b) {
  Graph g;
  return g.value(g.conv1x1(g.constant(raw), g.constant(w), g.constant(b)));
}

Tensor compatibility(const Tensor& f, const Tensor& e) {
  Graph g;
  return g.value(build_compatibility(g, g.constant(f), g.constant(e)));
}

Tensor normalize_attention(const Tensor& scores) {
  Graph g;
  return g.value(build_attention(g, g.constant(scores)));
}

Tensor attend(const Tensor& attention, const Tensor& f) {
  if (attention.rank() != 4) throw std::invalid_argument("sga: attention must be W x H x k x d, got " + shape_str(attention.shape()));
  check_branch(f, Tensor({attention.dim(2), attention.dim(3)}));
  if (attention.dim(0) != f.dim(0) || attention.dim(1) != f.dim(1))
    throw std::invalid_argument("sga: attention " + shape_str(attention.shape()) + " vs feature map " +
                                shape_str(f.shape()));
  Graph g;
  return g.value(build_attend(g, g.constant(attention), g.constant(f)));
}

SemanticReps sga_forward(const std::vector<Tensor>& branches, const Tensor& e_l, const Tensor& e_g) {
  Graph g;
  std::vector<NodeId> feats;
  feats.reserve(branches.size());
  for (const Tensor& f : branches) feats.push_back(g.constant(f));
  SemanticReps reps;
  reps.O = g.value(build_sga_concat(g, feats, g.constant(e_l)));
  reps.Q = g.value(build_sga_concat(g, feats, g.constant(e_g)));
  return reps;
}

}  // namespace msrn
