#pragma once

#include <vector>

#include "msrn/graph.hpp"

namespace msrn {

// Semantic guided attention over one branch: compatibility scores are
// per-position Hadamard products against each embedding row, softmaxed
// over the two spatial axes per (embedding row, channel), then used to
// pool the feature map into one d-vector per embedding row.
NodeId build_compatibility(Graph& g, NodeId f, NodeId e);       // W x H x k x d
NodeId build_attention(Graph& g, NodeId scores);                // softmax over spatial axes
NodeId build_attend(Graph& g, NodeId attention, NodeId f);      // k x d
NodeId build_sga_branch(Graph& g, NodeId f, NodeId e);          // the three composed

// Concatenation of per-branch representations along the feature axis,
// branch order as given (shallowest first by convention).
NodeId build_sga_concat(Graph& g, const std::vector<NodeId>& branch_feats, NodeId e);

struct SemanticReps {
  Tensor O;  // n x (B*d)
  Tensor Q;  // m x (B*d)
};

// Value-level surface.
Tensor project_branch(const Tensor& raw, const Tensor& w, const Tensor& b);  // 1x1 conv, C -> d
Tensor compatibility(const Tensor& f, const Tensor& e);
Tensor normalize_attention(const Tensor& scores);
Tensor attend(const Tensor& attention, const Tensor& f);
SemanticReps sga_forward(const std::vector<Tensor>& branches, const Tensor& e_l, const Tensor& e_g);

}  // namespace msrn
