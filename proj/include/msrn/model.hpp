#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msrn/graph.hpp"
#include "msrn/label_graph.hpp"

namespace msrn {

// Ablation variants: kFull is the whole network; kNoLge swaps the
// graph-propagated embeddings for free learned matrices of the same
// shapes and drops the group loss; kLabelE keeps only the label path
// (no pooling, no group loss); kGroupE keeps only the group path and
// the group loss.
enum class Variant { kFull, kNoLge, kLabelE, kGroupE };
const char* variant_name(Variant v);
Variant variant_from_name(const std::string& name);

struct ModelConfig {
  int64_t labels = 8;   // n
  int64_t groups = 4;   // m
  int64_t embed_dim = 16;  // d, width of label/group embeddings
  int branches = 3;        // B, backbone taps consumed by attention
  std::vector<int64_t> widths = {4, 8, 16, 32};  // backbone block channels
  int64_t image = 32;    // square input side
  int64_t channels = 3;
  int64_t gat_hidden = 16;   // first attention layer width
  int64_t head_hidden = 64;  // first fully connected layer width
  double lambda = 0.001;     // group loss weight
  double slope = 0.2;        // LeakyReLU negative slope
  Variant variant = Variant::kFull;

  int blocks() const { return static_cast<int>(widths.size()); }
  void validate() const;
};

std::string model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const std::string& text);

// Named parameter tensors in creation order; `decay` marks the ones
// weight decay applies to (matrices yes, biases no).
struct ParamStore {
  std::vector<std::string> order;
  std::map<std::string, Tensor> values;
  std::map<std::string, bool> decay;

  void add(const std::string& name, Tensor value, bool decayed);
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
};

struct FeaturePyramid {
  std::vector<Tensor> raw;        // tap outputs, shallowest first
  std::vector<Tensor> projected;  // after buffer + 1x1 projection, W x H x d
};

struct HeadParams {
  Tensor w1, b1;  // hidden x in, 1 x hidden
  Tensor w2, b2;  // n x hidden, 1 x n
  double slope = 0.2;
};

struct Prediction {
  Tensor logits;         // 1 x n
  Tensor probabilities;  // sigmoid of logits
};

// Head on the concatenated semantic representations: rows of O and Q
// are stacked, flattened row-major, then fc2(LeakyReLU(fc1(tanh(.)))).
Prediction classify(const Tensor& o, const Tensor& q, const HeadParams& head);

// Sum over labels, mean over the batch, stable form evaluated from logits.
double bce_loss(const Tensor& logits, const Tensor& targets);
double total_loss(double l1, double l2, double lambda);

class Model {
 public:
  Model(ModelConfig cfg, LabelGraph graph, uint64_t init_seed);

  const ModelConfig& config() const { return cfg_; }
  const LabelGraph& graph() const { return graph_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  struct BatchNodes {
    NodeId loss = -1;
    NodeId l1 = -1;
    NodeId l2 = -1;      // -1 when the variant has no group loss
    NodeId logits = -1;  // N x n
    NodeId scores = -1;  // sigmoid(logits)
  };

  // Builds the forward graph for a batch into g, with one named leaf
  // per parameter. Loss nodes are produced only when targets != nullptr.
  BatchNodes build_batch(Graph& g, const std::vector<const Tensor*>& images, const Tensor* targets,
                         bool with_grad) const;

  // Same network from stored backbone taps (one raw map per branch,
  // shallowest first); the conv stack is skipped, buffer and projection
  // layers still apply.
  BatchNodes build_batch_from_features(Graph& g, const std::vector<const std::vector<Tensor>*>& pyramids,
                                       const Tensor* targets, bool with_grad) const;

  Tensor score_batch(const std::vector<const Tensor*>& images, int64_t chunk = 16) const;  // N x n probabilities
  Tensor score_features(const std::vector<const std::vector<Tensor>*>& pyramids, int64_t chunk = 16) const;
  FeaturePyramid backbone_forward(const Tensor& image) const;

  Shape tap_shape(int branch) const;  // raw map shape the backbone produces at that tap

  void save(const std::string& dir) const;
  static Model load(const std::string& dir);

 private:
  struct EmbeddingNodes {
    NodeId e_l = -1, e_g = -1, l2 = -1;
  };
  struct BranchNodes {
    std::vector<NodeId> raw;
    std::vector<NodeId> projected;
  };
  EmbeddingNodes build_embeddings(Graph& g, const std::map<std::string, NodeId>& leaves) const;
  BranchNodes build_branches(Graph& g, NodeId image, const std::map<std::string, NodeId>& leaves) const;
  NodeId project_tap(Graph& g, NodeId raw, int branch, const std::map<std::string, NodeId>& leaves) const;
  template <typename BranchSource>
  BatchNodes build_batch_impl(Graph& g, int64_t batch, BranchSource&& branches_for, const Tensor* targets,
                              bool with_grad) const;
  void init_params(uint64_t seed);

  ModelConfig cfg_;
  LabelGraph graph_;
  ParamStore params_;
};

}  // namespace msrn
