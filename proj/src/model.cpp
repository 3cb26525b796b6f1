#include "msrn/model.hpp"

#include <cctype>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "msrn/io.hpp"
#include "msrn/lge.hpp"
#include "msrn/rng.hpp"
#include "msrn/sga.hpp"

namespace msrn {

const char* variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoLge: return "no-lge";
    case Variant::kLabelE: return "label-e";
    case Variant::kGroupE: return "group-e";
  }
  return "?";
}

Variant variant_from_name(const std::string& name) {
  std::string low;
  for (char c : name) low += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (low == "full") return Variant::kFull;
  if (low == "no-lge") return Variant::kNoLge;
  if (low == "label-e") return Variant::kLabelE;
  if (low == "group-e") return Variant::kGroupE;
  throw std::invalid_argument("unknown variant '" + name + "' (full, no-lge, label-e, group-e)");
}

void ModelConfig::validate() const {
  if (labels < 1 || groups < 1 || embed_dim < 1 || gat_hidden < 1 || head_hidden < 1 || channels < 1)
    throw std::invalid_argument("model config: sizes must be positive");
  if (groups > labels) throw std::invalid_argument("model config: more groups than labels");
  if (widths.empty()) throw std::invalid_argument("model config: no backbone blocks");
  for (int64_t w : widths)
    if (w < 1) throw std::invalid_argument("model config: block widths must be positive");
  if (branches < 1 || branches > blocks())
    throw std::invalid_argument("model config: branches must be in [1, " + std::to_string(blocks()) + "]");
  if (lambda < 0.0) throw std::invalid_argument("model config: lambda must be nonnegative");
  if (slope <= 0.0) throw std::invalid_argument("model config: slope must be positive");
  int64_t down = int64_t{1} << blocks();
  if (image < down || image % down != 0)
    throw std::invalid_argument("model config: image side " + std::to_string(image) + " not divisible by " +
                                std::to_string(down));
}

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["labels"] = cfg.labels;
  j["groups"] = cfg.groups;
  j["embed_dim"] = cfg.embed_dim;
  j["branches"] = cfg.branches;
  j["widths"] = cfg.widths;
  j["image"] = cfg.image;
  j["channels"] = cfg.channels;
  j["gat_hidden"] = cfg.gat_hidden;
  j["head_hidden"] = cfg.head_hidden;
  j["lambda"] = cfg.lambda;
  j["slope"] = cfg.slope;
  j["variant"] = variant_name(cfg.variant);
  return j.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ModelConfig cfg;
  cfg.labels = j.at("labels").get<int64_t>();
  cfg.groups = j.at("groups").get<int64_t>();
  cfg.embed_dim = j.at("embed_dim").get<int64_t>();
  cfg.branches = j.at("branches").get<int>();
  cfg.widths = j.at("widths").get<std::vector<int64_t>>();
  cfg.image = j.at("image").get<int64_t>();
  cfg.channels = j.at("channels").get<int64_t>();
  cfg.gat_hidden = j.at("gat_hidden").get<int64_t>();
  cfg.head_hidden = j.at("head_hidden").get<int64_t>();
  cfg.lambda = j.at("lambda").get<double>();
  cfg.slope = j.at("slope").get<double>();
  cfg.variant = variant_from_name(j.at("variant").get<std::string>());
  cfg.validate();
  return cfg;
}

void ParamStore::add(const std::string& name, Tensor value, bool decayed) {
  if (values.count(name)) throw std::logic_error("params: duplicate name '" + name + "'");
  order.push_back(name);
  values[name] = std::move(value);
  decay[name] = decayed;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = values.find(name);
  if (it == values.end()) throw std::invalid_argument("params: unknown name '" + name + "'");
  return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
  auto it = values.find(name);
  if (it == values.end()) throw std::invalid_argument("params: unknown name '" + name + "'");
  return it->second;
}

namespace {

bool has_lge(Variant v) { return v != Variant::kNoLge; }
bool has_pool(Variant v) { return v == Variant::kFull || v == Variant::kGroupE; }
bool has_label_path(Variant v) { return v != Variant::kGroupE; }
bool has_group_path(Variant v) { return v != Variant::kLabelE; }

int64_t head_rows(const ModelConfig& cfg) {
  int64_t rows = 0;
  if (has_label_path(cfg.variant)) rows += cfg.labels;
  if (has_group_path(cfg.variant)) rows += cfg.groups;
  return rows;
}

NodeId build_head(Graph& g, NodeId m, NodeId w1, NodeId b1, NodeId w2, NodeId b2, double slope) {
  const Tensor& mv = g.value(m);
  NodeId flat = g.reshape(m, {1, mv.numel()});
  NodeId h = g.leaky_relu(g.add(g.matmul(g.tanh(flat), g.transpose(w1)), b1), slope);
  return g.add(g.matmul(h, g.transpose(w2)), b2);
}

}  // namespace

Model::Model(ModelConfig cfg, LabelGraph graph, uint64_t init_seed) : cfg_(std::move(cfg)), graph_(std::move(graph)) {
  cfg_.validate();
  if (graph_.n != cfg_.labels)
    throw std::invalid_argument("model: label graph has " + std::to_string(graph_.n) + " labels, config says " +
                                std::to_string(cfg_.labels));
  init_params(init_seed);
}

void Model::init_params(uint64_t seed) {
  Rng rng = Rng::derive(seed, "init");
  auto add = [&](const std::string& name, Shape shape, int64_t fan_in, bool decayed) {
    Tensor t(std::move(shape));
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-bound, bound);
    params_.add(name, std::move(t), decayed);
  };

  int blocks = cfg_.blocks();
  int64_t in_ch = cfg_.channels;
  for (int i = 0; i < blocks; ++i) {
    int64_t out_ch = cfg_.widths[static_cast<size_t>(i)];
    std::string base = "backbone" + std::to_string(i);
    add(base + ".w", {out_ch, 3, 3, in_ch}, 9 * in_ch, true);
    add(base + ".b", {out_ch}, 9 * in_ch, false);
    in_ch = out_ch;
  }
  for (int t = 0; t < cfg_.branches; ++t) {
    int64_t ch = cfg_.widths[static_cast<size_t>(blocks - cfg_.branches + t)];
    std::string idx = std::to_string(t);
    if (t < cfg_.branches - 1) {
      add("buffer" + idx + ".w", {ch, ch}, ch, true);
      add("buffer" + idx + ".b", {ch}, ch, false);
    }
    add("proj" + idx + ".w", {cfg_.embed_dim, ch}, ch, true);
    add("proj" + idx + ".b", {cfg_.embed_dim}, ch, false);
  }
  if (has_lge(cfg_.variant)) {
    add("gat1.U", {cfg_.gat_hidden, graph_.v}, graph_.v, true);
    add("gat1.P", {1, 2 * cfg_.gat_hidden}, 2 * cfg_.gat_hidden, true);
    add("gat2.U", {cfg_.embed_dim, cfg_.gat_hidden}, cfg_.gat_hidden, true);
    add("gat2.P", {1, 2 * cfg_.embed_dim}, 2 * cfg_.embed_dim, true);
    if (has_pool(cfg_.variant)) {
      add("pool.U", {cfg_.embed_dim, cfg_.embed_dim}, cfg_.embed_dim, true);
      add("pool.P", {1, 2 * cfg_.embed_dim}, 2 * cfg_.embed_dim, true);
      add("pool.assign", {cfg_.embed_dim, cfg_.groups}, cfg_.embed_dim, true);
    }
  } else {
    add("embed.labels", {cfg_.labels, cfg_.embed_dim}, cfg_.embed_dim, true);
    add("embed.groups", {cfg_.groups, cfg_.embed_dim}, cfg_.embed_dim, true);
  }
  int64_t head_in = head_rows(cfg_) * cfg_.branches * cfg_.embed_dim;
  add("head1.w", {cfg_.head_hidden, head_in}, head_in, true);
  add("head1.b", {1, cfg_.head_hidden}, head_in, false);
  add("head2.w", {cfg_.labels, cfg_.head_hidden}, cfg_.head_hidden, true);
  add("head2.b", {1, cfg_.labels}, cfg_.head_hidden, false);
}

Model::EmbeddingNodes Model::build_embeddings(Graph& g, const std::map<std::string, NodeId>& leaves) const {
  EmbeddingNodes nodes;
  if (!has_lge(cfg_.variant)) {
    nodes.e_l = leaves.at("embed.labels");
    nodes.e_g = leaves.at("embed.groups");
    return nodes;
  }
  Tensor mask = adjacency_mask(graph_.A);
  NodeId v = g.constant(graph_.V);
  GatNodes layer1 = build_gat_layer(g, v, leaves.at("gat1.U"), leaves.at("gat1.P"), mask, cfg_.slope);
  GatNodes layer2 = build_gat_layer(g, layer1.out, leaves.at("gat2.U"), leaves.at("gat2.P"), mask, cfg_.slope);
  nodes.e_l = layer2.out;
  if (has_pool(cfg_.variant)) {
    PoolNodes pool = build_diffpool(g, nodes.e_l, leaves.at("pool.U"), leaves.at("pool.P"), leaves.at("pool.assign"),
                                    mask, cfg_.slope);
    nodes.e_g = pool.E_g;
    nodes.l2 = build_group_loss(g, nodes.e_l, nodes.e_g, hard_assign(g.value(pool.S)));
  }
  return nodes;
}

NodeId Model::project_tap(Graph& g, NodeId raw, int branch, const std::map<std::string, NodeId>& leaves) const {
  std::string idx = std::to_string(branch);
  NodeId buffered = branch < cfg_.branches - 1
                        ? g.conv1x1(raw, leaves.at("buffer" + idx + ".w"), leaves.at("buffer" + idx + ".b"))
                        : raw;
  return g.conv1x1(buffered, leaves.at("proj" + idx + ".w"), leaves.at("proj" + idx + ".b"));
}

Model::BranchNodes Model::build_branches(Graph& g, NodeId image, const std::map<std::string, NodeId>& leaves) const {
  BranchNodes out;
  NodeId x = image;
  int blocks = cfg_.blocks();
  for (int i = 0; i < blocks; ++i) {
    std::string base = "backbone" + std::to_string(i);
    x = g.maxpool2(g.elu(g.conv3x3(x, leaves.at(base + ".w"), leaves.at(base + ".b"))));
    int t = i - (blocks - cfg_.branches);
    if (t < 0) continue;
    out.raw.push_back(x);
    out.projected.push_back(project_tap(g, x, t, leaves));
  }
  return out;
}

Shape Model::tap_shape(int branch) const {
  if (branch < 0 || branch >= cfg_.branches)
    throw std::invalid_argument("model: no branch " + std::to_string(branch));
  int block = cfg_.blocks() - cfg_.branches + branch;
  int64_t side = cfg_.image >> (block + 1);
  return {side, side, cfg_.widths[static_cast<size_t>(block)]};
}

template <typename BranchSource>
Model::BatchNodes Model::build_batch_impl(Graph& g, int64_t batch, BranchSource&& branches_for, const Tensor* targets,
                                          bool with_grad) const {
  if (batch < 1) throw std::invalid_argument("model: empty batch");
  std::map<std::string, NodeId> leaves;
  for (const std::string& name : params_.order) leaves[name] = g.leaf(name, params_.values.at(name), with_grad);

  EmbeddingNodes emb = build_embeddings(g, leaves);

  std::vector<NodeId> logit_rows;
  logit_rows.reserve(static_cast<size_t>(batch));
  for (int64_t b = 0; b < batch; ++b) {
    BranchNodes branches = branches_for(g, b, leaves);
    std::vector<NodeId> parts;
    if (has_label_path(cfg_.variant)) parts.push_back(build_sga_concat(g, branches.projected, emb.e_l));
    if (has_group_path(cfg_.variant)) parts.push_back(build_sga_concat(g, branches.projected, emb.e_g));
    NodeId m = parts.size() == 1 ? parts[0] : g.concat(parts, 0);
    logit_rows.push_back(
        build_head(g, m, leaves.at("head1.w"), leaves.at("head1.b"), leaves.at("head2.w"), leaves.at("head2.b"),
                   cfg_.slope));
  }

  BatchNodes nodes;
  nodes.logits = logit_rows.size() == 1 ? logit_rows[0] : g.concat(logit_rows, 0);
  nodes.scores = g.sigmoid(nodes.logits);
  nodes.l2 = emb.l2;
  if (targets) {
    if (targets->rank() != 2 || targets->dim(0) != batch || targets->dim(1) != cfg_.labels)
      throw std::invalid_argument("model: target shape " + shape_str(targets->shape()) + ", expected " +
                                  shape_str({batch, cfg_.labels}));
    NodeId y = g.constant(*targets);
    nodes.l1 = g.scalar_mul(g.bce_with_logits(nodes.logits, y), 1.0 / static_cast<double>(batch));
    nodes.loss = emb.l2 >= 0 ? g.add(nodes.l1, g.scalar_mul(emb.l2, cfg_.lambda)) : nodes.l1;
  }
  return nodes;
}

Model::BatchNodes Model::build_batch(Graph& g, const std::vector<const Tensor*>& images, const Tensor* targets,
                                     bool with_grad) const {
  auto source = [&](Graph& gg, int64_t b, const std::map<std::string, NodeId>& leaves) {
    const Tensor* image = images[static_cast<size_t>(b)];
    if (image->rank() != 3 || image->dim(0) != cfg_.image || image->dim(1) != cfg_.image ||
        image->dim(2) != cfg_.channels)
      throw std::invalid_argument("model: image shape " + shape_str(image->shape()) + ", expected " +
                                  shape_str({cfg_.image, cfg_.image, cfg_.channels}));
    return build_branches(gg, gg.constant(*image), leaves);
  };
  return build_batch_impl(g, static_cast<int64_t>(images.size()), source, targets, with_grad);
}

Model::BatchNodes Model::build_batch_from_features(Graph& g, const std::vector<const std::vector<Tensor>*>& pyramids,
                                                   const Tensor* targets, bool with_grad) const {
  auto source = [&](Graph& gg, int64_t b, const std::map<std::string, NodeId>& leaves) {
    const std::vector<Tensor>& raw = *pyramids[static_cast<size_t>(b)];
    if (static_cast<int>(raw.size()) != cfg_.branches)
      throw std::invalid_argument("model: pyramid has " + std::to_string(raw.size()) + " maps, expected " +
                                  std::to_string(cfg_.branches));
    BranchNodes out;
    for (int t = 0; t < cfg_.branches; ++t) {
      const Tensor& map = raw[static_cast<size_t>(t)];
      Shape want = tap_shape(t);
      if (map.shape() != want)
        throw std::invalid_argument("model: branch " + std::to_string(t) + " features " + shape_str(map.shape()) +
                                    ", expected " + shape_str(want));
      NodeId node = gg.constant(map);
      out.raw.push_back(node);
      out.projected.push_back(project_tap(gg, node, t, leaves));
    }
    return out;
  };
  return build_batch_impl(g, static_cast<int64_t>(pyramids.size()), source, targets, with_grad);
}

Tensor Model::score_batch(const std::vector<const Tensor*>& images, int64_t chunk) const {
  if (chunk < 1) chunk = 1;
  int64_t total = static_cast<int64_t>(images.size());
  Tensor scores({total, cfg_.labels});
  for (int64_t start = 0; start < total; start += chunk) {
    int64_t count = std::min(chunk, total - start);
    std::vector<const Tensor*> slice(images.begin() + start, images.begin() + start + count);
    Graph g;
    BatchNodes nodes = build_batch(g, slice, nullptr, false);
    const Tensor& s = g.value(nodes.scores);
    for (int64_t i = 0; i < count * cfg_.labels; ++i) scores[start * cfg_.labels + i] = s[i];
  }
  return scores;
}

Tensor Model::score_features(const std::vector<const std::vector<Tensor>*>& pyramids, int64_t chunk) const {
  if (chunk < 1) chunk = 1;
  int64_t total = static_cast<int64_t>(pyramids.size());
  Tensor scores({total, cfg_.labels});
  for (int64_t start = 0; start < total; start += chunk) {
    int64_t count = std::min(chunk, total - start);
    std::vector<const std::vector<Tensor>*> slice(pyramids.begin() + start, pyramids.begin() + start + count);
    Graph g;
    BatchNodes nodes = build_batch_from_features(g, slice, nullptr, false);
    const Tensor& s = g.value(nodes.scores);
    for (int64_t i = 0; i < count * cfg_.labels; ++i) scores[start * cfg_.labels + i] = s[i];
  }
  return scores;
}

FeaturePyramid Model::backbone_forward(const Tensor& image) const {
  Graph g;
  std::map<std::string, NodeId> leaves;
  for (const std::string& name : params_.order) leaves[name] = g.leaf(name, params_.values.at(name), false);
  BranchNodes branches = build_branches(g, g.constant(image), leaves);
  FeaturePyramid pyramid;
  for (NodeId id : branches.raw) pyramid.raw.push_back(g.value(id));
  for (NodeId id : branches.projected) pyramid.projected.push_back(g.value(id));
  return pyramid;
}

Prediction classify(const Tensor& o, const Tensor& q, const HeadParams& head) {
  if (o.rank() != 2 || q.rank() != 2 || o.dim(1) != q.dim(1))
    throw std::invalid_argument("classify: O and Q must share the feature width, got " + shape_str(o.shape()) +
                                " and " + shape_str(q.shape()));
  Graph g;
  NodeId m = g.concat({g.constant(o), g.constant(q)}, 0);
  NodeId logits = build_head(g, m, g.constant(head.w1), g.constant(head.b1), g.constant(head.w2), g.constant(head.b2),
                             head.slope);
  Prediction pred;
  pred.logits = g.value(logits);
  pred.probabilities = g.value(g.sigmoid(logits));
  return pred;
}

double bce_loss(const Tensor& logits, const Tensor& targets) {
  if (logits.rank() != 2) throw std::invalid_argument("bce_loss: logits must be N x n, got " + shape_str(logits.shape()));
  Graph g;
  NodeId sum = g.bce_with_logits(g.constant(logits), g.constant(targets));
  return g.value(g.scalar_mul(sum, 1.0 / static_cast<double>(logits.dim(0)))).item();
}

double total_loss(double l1, double l2, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("total_loss: lambda must be nonnegative");
  return l1 + lambda * l2;
}

void Model::save(const std::string& dir) const {
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "params");
  fs::create_directories(fs::path(dir) / "graph");
  write_text((fs::path(dir) / "config.json").string(), model_config_to_json(cfg_) + "\n");
  std::ostringstream manifest;
  for (const std::string& name : params_.order) {
    const Tensor& t = params_.values.at(name);
    manifest << name << ' ' << (params_.decay.at(name) ? "weight" : "bias") << ' ' << shape_str(t.shape()) << '\n';
    write_msrnt((fs::path(dir) / "params" / (name + ".msrnt")).string(), t);
  }
  write_text((fs::path(dir) / "manifest.txt").string(), manifest.str());
  write_msrnt((fs::path(dir) / "graph" / "V.msrnt").string(), graph_.V);
  write_msrnt((fs::path(dir) / "graph" / "A.msrnt").string(), graph_.A);
}

Model Model::load(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> cfg_lines = read_lines((fs::path(dir) / "config.json").string());
  std::string cfg_text;
  for (const std::string& line : cfg_lines) cfg_text += line + "\n";
  ModelConfig cfg = model_config_from_json(cfg_text);
  Tensor v = read_msrnt((fs::path(dir) / "graph" / "V.msrnt").string());
  Tensor a = read_msrnt((fs::path(dir) / "graph" / "A.msrnt").string());
  Model model(cfg, LabelGraph::make(std::move(v), std::move(a)), 0);
  for (const std::string& name : model.params_.order) {
    Tensor t = read_msrnt((fs::path(dir) / "params" / (name + ".msrnt")).string());
    Tensor& dst = model.params_.values.at(name);
    if (!t.same_shape(dst))
      throw std::runtime_error("checkpoint: parameter '" + name + "' has shape " + shape_str(t.shape()) +
                               ", expected " + shape_str(dst.shape()));
    dst = std::move(t);
  }
  return model;
}

}  // namespace msrn
