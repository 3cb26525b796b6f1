#include "msrn/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "msrn/metrics.hpp"
#include "msrn/rng.hpp"

namespace msrn {

void TrainConfig::validate() const {
  if (epochs < 1 || batch < 1 || decay_every < 1) throw std::invalid_argument("train config: counts must be positive");
  if (lr0 <= 0.0) throw std::invalid_argument("train config: lr must be positive");
  if (decay_factor <= 0.0 || decay_factor >= 1.0) throw std::invalid_argument("train config: decay factor must be in (0,1)");
  if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("train config: momentum must be in [0,1)");
  if (weight_decay < 0.0) throw std::invalid_argument("train config: weight decay must be nonnegative");
  if (eval_every < 0) throw std::invalid_argument("train config: eval_every must be nonnegative");
}

std::string train_config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch;
  j["lr0"] = cfg.lr0;
  j["decay_factor"] = cfg.decay_factor;
  j["decay_every"] = cfg.decay_every;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["seed"] = cfg.seed;
  j["eval_every"] = cfg.eval_every;
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  TrainConfig cfg;
  cfg.epochs = j.at("epochs").get<int64_t>();
  cfg.batch = j.at("batch").get<int64_t>();
  cfg.lr0 = j.at("lr0").get<double>();
  cfg.decay_factor = j.at("decay_factor").get<double>();
  cfg.decay_every = j.at("decay_every").get<int64_t>();
  cfg.momentum = j.at("momentum").get<double>();
  cfg.weight_decay = j.at("weight_decay").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.eval_every = j.at("eval_every").get<int64_t>();
  cfg.validate();
  return cfg;
}

double lr_at_epoch(int64_t epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
  return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

void sgd_step(ParamStore& params, const GradMap& grads, OptimizerState& state, double lr, double momentum,
              double weight_decay) {
  for (const std::string& name : params.order) {
    auto git = grads.find(name);
    if (git == grads.end()) throw std::invalid_argument("sgd: missing gradient for '" + name + "'");
    Tensor& p = params.values.at(name);
    const Tensor& g = git->second;
    if (!g.same_shape(p))
      throw std::invalid_argument("sgd: gradient shape " + shape_str(g.shape()) + " vs parameter " +
                                  shape_str(p.shape()) + " for '" + name + "'");
    Tensor& v = state.velocity[name];
    if (v.empty()) v = Tensor(p.shape());
    double wd = params.decay.at(name) ? weight_decay : 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
      double adjusted = g[i] + wd * p[i];
      v[i] = momentum * v[i] + adjusted;
      p[i] -= lr * v[i];
    }
  }
}

FitResult fit(Model& model, const Dataset& train_data, const Dataset* eval_data, const TrainConfig& cfg,
              const std::string& run_dir) {
  cfg.validate();
  int64_t count = train_data.count();
  if (count < 1) throw std::invalid_argument("fit: empty training set");
  if (train_data.y.dim(1) != model.config().labels)
    throw std::invalid_argument("fit: dataset has " + std::to_string(train_data.y.dim(1)) + " labels, model expects " +
                                std::to_string(model.config().labels));

  std::ofstream history_file;
  if (!run_dir.empty()) {
    std::filesystem::create_directories(run_dir);
    history_file.open(std::filesystem::path(run_dir) / "history.jsonl", std::ios::trunc);
    if (!history_file) throw std::runtime_error("fit: cannot write history in " + run_dir);
  }

  const Dataset& eval_set = eval_data ? *eval_data : train_data;
  // precomputed branch features take priority over raw images
  bool train_from_features = !train_data.features.empty();
  bool eval_from_features = !eval_set.features.empty();
  std::vector<const Tensor*> eval_images;
  std::vector<const std::vector<Tensor>*> eval_feats;
  if (eval_from_features)
    eval_feats = eval_set.feature_ptrs();
  else
    eval_images = eval_set.image_ptrs();
  int64_t n = model.config().labels;

  OptimizerState state;
  FitResult result;
  std::vector<int64_t> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = lr_at_epoch(epoch, cfg);
    Rng rng = Rng::derive(cfg.seed, "shuffle", static_cast<uint64_t>(epoch));
    rng.shuffle(order);

    double loss_sum = 0.0, l1_sum = 0.0, l2_sum = 0.0;
    for (int64_t start = 0; start < count; start += cfg.batch) {
      int64_t bsize = std::min(cfg.batch, count - start);
      std::vector<const Tensor*> images;
      std::vector<const std::vector<Tensor>*> feats;
      Tensor targets({bsize, n});
      for (int64_t i = 0; i < bsize; ++i) {
        int64_t src = order[static_cast<size_t>(start + i)];
        if (train_from_features)
          feats.push_back(&train_data.features[static_cast<size_t>(src)]);
        else
          images.push_back(&train_data.images[static_cast<size_t>(src)]);
        for (int64_t c = 0; c < n; ++c) targets[i * n + c] = train_data.y[src * n + c];
      }
      try {
        Graph g;
        Model::BatchNodes nodes = train_from_features ? model.build_batch_from_features(g, feats, &targets, true)
                                                      : model.build_batch(g, images, &targets, true);
        double loss = g.value(nodes.loss).item();
        if (!std::isfinite(loss)) throw std::runtime_error("non-finite loss");
        loss_sum += loss * static_cast<double>(bsize);
        l1_sum += g.value(nodes.l1).item() * static_cast<double>(bsize);
        if (nodes.l2 >= 0) l2_sum += g.value(nodes.l2).item() * static_cast<double>(bsize);
        GradMap grads = g.backward(nodes.loss);
        sgd_step(model.params(), grads, state, lr, cfg.momentum, cfg.weight_decay);
      } catch (const std::exception& ex) {
        throw std::runtime_error("fit: epoch " + std::to_string(epoch) + ", batch " +
                                 std::to_string(start / cfg.batch) + ": " + ex.what());
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.loss = loss_sum / static_cast<double>(count);
    record.l1 = l1_sum / static_cast<double>(count);
    record.l2 = l2_sum / static_cast<double>(count);
    record.lr = lr;

    bool last = epoch == cfg.epochs - 1;
    bool evaluate = last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0);
    if (evaluate) {
      Tensor scores = eval_from_features ? model.score_features(eval_feats) : model.score_batch(eval_images);
      record.eval_map = map_score(scores, eval_set.y);
      if (record.eval_map > result.best_map) {
        result.best_map = record.eval_map;
        result.best_epoch = epoch;
        if (!run_dir.empty()) model.save((std::filesystem::path(run_dir) / "checkpoint").string());
      }
    }

    if (history_file) {
      nlohmann::json j;
      j["epoch"] = record.epoch;
      j["loss"] = record.loss;
      j["l1"] = record.l1;
      j["l2"] = record.l2;
      j["lr"] = record.lr;
      if (record.eval_map >= 0.0) j["mAP"] = record.eval_map;
      history_file << j.dump() << '\n';
    }
    result.history.push_back(record);
  }
  if (history_file) history_file.flush();
  return result;
}

}  // namespace msrn
