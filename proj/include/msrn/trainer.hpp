#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "msrn/dataio.hpp"
#include "msrn/model.hpp"

namespace msrn {

struct TrainConfig {
  int64_t epochs = 90;
  int64_t batch = 8;
  double lr0 = 0.01;
  double decay_factor = 0.1;
  int64_t decay_every = 30;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  uint64_t seed = 1;
  int64_t eval_every = 1;  // 0 evaluates only after the final epoch

  void validate() const;
};

std::string train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

// lr0 * factor^floor(epoch / period)
double lr_at_epoch(int64_t epoch, const TrainConfig& cfg);

struct OptimizerState {
  std::map<std::string, Tensor> velocity;
};

// Heavy-ball update: g' = g + wd*p (wd only where params.decay says so),
// v = momentum*v + g', p = p - lr*v.
void sgd_step(ParamStore& params, const GradMap& grads, OptimizerState& state, double lr, double momentum,
              double weight_decay);

struct EpochRecord {
  int64_t epoch = 0;
  double loss = 0, l1 = 0, l2 = 0, lr = 0;
  double eval_map = -1.0;  // -1 when this epoch was not evaluated
};

struct FitResult {
  std::vector<EpochRecord> history;
  double best_map = -1.0;
  int64_t best_epoch = -1;
};

// Trains the model in place. Evaluation runs against eval_data when
// given, else the training set. Datasets carrying precomputed branch
// features are consumed through those instead of images. A nonempty
// run_dir receives history.jsonl plus the best-mAP checkpoint under
// checkpoint/.
FitResult fit(Model& model, const Dataset& train_data, const Dataset* eval_data, const TrainConfig& cfg,
              const std::string& run_dir);

}  // namespace msrn
