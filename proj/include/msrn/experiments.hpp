#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "msrn/dataio.hpp"
#include "msrn/model.hpp"
#include "msrn/trainer.hpp"

namespace msrn {

// Ablation sweeps: table 5 compares embedding variants at a fixed
// branch count, table 6 compares branch counts on the full model. Each
// seed trains every arm on the same generated train/test split; cells
// report the per-seed test mAPs and their median.
struct AblationConfig {
  int table = 5;
  int seeds = 5;
  SynthConfig synth;  // images = train + test pool, split 50/50
  ModelConfig model;
  TrainConfig train;
  int threads = 0;  // 0 = MSRN_THREADS or hardware default
};

struct AblationCell {
  std::string name;
  std::vector<double> maps;
  double median = 0.0;
};

// Thread budget: the smaller of the request (0 means hardware default),
// the MSRN_THREADS environment cap, and the task count; at least 1.
int worker_threads(int requested, int tasks);

double median_of(std::vector<double> values);

std::vector<AblationCell> run_ablation(const AblationConfig& cfg, std::ostream* log = nullptr);

std::string ablation_json(int table, const std::vector<AblationCell>& cells);

}  // namespace msrn
