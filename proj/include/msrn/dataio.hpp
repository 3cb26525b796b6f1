#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "msrn/tensor.hpp"

namespace msrn {

// Synthetic multi-label images: every label is a distinct colored glyph
// drawn on a noise background. Labels are split into contiguous groups;
// a same-group label joins an image with its base probability times
// beta, which plants block structure in the co-occurrence statistics.
struct SynthConfig {
  int64_t labels = 8;
  int64_t groups = 2;
  int64_t images = 256;
  int64_t size = 32;  // square image side
  double p_base = 0.15;
  double beta = 1.0;  // >= 1; 1 means no group structure
  double noise = 0.1;
  uint64_t seed = 1;

  void validate() const;
};

std::string synth_config_to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const std::string& text);

struct Dataset {
  std::vector<Tensor> images;  // W x W x 3, may be empty when features carry the data
  Tensor y;                    // N x n, 0/1
  std::vector<std::string> labels;
  std::vector<int64_t> group_of;               // label -> group, empty when unknown
  std::vector<std::vector<Tensor>> features;   // precomputed per-branch maps, shallowest first

  int64_t count() const {
    return static_cast<int64_t>(images.empty() ? features.size() : images.size());
  }
  std::vector<const Tensor*> image_ptrs() const;
  std::vector<const std::vector<Tensor>*> feature_ptrs() const;
};

std::vector<int64_t> group_partition(int64_t labels, int64_t groups);

// Annotation sampling alone (cheap, no rendering); used for
// co-occurrence statistics at sizes where rendering would be wasteful.
Tensor sample_annotations(const SynthConfig& cfg);

Dataset generate_synthetic(const SynthConfig& cfg);

void save_dataset(const Dataset& data, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// Seeded shuffle split. Any label absent from the train side is fixed
// up by moving the first test image carrying it across, so the train
// side always covers every label that occurs at all.
std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, uint64_t seed);

}  // namespace msrn
