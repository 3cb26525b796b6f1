#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "msrn/tensor.hpp"

namespace msrn {

// Label co-occurrence graph: per-label feature rows V, adjacency A of
// conditional co-occurrence weights, and the directed neighborhoods
// N_i = {j : A_ij > 0} that attention is restricted to.
struct LabelGraph {
  int64_t n = 0;
  int64_t v = 0;
  Tensor V;  // n x v
  Tensor A;  // n x n, entries in [0,1], A_ii > 0
  std::vector<std::vector<int64_t>> neighborhoods;

  static LabelGraph make(Tensor V, Tensor A);
};

// A_ij = count(i and j) / count(i), entries at or below tau zeroed,
// then A_ii forced to 1. Labels that never occur get an identity row
// and a warning instead of an error.
Tensor build_cooccurrence_adjacency(const Tensor& y, double tau, std::vector<std::string>* warnings = nullptr);

// 0/1 membership mask with mask_ij = 1 iff A_ij > 0.
Tensor adjacency_mask(const Tensor& a);

Tensor load_label_features(const std::string& path, int64_t n, int64_t v);
Tensor random_label_features(int64_t n, int64_t v, uint64_t seed);

inline constexpr int64_t kDefaultFeatureDim = 300;

}  // namespace msrn
