#pragma once

#include <string>
#include <vector>

#include "msrn/tensor.hpp"

namespace msrn {

// AP of one class: items ranked by descending score (ties keep original
// order), mean of precision-at-rank over the positive items.
double average_precision(const std::vector<double>& scores, const std::vector<int>& truth);

// Mean AP over classes with at least one positive; such classes are
// skipped with a warning, and no scorable class at all is an error.
double map_score(const Tensor& scores, const Tensor& truth, std::vector<std::string>* warnings = nullptr);

Tensor binarize_threshold(const Tensor& scores, double t);  // score > t
Tensor binarize_topk(const Tensor& scores, int64_t k);      // exactly k ones per row, ties to lower index

struct PrfScores {
  double cp = 0, cr = 0, cf1 = 0;  // macro: per-class then averaged
  double op = 0, or_ = 0, of1 = 0; // micro: pooled counts
};
PrfScores prf_suite(const Tensor& pred, const Tensor& truth);

struct MetricsReport {
  double map = 0;
  PrfScores all;   // threshold binarization
  PrfScores top3;  // top-3 binarization (k capped at label count)
};
MetricsReport evaluate_all(const Tensor& scores, const Tensor& truth, double threshold = 0.5,
                           std::vector<std::string>* warnings = nullptr);
std::string metrics_report_json(const MetricsReport& report);

}  // namespace msrn
