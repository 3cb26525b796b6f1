#include "msrn/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace msrn {

namespace {

void check_batch(const Tensor& scores, const Tensor& truth) {
  if (scores.rank() != 2) throw std::invalid_argument("metrics: scores must be N x n, got " + shape_str(scores.shape()));
  if (!scores.same_shape(truth))
    throw std::invalid_argument("metrics: shape mismatch " + shape_str(scores.shape()) + " vs " +
                                shape_str(truth.shape()));
  for (int64_t i = 0; i < truth.numel(); ++i)
    if (truth[i] != 0.0 && truth[i] != 1.0) throw std::invalid_argument("metrics: truth must be 0/1");
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

double f1(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

double average_precision(const std::vector<double>& scores, const std::vector<int>& truth) {
  if (scores.size() != truth.size() || scores.empty())
    throw std::invalid_argument("average_precision: bad input sizes");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  int64_t hits = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (truth[order[rank]] != 0) {
      ++hits;
      sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    }
  }
  if (hits == 0) throw std::invalid_argument("average_precision: no positive items");
  return sum / static_cast<double>(hits);
}

double map_score(const Tensor& scores, const Tensor& truth, std::vector<std::string>* warnings) {
  check_batch(scores, truth);
  int64_t rows = scores.dim(0), n = scores.dim(1);
  double sum = 0.0;
  int64_t scored = 0;
  for (int64_t c = 0; c < n; ++c) {
    std::vector<double> s(static_cast<size_t>(rows));
    std::vector<int> t(static_cast<size_t>(rows));
    int64_t positives = 0;
    for (int64_t r = 0; r < rows; ++r) {
      s[static_cast<size_t>(r)] = scores[r * n + c];
      t[static_cast<size_t>(r)] = truth[r * n + c] != 0.0 ? 1 : 0;
      positives += t[static_cast<size_t>(r)];
    }
    if (positives == 0) {
      if (warnings) warnings->push_back("class " + std::to_string(c) + " has no positives; skipped in mAP");
      continue;
    }
    sum += average_precision(s, t);
    ++scored;
  }
  if (scored == 0) throw std::invalid_argument("map_score: no class has a positive item");
  return sum / static_cast<double>(scored);
}

Tensor binarize_threshold(const Tensor& scores, double t) {
  if (scores.rank() != 2) throw std::invalid_argument("binarize: scores must be N x n, got " + shape_str(scores.shape()));
  Tensor pred(scores.shape());
  for (int64_t i = 0; i < scores.numel(); ++i) pred[i] = scores[i] > t ? 1.0 : 0.0;
  return pred;
}

Tensor binarize_topk(const Tensor& scores, int64_t k) {
  if (scores.rank() != 2) throw std::invalid_argument("binarize: scores must be N x n, got " + shape_str(scores.shape()));
  int64_t rows = scores.dim(0), n = scores.dim(1);
  if (k < 1 || k > n) throw std::invalid_argument("binarize: k = " + std::to_string(k) + " with " + std::to_string(n) + " labels");
  Tensor pred(scores.shape());
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t r = 0; r < rows; ++r) {
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int64_t a, int64_t b) { return scores[r * n + a] > scores[r * n + b]; });
    for (int64_t i = 0; i < k; ++i) pred[r * n + order[static_cast<size_t>(i)]] = 1.0;
  }
  return pred;
}

PrfScores prf_suite(const Tensor& pred, const Tensor& truth) {
  check_batch(pred, truth);
  for (int64_t i = 0; i < pred.numel(); ++i)
    if (pred[i] != 0.0 && pred[i] != 1.0) throw std::invalid_argument("metrics: predictions must be 0/1");
  int64_t rows = pred.dim(0), n = pred.dim(1);
  double cp = 0.0, cr = 0.0;
  int64_t tp_all = 0, fp_all = 0, fn_all = 0;
  for (int64_t c = 0; c < n; ++c) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t r = 0; r < rows; ++r) {
      bool p = pred[r * n + c] != 0.0;
      bool t = truth[r * n + c] != 0.0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    cp += ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
    cr += ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    tp_all += tp;
    fp_all += fp;
    fn_all += fn;
  }
  PrfScores s;
  s.cp = cp / static_cast<double>(n);
  s.cr = cr / static_cast<double>(n);
  s.cf1 = f1(s.cp, s.cr);
  s.op = ratio(static_cast<double>(tp_all), static_cast<double>(tp_all + fp_all));
  s.or_ = ratio(static_cast<double>(tp_all), static_cast<double>(tp_all + fn_all));
  s.of1 = f1(s.op, s.or_);
  return s;
}

MetricsReport evaluate_all(const Tensor& scores, const Tensor& truth, double threshold,
                           std::vector<std::string>* warnings) {
  MetricsReport report;
  report.map = map_score(scores, truth, warnings);
  report.all = prf_suite(binarize_threshold(scores, threshold), truth);
  report.top3 = prf_suite(binarize_topk(scores, std::min<int64_t>(3, scores.dim(1))), truth);
  return report;
}

std::string metrics_report_json(const MetricsReport& report) {
  nlohmann::json j;
  j["mAP"] = report.map;
  j["CP"] = report.all.cp;
  j["CR"] = report.all.cr;
  j["CF1"] = report.all.cf1;
  j["OP"] = report.all.op;
  j["OR"] = report.all.or_;
  j["OF1"] = report.all.of1;
  j["CP-3"] = report.top3.cp;
  j["CR-3"] = report.top3.cr;
  j["CF1-3"] = report.top3.cf1;
  j["OP-3"] = report.top3.op;
  j["OR-3"] = report.top3.or_;
  j["OF1-3"] = report.top3.of1;
  return j.dump(2);
}

}  // namespace msrn
