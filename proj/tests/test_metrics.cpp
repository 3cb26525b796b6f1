#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "msrn/metrics.hpp"
#include "msrn/rng.hpp"

using namespace msrn;

namespace {

// brute force AP: stable-sorted ranks, precision at each positive rank
// recounted from scratch
double oracle_ap(const std::vector<double>& scores, const std::vector<int>& truth) {
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  double sum = 0.0;
  int64_t positives = 0;
  for (size_t rank = 0; rank < order.size(); ++rank) {
    if (truth[order[rank]] == 0) continue;
    int64_t hits = 0;
    for (size_t i = 0; i <= rank; ++i) hits += truth[order[i]] != 0;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
    ++positives;
  }
  return sum / static_cast<double>(positives);
}

double oracle_map(const Tensor& scores, const Tensor& truth) {
  int64_t rows = scores.dim(0), n = scores.dim(1);
  double sum = 0.0;
  int64_t scored = 0;
  for (int64_t c = 0; c < n; ++c) {
    std::vector<double> s;
    std::vector<int> t;
    int64_t positives = 0;
    for (int64_t r = 0; r < rows; ++r) {
      s.push_back(scores[r * n + c]);
      t.push_back(truth[r * n + c] != 0.0 ? 1 : 0);
      positives += t.back();
    }
    if (positives == 0) continue;
    sum += oracle_ap(s, t);
    ++scored;
  }
  return sum / static_cast<double>(scored);
}

struct Counts {
  std::vector<int64_t> tp, fp, fn;
};
Counts count_per_class(const Tensor& pred, const Tensor& truth) {
  int64_t rows = pred.dim(0), n = pred.dim(1);
  Counts c{std::vector<int64_t>(static_cast<size_t>(n)), std::vector<int64_t>(static_cast<size_t>(n)),
           std::vector<int64_t>(static_cast<size_t>(n))};
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < n; ++j) {
      bool p = pred[r * n + j] != 0.0, t = truth[r * n + j] != 0.0;
      c.tp[static_cast<size_t>(j)] += p && t;
      c.fp[static_cast<size_t>(j)] += p && !t;
      c.fn[static_cast<size_t>(j)] += !p && t;
    }
  return c;
}

PrfScores oracle_prf(const Tensor& pred, const Tensor& truth) {
  Counts c = count_per_class(pred, truth);
  auto rat = [](double a, double b) { return b == 0.0 ? 0.0 : a / b; };
  int64_t n = pred.dim(1);
  PrfScores s;
  int64_t tp = 0, fp = 0, fn = 0;
  for (int64_t j = 0; j < n; ++j) {
    size_t k = static_cast<size_t>(j);
    s.cp += rat(static_cast<double>(c.tp[k]), static_cast<double>(c.tp[k] + c.fp[k]));
    s.cr += rat(static_cast<double>(c.tp[k]), static_cast<double>(c.tp[k] + c.fn[k]));
    tp += c.tp[k];
    fp += c.fp[k];
    fn += c.fn[k];
  }
  s.cp /= static_cast<double>(n);
  s.cr /= static_cast<double>(n);
  s.cf1 = s.cp + s.cr == 0.0 ? 0.0 : 2.0 * s.cp * s.cr / (s.cp + s.cr);
  s.op = rat(static_cast<double>(tp), static_cast<double>(tp + fp));
  s.or_ = rat(static_cast<double>(tp), static_cast<double>(tp + fn));
  s.of1 = s.op + s.or_ == 0.0 ? 0.0 : 2.0 * s.op * s.or_ / (s.op + s.or_);
  return s;
}

Tensor random_scores(int64_t rows, int64_t n, Rng& rng) {
  Tensor t({rows, n});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

// binary truth with at least one positive per class
Tensor random_truth(int64_t rows, int64_t n, Rng& rng, double p = 0.3) {
  Tensor t({rows, n});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.bernoulli(p) ? 1.0 : 0.0;
  for (int64_t c = 0; c < n; ++c) {
    bool seen = false;
    for (int64_t r = 0; r < rows && !seen; ++r) seen = t[r * n + c] != 0.0;
    if (!seen) t[rng.below(rows) * n + c] = 1.0;
  }
  return t;
}

}  // namespace

TEST_CASE("average precision walks the ranked list") {
  CHECK(average_precision({0.9, 0.8, 0.7}, {1, 0, 1}) == doctest::Approx(5.0 / 6.0).epsilon(1e-12));
  CHECK(average_precision({0.9, 0.8, 0.7, 0.6}, {1, 1, 0, 0}) == 1.0);
  CHECK(average_precision({0.42}, {1}) == 1.0);
  CHECK(average_precision({0.1, 0.9}, {1, 0}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_WITH_AS(average_precision({0.5, 0.5}, {0, 0}), doctest::Contains("no positive"),
                       std::invalid_argument);
  CHECK_THROWS_AS(average_precision({0.5}, {1, 0}), std::invalid_argument);
  CHECK_THROWS_AS(average_precision({}, {}), std::invalid_argument);
}

TEST_CASE("ap is 1 exactly when all positives outrank all negatives") {
  for (uint64_t trial = 0; trial < 100; ++trial) {
    Rng rng(3000 + trial);
    int64_t count = 2 + static_cast<int64_t>(rng.below(10));
    // distinct scores so that rank order is unambiguous
    std::vector<int64_t> perm(static_cast<size_t>(count));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> scores;
    std::vector<int> truth;
    int positives = 0;
    for (int64_t i = 0; i < count; ++i) {
      scores.push_back(0.05 * static_cast<double>(perm[static_cast<size_t>(i)]) + 0.1);
      truth.push_back(rng.bernoulli(0.4) ? 1 : 0);
      positives += truth.back();
    }
    if (positives == 0) truth[0] = 1;

    double ap = average_precision(scores, truth);
    CHECK(ap > 0.0);
    CHECK(ap <= 1.0);
    double min_pos = 2.0, max_neg = -1.0;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (truth[i]) min_pos = std::min(min_pos, scores[i]);
      else max_neg = std::max(max_neg, scores[i]);
    }
    bool separated = max_neg < min_pos;
    CHECK((ap == 1.0) == separated);
  }
}

TEST_CASE("ap ignores strictly monotone rescaling") {
  for (uint64_t trial = 0; trial < 50; ++trial) {
    Rng rng(4000 + trial);
    std::vector<double> scores;
    std::vector<int> truth;
    for (int i = 0; i < 12; ++i) {
      scores.push_back(rng.uniform(-3.0, 3.0));
      truth.push_back(rng.bernoulli(0.3) ? 1 : 0);
    }
    truth[0] = 1;
    std::vector<double> warped;
    for (double s : scores) warped.push_back(std::exp(2.0 * s + 1.0));
    CHECK(average_precision(scores, truth) == average_precision(warped, truth));
  }
}

TEST_CASE("map averages per class ap") {
  // class 0 ranks its positives first, class 1 buries its one positive second
  Tensor scores = Tensor::from({2, 2}, {0.9, 0.9, 0.1, 0.1});
  Tensor truth = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(map_score(scores, truth) == doctest::Approx((1.0 + 0.5) / 2.0).epsilon(1e-12));

  Tensor perfect = Tensor::from({2, 2}, {0.9, 0.8, 0.1, 0.9});
  Tensor both = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  CHECK(map_score(perfect, both) == 1.0);
}

TEST_CASE("map of oracle scores is 1") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(5000 + trial);
    Tensor truth = random_truth(10, 4, rng);
    CHECK(map_score(truth, truth) == 1.0);
  }
}

TEST_CASE("map matches the brute force oracle on random batches") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(6000 + trial);
    Tensor scores = random_scores(20, 5, rng);
    Tensor truth = random_truth(20, 5, rng);
    CHECK(map_score(scores, truth) == doctest::Approx(oracle_map(scores, truth)).epsilon(1e-12));
  }
}

TEST_CASE("map skips empty classes with a warning") {
  Tensor scores = Tensor::from({2, 3}, {0.9, 0.5, 0.3, 0.2, 0.6, 0.4});
  Tensor truth = Tensor::from({2, 3}, {1.0, 0.0, 0.0, 0.0, 0.0, 1.0});
  std::vector<std::string> warnings;
  double m = map_score(scores, truth, &warnings);
  REQUIRE(warnings.size() == 1);
  CHECK(warnings[0].find("class 1") != std::string::npos);
  CHECK(m == 1.0);  // remaining classes are both perfectly ranked

  Tensor none({2, 3});
  CHECK_THROWS_WITH_AS(map_score(scores, none), doctest::Contains("no class has a positive"),
                       std::invalid_argument);
}

TEST_CASE("metric inputs are validated") {
  Tensor scores({2, 3}), truth({3, 2});
  CHECK_THROWS_WITH_AS(map_score(scores, truth), doctest::Contains("shape mismatch"), std::invalid_argument);
  Tensor bad = Tensor::from({1, 2}, {0.5, 2.0});
  Tensor s({1, 2});
  CHECK_THROWS_WITH_AS(map_score(s, bad), doctest::Contains("truth must be 0/1"), std::invalid_argument);
  Tensor flat({4});
  CHECK_THROWS_AS(map_score(flat, flat), std::invalid_argument);
  CHECK_THROWS_WITH_AS(prf_suite(Tensor::from({1, 1}, {0.5}), Tensor::from({1, 1}, {1.0})),
                       doctest::Contains("predictions must be 0/1"), std::invalid_argument);
}

TEST_CASE("threshold binarization is a strict comparison") {
  Tensor scores = Tensor::from({1, 2}, {0.4, 0.6});
  Tensor pred = binarize_threshold(scores, 0.5);
  CHECK(pred[0] == 0.0);
  CHECK(pred[1] == 1.0);
  Tensor edge = Tensor::from({1, 1}, {0.5});
  CHECK(binarize_threshold(edge, 0.5)[0] == 0.0);
}

TEST_CASE("top k binarization keeps exactly k per row, ties to lower index") {
  Rng rng(77);
  Tensor scores = random_scores(6, 5, rng);
  Tensor pred = binarize_topk(scores, 3);
  for (int64_t r = 0; r < 6; ++r) {
    double row = 0.0;
    for (int64_t c = 0; c < 5; ++c) row += pred[r * 5 + c];
    CHECK(row == 3.0);
  }

  Tensor tied = Tensor::from({1, 4}, {0.9, 0.5, 0.5, 0.1});
  Tensor a = binarize_topk(tied, 2);
  Tensor b = binarize_topk(tied, 2);
  CHECK(a[0] == 1.0);
  CHECK(a[1] == 1.0);
  CHECK(a[2] == 0.0);
  CHECK(a[3] == 0.0);
  for (int64_t i = 0; i < 4; ++i) CHECK(a[i] == b[i]);

  CHECK(binarize_topk(tied, 4)[3] == 1.0);
  CHECK_THROWS_AS(binarize_topk(tied, 5), std::invalid_argument);
  CHECK_THROWS_AS(binarize_topk(tied, 0), std::invalid_argument);
}

TEST_CASE("perfect predictions score 1 on all six") {
  Rng rng(88);
  Tensor truth = random_truth(8, 4, rng);
  PrfScores s = prf_suite(truth, truth);
  CHECK(s.cp == 1.0);
  CHECK(s.cr == 1.0);
  CHECK(s.cf1 == 1.0);
  CHECK(s.op == 1.0);
  CHECK(s.or_ == 1.0);
  CHECK(s.of1 == 1.0);
}

TEST_CASE("all zero predictions hit the 0/0 rule") {
  Rng rng(89);
  Tensor truth = random_truth(6, 3, rng);
  Tensor pred({6, 3});
  PrfScores s = prf_suite(pred, truth);
  CHECK(s.cp == 0.0);
  CHECK(s.cr == 0.0);
  CHECK(s.cf1 == 0.0);
  CHECK(s.op == 0.0);
  CHECK(s.or_ == 0.0);
  CHECK(s.of1 == 0.0);
}

TEST_CASE("two class hand counted suite") {
  // class 0: tp=1 fp=1 fn=0, class 1: tp=1 fp=0 fn=1
  Tensor pred = Tensor::from({2, 2}, {1.0, 1.0, 1.0, 0.0});
  Tensor truth = Tensor::from({2, 2}, {1.0, 1.0, 0.0, 1.0});
  PrfScores s = prf_suite(pred, truth);
  CHECK(s.cp == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.cr == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.cf1 == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(s.op == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.or_ == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.of1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("suite matches brute force counting on random batches") {
  for (uint64_t trial = 0; trial < 20; ++trial) {
    Rng rng(7000 + trial);
    Tensor truth = random_truth(15, 6, rng);
    Tensor pred = binarize_threshold(random_scores(15, 6, rng), 0.5);
    PrfScores got = prf_suite(pred, truth);
    PrfScores want = oracle_prf(pred, truth);
    CHECK(got.cp == doctest::Approx(want.cp).epsilon(1e-12));
    CHECK(got.cr == doctest::Approx(want.cr).epsilon(1e-12));
    CHECK(got.cf1 == doctest::Approx(want.cf1).epsilon(1e-12));
    CHECK(got.op == doctest::Approx(want.op).epsilon(1e-12));
    CHECK(got.or_ == doctest::Approx(want.or_).epsilon(1e-12));
    CHECK(got.of1 == doctest::Approx(want.of1).epsilon(1e-12));

    // micro precision times its denominator returns the pooled tp count
    Counts c = count_per_class(pred, truth);
    double tp = 0, fp = 0, fn = 0;
    for (size_t j = 0; j < c.tp.size(); ++j) {
      tp += static_cast<double>(c.tp[j]);
      fp += static_cast<double>(c.fp[j]);
      fn += static_cast<double>(c.fn[j]);
    }
    CHECK(got.op * (tp + fp) == doctest::Approx(tp).epsilon(1e-12));
    CHECK(got.or_ * (tp + fn) == doctest::Approx(tp).epsilon(1e-12));
  }
}

TEST_CASE("macro metrics ignore class order, micro ignore image order") {
  Rng rng(99);
  Tensor truth = random_truth(10, 5, rng);
  Tensor pred = binarize_threshold(random_scores(10, 5, rng), 0.5);
  PrfScores base = prf_suite(pred, truth);

  std::vector<int64_t> cols = {3, 0, 4, 1, 2};
  Tensor pred_c({10, 5}), truth_c({10, 5});
  for (int64_t r = 0; r < 10; ++r)
    for (int64_t j = 0; j < 5; ++j) {
      pred_c[r * 5 + j] = pred[r * 5 + cols[static_cast<size_t>(j)]];
      truth_c[r * 5 + j] = truth[r * 5 + cols[static_cast<size_t>(j)]];
    }
  PrfScores by_class = prf_suite(pred_c, truth_c);
  CHECK(by_class.cp == doctest::Approx(base.cp).epsilon(1e-12));
  CHECK(by_class.cr == doctest::Approx(base.cr).epsilon(1e-12));
  CHECK(by_class.cf1 == doctest::Approx(base.cf1).epsilon(1e-12));

  std::vector<int64_t> rows(10);
  std::iota(rows.begin(), rows.end(), 0);
  rng.shuffle(rows);
  Tensor pred_r({10, 5}), truth_r({10, 5});
  for (int64_t r = 0; r < 10; ++r)
    for (int64_t j = 0; j < 5; ++j) {
      pred_r[r * 5 + j] = pred[rows[static_cast<size_t>(r)] * 5 + j];
      truth_r[r * 5 + j] = truth[rows[static_cast<size_t>(r)] * 5 + j];
    }
  PrfScores by_row = prf_suite(pred_r, truth_r);
  CHECK(by_row.op == base.op);
  CHECK(by_row.or_ == base.or_);
  CHECK(by_row.of1 == base.of1);
  CHECK(by_row.cp == doctest::Approx(base.cp).epsilon(1e-12));
}

TEST_CASE("the full report binarizes both ways and serializes") {
  Rng rng(111);
  Tensor truth = random_truth(12, 5, rng);
  Tensor scores = random_scores(12, 5, rng);
  MetricsReport report = evaluate_all(scores, truth, 0.5);
  CHECK(report.map == doctest::Approx(map_score(scores, truth)).epsilon(1e-15));

  PrfScores thr = prf_suite(binarize_threshold(scores, 0.5), truth);
  CHECK(report.all.of1 == thr.of1);
  PrfScores top = prf_suite(binarize_topk(scores, 3), truth);
  CHECK(report.top3.of1 == top.of1);

  std::string text = metrics_report_json(report);
  for (const char* key : {"mAP", "CP", "CR", "CF1", "OP", "OR", "OF1", "CP-3", "CR-3", "CF1-3", "OP-3", "OR-3",
                          "OF1-3"})
    CHECK(text.find(std::string("\"") + key + "\"") != std::string::npos);
}

TEST_CASE("top k in the report caps at the label count") {
  Tensor truth = Tensor::from({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor scores = Tensor::from({2, 2}, {0.9, 0.2, 0.3, 0.8});
  MetricsReport report = evaluate_all(scores, truth, 0.5);
  CHECK(report.top3.or_ == 1.0);  // k capped at 2, every label predicted
}
