#include "msrn/label_graph.hpp"

#include <cmath>
#include <stdexcept>

#include "msrn/io.hpp"
#include "msrn/rng.hpp"

namespace msrn {

LabelGraph LabelGraph::make(Tensor V, Tensor A) {
  if (V.rank() != 2) throw std::invalid_argument("label_graph: V must be rank 2, got " + shape_str(V.shape()));
  if (A.rank() != 2 || A.dim(0) != A.dim(1))
    throw std::invalid_argument("label_graph: A must be square, got " + shape_str(A.shape()));
  if (V.dim(0) != A.dim(0))
    throw std::invalid_argument("label_graph: V rows " + std::to_string(V.dim(0)) + " vs A size " +
                                std::to_string(A.dim(0)));
  LabelGraph g;
  g.n = A.dim(0);
  g.v = V.dim(1);
  g.neighborhoods.resize(static_cast<size_t>(g.n));
  for (int64_t i = 0; i < g.n; ++i) {
    for (int64_t j = 0; j < g.n; ++j) {
      double w = A[i * g.n + j];
      if (w < 0.0 || w > 1.0)
        throw std::invalid_argument("label_graph: adjacency entry " + std::to_string(w) + " outside [0,1]");
      if (w > 0.0) g.neighborhoods[static_cast<size_t>(i)].push_back(j);
    }
    if (A[i * g.n + i] <= 0.0)
      throw std::invalid_argument("label_graph: missing self-loop for label " + std::to_string(i));
  }
  g.V = std::move(V);
  g.A = std::move(A);
  return g;
}

Tensor build_cooccurrence_adjacency(const Tensor& y, double tau, std::vector<std::string>* warnings) {
  if (y.rank() != 2) throw std::invalid_argument("cooccurrence: Y must be rank 2, got " + shape_str(y.shape()));
  if (tau < 0.0 || tau >= 1.0) throw std::invalid_argument("cooccurrence: tau must be in [0,1)");
  int64_t rows = y.dim(0), n = y.dim(1);
  if (rows < 1) throw std::invalid_argument("cooccurrence: empty annotation matrix");
  std::vector<int64_t> count(static_cast<size_t>(n), 0);
  std::vector<int64_t> joint(static_cast<size_t>(n * n), 0);
  for (int64_t r = 0; r < rows; ++r) {
    for (int64_t i = 0; i < n; ++i) {
      double yi = y[r * n + i];
      if (yi != 0.0 && yi != 1.0) throw std::invalid_argument("cooccurrence: annotations must be 0/1");
      if (yi == 0.0) continue;
      ++count[static_cast<size_t>(i)];
      for (int64_t j = 0; j < n; ++j)
        if (y[r * n + j] == 1.0) ++joint[static_cast<size_t>(i * n + j)];
    }
  }
  Tensor a({n, n});
  for (int64_t i = 0; i < n; ++i) {
    if (count[static_cast<size_t>(i)] == 0) {
      if (warnings)
        warnings->push_back("label " + std::to_string(i) + " never occurs; using an isolated self-loop row");
      a[i * n + i] = 1.0;
      continue;
    }
    for (int64_t j = 0; j < n; ++j) {
      double w = static_cast<double>(joint[static_cast<size_t>(i * n + j)]) /
                 static_cast<double>(count[static_cast<size_t>(i)]);
      a[i * n + j] = w > tau ? w : 0.0;
    }
    a[i * n + i] = 1.0;
  }
  return a;
}

Tensor adjacency_mask(const Tensor& a) {
  Tensor mask(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) mask[i] = a[i] > 0.0 ? 1.0 : 0.0;
  return mask;
}

Tensor load_label_features(const std::string& path, int64_t n, int64_t v) {
  Tensor t = read_msrnt(path);
  if (t.rank() != 2 || t.dim(0) != n || t.dim(1) != v)
    throw std::runtime_error("label features: expected " + shape_str({n, v}) + ", found " + shape_str(t.shape()) +
                             " in " + path);
  return t;
}

Tensor random_label_features(int64_t n, int64_t v, uint64_t seed) {
  Rng rng = Rng::derive(seed, "label_features");
  Tensor t({n, v});
  double scale = 1.0 / std::sqrt(static_cast<double>(v));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.normal() * scale;
  return t;
}

}  // namespace msrn
