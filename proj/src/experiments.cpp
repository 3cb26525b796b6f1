#include "msrn/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <mutex>
#include <ostream>
#include <stdexcept>
#include <thread>

#include <json.hpp>

namespace msrn {

int worker_threads(int requested, int tasks) {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (cap < 1) cap = 1;
  if (const char* env = std::getenv("MSRN_THREADS")) {
    char* end = nullptr;
    long parsed = std::strtol(env, &end, 10);
    if (end != env && parsed >= 1) cap = static_cast<int>(parsed);
  }
  int threads = requested > 0 ? requested : cap;
  threads = std::min({threads, cap, std::max(tasks, 1)});
  return std::max(threads, 1);
}

double median_of(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty");
  std::sort(values.begin(), values.end());
  size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

namespace {

struct Arm {
  std::string name;
  Variant variant;
  int branches;
};

std::vector<Arm> make_arms(const AblationConfig& cfg) {
  std::vector<Arm> arms;
  if (cfg.table == 5) {
    for (Variant v : {Variant::kFull, Variant::kNoLge, Variant::kLabelE, Variant::kGroupE})
      arms.push_back({variant_name(v), v, cfg.model.branches});
  } else if (cfg.table == 6) {
    int max_b = cfg.model.blocks();
    for (int b = 1; b <= 4 && b <= max_b; ++b)
      arms.push_back({"branches-" + std::to_string(b), Variant::kFull, b});
  } else {
    throw std::invalid_argument("ablation: table must be 5 or 6");
  }
  return arms;
}

}  // namespace

std::vector<AblationCell> run_ablation(const AblationConfig& cfg, std::ostream* log) {
  if (cfg.seeds < 1) throw std::invalid_argument("ablation: need at least one seed");
  std::vector<Arm> arms = make_arms(cfg);
  std::vector<AblationCell> cells(arms.size());
  for (size_t a = 0; a < arms.size(); ++a) cells[a].name = arms[a].name;

  std::mutex log_mutex;
  for (int s = 0; s < cfg.seeds; ++s) {
    SynthConfig synth = cfg.synth;
    synth.seed = cfg.synth.seed + static_cast<uint64_t>(s);
    Dataset pool = generate_synthetic(synth);
    auto [train_split, test_split] = split_dataset(pool, 0.5, synth.seed);
    pool = Dataset{};  // free the unsplit copy

    std::vector<double> arm_map(arms.size(), 0.0);
    std::atomic<size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    auto work = [&]() {
      for (;;) {
        size_t a = next.fetch_add(1);
        if (a >= arms.size()) return;
        try {
          ModelConfig mc = cfg.model;
          mc.variant = arms[a].variant;
          mc.branches = arms[a].branches;
          TrainConfig tc = cfg.train;
          tc.seed = cfg.train.seed + static_cast<uint64_t>(s);
          LabelGraph graph = LabelGraph::make(random_label_features(mc.labels, kDefaultFeatureDim, synth.seed),
                                             build_cooccurrence_adjacency(train_split.y, 0.0));
          Model model(mc, std::move(graph), tc.seed);
          FitResult fitted = fit(model, train_split, &test_split, tc, "");
          arm_map[a] = fitted.best_map;
          if (log) {
            std::lock_guard<std::mutex> lock(log_mutex);
            *log << "table " << cfg.table << " seed " << s << " " << arms[a].name << ": mAP " << fitted.best_map
                 << "\n";
          }
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
          return;
        }
      }
    };
    int threads = worker_threads(cfg.threads, static_cast<int>(arms.size()));
    if (threads <= 1) {
      work();
    } else {
      std::vector<std::thread> pool_threads;
      for (int t = 0; t < threads; ++t) pool_threads.emplace_back(work);
      for (std::thread& t : pool_threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);
    for (size_t a = 0; a < arms.size(); ++a) cells[a].maps.push_back(arm_map[a]);
  }
  for (AblationCell& cell : cells) cell.median = median_of(cell.maps);
  return cells;
}

std::string ablation_json(int table, const std::vector<AblationCell>& cells) {
  nlohmann::json j;
  j["table"] = table;
  nlohmann::json rows = nlohmann::json::array();
  for (const AblationCell& cell : cells) {
    nlohmann::json row;
    row["name"] = cell.name;
    row["maps"] = cell.maps;
    row["median_mAP"] = cell.median;
    rows.push_back(row);
  }
  j["cells"] = rows;
  return j.dump(2);
}

}  // namespace msrn
