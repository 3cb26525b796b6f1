#include "msrn/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "msrn/io.hpp"
#include "msrn/rng.hpp"

namespace msrn {

namespace {

struct Color {
  const char* name;
  double r, g, b;
};
constexpr Color kColors[] = {
    {"red", 1.0, 0.1, 0.1},    {"green", 0.1, 1.0, 0.1},  {"blue", 0.15, 0.3, 1.0}, {"yellow", 1.0, 1.0, 0.1},
    {"magenta", 1.0, 0.1, 1.0}, {"cyan", 0.1, 1.0, 1.0},  {"orange", 1.0, 0.55, 0.1}, {"white", 1.0, 1.0, 1.0},
};
constexpr const char* kShapes[] = {"square", "disc", "tri", "cross", "diamond", "ring"};
constexpr int64_t kMaxLabels = 48;  // 8 colors x 6 shapes

bool shape_hit(int shape, int64_t dx, int64_t dy, int64_t gs) {
  double c = (gs - 1) / 2.0;
  double ux = dx - c, uy = dy - c;
  double r = gs / 2.0;
  double bar = gs / 6.0 + 0.5;
  switch (shape) {
    case 0: return true;                                  // square
    case 1: return ux * ux + uy * uy <= r * r;            // disc
    case 2: return dy >= dx;                              // lower triangle
    case 3: return std::abs(ux) <= bar || std::abs(uy) <= bar;  // cross
    case 4: return std::abs(ux) + std::abs(uy) <= r;      // diamond
    case 5: {                                             // ring
      double d2 = ux * ux + uy * uy;
      return d2 <= r * r && d2 >= (r * 0.45) * (r * 0.45);
    }
  }
  return false;
}

std::string image_file(int64_t index) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << index << ".msrnt";
  return os.str();
}

}  // namespace

void SynthConfig::validate() const {
  if (labels < 1 || groups < 1 || images < 1) throw std::invalid_argument("synth: counts must be positive");
  if (labels > kMaxLabels)
    throw std::invalid_argument("synth: at most " + std::to_string(kMaxLabels) + " distinct glyphs available");
  if (groups > labels) throw std::invalid_argument("synth: more groups than labels");
  if (size < 8) throw std::invalid_argument("synth: image side must be at least 8");
  if (p_base < 0.0 || p_base > 1.0) throw std::invalid_argument("synth: p_base must be in [0,1]");
  if (beta < 1.0) throw std::invalid_argument("synth: beta must be at least 1");
  if (noise < 0.0 || noise > 1.0) throw std::invalid_argument("synth: noise must be in [0,1]");
}

std::string synth_config_to_json(const SynthConfig& cfg) {
  nlohmann::json j;
  j["labels"] = cfg.labels;
  j["groups"] = cfg.groups;
  j["images"] = cfg.images;
  j["size"] = cfg.size;
  j["p_base"] = cfg.p_base;
  j["beta"] = cfg.beta;
  j["noise"] = cfg.noise;
  j["seed"] = cfg.seed;
  return j.dump(2);
}

SynthConfig synth_config_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  SynthConfig cfg;
  cfg.labels = j.at("labels").get<int64_t>();
  cfg.groups = j.at("groups").get<int64_t>();
  cfg.images = j.at("images").get<int64_t>();
  cfg.size = j.at("size").get<int64_t>();
  cfg.p_base = j.at("p_base").get<double>();
  cfg.beta = j.at("beta").get<double>();
  cfg.noise = j.at("noise").get<double>();
  cfg.seed = j.at("seed").get<uint64_t>();
  cfg.validate();
  return cfg;
}

std::vector<const Tensor*> Dataset::image_ptrs() const {
  std::vector<const Tensor*> ptrs;
  ptrs.reserve(images.size());
  for (const Tensor& t : images) ptrs.push_back(&t);
  return ptrs;
}

std::vector<const std::vector<Tensor>*> Dataset::feature_ptrs() const {
  std::vector<const std::vector<Tensor>*> ptrs;
  ptrs.reserve(features.size());
  for (const std::vector<Tensor>& p : features) ptrs.push_back(&p);
  return ptrs;
}

std::vector<int64_t> group_partition(int64_t labels, int64_t groups) {
  std::vector<int64_t> group_of(static_cast<size_t>(labels));
  for (int64_t i = 0; i < labels; ++i) group_of[static_cast<size_t>(i)] = i * groups / labels;
  return group_of;
}

Tensor sample_annotations(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<int64_t> group_of = group_partition(cfg.labels, cfg.groups);
  Tensor y({cfg.images, cfg.labels});
  for (int64_t i = 0; i < cfg.images; ++i) {
    Rng rng = Rng::derive(cfg.seed, "labels", static_cast<uint64_t>(i));
    int64_t primary = rng.below(cfg.labels);
    y[i * cfg.labels + primary] = 1.0;
    for (int64_t j = 0; j < cfg.labels; ++j) {
      if (j == primary) continue;
      bool same = group_of[static_cast<size_t>(j)] == group_of[static_cast<size_t>(primary)];
      double p = std::min(cfg.p_base * (same ? cfg.beta : 1.0), 0.95);
      if (rng.bernoulli(p)) y[i * cfg.labels + j] = 1.0;
    }
  }
  // guarantee every label occurs at least once
  for (int64_t j = 0; j < cfg.labels; ++j) {
    bool seen = false;
    for (int64_t i = 0; i < cfg.images && !seen; ++i) seen = y[i * cfg.labels + j] != 0.0;
    if (!seen) y[(j % cfg.images) * cfg.labels + j] = 1.0;
  }
  return y;
}

Dataset generate_synthetic(const SynthConfig& cfg) {
  Dataset data;
  data.y = sample_annotations(cfg);
  data.group_of = group_partition(cfg.labels, cfg.groups);
  for (int64_t k = 0; k < cfg.labels; ++k) {
    data.labels.push_back(std::string(kColors[k % 8].name) + "_" + kShapes[k / 8]);
  }
  int64_t gs = cfg.size / 4;
  data.images.reserve(static_cast<size_t>(cfg.images));
  for (int64_t i = 0; i < cfg.images; ++i) {
    Rng rng = Rng::derive(cfg.seed, "render", static_cast<uint64_t>(i));
    Tensor img({cfg.size, cfg.size, 3});
    for (int64_t p = 0; p < img.numel(); ++p) img[p] = cfg.noise * rng.uniform();
    for (int64_t k = 0; k < cfg.labels; ++k) {
      if (data.y[i * cfg.labels + k] == 0.0) continue;
      const Color& col = kColors[k % 8];
      int shape = static_cast<int>(k / 8);
      int64_t x0 = rng.below(cfg.size - gs + 1);
      int64_t y0 = rng.below(cfg.size - gs + 1);
      for (int64_t dx = 0; dx < gs; ++dx)
        for (int64_t dy = 0; dy < gs; ++dy) {
          if (!shape_hit(shape, dx, dy, gs)) continue;
          double* px = img.data() + ((x0 + dx) * cfg.size + (y0 + dy)) * 3;
          px[0] = col.r;
          px[1] = col.g;
          px[2] = col.b;
        }
    }
    data.images.push_back(std::move(img));
  }
  return data;
}

void save_dataset(const Dataset& data, const std::string& dir) {
  namespace fs = std::filesystem;
  if (data.images.empty() && data.features.empty())
    throw std::invalid_argument("dataset: nothing to save, no images and no features");
  if (data.count() != data.y.dim(0))
    throw std::invalid_argument("dataset: " + std::to_string(data.count()) + " images vs " +
                                std::to_string(data.y.dim(0)) + " annotation rows");
  if (!data.images.empty() && !data.features.empty() && data.images.size() != data.features.size())
    throw std::invalid_argument("dataset: " + std::to_string(data.images.size()) + " images vs " +
                                std::to_string(data.features.size()) + " feature pyramids");
  fs::create_directories(dir);
  write_annotations_csv((fs::path(dir) / "Y.csv").string(), data.labels, data.y);
  write_lines((fs::path(dir) / "labels.txt").string(), data.labels);
  if (!data.images.empty()) {
    fs::create_directories(fs::path(dir) / "images");
    for (int64_t i = 0; i < data.count(); ++i)
      write_msrnt((fs::path(dir) / "images" / image_file(i)).string(), data.images[static_cast<size_t>(i)]);
  }
  if (!data.features.empty()) {
    fs::create_directories(fs::path(dir) / "features");
    for (int64_t i = 0; i < data.count(); ++i) {
      const auto& pyramid = data.features[static_cast<size_t>(i)];
      for (size_t b = 0; b < pyramid.size(); ++b) {
        std::string name = image_file(i);
        name.insert(name.size() - 6, ".b" + std::to_string(b));  // 000000.b0.msrnt
        write_msrnt((fs::path(dir) / "features" / name).string(), pyramid[b]);
      }
    }
  }
}

Dataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  AnnotationTable table = read_annotations_csv((fs::path(dir) / "Y.csv").string());
  Dataset data;
  data.y = std::move(table.y);
  data.labels = std::move(table.label_names);
  std::vector<std::string> listed = read_lines((fs::path(dir) / "labels.txt").string());
  if (listed != data.labels) throw std::runtime_error("dataset: labels.txt disagrees with Y.csv header in " + dir);
  int64_t count = data.y.dim(0);
  fs::path image_dir = fs::path(dir) / "images";
  fs::path feat_dir = fs::path(dir) / "features";
  if (!fs::exists(image_dir) && !fs::exists(feat_dir))
    throw std::runtime_error("dataset: neither images/ nor features/ in " + dir);
  if (fs::exists(image_dir)) {
    Shape expect;
    for (int64_t i = 0; i < count; ++i) {
      Tensor img = read_msrnt((image_dir / image_file(i)).string());
      if (img.rank() != 3) throw std::runtime_error("dataset: image " + image_file(i) + " is not W x H x C");
      if (i == 0)
        expect = img.shape();
      else if (img.shape() != expect)
        throw std::runtime_error("dataset: image " + image_file(i) + " shape " + shape_str(img.shape()) +
                                 " differs from " + shape_str(expect));
      data.images.push_back(std::move(img));
    }
  }
  if (fs::exists(feat_dir)) {
    int64_t branches = 0;
    while (fs::exists(feat_dir / ("000000.b" + std::to_string(branches) + ".msrnt"))) ++branches;
    if (branches == 0) throw std::runtime_error("dataset: features/ present but no 000000.b0.msrnt in " + dir);
    data.features.resize(static_cast<size_t>(count));
    for (int64_t i = 0; i < count; ++i) {
      for (int64_t b = 0; b < branches; ++b) {
        std::string name = image_file(i);
        name.insert(name.size() - 6, ".b" + std::to_string(b));
        data.features[static_cast<size_t>(i)].push_back(read_msrnt((feat_dir / name).string()));
      }
    }
  }
  return data;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double train_fraction, uint64_t seed) {
  if (train_fraction <= 0.0 || train_fraction >= 1.0)
    throw std::invalid_argument("split: train fraction must be in (0,1)");
  int64_t count = data.count();
  if (count < 2) throw std::invalid_argument("split: need at least 2 images");
  std::vector<int64_t> order(static_cast<size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::derive(seed, "split");
  rng.shuffle(order);
  int64_t train_count = std::clamp<int64_t>(static_cast<int64_t>(std::llround(train_fraction * count)), 1, count - 1);

  int64_t n = data.y.dim(1);
  auto has_label = [&](int64_t image, int64_t label) { return data.y[image * n + label] != 0.0; };
  for (int64_t label = 0; label < n; ++label) {
    bool in_train = false;
    for (int64_t i = 0; i < train_count && !in_train; ++i) in_train = has_label(order[static_cast<size_t>(i)], label);
    if (in_train) continue;
    for (int64_t i = train_count; i < count; ++i) {
      if (has_label(order[static_cast<size_t>(i)], label)) {
        std::rotate(order.begin() + train_count, order.begin() + i, order.begin() + i + 1);
        ++train_count;
        break;
      }
    }
  }

  auto take = [&](int64_t begin, int64_t end) {
    Dataset out;
    out.labels = data.labels;
    out.group_of = data.group_of;
    out.y = Tensor({end - begin, n});
    for (int64_t i = begin; i < end; ++i) {
      int64_t src = order[static_cast<size_t>(i)];
      out.images.push_back(data.images[static_cast<size_t>(src)]);
      if (!data.features.empty()) out.features.push_back(data.features[static_cast<size_t>(src)]);
      for (int64_t c = 0; c < n; ++c) out.y[(i - begin) * n + c] = data.y[src * n + c];
    }
    return out;
  };
  return {take(0, train_count), take(train_count, count)};
}

}  // namespace msrn
