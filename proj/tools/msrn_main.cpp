#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "msrn/dataio.hpp"
#include "msrn/experiments.hpp"
#include "msrn/gradsuite.hpp"
#include "msrn/io.hpp"
#include "msrn/label_graph.hpp"
#include "msrn/metrics.hpp"
#include "msrn/model.hpp"
#include "msrn/trainer.hpp"

namespace {

using namespace msrn;

struct SynthArgs {
  std::string out;
  SynthConfig cfg;
};

struct TrainArgs {
  std::string data;
  std::string eval_data;
  std::string out;
  double tau = 0.0;
  std::string features;  // msrnt file; empty means random
  int64_t feature_dim = kDefaultFeatureDim;
  std::string variant = "full";
  ModelConfig model;
  TrainConfig train;
};

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  double threshold = 0.5;
};

struct GradcheckArgs {
  int instances = 20;
  double eps = 1e-5;
  double tol = 1e-4;
  uint64_t seed = 1;
};

struct AblateArgs {
  int table = 5;
  int threads = 0;
  std::string out;
  SynthConfig synth;
  ModelConfig model;
  TrainConfig train;
};

void add_train_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--lr", cfg.lr0, "Initial learning rate")->capture_default_str();
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum")->capture_default_str();
  cmd->add_option("--weight-decay", cfg.weight_decay, "L2 penalty on weight matrices")->capture_default_str();
  cmd->add_option("--epochs", cfg.epochs, "Training epochs")->capture_default_str();
  cmd->add_option("--decay-every", cfg.decay_every, "Epochs between learning rate drops")->capture_default_str();
  cmd->add_option("--decay-factor", cfg.decay_factor, "Learning rate drop factor")->capture_default_str();
  cmd->add_option("--batch", cfg.batch, "Batch size")->capture_default_str();
  cmd->add_option("--seed", cfg.seed, "Training seed")->capture_default_str();
  cmd->add_option("--eval-every", cfg.eval_every, "Epochs between evaluations, 0 = final only")
      ->capture_default_str();
}

void add_model_flags(CLI::App* cmd, ModelConfig& cfg, std::string& variant) {
  cmd->add_option("--groups", cfg.groups, "Group embedding count")->capture_default_str();
  cmd->add_option("--lambda", cfg.lambda, "Group loss weight")->capture_default_str();
  cmd->add_option("--branches", cfg.branches, "Backbone taps fed to attention")->capture_default_str();
  cmd->add_option("--embed-dim", cfg.embed_dim, "Embedding width")->capture_default_str();
  cmd->add_option("--gat-hidden", cfg.gat_hidden, "First attention layer width")->capture_default_str();
  cmd->add_option("--head-hidden", cfg.head_hidden, "Classifier hidden width")->capture_default_str();
  cmd->add_option("--widths", cfg.widths, "Backbone block channels")->delimiter(',')->capture_default_str();
  cmd->add_option("--variant", variant, "full, no-lge, label-e or group-e")
      ->check(CLI::IsMember({"full", "no-lge", "label-e", "group-e"}))
      ->capture_default_str();
}

nlohmann::json model_json(const ModelConfig& cfg) { return nlohmann::json::parse(model_config_to_json(cfg)); }
nlohmann::json train_json(const TrainConfig& cfg) { return nlohmann::json::parse(train_config_to_json(cfg)); }
nlohmann::json synth_json(const SynthConfig& cfg) { return nlohmann::json::parse(synth_config_to_json(cfg)); }

int run_synth(const SynthArgs& args) {
  args.cfg.validate();
  Dataset data = generate_synthetic(args.cfg);
  save_dataset(data, args.out);
  write_text((std::filesystem::path(args.out) / "synth.json").string(), synth_json(args.cfg).dump(2) + "\n");
  std::cout << "wrote " << data.count() << " images, " << data.y.dim(1) << " labels to " << args.out << "\n";
  return 0;
}

int run_train(TrainArgs& args) {
  args.model.variant = variant_from_name(args.variant);
  Dataset train_data = load_dataset(args.data);
  if (train_data.count() == 0) throw std::runtime_error("train: dataset " + args.data + " is empty");
  Dataset eval_data;
  if (!args.eval_data.empty()) eval_data = load_dataset(args.eval_data);

  args.model.labels = train_data.y.dim(1);
  if (!train_data.images.empty()) {
    args.model.image = train_data.images[0].dim(0);
    args.model.channels = train_data.images[0].dim(2);
  } else {
    // features-only dataset: recover the input side the pyramid implies
    const Tensor& shallowest = train_data.features[0].at(0);
    args.model.image = shallowest.dim(0) << (args.model.blocks() - args.model.branches + 1);
  }
  args.model.validate();
  args.train.validate();

  std::vector<std::string> warnings;
  Tensor a = build_cooccurrence_adjacency(train_data.y, args.tau, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  Tensor v = args.features.empty()
                 ? random_label_features(args.model.labels, args.feature_dim, args.train.seed)
                 : load_label_features(args.features, args.model.labels, args.feature_dim);
  Model model(args.model, LabelGraph::make(std::move(v), std::move(a)), args.train.seed);

  std::filesystem::create_directories(args.out);
  nlohmann::json run;
  run["command"] = "train";
  run["data"] = args.data;
  run["eval_data"] = args.eval_data;
  run["tau"] = args.tau;
  run["features"] = args.features.empty() ? "random" : args.features;
  run["feature_dim"] = args.feature_dim;
  run["model"] = model_json(args.model);
  run["train"] = train_json(args.train);
  write_text((std::filesystem::path(args.out) / "config.json").string(), run.dump(2) + "\n");

  FitResult result = fit(model, train_data, args.eval_data.empty() ? nullptr : &eval_data, args.train, args.out);
  const EpochRecord& last = result.history.back();
  std::cout << "final loss " << last.loss << " (l1 " << last.l1 << ", l2 " << last.l2 << ")\n";
  std::cout << "best mAP " << result.best_map << " at epoch " << result.best_epoch << "\n";
  std::cout << "run artifacts in " << args.out << "\n";
  return 0;
}

int run_eval(const EvalArgs& args) {
  Model model = Model::load(args.checkpoint);
  Dataset data = load_dataset(args.data);
  if (data.y.dim(1) != model.config().labels)
    throw std::runtime_error("eval: dataset has " + std::to_string(data.y.dim(1)) + " labels, checkpoint expects " +
                             std::to_string(model.config().labels));
  Tensor scores = data.features.empty() ? model.score_batch(data.image_ptrs())
                                        : model.score_features(data.feature_ptrs());
  std::vector<std::string> warnings;
  MetricsReport report = evaluate_all(scores, data.y, args.threshold, &warnings);
  for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
  std::string text = metrics_report_json(report);
  std::cout << text << "\n";
  if (!args.out.empty()) write_text(args.out, text + "\n");
  return 0;
}

int run_gradcheck(const GradcheckArgs& args) {
  GradSuiteResult result = run_gradcheck_suite(args.instances, args.eps, args.seed, &std::cout);
  std::cout << "overall max rel err " << result.max_rel_err << (result.passed(args.tol) ? " (pass)" : " (FAIL)")
            << "\n";
  return result.passed(args.tol) ? 0 : 1;
}

int run_ablate(AblateArgs& args, int seeds) {
  AblationConfig cfg;
  cfg.table = args.table;
  cfg.seeds = seeds;
  cfg.synth = args.synth;
  cfg.model = args.model;
  cfg.train = args.train;
  cfg.threads = args.threads;
  std::vector<AblationCell> cells = run_ablation(cfg, &std::cerr);
  nlohmann::json j = nlohmann::json::parse(ablation_json(cfg.table, cells));
  j["config"]["seeds"] = cfg.seeds;
  j["config"]["synth"] = synth_json(cfg.synth);
  j["config"]["model"] = model_json(cfg.model);
  j["config"]["train"] = train_json(cfg.train);
  std::string text = j.dump(2);
  if (args.out.empty())
    std::cout << text << "\n";
  else
    write_text(args.out, text + "\n");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic representation network for multi-label image classification"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic glyph dataset");
  synth_cmd->add_option("--out", synth.out, "Dataset directory")->required();
  synth_cmd->add_option("--labels", synth.cfg.labels, "Label count, at most 48")->capture_default_str();
  synth_cmd->add_option("--groups", synth.cfg.groups, "Co-occurrence group count")->capture_default_str();
  synth_cmd->add_option("--images", synth.cfg.images, "Image count")->capture_default_str();
  synth_cmd->add_option("--size", synth.cfg.size, "Image side length")->capture_default_str();
  synth_cmd->add_option("--p-base", synth.cfg.p_base, "Per-label base probability")->capture_default_str();
  synth_cmd->add_option("--beta", synth.cfg.beta, "Same-group co-occurrence boost")->capture_default_str();
  synth_cmd->add_option("--noise", synth.cfg.noise, "Background noise amplitude")->capture_default_str();
  synth_cmd->add_option("--seed", synth.cfg.seed, "Generation seed")->capture_default_str();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  train_cmd->add_option("--data", train.data, "Training dataset directory")->required();
  train_cmd->add_option("--eval-data", train.eval_data, "Held-out dataset directory");
  train_cmd->add_option("--out", train.out, "Run directory for config, history and checkpoint")->required();
  train_cmd->add_option("--tau", train.tau, "Adjacency threshold")->capture_default_str();
  train_cmd->add_option("--features", train.features, "Label feature file; omit for random features");
  train_cmd->add_option("--feature-dim", train.feature_dim, "Label feature width")->capture_default_str();
  add_model_flags(train_cmd, train.model, train.variant);
  add_train_flags(train_cmd, train.train);

  EvalArgs eval;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_cmd->add_option("--data", eval.data, "Dataset directory")->required();
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
  eval_cmd->add_option("--out", eval.out, "Also write the metrics JSON here");
  eval_cmd->add_option("--threshold", eval.threshold, "Binarization threshold")->capture_default_str();

  GradcheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every op and the full loss");
  grad_cmd->add_option("--instances", grad.instances, "Random instances per op")->capture_default_str();
  grad_cmd->add_option("--eps", grad.eps, "Probe step")->capture_default_str();
  grad_cmd->add_option("--tol", grad.tol, "Max relative error allowed")->capture_default_str();
  grad_cmd->add_option("--seed", grad.seed, "Suite seed")->capture_default_str();

  AblateArgs ablate;
  int ablate_seeds = 5;
  std::string ablate_variant = "full";
  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Run the variant or branch-count comparison");
  ablate_cmd->add_option("--table", ablate.table, "5 = variants, 6 = branch counts")
      ->check(CLI::IsMember({5, 6}))
      ->capture_default_str();
  ablate_cmd->add_option("--seeds", ablate_seeds, "Seed count")->capture_default_str();
  ablate_cmd->add_option("--out", ablate.out, "Output JSON file; omit for stdout");
  ablate_cmd->add_option("--threads", ablate.threads, "Worker threads, 0 = MSRN_THREADS or hardware")
      ->capture_default_str();
  ablate_cmd->add_option("--images", ablate.synth.images, "Generated pool size, split 50/50")->capture_default_str();
  ablate_cmd->add_option("--labels", ablate.synth.labels, "Label count")->capture_default_str();
  ablate_cmd->add_option("--label-groups", ablate.synth.groups, "Co-occurrence group count")->capture_default_str();
  ablate_cmd->add_option("--size", ablate.synth.size, "Image side length")->capture_default_str();
  ablate_cmd->add_option("--beta", ablate.synth.beta, "Same-group co-occurrence boost")->capture_default_str();
  ablate_cmd->add_option("--synth-seed", ablate.synth.seed, "Dataset seed base")->capture_default_str();
  add_model_flags(ablate_cmd, ablate.model, ablate_variant);
  add_train_flags(ablate_cmd, ablate.train);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (eval_cmd->parsed()) return run_eval(eval);
    if (grad_cmd->parsed()) return run_gradcheck(grad);
    if (ablate_cmd->parsed()) {
      ablate.model.labels = ablate.synth.labels;
      ablate.model.image = ablate.synth.size;
      ablate.model.variant = variant_from_name(ablate_variant);
      return run_ablate(ablate, ablate_seeds);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
