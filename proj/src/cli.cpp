#include "owss/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <sstream>

#include "owss/gradsuite.hpp"
#include "owss/io.hpp"
#include "owss/pipeline.hpp"
#include "owss/synthdata.hpp"

namespace owss {

namespace {

struct CommonArgs {
  std::string config_path;
  std::string checkpoint_path;
  std::string dataset_override;
  std::string out_override;
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg =
      args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  if (!args.dataset_override.empty()) cfg.dataset_dir = args.dataset_override;
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  return cfg;
}

std::string default_checkpoint(const RunConfig& cfg) {
  return cfg.out_dir + "/checkpoint.owss";
}

EvalOptions eval_options(const RunConfig& cfg) {
  EvalOptions opt;
  opt.strategy = parse_strategy(cfg.strategy);
  opt.use_cont = cfg.use_cont;
  opt.delta = cfg.delta;
  opt.xi = cfg.xi;
  opt.t_th = cfg.t_th;
  opt.eta = cfg.eta;
  opt.zeta = cfg.zeta;
  opt.rho = cfg.rho;
  return opt;
}

ModelConfig model_config(const RunConfig& cfg) {
  ModelConfig mc;
  mc.num_classes = cfg.num_classes;
  mc.input_channels = 3;
  mc.base_width = cfg.base_width;
  mc.depth = 2;
  mc.seed = cfg.seed;
  return mc;
}

TrainConfig train_config(const RunConfig& cfg) {
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch = cfg.batch;
  tc.lr = cfg.lr;
  tc.weights = {cfg.w1, cfg.w2, cfg.w3, cfg.w4, cfg.tau, cfg.xi};
  tc.aug_scale = cfg.aug_scale;
  tc.aug_crop = cfg.aug_crop;
  tc.aug_flip = cfg.aug_flip;
  tc.seed = cfg.seed;
  tc.use_cont = cfg.use_cont;
  return tc;
}

void append_metrics(std::ostringstream& os, const SplitMetrics& m) {
  os << "aupr=" << format_double(m.aupr) << "\n";
  os << "fpr95=" << format_double(m.fpr95) << "\n";
  os << "miou=" << format_double(m.miou_known) << "\n";
  os << "prevalence=" << format_double(m.prevalence) << "\n";
  os << "eval_pixels=" << m.eval_pixels << "\n";
  os << "frac_known_in_tube="
     << (m.frac_known_in_tube ? format_double(*m.frac_known_in_tube) : "absent")
     << "\n";
  os << "frac_unknown_below="
     << (m.frac_unknown_below ? format_double(*m.frac_unknown_below) : "absent")
     << "\n";
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

int cmd_gen(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty())
    throw UsageError("gen: dataset_dir must be set (config or --dataset)");
  const SceneSpec spec =
      default_scene_spec(cfg.num_classes, cfg.height, cfg.width, cfg.seed);
  ensure_dir(cfg.dataset_dir);
  generate(spec, cfg.scenes, SplitKind::Train, cfg.dataset_dir);
  generate(spec, cfg.val_scenes, SplitKind::Val, cfg.dataset_dir);
  generate(spec, cfg.test_scenes, SplitKind::Test, cfg.dataset_dir);
  write_classes(cfg.dataset_dir + "/classes.txt", manifest_for(spec));
  std::cout << "generated " << cfg.scenes << "/" << cfg.val_scenes << "/"
            << cfg.test_scenes << " train/val/test scenes under "
            << cfg.dataset_dir << "\n";
  return 0;
}

template <class S>
int cmd_train_typed(const RunConfig& cfg) {
  const SegSplit train_split = load_split(cfg.dataset_dir, "train");
  Model<S> model(model_config(cfg));
  ensure_dir(cfg.out_dir);

  std::function<void(int, const TrainResult&)> on_epoch;
  if (cfg.checkpoint_every > 0) {
    on_epoch = [&](int epoch, const TrainResult& partial) {
      if (epoch % cfg.checkpoint_every != 0) return;
      char name[64];
      std::snprintf(name, sizeof name, "/checkpoint_epoch_%04d.owss", epoch);
      save_checkpoint(cfg.out_dir + name,
                      make_checkpoint(model, partial.sem_stats,
                                      partial.cont_stats,
                                      static_cast<uint32_t>(epoch)));
    };
  }

  const TrainResult res = train(model, train_split, train_config(cfg), on_epoch);

  const std::string ckpt_path = default_checkpoint(cfg);
  save_checkpoint(ckpt_path,
                  make_checkpoint(model, res.sem_stats, res.cont_stats,
                                  static_cast<uint32_t>(res.completed_epochs)));

  std::ostringstream hist;
  hist << "epoch\tce\tfeat\tcont\tobj\ttotal\tlr\n";
  for (const auto& r : res.history)
    hist << r.epoch << "\t" << format_double(r.ce) << "\t"
         << format_double(r.feat) << "\t" << format_double(r.cont) << "\t"
         << format_double(r.obj) << "\t" << format_double(r.total) << "\t"
         << format_double(r.lr_last) << "\n";
  write_text_file(cfg.out_dir + "/history.txt", hist.str());

  std::ostringstream os;
  os << config_to_text(cfg);
  os << "checkpoint_hash=" << hash_file_hex(ckpt_path) << "\n";
  os << "completed_epochs=" << res.completed_epochs << "\n";
  if (!res.history.empty())
    os << "final_total_loss=" << format_double(res.history.back().total) << "\n";
  write_text_file(cfg.out_dir + "/results_train.txt", os.str());

  if (res.nan_abort) {
    std::cerr << "train: non-finite loss at epoch "
              << res.completed_epochs + 1
              << "; last-good checkpoint retained at " << ckpt_path << "\n";
    return 3;
  }
  std::cout << "trained " << res.completed_epochs << " epochs; checkpoint at "
            << ckpt_path << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw UsageError("train: dataset_dir and out_dir must be set");
  return cfg.dtype == Dtype::Float64 ? cmd_train_typed<double>(cfg)
                                     : cmd_train_typed<float>(cfg);
}

template <class S>
int cmd_eval_typed(const RunConfig& cfg, const Checkpoint& ckpt,
                   const std::string& ckpt_path) {
  Model<S> model(ckpt.model);
  restore_model(ckpt, model);
  const SegSplit test_split = load_split(cfg.dataset_dir, "test");
  const GaussianBank bank = GaussianBank::from_stats(ckpt.sem_stats);
  for (int c = 0; c < ckpt.sem_stats.num_classes(); ++c)
    if (!ckpt.sem_stats.has_snapshot(c))
      std::cerr << "warning: class " << c + 1
                << " has no statistics; excluded from Gaussian scoring\n";
  const EvalOptions opt = eval_options(cfg);

  std::vector<SceneEval> scenes;
  const SplitMetrics m = eval_split(model, test_split, bank, opt, &scenes);

  ensure_dir(cfg.out_dir + "/scores");
  ensure_dir(cfg.out_dir + "/masks");
  for (size_t i = 0; i < scenes.size(); ++i) {
    std::vector<float> fused(scenes[i].s_fused.begin(), scenes[i].s_fused.end());
    char name[48];
    std::snprintf(name, sizeof name, "/scores/scene_%05d.owfm",
                  static_cast<int>(i));
    write_owfm(cfg.out_dir + name, test_split.height, test_split.width, fused);
    std::vector<uint8_t> mask(scenes[i].unknown_mask.size());
    for (size_t p = 0; p < mask.size(); ++p)
      mask[p] = scenes[i].unknown_mask[p] ? 255 : 0;
    std::snprintf(name, sizeof name, "/masks/scene_%05d.pgm",
                  static_cast<int>(i));
    write_pgm(cfg.out_dir + name, test_split.height, test_split.width, mask);
  }

  std::ostringstream os;
  os << config_to_text(cfg);
  os << "checkpoint_hash=" << hash_file_hex(ckpt_path) << "\n";
  append_metrics(os, m);
  write_text_file(cfg.out_dir + "/results_eval.txt", os.str());

  std::cout << "strategy " << cfg.strategy
            << (opt.use_cont ? " + contrastive score" : " (semantic only)")
            << " over " << test_split.scenes.size() << " scenes\n"
            << "  AUPR  " << m.aupr << "\n  FPR95 " << m.fpr95 << "\n  mIoU  "
            << m.miou_known << "\n  unknown prevalence " << m.prevalence
            << "\n";
  return 0;
}

Checkpoint load_ckpt_for(const RunConfig& cfg, const CommonArgs& args,
                         std::string& path_out) {
  path_out = args.checkpoint_path.empty() ? default_checkpoint(cfg)
                                          : args.checkpoint_path;
  return load_checkpoint(path_out);
}

int cmd_eval(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw UsageError("eval: dataset_dir and out_dir must be set");
  std::string path;
  const Checkpoint ckpt = load_ckpt_for(cfg, args, path);
  return ckpt.model_dtype == 1 ? cmd_eval_typed<double>(cfg, ckpt, path)
                               : cmd_eval_typed<float>(cfg, ckpt, path);
}

template <class S>
int cmd_discover_typed(const RunConfig& cfg, const Checkpoint& ckpt,
                       const std::string& ckpt_path) {
  Model<S> model(ckpt.model);
  restore_model(ckpt, model);
  const SegSplit test_split = load_split(cfg.dataset_dir, "test");
  const GaussianBank bank = GaussianBank::from_stats(ckpt.sem_stats);
  const EvalOptions opt = eval_options(cfg);

  const DiscoveryOutput disc = run_discovery(model, test_split, bank, opt);

  ensure_dir(cfg.out_dir + "/discovered");
  for (size_t i = 0; i < disc.per_scene_ids.size(); ++i) {
    std::vector<uint8_t> ids(disc.per_scene_ids[i].size());
    for (size_t p = 0; p < ids.size(); ++p)
      ids[p] = static_cast<uint8_t>(std::min(disc.per_scene_ids[i][p], 254));
    char name[48];
    std::snprintf(name, sizeof name, "/discovered/scene_%05d.pgm",
                  static_cast<int>(i));
    write_pgm(cfg.out_dir + name, test_split.height, test_split.width, ids);
  }

  std::ostringstream os;
  os << config_to_text(cfg);
  os << "checkpoint_hash=" << hash_file_hex(ckpt_path) << "\n";
  os << "n_discovered=" << disc.num_discovered << "\n";
  for (const auto& [gt, hit] : disc.match.best)
    os << "class_" << gt << "_best_id=" << hit.first << "\n"
       << "class_" << gt << "_iou=" << format_double(hit.second) << "\n";
  write_text_file(cfg.out_dir + "/results_discover.txt", os.str());

  std::cout << "discovered " << disc.num_discovered
            << " unknown classes (eta=" << cfg.eta << ")\n";
  for (const auto& [gt, hit] : disc.match.best)
    std::cout << "  gt class " << gt << " -> discovered " << hit.first
              << " IoU " << hit.second << "\n";
  return 0;
}

int cmd_discover(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw UsageError("discover: dataset_dir and out_dir must be set");
  std::string path;
  const Checkpoint ckpt = load_ckpt_for(cfg, args, path);
  return ckpt.model_dtype == 1 ? cmd_discover_typed<double>(cfg, ckpt, path)
                               : cmd_discover_typed<float>(cfg, ckpt, path);
}

template <class S>
int cmd_similarity_typed(const RunConfig& cfg, const Checkpoint& ckpt,
                         const std::string& ckpt_path) {
  Model<S> model(ckpt.model);
  restore_model(ckpt, model);
  const SegSplit test_split = load_split(cfg.dataset_dir, "test");
  const ClassManifest manifest = read_classes(cfg.dataset_dir + "/classes.txt");
  const GaussianBank bank = GaussianBank::from_stats(ckpt.sem_stats);
  const EvalOptions opt = eval_options(cfg);

  const SimilarityOutput sim =
      run_similarity(model, test_split, bank, manifest, opt);

  ensure_dir(cfg.out_dir + "/similarity");
  for (size_t i = 0; i < sim.per_scene_similar.size(); ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "/similarity/scene_%05d.pgm",
                  static_cast<int>(i));
    write_pgm(cfg.out_dir + name, test_split.height, test_split.width,
              sim.per_scene_similar[i]);
  }

  std::ostringstream os;
  os << config_to_text(cfg);
  os << "checkpoint_hash=" << hash_file_hex(ckpt_path) << "\n";
  for (const auto& [cls, n] : sim.pixels) {
    os << "class_" << cls << "_pixels=" << n << "\n";
    os << "class_" << cls
       << "_gauss_acc=" << format_double(sim.gauss_accuracy(cls)) << "\n";
    os << "class_" << cls << "_ma_acc=" << format_double(sim.ma_accuracy(cls))
       << "\n";
  }
  write_text_file(cfg.out_dir + "/results_similarity.txt", os.str());

  std::cout << "class similarity over unknown-flagged pixels:\n";
  for (const auto& [cls, n] : sim.pixels) {
    const ClassInfo* info = manifest.find(cls);
    std::cout << "  " << (info ? info->name : std::to_string(cls)) << ": gauss "
              << sim.gauss_accuracy(cls) << "  max-activation "
              << sim.ma_accuracy(cls) << "  (" << n << " px)\n";
  }
  return 0;
}

int cmd_similarity(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw UsageError("similarity: dataset_dir and out_dir must be set");
  std::string path;
  const Checkpoint ckpt = load_ckpt_for(cfg, args, path);
  return ckpt.model_dtype == 1 ? cmd_similarity_typed<double>(cfg, ckpt, path)
                               : cmd_similarity_typed<float>(cfg, ckpt, path);
}

int cmd_gradcheck(int instances, uint64_t seed, bool corrupt) {
  const GradSuiteResult res = run_gradient_suite(instances, seed, corrupt);
  std::cout << format_gradient_report(res);
  return res.pass ? 0 : 3;
}

template <class S>
int cmd_ablate_typed(const RunConfig& cfg) {
  const SegSplit train_split = load_split(cfg.dataset_dir, "train");
  const SegSplit test_split = load_split(cfg.dataset_dir, "test");
  ensure_dir(cfg.out_dir);

  std::ostringstream table, results;
  results << config_to_text(cfg);
  table << "strategy  cont   AUPR     FPR95    mIoU\n";
  for (const bool use_cont : {false, true}) {
    RunConfig variant = cfg;
    variant.use_cont = use_cont;
    Model<S> model(model_config(variant));
    const TrainResult res = train(model, train_split, train_config(variant));
    if (res.nan_abort)
      throw NumericError("ablate: training diverged (use_cont=" +
                         std::to_string(use_cont) + ")");
    const GaussianBank bank = GaussianBank::from_stats(res.sem_stats);
    for (const char* strat : {"Th", "MA", "Dmu", "Gs"}) {
      EvalOptions opt = eval_options(variant);
      opt.strategy = parse_strategy(strat);
      opt.use_cont = use_cont;
      const SplitMetrics m = eval_split(model, test_split, bank, opt);
      char row[128];
      std::snprintf(row, sizeof row, "%-9s %-5s  %.4f   %.4f   %.4f\n", strat,
                    use_cont ? "yes" : "no", m.aupr, m.fpr95, m.miou_known);
      table << row;
      results << "aupr_" << strat << (use_cont ? "_cont" : "_nocont") << "="
              << format_double(m.aupr) << "\n";
      results << "fpr95_" << strat << (use_cont ? "_cont" : "_nocont") << "="
              << format_double(m.fpr95) << "\n";
    }
  }
  write_text_file(cfg.out_dir + "/results_ablate.txt",
                  results.str() + table.str());
  std::cout << table.str();
  return 0;
}

int cmd_ablate(const CommonArgs& args) {
  const RunConfig cfg = resolve_config(args);
  if (cfg.dataset_dir.empty() || cfg.out_dir.empty())
    throw UsageError("ablate: dataset_dir and out_dir must be set");
  return cfg.dtype == Dtype::Float64 ? cmd_ablate_typed<double>(cfg)
                                     : cmd_ablate_typed<float>(cfg);
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{
      "open-world semantic segmentation on synthetic scenes: dual-decoder "
      "training, Gaussian unknown scoring, novel class discovery"};
  app.require_subcommand(1);

  CommonArgs args;
  int gc_instances = 100;
  uint64_t gc_seed = 7;
  bool gc_corrupt = false;

  auto add_common = [&](CLI::App* sub, bool with_ckpt) {
    sub->add_option("-c,--config", args.config_path, "key=value config file");
    sub->add_option("--dataset", args.dataset_override,
                    "override dataset_dir");
    sub->add_option("--out", args.out_override, "override out_dir");
    if (with_ckpt)
      sub->add_option("--checkpoint", args.checkpoint_path,
                      "checkpoint path (default: <out_dir>/checkpoint.owss)");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen, false);
  CLI::App* train = app.add_subcommand("train", "train the dual-decoder model");
  add_common(train, false);
  CLI::App* eval =
      app.add_subcommand("eval", "anomaly segmentation over the test split");
  add_common(eval, true);
  CLI::App* discover =
      app.add_subcommand("discover", "novel class discovery over the test split");
  add_common(discover, true);
  CLI::App* similarity = app.add_subcommand(
      "similarity", "most-similar known class for unknown pixels");
  add_common(similarity, true);
  CLI::App* ablate = app.add_subcommand(
      "ablate", "strategy x contrastive-decoder grid on one dataset");
  add_common(ablate, false);
  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "finite-difference verification of all loss gradients");
  gradcheck->add_option("--instances", gc_instances, "instances per case");
  gradcheck->add_option("--seed", gc_seed, "suite seed");
  gradcheck
      ->add_flag("--corrupt", gc_corrupt,
                 "deliberately corrupt one backward rule (self-test)")
      ->group("");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen(args);
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_eval(args);
    if (discover->parsed()) return cmd_discover(args);
    if (similarity->parsed()) return cmd_similarity(args);
    if (ablate->parsed()) return cmd_ablate(args);
    if (gradcheck->parsed())
      return cmd_gradcheck(gc_instances, gc_seed, gc_corrupt);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace owss
