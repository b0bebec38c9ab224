// Command-line entry point: data generation, training, per-pair registration,
// completion export, and the experiment suites, glued together by JSON
// configs with flag overrides. Every command drops a manifest.json next to
// its outputs recording the effective config, seed and artifact list.

#include <latentalign/evalharness.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace lalign;

namespace {

constexpr const char* kVersion = "0.2.0";

std::string iso_timestamp() {
  std::time_t t = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
  return buf;
}

// Output paths resolve against LATENTALIGN_OUTPUT_ROOT when relative.
std::string resolve_out(const std::string& path) {
  const char* root = std::getenv("LATENTALIGN_OUTPUT_ROOT");
  if (root != nullptr && root[0] != '\0' && fs::path(path).is_relative())
    return (fs::path(root) / path).string();
  return path;
}

struct Manifest {
  std::string command;
  Json config;
  std::uint64_t master_seed = 0;
  std::string started_at;
  std::vector<std::string> artifacts;
  std::string status = "ok";
  std::string message;

  void write(const std::string& dir) const {
    fs::create_directories(dir);
    Json j;
    j["schema_version"] = 1;
    j["command"] = command;
    j["source_revision"] = kVersion;
    j["master_seed"] = master_seed;
    j["started_at"] = started_at;
    j["finished_at"] = iso_timestamp();
    j["config"] = config;
    j["artifacts"] = artifacts;
    j["status"] = status;
    if (!message.empty()) j["message"] = message;
    std::ofstream out(dir + "/manifest.json");
    out << j.dump(2) << '\n';
  }
};

Json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return Json::parse(in);
}

double parse_sigma(const std::string& s) {
  if (s == "inf" || s == "infinity") return std::numeric_limits<double>::infinity();
  return std::stod(s);
}

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

Json transform_to_json(const RigidTransform& t) {
  Json j;
  const double rad2deg = 180.0 / M_PI;
  j["angles_deg"] = {t.angles.x() * rad2deg, t.angles.y() * rad2deg,
                     t.angles.z() * rad2deg};
  j["translation"] = {t.translation.x(), t.translation.y(), t.translation.z()};
  return j;
}

void write_result_json(const std::string& path, const InferenceResult& res) {
  Json j = transform_to_json(res.transform);
  j["steps"] = res.steps;
  j["diverged"] = res.diverged;
  j["final_loss"] = res.final_total;
  j["best_restart"] = res.best_restart;
  j["latent"] = to_json(res.latent.values);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(2) << '\n';
}

// ---- generate ------------------------------------------------------------------

struct GenerateArgs {
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_generate(const GenerateArgs& args) {
  CorpusConfig cfg;
  if (!args.config_path.empty())
    cfg = corpus_config_from_json(load_json_file(args.config_path));
  if (args.seed_set) cfg.seed = args.seed;

  const std::string out = resolve_out(args.out_dir);
  Manifest man;
  man.command = "generate";
  man.config = corpus_config_to_json(cfg);
  man.master_seed = cfg.seed;
  man.started_at = iso_timestamp();

  std::vector<CorpusPair> pairs = generate_corpus(cfg);
  write_corpus(out, cfg, pairs);
  for (const CorpusPair& cp : pairs) man.artifacts.push_back(out + "/" + cp.name);
  man.artifacts.push_back(out + "/config.json");
  man.write(out);
  std::cout << "wrote " << pairs.size() << " pairs to " << out << "\n";
  return 0;
}

// ---- train ---------------------------------------------------------------------

struct TrainArgs {
  std::string corpus_dir, out_path, config_path, log_path, resume_path;
  TrainConfig overrides;
  // flags that were explicitly set
  bool has_lambda = false, has_epochs = false, has_seed = false, has_batch = false,
       has_lr_net = false, has_lr_latent = false, has_sigma = false,
       has_prior = false, has_sdf_batch = false, has_comp_width = false,
       has_comp_layers = false, has_wd = false, has_ckpt_every = false;
  std::string sigma_str;
  bool batch_norm = false, dropout = false, use_partial_targets = false;
};

int cmd_train(const TrainArgs& args) {
  TrainConfig cfg;
  if (!args.config_path.empty())
    cfg = train_config_from_json(load_json_file(args.config_path));
  if (args.has_lambda) cfg.lambda = args.overrides.lambda;
  if (args.has_epochs) cfg.epochs = args.overrides.epochs;
  if (args.has_seed) cfg.seed = args.overrides.seed;
  if (args.has_batch) cfg.batch_size = args.overrides.batch_size;
  if (args.has_lr_net) cfg.lr_net = args.overrides.lr_net;
  if (args.has_lr_latent) cfg.lr_latent = args.overrides.lr_latent;
  if (args.has_sigma) cfg.sigma_t = parse_sigma(args.sigma_str);
  if (args.has_prior) cfg.prior_weight = args.overrides.prior_weight;
  if (args.has_sdf_batch) cfg.sdf_batch = args.overrides.sdf_batch;
  if (args.has_comp_width) cfg.comp_width = args.overrides.comp_width;
  if (args.has_comp_layers) cfg.comp_layers = args.overrides.comp_layers;
  if (args.has_wd) cfg.weight_decay = args.overrides.weight_decay;
  if (args.has_ckpt_every) cfg.checkpoint_every = args.overrides.checkpoint_every;
  if (args.batch_norm) cfg.batch_norm = true;
  if (args.dropout) cfg.dropout = true;
  if (args.use_partial_targets) cfg.use_full_targets = false;

  const std::string out = resolve_out(args.out_path);
  const std::string out_dir = fs::path(out).parent_path().string().empty()
                                  ? "."
                                  : fs::path(out).parent_path().string();
  Manifest man;
  man.command = "train";
  man.master_seed = cfg.seed;
  man.started_at = iso_timestamp();

  std::vector<CorpusPair> corpus = read_corpus(args.corpus_dir);
  std::vector<TrainLogRow> log;

  CheckpointFn periodic = nullptr;
  if (cfg.checkpoint_every > 0) {
    periodic = [&out](const TrainedModel& m, long long step) {
      save_checkpoint(out + ".step" + std::to_string(step), m);
    };
  }

  TrainedModel model;
  if (!args.resume_path.empty()) {
    model = load_checkpoint(args.resume_path);
    man.config = train_config_to_json(model.cfg);
    train_more(model, corpus, args.has_epochs ? args.overrides.epochs : cfg.epochs, &log,
               periodic);
  } else {
    man.config = train_config_to_json(cfg);
    model = train_joint(corpus, cfg, &log, periodic);
  }

  save_checkpoint(out, model);
  man.artifacts.push_back(out);
  std::string log_path = args.log_path.empty() ? out + ".log.csv" : resolve_out(args.log_path);
  write_train_log(log_path, log);
  man.artifacts.push_back(log_path);
  if (model.aborted) {
    man.status = "aborted";
    man.message = model.abort_reason;
  }
  man.write(out_dir);
  std::cout << (model.aborted ? "training ABORTED: " + model.abort_reason
                              : "training complete")
            << " (step " << model.global_step << ", checkpoint " << out << ")\n";
  return model.aborted ? 1 : 0;
}

// ---- register -------------------------------------------------------------------

struct RegisterArgs {
  std::string checkpoint, pair_dir, out_dir, snapshot_steps;
  int steps = -1;
  double lr = -1.0, lambda = -1.0;
  int restarts = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool two_step = false;
  std::string sigma_str;
};

int cmd_register(const RegisterArgs& args) {
  TrainedModel model = load_checkpoint(args.checkpoint);
  CorpusPair cp = read_pair_dir(args.pair_dir);

  InferOptions opt = InferOptions::from_train_config(model.cfg);
  if (args.steps >= 0) opt.steps = args.steps;
  if (args.lr > 0.0) opt.lr = args.lr;
  if (args.lambda >= 0.0) opt.lambda = args.lambda;
  if (args.restarts > 0) opt.restarts = args.restarts;
  if (args.seed_set) opt.seed = args.seed;
  if (!args.sigma_str.empty()) opt.sigma_t = parse_sigma(args.sigma_str);
  if (!args.snapshot_steps.empty()) opt.snapshot_steps = parse_int_list(args.snapshot_steps);

  const std::string out = resolve_out(args.out_dir);
  fs::create_directories(out);
  Manifest man;
  man.command = "register";
  man.master_seed = opt.seed;
  man.started_at = iso_timestamp();
  {
    Json c;
    c["checkpoint"] = args.checkpoint;
    c["pair"] = args.pair_dir;
    c["steps"] = opt.steps;
    c["lr"] = opt.lr;
    c["lambda"] = opt.lambda;
    c["restarts"] = opt.restarts;
    c["two_step"] = args.two_step;
    man.config = c;
  }

  InferenceResult res =
      args.two_step ? infer_two_step(model, cp, opt) : infer_pair(model, cp, opt);

  write_result_json(out + "/result.json", res);
  write_trajectory_csv(out + "/trajectory.csv", res.trajectory);
  PointSet aligned = apply_transform(cp.pair.source, res.transform);
  write_ply(out + "/aligned.ply", aligned);
  man.artifacts = {out + "/result.json", out + "/trajectory.csv", out + "/aligned.ply"};
  for (const auto& [step, t] : res.snapshots) {
    PointSet snap = apply_transform(cp.pair.source, t);
    std::string p = out + "/aligned_step" + std::to_string(step) + ".ply";
    write_ply(p, snap);
    man.artifacts.push_back(p);
  }
  if (res.diverged) {
    man.status = "diverged";
    man.message = "inference flagged non-finite loss";
  }
  man.write(out);
  std::cout << "registered " << cp.name << ": final loss " << res.final_total
            << (res.diverged ? " (diverged)" : "") << "\n";
  return 0;
}

// ---- complete -------------------------------------------------------------------

struct CompleteArgs {
  std::string checkpoint, pair_dir, result_json, train_latent, out_path;
  int grid_res = -1;
  double iso_eps = -1.0;
  int steps = -1;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

int cmd_complete(const CompleteArgs& args) {
  TrainedModel model = load_checkpoint(args.checkpoint);
  GridConfig grid;
  if (args.grid_res > 0) grid.resolution = args.grid_res;
  if (args.iso_eps > 0.0) grid.iso_eps = args.iso_eps;

  LatentCode z;
  if (!args.train_latent.empty()) {
    const LatentCode* found = model.find_latent(args.train_latent);
    if (found == nullptr)
      throw std::runtime_error("no trained latent named " + args.train_latent);
    z = *found;
  } else if (!args.result_json.empty()) {
    Json j = load_json_file(args.result_json);
    z.values = vector_from_json(j.at("latent"));
    z.shape_id = "result";
    check_latent(z);
  } else if (!args.pair_dir.empty()) {
    CorpusPair cp = read_pair_dir(args.pair_dir);
    InferOptions opt = InferOptions::from_train_config(model.cfg);
    if (args.steps >= 0) opt.steps = args.steps;
    if (args.seed_set) opt.seed = args.seed;
    z = infer_pair(model, cp, opt).latent;
  } else {
    throw std::runtime_error("complete: need --train-latent, --result or --pair");
  }

  const std::string out = resolve_out(args.out_path);
  PointSet completed = extract_completed_points(model.completion, z, grid);
  if (completed.empty())
    std::cerr << "warning: extraction produced an empty point set\n";
  write_ply(out, completed);
  std::cout << "wrote " << completed.size() << " completed points to " << out << "\n";
  return 0;
}

// ---- eval -----------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, baseline_checkpoint, corpus_dir, experiment = "clean", out_dir;
  bool include_icp = false, oracle_stub = false;
  int threads = 1;
  bool reference = false;
  int steps = -1;
  int restarts = -1;
  std::uint64_t eval_seed = 0;
  bool eval_seed_set = false;
};

int cmd_eval(const EvalArgs& args) {
  ExperimentKind kind = experiment_from_name(args.experiment);

  TrainedModel model, baseline;
  bool have_model = false, have_baseline = false;
  if (!args.checkpoint.empty()) {
    model = load_checkpoint(args.checkpoint);
    have_model = true;
  }
  if (!args.baseline_checkpoint.empty()) {
    baseline = load_checkpoint(args.baseline_checkpoint);
    have_baseline = true;
  }
  if (!have_model && !args.oracle_stub)
    throw std::runtime_error("eval: need --checkpoint (or --oracle-stub)");

  // The evaluation corpus mirrors the training corpus protocol with fresh
  // transforms and partial-target SDF samples.
  CorpusConfig cc = corpus_config_from_json(load_json_file(args.corpus_dir + "/config.json"));
  if (cc.shape_seed == 0) cc.shape_seed = cc.seed;  // keep the same shapes
  cc.seed = args.eval_seed_set ? args.eval_seed : mix_seed(cc.seed, 0xe7a1ull);
  cc.sdf_from = "partial";

  ExperimentConfig ecfg;
  ecfg.eval_corpus = cc;
  ecfg.infer = have_model ? InferOptions::from_train_config(model.cfg) : InferOptions{};
  if (args.steps >= 0) ecfg.infer.steps = args.steps;
  if (args.restarts > 0) ecfg.infer.restarts = args.restarts;
  ecfg.include_icp = args.include_icp;
  ecfg.oracle_stub = args.oracle_stub;
  ecfg.threads = args.reference ? 1 : std::max(1, args.threads);

  const std::string out = resolve_out(args.out_dir);
  fs::create_directories(out);
  Manifest man;
  man.command = "eval";
  man.master_seed = cc.seed;
  man.started_at = iso_timestamp();
  {
    Json c;
    c["experiment"] = args.experiment;
    c["checkpoint"] = args.checkpoint;
    c["baseline_checkpoint"] = args.baseline_checkpoint;
    c["corpus"] = corpus_config_to_json(cc);
    c["steps"] = ecfg.infer.steps;
    c["restarts"] = ecfg.infer.restarts;
    c["threads"] = ecfg.threads;
    c["oracle_stub"] = args.oracle_stub;
    man.config = c;
  }

  std::vector<ExperimentRow> rows =
      run_experiment(kind, have_model ? &model : nullptr,
                     have_baseline ? &baseline : nullptr, ecfg);

  write_report_csv(out + "/report.csv", rows);
  write_per_pair_csv(out + "/per_pair.csv", rows);
  man.artifacts = {out + "/report.csv", out + "/per_pair.csv"};
  man.write(out);
  print_report_table(std::cout, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint shape completion and partial point-set registration via "
               "shared latent codes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  GenerateArgs gen;
  CLI::App* sgen = app.add_subcommand("generate", "Generate a synthetic pair corpus");
  sgen->add_option("--config", gen.config_path, "Corpus config JSON");
  sgen->add_option("--out", gen.out_dir, "Output corpus directory")->required();
  sgen->add_option("--seed", gen.seed, "Master seed override")
      ->each([&](const std::string&) { gen.seed_set = true; });

  TrainArgs tr;
  CLI::App* strain = app.add_subcommand("train", "Train the joint model on a corpus");
  strain->add_option("--corpus", tr.corpus_dir, "Corpus directory")->required();
  strain->add_option("--out", tr.out_path, "Checkpoint output path")->required();
  strain->add_option("--config", tr.config_path, "Training config JSON");
  strain->add_option("--log", tr.log_path, "Training log CSV path");
  strain->add_option("--resume", tr.resume_path, "Checkpoint to resume from");
  strain->add_option("--lambda", tr.overrides.lambda, "Completion weight")
      ->each([&](const std::string&) { tr.has_lambda = true; });
  strain->add_option("--epochs", tr.overrides.epochs, "Training epochs")
      ->each([&](const std::string&) { tr.has_epochs = true; });
  strain->add_option("--seed", tr.overrides.seed, "Training seed")
      ->each([&](const std::string&) { tr.has_seed = true; });
  strain->add_option("--batch-size", tr.overrides.batch_size, "Pairs per step")
      ->each([&](const std::string&) { tr.has_batch = true; });
  strain->add_option("--lr-net", tr.overrides.lr_net, "Network learning rate")
      ->each([&](const std::string&) { tr.has_lr_net = true; });
  strain->add_option("--lr-latent", tr.overrides.lr_latent, "Latent learning rate")
      ->each([&](const std::string&) { tr.has_lr_latent = true; });
  strain->add_option("--sigma-t", tr.sigma_str, "Chamfer clip (number or 'inf')")
      ->each([&](const std::string&) { tr.has_sigma = true; });
  strain->add_option("--prior-weight", tr.overrides.prior_weight, "Latent prior weight")
      ->each([&](const std::string&) { tr.has_prior = true; });
  strain->add_option("--sdf-batch", tr.overrides.sdf_batch, "SDF samples per step")
      ->each([&](const std::string&) { tr.has_sdf_batch = true; });
  strain->add_option("--comp-width", tr.overrides.comp_width, "Completion net width")
      ->each([&](const std::string&) { tr.has_comp_width = true; });
  strain->add_option("--comp-layers", tr.overrides.comp_layers, "Completion net layers")
      ->each([&](const std::string&) { tr.has_comp_layers = true; });
  strain->add_option("--weight-decay", tr.overrides.weight_decay, "Decoupled weight decay")
      ->each([&](const std::string&) { tr.has_wd = true; });
  strain->add_option("--checkpoint-every", tr.overrides.checkpoint_every,
                     "Periodic checkpoint interval (steps)")
      ->each([&](const std::string&) { tr.has_ckpt_every = true; });
  strain->add_flag("--batch-norm", tr.batch_norm, "Enable batch normalization");
  strain->add_flag("--dropout", tr.dropout, "Enable dropout");
  strain->add_flag("--use-partial-targets", tr.use_partial_targets,
                   "Train against partial targets instead of full");

  RegisterArgs rg;
  CLI::App* sreg = app.add_subcommand("register", "Optimize a latent code for one pair");
  sreg->add_option("--checkpoint", rg.checkpoint, "Trained checkpoint")->required();
  sreg->add_option("--pair", rg.pair_dir, "Pair directory")->required();
  sreg->add_option("--out", rg.out_dir, "Output directory")->required();
  sreg->add_option("--steps", rg.steps, "Optimization steps");
  sreg->add_option("--lr", rg.lr, "Latent learning rate");
  sreg->add_option("--lambda", rg.lambda, "Completion weight");
  sreg->add_option("--restarts", rg.restarts, "Random restarts");
  sreg->add_option("--sigma-t", rg.sigma_str, "Chamfer clip (number or 'inf')");
  sreg->add_option("--seed", rg.seed, "Inference seed")
      ->each([&](const std::string&) { rg.seed_set = true; });
  sreg->add_option("--snapshot-steps", rg.snapshot_steps,
                   "Comma-separated steps at which to emit aligned clouds");
  sreg->add_flag("--two-step", rg.two_step, "Use the two-step variant");

  CompleteArgs cm;
  CLI::App* scomp = app.add_subcommand("complete", "Export a completed shape as PLY");
  scomp->add_option("--checkpoint", cm.checkpoint, "Trained checkpoint")->required();
  scomp->add_option("--pair", cm.pair_dir, "Pair directory (runs inference)");
  scomp->add_option("--result", cm.result_json, "result.json from register");
  scomp->add_option("--train-latent", cm.train_latent, "Trained latent id (pair name)");
  scomp->add_option("--out", cm.out_path, "Output PLY path")->required();
  scomp->add_option("--grid-res", cm.grid_res, "Extraction grid resolution");
  scomp->add_option("--iso-eps", cm.iso_eps, "Distance threshold for extraction");
  scomp->add_option("--steps", cm.steps, "Inference steps (with --pair)");
  scomp->add_option("--seed", cm.seed, "Inference seed (with --pair)")
      ->each([&](const std::string&) { cm.seed_set = true; });

  EvalArgs ev;
  CLI::App* seval = app.add_subcommand("eval", "Run an experiment suite");
  seval->add_option("--checkpoint", ev.checkpoint, "Trained checkpoint");
  seval->add_option("--baseline-checkpoint", ev.baseline_checkpoint,
                    "lambda=0 checkpoint (ablation)");
  seval->add_option("--corpus", ev.corpus_dir, "Training corpus directory (for its config)")
      ->required();
  seval->add_option("--experiment", ev.experiment,
                    "clean | gaussian_noise | missing_sweep | ablation_lambda0 | two_step");
  seval->add_option("--out", ev.out_dir, "Report output directory")->required();
  seval->add_option("--threads", ev.threads, "Worker threads for per-pair inference");
  seval->add_option("--steps", ev.steps, "Inference steps override");
  seval->add_option("--restarts", ev.restarts, "Restart count override");
  seval->add_option("--eval-seed", ev.eval_seed, "Evaluation corpus seed")
      ->each([&](const std::string&) { ev.eval_seed_set = true; });
  seval->add_flag("--baseline-icp,--icp", ev.include_icp, "Add an ICP baseline row");
  seval->add_flag("--oracle-stub", ev.oracle_stub,
                  "Use the ground-truth oracle stub (harness self-test)");
  seval->add_flag("--reference", ev.reference, "Single-threaded deterministic mode");

  CLI11_PARSE(app, argc, argv);

  try {
    if (sgen->parsed()) return cmd_generate(gen);
    if (strain->parsed()) return cmd_train(tr);
    if (sreg->parsed()) return cmd_register(rg);
    if (scomp->parsed()) return cmd_complete(cm);
    if (seval->parsed()) return cmd_eval(ev);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
