#pragma once

// Joint training over a corpus and per-pair latent optimization at inference
// time. Training minimizes mean_i [ L_reg(i) + lambda * L_com(i) ] over the
// two decoders and one latent code per target shape. Inference freezes the
// decoders, initializes a fresh code and runs Adam on the code alone; the
// optional two-step variant first fits the code on the completion loss, then
// aligns against the extracted reconstruction.

#include <latentalign/registration.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

struct TrainConfig {
  double lambda = 0.1;
  double sigma_t = kDefaultSigmaT;
  double prior_weight = kDefaultPriorWeight;  // the 1/sigma^2 on ||z||^2
  int epochs = 2000;
  int batch_size = 50;
  double lr_net = 1e-3;
  double lr_latent = 1e-3;
  double lr_comp = 0.0;  // completion decoder rate; 0 follows lr_net
  double weight_decay = 1e-5;
  std::uint64_t seed = 0;
  bool batch_norm = false;
  bool dropout = false;
  double dropout_rate = 0.2;
  int sdf_batch = 128;           // SDF samples per pair per step; 0 = all
  bool use_full_targets = true;  // training regime; evaluation uses partials
  int checkpoint_every = 0;

  // Training threshold schedule for the clamped-L1 term. The final objective
  // clamps at kSdfClamp; starting wider keeps distance targets in the active
  // band while the field forms, then anneals down. With a fixed 0.03 clamp
  // the one-sided flat region is absorbing: once a region predicts past the
  // clamp it receives no gradient again, and the whole field freezes there.
  // Set clamp_anneal_from = kSdfClamp to disable.
  double clamp_anneal_from = 0.3;
  double clamp_anneal_fraction = 0.5;  // of the epoch budget

  double train_clamp(int epoch, int total_epochs) const {
    const double span = clamp_anneal_fraction * static_cast<double>(total_epochs);
    if (clamp_anneal_from <= kSdfClamp || span <= 0.0 || epoch >= span)
      return kSdfClamp;
    const double f = static_cast<double>(epoch) / span;
    return clamp_anneal_from + f * (kSdfClamp - clamp_anneal_from);
  }

  // architecture
  int comp_width = 512;
  int comp_layers = 7;
  std::vector<int> reg_point_widths = {256, 128};
  std::vector<int> reg_fc_widths = {128, 64};

  // inference defaults (overridable per run)
  int infer_steps = 5000;
  double infer_lr = 1e-3;
  int restarts = 3;
  double early_stop_delta = 1e-7;
  int early_stop_window = 100;
  int two_step_stage1 = 0;  // 0: half the budget
  GridConfig two_step_grid{48, -1.2, 1.2, 0.01};

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
    if (epochs < 0 || infer_steps < 0)
      throw std::invalid_argument("TrainConfig: negative step budget");
    if (restarts < 1) throw std::invalid_argument("TrainConfig: restarts must be >= 1");
  }
};

struct TrainLogRow {
  long long step = 0;
  double l_reg = 0.0, l_com = 0.0, total = 0.0;
};

struct TrainedModel {
  CompletionNet completion;
  RegistrationNet registration;
  std::vector<LatentCode> latents;  // one per corpus pair, in corpus order
  AdamState theta_state, beta_state, latent_state;
  long long global_step = 0;
  TrainConfig cfg;
  Rng train_rng{0};
  bool aborted = false;
  std::string abort_reason;

  const LatentCode* find_latent(const std::string& shape_id) const {
    for (const LatentCode& z : latents)
      if (z.shape_id == shape_id) return &z;
    return nullptr;
  }
};

using CheckpointFn = std::function<void(const TrainedModel&, long long)>;

namespace detail {

// Deterministic SDF minibatch: a pure function of (seed, step, pair index).
inline std::vector<std::size_t> sdf_minibatch_indices(std::uint64_t seed, long long step,
                                                      std::size_t pair_index,
                                                      std::size_t total, int batch) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (batch <= 0 || static_cast<std::size_t>(batch) >= total) return idx;
  Rng rng = Rng::derive(mix_seed(seed, 0xba7c4ull), static_cast<std::uint64_t>(step),
                        pair_index);
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch); ++i) {
    std::size_t j = i + rng.uniform_index(total - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(static_cast<std::size_t>(batch));
  return idx;
}

inline std::vector<SdfSample> select_samples(const std::vector<SdfSample>& all,
                                             const std::vector<std::size_t>& idx) {
  std::vector<SdfSample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

// The shared epoch loop behind train_joint and resumed training.
inline void run_training_epochs(TrainedModel& model, const std::vector<CorpusPair>& corpus,
                                int epochs, std::vector<TrainLogRow>* log,
                                const CheckpointFn& on_checkpoint) {
  const TrainConfig& cfg = model.cfg;
  model.completion.params.mode = NetMode::train;
  model.registration.params.mode = NetMode::train;

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Vector zero_latent_grad = Vector::Zero(kLatentDim);

  for (int epoch = 0; epoch < epochs && !model.aborted; ++epoch) {
    const double clamp = cfg.train_clamp(epoch, epochs);
    model.train_rng.shuffle(order);
    for (std::size_t batch_start = 0; batch_start < order.size() && !model.aborted;
         batch_start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t batch_end =
          std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
      const double inv_b = 1.0 / static_cast<double>(batch_end - batch_start);

      GradBuffer theta_grads = GradBuffer::zeros_like(model.registration.params);
      GradBuffer beta_grads = GradBuffer::zeros_like(model.completion.params);
      std::vector<Vector> latent_grads(corpus.size());
      double sum_reg = 0.0, sum_com = 0.0, sum_total = 0.0;
      bool bad = false;
      std::string bad_what;

      for (std::size_t bi = batch_start; bi < batch_end; ++bi) {
        const std::size_t pi = order[bi];
        const CorpusPair& cp = corpus[pi];
        const PointSet& target =
            cfg.use_full_targets ? cp.pair.target_full : cp.pair.target_partial;

        Rng dropout_rng = Rng::derive(mix_seed(cfg.seed, 0xd2017ull),
                                      static_cast<std::uint64_t>(model.global_step), pi);
        ad::Tape tape;
        ad::Var z_var = tape.leaf(Mat(model.latents[pi].values.transpose()), true);
        NetBinding theta_bind, beta_bind;
        ad::Var l_reg = record_registration_loss(
            tape, model.registration, z_var, cp.pair.source, target, cfg.sigma_t,
            theta_bind, /*trainable_net=*/true, NetMode::train,
            cfg.dropout ? &dropout_rng : nullptr);

        std::vector<SdfSample> samples = select_samples(
            cp.sdf_samples, sdf_minibatch_indices(cfg.seed, model.global_step, pi,
                                                  cp.sdf_samples.size(), cfg.sdf_batch));
        ad::Var total;
        double com_value = 0.0;
        if (cfg.lambda > 0.0) {
          ad::Var l_com = record_completion_loss(
              tape, model.completion, z_var, samples, cfg.prior_weight, beta_bind,
              /*trainable_net=*/true, NetMode::train, cfg.dropout ? &dropout_rng : nullptr,
              clamp);
          com_value = tape.scalar(l_com);
          total = tape.add_scaled(1.0, l_reg, cfg.lambda, l_com);
        } else {
          // Completion term absent from the objective; its value is still
          // reported so the log keeps its columns.
          com_value = completion_loss(model.completion, model.latents[pi], samples,
                                      cfg.prior_weight, clamp);
          total = l_reg;
        }

        const double total_value = tape.scalar(total);
        if (!std::isfinite(total_value)) {
          bad = true;
          bad_what = "non-finite loss on " + cp.name;
          break;
        }
        sum_reg += tape.scalar(l_reg);
        sum_com += com_value;
        sum_total += total_value;

        tape.backward(total);
        accumulate_grads(tape, theta_bind, model.registration.params, theta_grads, inv_b);
        if (cfg.lambda > 0.0)
          accumulate_grads(tape, beta_bind, model.completion.params, beta_grads, inv_b);
        Vector zg = tape.grad(z_var).row(0).transpose() * inv_b;
        if (latent_grads[pi].size() == 0)
          latent_grads[pi] = std::move(zg);
        else
          latent_grads[pi] += zg;
      }

      if (!bad) {
        // adam_step validates gradients before touching parameters, so a
        // throw leaves the model at its last good state.
        try {
          adam_step(model.registration.params, theta_grads, model.theta_state);
          if (cfg.lambda > 0.0)
            adam_step(model.completion.params, beta_grads, model.beta_state);
          std::vector<TensorView> zparams, zgrads;
          zparams.reserve(corpus.size());
          zgrads.reserve(corpus.size());
          for (std::size_t i = 0; i < corpus.size(); ++i) {
            LatentCode& z = model.latents[i];
            zparams.push_back({"latent." + z.shape_id, z.values.data(), z.values.data(),
                               z.values.size()});
            const Vector& g =
                latent_grads[i].size() ? latent_grads[i] : zero_latent_grad;
            zgrads.push_back({"latent." + z.shape_id, nullptr, g.data(), g.size()});
          }
          adam_step(zparams, zgrads, model.latent_state);
        } catch (const std::runtime_error& e) {
          bad = true;
          bad_what = e.what();
        }
      }

      if (bad) {
        model.aborted = true;
        model.abort_reason = bad_what;
        break;
      }

      if (log != nullptr)
        log->push_back({model.global_step, sum_reg * inv_b, sum_com * inv_b,
                        sum_total * inv_b});
      model.global_step += 1;
      if (on_checkpoint && cfg.checkpoint_every > 0 &&
          model.global_step % cfg.checkpoint_every == 0)
        on_checkpoint(model, model.global_step);
    }
  }
  model.completion.params.mode = NetMode::eval;
  model.registration.params.mode = NetMode::eval;
}

}  // namespace detail

// Joint training from scratch. Deterministic given the config seed; aborts
// (keeping the last good parameter state) if a loss or gradient goes
// non-finite.
inline TrainedModel train_joint(const std::vector<CorpusPair>& corpus, TrainConfig cfg,
                                std::vector<TrainLogRow>* log = nullptr,
                                const CheckpointFn& on_checkpoint = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train_joint: empty corpus");

  TrainedModel model;
  model.cfg = cfg;
  model.completion = CompletionNet::make(mix_seed(cfg.seed, 0xbe7aull), cfg.comp_width,
                                         cfg.comp_layers, cfg.batch_norm,
                                         cfg.dropout ? cfg.dropout_rate : 0.0);
  model.registration = RegistrationNet::make(mix_seed(cfg.seed, 0x7e7aull),
                                             cfg.reg_point_widths, cfg.reg_fc_widths,
                                             cfg.batch_norm,
                                             cfg.dropout ? cfg.dropout_rate : 0.0);

  // One latent code per target shape (one posed target per corpus pair).
  model.latents.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    model.latents.push_back(init_latent(mix_seed(cfg.seed, 0x600 + i), corpus[i].name));

  model.theta_state = AdamState{cfg.lr_net, 0.9, 0.999, 1e-8, cfg.weight_decay};
  model.beta_state = AdamState{cfg.lr_comp > 0.0 ? cfg.lr_comp : cfg.lr_net, 0.9, 0.999,
                               1e-8, cfg.weight_decay};
  model.latent_state = AdamState{cfg.lr_latent, 0.9, 0.999, 1e-8, 0.0};
  model.train_rng = Rng(mix_seed(cfg.seed, 0x5c4edull));

  detail::run_training_epochs(model, corpus, cfg.epochs, log, on_checkpoint);
  return model;
}

// Resumes a loaded model on the same corpus; the step counter continues.
inline void train_more(TrainedModel& model, const std::vector<CorpusPair>& corpus,
                       int extra_epochs, std::vector<TrainLogRow>* log = nullptr,
                       const CheckpointFn& on_checkpoint = nullptr) {
  if (corpus.size() != model.latents.size())
    throw std::invalid_argument("train_more: corpus does not match latent table");
  for (std::size_t i = 0; i < corpus.size(); ++i)
    if (corpus[i].name != model.latents[i].shape_id)
      throw std::invalid_argument("train_more: pair names do not match latent table");
  detail::run_training_epochs(model, corpus, extra_epochs, log, on_checkpoint);
}

// ---- inference -----------------------------------------------------------------

struct TrajectoryPoint {
  int step = 0;
  double l_reg = 0.0, l_com = 0.0, total = 0.0;
};

struct InferenceResult {
  LatentCode latent;
  RigidTransform transform;
  std::vector<TrajectoryPoint> trajectory;
  int steps = 0;
  bool diverged = false;
  bool reconstruction_empty = false;  // two-step only
  double final_total = std::numeric_limits<double>::infinity();
  int best_restart = 0;
  std::vector<std::pair<int, RigidTransform>> snapshots;
};

struct InferOptions {
  int steps = 5000;
  double lr = 1e-3;
  double lambda = 0.1;
  double sigma_t = kDefaultSigmaT;
  double prior_weight = kDefaultPriorWeight;
  int sdf_batch = 128;
  int restarts = 1;
  double early_stop_delta = 1e-7;
  int early_stop_window = 100;
  std::uint64_t seed = 0;
  std::vector<int> snapshot_steps;
  int two_step_stage1 = 0;  // 0: half of steps
  GridConfig two_step_grid{48, -1.2, 1.2, 0.01};

  static InferOptions from_train_config(const TrainConfig& cfg) {
    InferOptions o;
    o.steps = cfg.infer_steps;
    o.lr = cfg.infer_lr;
    o.lambda = cfg.lambda;
    o.sigma_t = cfg.sigma_t;
    o.prior_weight = cfg.prior_weight;
    o.sdf_batch = cfg.sdf_batch;
    o.restarts = cfg.restarts;
    o.early_stop_delta = cfg.early_stop_delta;
    o.early_stop_window = cfg.early_stop_window;
    o.seed = cfg.seed;
    o.two_step_stage1 = cfg.two_step_stage1;
    o.two_step_grid = cfg.two_step_grid;
    return o;
  }
};

namespace detail {

struct SingleRun {
  LatentCode latent;
  RigidTransform transform;
  std::vector<TrajectoryPoint> trajectory;
  std::vector<std::pair<int, RigidTransform>> snapshots;
  bool diverged = false;
  double final_total = std::numeric_limits<double>::infinity();
};

// One latent-descent run against frozen decoders. Either loss can be dropped
// from the objective (the two-step stages do); a dropped loss is still traced
// by plain evaluation so trajectories stay comparable.
inline SingleRun optimize_latent(const CompletionNet& completion_in,
                                 const RegistrationNet& registration_in,
                                 const PointSet& source, const PointSet& reg_target,
                                 const std::vector<SdfSample>& sdf_samples,
                                 const InferOptions& opt, LatentCode z, int budget,
                                 bool reg_in_objective, double com_weight,
                                 int step_offset) {
  // Local copies: the caller's decoders stay untouched by construction.
  CompletionNet completion = completion_in;
  RegistrationNet registration = registration_in;
  completion.params.mode = NetMode::eval;
  registration.params.mode = NetMode::eval;

  SingleRun run;
  AdamState zstate{opt.lr, 0.9, 0.999, 1e-8, 0.0};
  const bool com_in_objective = com_weight > 0.0 && !sdf_samples.empty();
  if (!reg_in_objective && !com_in_objective)
    throw std::invalid_argument("optimize_latent: empty objective");

  double marker_best = std::numeric_limits<double>::infinity();
  int marker_step = 0;

  for (int step = 0; step < budget; ++step) {
    ad::Tape tape;
    ad::Var z_var = tape.leaf(Mat(z.values.transpose()), true);
    NetBinding theta_bind, beta_bind;
    RigidTransform predicted;
    ad::Var objective;

    double reg_value, com_value;
    if (reg_in_objective) {
      ad::Var l_reg = record_registration_loss(tape, registration, z_var, source,
                                               reg_target, opt.sigma_t, theta_bind,
                                               /*trainable_net=*/false, NetMode::eval,
                                               nullptr, &predicted);
      reg_value = tape.scalar(l_reg);
      objective = l_reg;
    } else {
      predicted = predict_transform(registration, z, source);
      reg_value = clipped_chamfer(apply_transform(source, predicted), reg_target,
                                  opt.sigma_t);
    }

    if (com_in_objective) {
      std::vector<SdfSample> mb = select_samples(
          sdf_samples, sdf_minibatch_indices(opt.seed, step_offset + step, 0,
                                             sdf_samples.size(), opt.sdf_batch));
      ad::Var l_com = record_completion_loss(tape, completion, z_var, mb,
                                             opt.prior_weight, beta_bind,
                                             /*trainable_net=*/false, NetMode::eval);
      com_value = tape.scalar(l_com);
      objective = objective.valid() ? tape.add_scaled(1.0, objective, com_weight, l_com)
                                    : tape.scale(l_com, com_weight);
    } else {
      com_value = sdf_samples.empty()
                      ? 0.0
                      : completion_loss(completion, z,
                                        select_samples(sdf_samples,
                                                       sdf_minibatch_indices(
                                                           opt.seed, step_offset + step, 0,
                                                           sdf_samples.size(),
                                                           opt.sdf_batch)),
                                        opt.prior_weight);
    }

    const double total_value = tape.scalar(objective);
    run.trajectory.push_back({step_offset + step, reg_value, com_value, total_value});
    for (int snap : opt.snapshot_steps)
      if (snap == step_offset + step) run.snapshots.emplace_back(snap, predicted);

    if (!std::isfinite(total_value)) {
      run.diverged = true;
      break;
    }

    tape.backward(objective);
    Vector zg = tape.grad(z_var).row(0).transpose();
    std::vector<TensorView> zp{{"latent", z.values.data(), z.values.data(), z.values.size()}};
    std::vector<TensorView> zgv{{"latent", nullptr, zg.data(), zg.size()}};
    try {
      adam_step(zp, zgv, zstate);
    } catch (const std::runtime_error&) {
      run.diverged = true;
      break;
    }

    if (total_value < marker_best - opt.early_stop_delta) {
      marker_best = total_value;
      marker_step = step;
    } else if (opt.early_stop_window > 0 && step - marker_step >= opt.early_stop_window) {
      break;
    }
  }

  run.latent = std::move(z);
  run.transform = predict_transform(registration, run.latent, source);
  // a snapshot requested at the end of the budget is the final prediction
  for (int snap : opt.snapshot_steps)
    if (snap == step_offset + budget) run.snapshots.emplace_back(snap, run.transform);
  const double final_reg =
      clipped_chamfer(apply_transform(source, run.transform), reg_target, opt.sigma_t);
  double final_com = 0.0;
  if (com_in_objective)
    final_com = completion_loss(completion, run.latent, sdf_samples, opt.prior_weight);
  run.final_total = (reg_in_objective ? final_reg : 0.0) + com_weight * final_com;
  return run;
}

inline std::uint64_t latent_seed_for(const InferOptions& opt, const std::string& name,
                                     int restart) {
  return mix_seed(mix_seed(opt.seed, 0x17fe7ull + static_cast<std::uint64_t>(restart)),
                  fnv1a(name));
}

}  // namespace detail

// MAP inference: decoders frozen, fresh latent, Adam on the code alone. With
// restarts > 1 the lowest-final-loss non-diverged run wins.
inline InferenceResult infer_pair(const TrainedModel& model, const CorpusPair& cp,
                                  const InferOptions& opt) {
  if (cp.pair.source.empty() || cp.pair.target_partial.empty())
    throw std::invalid_argument("infer_pair: empty point sets");
  InferenceResult best;
  bool have = false;
  for (int r = 0; r < opt.restarts; ++r) {
    LatentCode z = init_latent(detail::latent_seed_for(opt, cp.name, r), cp.name);
    detail::SingleRun run = detail::optimize_latent(
        model.completion, model.registration, cp.pair.source, cp.pair.target_partial,
        cp.sdf_samples, opt, std::move(z), opt.steps, /*reg_in_objective=*/true,
        opt.lambda, 0);
    const bool better = !have || (best.diverged && !run.diverged) ||
                        (best.diverged == run.diverged &&
                         run.final_total < best.final_total);
    if (better) {
      best.latent = std::move(run.latent);
      best.transform = run.transform;
      best.trajectory = std::move(run.trajectory);
      best.snapshots = std::move(run.snapshots);
      best.diverged = run.diverged;
      best.final_total = run.final_total;
      best.steps = static_cast<int>(best.trajectory.size());
      best.best_restart = r;
      have = true;
    }
  }
  return best;
}

// Two-step variant: stage 1 fits the code on the completion loss alone, then
// stage 2 aligns the source against the extracted reconstruction. Kept to
// reproduce the finding that this decoupling does not beat joint inference.
inline InferenceResult infer_two_step(const TrainedModel& model, const CorpusPair& cp,
                                      const InferOptions& opt) {
  const int stage1 = opt.two_step_stage1 > 0 ? opt.two_step_stage1 : opt.steps / 2;
  const int stage2 = opt.steps - stage1;
  if (stage1 < 0 || stage2 < 0)
    throw std::invalid_argument("infer_two_step: bad stage budgets");

  InferOptions stage_opt = opt;
  stage_opt.early_stop_window = 0;  // fixed budgets; trajectory lengths must match

  InferenceResult result;
  LatentCode z = init_latent(detail::latent_seed_for(opt, cp.name, 0x200), cp.name);

  // Stage 1: completion objective only; no registration gradient reaches z.
  detail::SingleRun run1 = detail::optimize_latent(
      model.completion, model.registration, cp.pair.source, cp.pair.target_partial,
      cp.sdf_samples, stage_opt, std::move(z), stage1, /*reg_in_objective=*/false,
      std::max(opt.lambda, 1.0), 0);
  result.trajectory = std::move(run1.trajectory);
  result.diverged = run1.diverged;
  result.snapshots = std::move(run1.snapshots);

  // Reconstruct the completed target once, then align against it.
  PointSet reconstruction =
      extract_completed_points(model.completion, run1.latent, opt.two_step_grid);
  const PointSet* stage2_target = &reconstruction;
  if (reconstruction.empty()) {
    result.reconstruction_empty = true;
    stage2_target = &cp.pair.target_partial;
  }

  detail::SingleRun run2 = detail::optimize_latent(
      model.completion, model.registration, cp.pair.source, *stage2_target,
      cp.sdf_samples, stage_opt, std::move(run1.latent), stage2,
      /*reg_in_objective=*/true, /*com_weight=*/0.0, stage1);
  result.trajectory.insert(result.trajectory.end(), run2.trajectory.begin(),
                           run2.trajectory.end());
  result.diverged = result.diverged || run2.diverged;
  result.latent = std::move(run2.latent);
  result.transform = run2.transform;
  result.steps = static_cast<int>(result.trajectory.size());
  for (const auto& snap : run2.snapshots) {
    const bool dup = !result.snapshots.empty() &&
                     result.snapshots.back().first == snap.first;
    if (!dup) result.snapshots.push_back(snap);  // stage boundary fires twice
  }
  // Report the joint objective against the real partial, for comparability.
  const double final_reg = clipped_chamfer(apply_transform(cp.pair.source, result.transform),
                                           cp.pair.target_partial, opt.sigma_t);
  const double final_com = cp.sdf_samples.empty()
                               ? 0.0
                               : completion_loss(model.completion, result.latent,
                                                 cp.sdf_samples, opt.prior_weight);
  result.final_total = final_reg + opt.lambda * final_com;
  return result;
}

// ---- checkpoints ------------------------------------------------------------------

inline Json train_config_to_json(const TrainConfig& c) {
  Json j;
  j["lambda"] = c.lambda;
  j["sigma_t"] = std::isinf(c.sigma_t) ? Json("inf") : Json(c.sigma_t);
  j["prior_weight"] = c.prior_weight;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["lr_net"] = c.lr_net;
  j["lr_latent"] = c.lr_latent;
  j["lr_comp"] = c.lr_comp;
  j["weight_decay"] = c.weight_decay;
  j["seed"] = c.seed;
  j["batch_norm"] = c.batch_norm;
  j["dropout"] = c.dropout;
  j["dropout_rate"] = c.dropout_rate;
  j["sdf_batch"] = c.sdf_batch;
  j["use_full_targets"] = c.use_full_targets;
  j["checkpoint_every"] = c.checkpoint_every;
  j["clamp_anneal_from"] = c.clamp_anneal_from;
  j["clamp_anneal_fraction"] = c.clamp_anneal_fraction;
  j["comp_width"] = c.comp_width;
  j["comp_layers"] = c.comp_layers;
  j["reg_point_widths"] = c.reg_point_widths;
  j["reg_fc_widths"] = c.reg_fc_widths;
  j["infer_steps"] = c.infer_steps;
  j["infer_lr"] = c.infer_lr;
  j["restarts"] = c.restarts;
  j["early_stop_delta"] = c.early_stop_delta;
  j["early_stop_window"] = c.early_stop_window;
  j["two_step_stage1"] = c.two_step_stage1;
  j["grid_resolution"] = c.two_step_grid.resolution;
  j["grid_lo"] = c.two_step_grid.lo;
  j["grid_hi"] = c.two_step_grid.hi;
  j["grid_iso_eps"] = c.two_step_grid.iso_eps;
  return j;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.lambda = j.value("lambda", c.lambda);
  if (j.contains("sigma_t")) {
    if (j.at("sigma_t").is_string())
      c.sigma_t = std::numeric_limits<double>::infinity();
    else
      c.sigma_t = j.at("sigma_t").get<double>();
  }
  c.prior_weight = j.value("prior_weight", c.prior_weight);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr_net = j.value("lr_net", c.lr_net);
  c.lr_latent = j.value("lr_latent", c.lr_latent);
  c.lr_comp = j.value("lr_comp", c.lr_comp);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.seed = j.value("seed", c.seed);
  c.batch_norm = j.value("batch_norm", c.batch_norm);
  c.dropout = j.value("dropout", c.dropout);
  c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
  c.sdf_batch = j.value("sdf_batch", c.sdf_batch);
  c.use_full_targets = j.value("use_full_targets", c.use_full_targets);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.clamp_anneal_from = j.value("clamp_anneal_from", c.clamp_anneal_from);
  c.clamp_anneal_fraction = j.value("clamp_anneal_fraction", c.clamp_anneal_fraction);
  c.comp_width = j.value("comp_width", c.comp_width);
  c.comp_layers = j.value("comp_layers", c.comp_layers);
  if (j.contains("reg_point_widths"))
    c.reg_point_widths = j.at("reg_point_widths").get<std::vector<int>>();
  if (j.contains("reg_fc_widths"))
    c.reg_fc_widths = j.at("reg_fc_widths").get<std::vector<int>>();
  c.infer_steps = j.value("infer_steps", c.infer_steps);
  c.infer_lr = j.value("infer_lr", c.infer_lr);
  c.restarts = j.value("restarts", c.restarts);
  c.early_stop_delta = j.value("early_stop_delta", c.early_stop_delta);
  c.early_stop_window = j.value("early_stop_window", c.early_stop_window);
  c.two_step_stage1 = j.value("two_step_stage1", c.two_step_stage1);
  c.two_step_grid.resolution = j.value("grid_resolution", c.two_step_grid.resolution);
  c.two_step_grid.lo = j.value("grid_lo", c.two_step_grid.lo);
  c.two_step_grid.hi = j.value("grid_hi", c.two_step_grid.hi);
  c.two_step_grid.iso_eps = j.value("grid_iso_eps", c.two_step_grid.iso_eps);
  c.validate();
  return c;
}

inline Json model_to_json(const TrainedModel& model) {
  Json j;
  j["schema"] = 1;
  j["global_step"] = model.global_step;
  j["aborted"] = model.aborted;
  j["abort_reason"] = model.abort_reason;
  j["config"] = train_config_to_json(model.cfg);
  j["registration"] = net_to_json(model.registration.params);
  j["registration_pool_after"] = model.registration.pool_after;
  j["completion"] = net_to_json(model.completion.params);
  j["latents"] = Json::array();
  for (const LatentCode& z : model.latents) {
    Json zj;
    zj["shape_id"] = z.shape_id;
    zj["values"] = to_json(z.values);
    j["latents"].push_back(std::move(zj));
  }
  j["adam_theta"] = adam_to_json(model.theta_state);
  j["adam_beta"] = adam_to_json(model.beta_state);
  j["adam_latent"] = adam_to_json(model.latent_state);
  j["train_rng"] = model.train_rng.serialize();
  return j;
}

inline TrainedModel model_from_json(const Json& j) {
  TrainedModel model;
  model.global_step = j.at("global_step").get<long long>();
  model.aborted = j.value("aborted", false);
  model.abort_reason = j.value("abort_reason", std::string());
  model.cfg = train_config_from_json(j.at("config"));
  model.registration.params = net_from_json(j.at("registration"));
  model.registration.pool_after = j.at("registration_pool_after").get<std::size_t>();
  model.registration.check_structure();
  model.completion.params = net_from_json(j.at("completion"));
  for (const Json& zj : j.at("latents")) {
    LatentCode z;
    z.shape_id = zj.at("shape_id").get<std::string>();
    z.values = vector_from_json(zj.at("values"));
    check_latent(z);
    model.latents.push_back(std::move(z));
  }
  model.theta_state = adam_from_json(j.at("adam_theta"));
  model.beta_state = adam_from_json(j.at("adam_beta"));
  model.latent_state = adam_from_json(j.at("adam_latent"));
  model.train_rng.deserialize(j.at("train_rng").get<std::string>());
  return model;
}

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_train_log: cannot open " + path);
  out << "step,L_reg,L_com,total\n";
  for (const TrainLogRow& r : rows)
    out << r.step << ',' << fmt_double(r.l_reg) << ',' << fmt_double(r.l_com) << ','
        << fmt_double(r.total) << '\n';
}

inline void write_trajectory_csv(const std::string& path,
                                 const std::vector<TrajectoryPoint>& traj) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_trajectory_csv: cannot open " + path);
  out << "step,L_reg,L_com,total\n";
  for (const TrajectoryPoint& p : traj)
    out << p.step << ',' << fmt_double(p.l_reg) << ',' << fmt_double(p.l_com) << ','
        << fmt_double(p.total) << '\n';
}

inline void save_checkpoint(const std::string& path, const TrainedModel& model) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << model_to_json(model).dump() << '\n';
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline TrainedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  Json j = Json::parse(in);
  return model_from_json(j);
}

}  // namespace lalign
