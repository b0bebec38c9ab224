#pragma once

// Metrics over predicted transforms (componentwise Euler errors in degrees,
// per-component translation errors, plus an auxiliary geodesic rotation
// error), a classic point-to-point ICP baseline, and drivers for the
// experiment suites (clean / noise / missing-point sweep / lambda ablation /
// two-step comparison).

#include <latentalign/trainer.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace lalign {

// ---- metrics --------------------------------------------------------------------

struct PairRecord {
  std::string name;
  Vec3 angle_err_deg = Vec3::Zero();  // pred - gt, per Euler component
  Vec3 trans_err = Vec3::Zero();
  double geodesic_deg = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
};

struct MetricsReport {
  double mse_r = 0.0, rmse_r = 0.0, mae_r = 0.0;
  double mse_t = 0.0, rmse_t = 0.0, mae_t = 0.0;
  std::vector<PairRecord> per_pair;

  std::size_t diverged_count() const {
    std::size_t n = 0;
    for (const PairRecord& r : per_pair) n += r.diverged ? 1 : 0;
    return n;
  }
};

// Rotation angle (degrees) of R_pred * R_gt^T; convention-free error measure.
inline double geodesic_rotation_error_deg(const Mat3& pred, const Mat3& gt) {
  const Mat3 rel = pred * gt.transpose();
  const double c = std::clamp((rel.trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

// Componentwise errors aggregated over all components of all pairs. The six
// headline numbers follow the usual table schema; rmse = sqrt(mse) exactly.
inline MetricsReport compute_metrics(const std::vector<RigidTransform>& predictions,
                                     const std::vector<RigidTransform>& gts) {
  if (predictions.size() != gts.size())
    throw std::invalid_argument("compute_metrics: length mismatch");
  if (predictions.empty())
    throw std::invalid_argument("compute_metrics: empty input");
  MetricsReport rep;
  rep.per_pair.reserve(predictions.size());
  const double rad2deg = 180.0 / M_PI;
  double se_r = 0.0, ae_r = 0.0, se_t = 0.0, ae_t = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    PairRecord rec;
    rec.angle_err_deg = (predictions[i].angles - gts[i].angles) * rad2deg;
    rec.trans_err = predictions[i].translation - gts[i].translation;
    rec.geodesic_deg =
        geodesic_rotation_error_deg(predictions[i].rotation(), gts[i].rotation());
    for (int k = 0; k < 3; ++k) {
      se_r += rec.angle_err_deg[k] * rec.angle_err_deg[k];
      ae_r += std::abs(rec.angle_err_deg[k]);
      se_t += rec.trans_err[k] * rec.trans_err[k];
      ae_t += std::abs(rec.trans_err[k]);
    }
    rep.per_pair.push_back(std::move(rec));
  }
  const double n = static_cast<double>(3 * predictions.size());
  rep.mse_r = se_r / n;
  rep.rmse_r = std::sqrt(rep.mse_r);
  rep.mae_r = ae_r / n;
  rep.mse_t = se_t / n;
  rep.rmse_t = std::sqrt(rep.mse_t);
  rep.mae_t = ae_t / n;
  return rep;
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---- ICP baseline ------------------------------------------------------------------

struct IcpConfig {
  int max_iterations = 100;
  double tolerance = 1e-8;  // stop when the MSE improves less than this
};

struct IcpResult {
  RigidMap transform;
  std::vector<double> mse_log;  // correspondence MSE after each update
  int iterations = 0;
  bool converged = false;
};

// Closed-form least-squares rigid fit between corresponded point lists
// (orthogonal Procrustes via SVD, determinant-sign guard against
// reflections). Degenerate covariances (rank < 3) fall through the same
// guard.
inline RigidMap best_fit_rigid(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  if (src.empty() || src.size() != dst.size())
    throw std::invalid_argument("best_fit_rigid: bad correspondence lists");
  Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    cs += src[i];
    cd += dst[i];
  }
  cs /= static_cast<double>(src.size());
  cd /= static_cast<double>(src.size());
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i)
    h += (src[i] - cs) * (dst[i] - cd).transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 u = svd.matrixU(), v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  Mat3 r = v * d * u.transpose();
  return RigidMap{r, Vec3(cd - r * cs)};
}

// Classic point-to-point ICP: nearest-neighbour correspondences, closed-form
// best-fit rigid update, iterate to tolerance.
inline IcpResult icp_register(const PointSet& source, const PointSet& target,
                              const IcpConfig& cfg = {}) {
  if (source.empty() || target.empty())
    throw std::invalid_argument("icp_register: empty point set");
  KdTree3 tree(target.points);
  IcpResult res;

  std::vector<Vec3> moved = source.points;
  std::vector<Vec3> matched(moved.size());
  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    for (std::size_t i = 0; i < moved.size(); ++i)
      matched[i] = target.points[static_cast<std::size_t>(tree.nearest(moved[i]).index)];

    RigidMap update = best_fit_rigid(moved, matched);
    const Mat3& r = update.rotation;
    const Vec3& t = update.translation;

    res.transform.rotation = r * res.transform.rotation;
    res.transform.translation = r * res.transform.translation + t;

    double mse = 0.0;
    for (std::size_t i = 0; i < moved.size(); ++i) {
      moved[i] = r * moved[i] + t;
      mse += dist_sq(moved[i], matched[i]);
    }
    mse /= static_cast<double>(moved.size());
    res.mse_log.push_back(mse);
    res.iterations = iter + 1;
    if (mse < cfg.tolerance ||
        (res.mse_log.size() >= 2 &&
         std::abs(res.mse_log[res.mse_log.size() - 2] - mse) < cfg.tolerance)) {
      res.converged = true;
      break;
    }
  }
  return res;
}

// ---- experiment drivers --------------------------------------------------------------

enum class ExperimentKind { clean, gaussian_noise, missing_sweep, ablation_lambda0, two_step };

inline ExperimentKind experiment_from_name(const std::string& name) {
  if (name == "clean") return ExperimentKind::clean;
  if (name == "gaussian_noise") return ExperimentKind::gaussian_noise;
  if (name == "missing_sweep") return ExperimentKind::missing_sweep;
  if (name == "ablation_lambda0") return ExperimentKind::ablation_lambda0;
  if (name == "two_step") return ExperimentKind::two_step;
  throw std::invalid_argument("unknown experiment kind: " + name);
}

struct ExperimentRow {
  std::string label;
  MetricsReport report;
};

// A predictor maps one evaluation pair to an inference result. Experiments
// are parameterized on it so the ground-truth oracle stub (harness self-test)
// and the ICP baseline slot into the same pipeline as the real model.
using Predictor = std::function<InferenceResult(const CorpusPair&)>;

inline Predictor model_predictor(const TrainedModel& model, InferOptions opt) {
  return [&model, opt](const CorpusPair& cp) { return infer_pair(model, cp, opt); };
}

inline Predictor two_step_predictor(const TrainedModel& model, InferOptions opt) {
  return [&model, opt](const CorpusPair& cp) { return infer_two_step(model, cp, opt); };
}

inline Predictor oracle_stub_predictor() {
  return [](const CorpusPair& cp) {
    InferenceResult r;
    r.transform = cp.pair.gt;
    r.final_total = 0.0;
    return r;
  };
}

inline Predictor icp_predictor(const IcpConfig& cfg = {}) {
  return [cfg](const CorpusPair& cp) {
    IcpResult icp = icp_register(cp.pair.source, cp.pair.target_partial, cfg);
    InferenceResult r;
    r.transform.angles = euler_from_rotation(icp.transform.rotation);
    r.transform.translation = icp.transform.translation;
    r.final_total = icp.mse_log.empty() ? 0.0 : icp.mse_log.back();
    r.steps = icp.iterations;
    return r;
  };
}

// Runs the predictor over every pair (optionally on several threads; results
// land in order-stable slots) and aggregates metrics.
inline MetricsReport evaluate_corpus(const std::vector<CorpusPair>& pairs,
                                     const Predictor& predict, int threads = 1) {
  if (pairs.empty()) throw std::invalid_argument("evaluate_corpus: empty corpus");
  std::vector<InferenceResult> results(pairs.size());
  if (threads <= 1) {
    for (std::size_t i = 0; i < pairs.size(); ++i) results[i] = predict(pairs[i]);
  } else {
    std::vector<std::thread> workers;
    std::size_t chunk = (pairs.size() + static_cast<std::size_t>(threads) - 1) /
                        static_cast<std::size_t>(threads);
    for (int w = 0; w < threads; ++w) {
      std::size_t lo = static_cast<std::size_t>(w) * chunk;
      std::size_t hi = std::min(pairs.size(), lo + chunk);
      if (lo >= hi) break;
      workers.emplace_back([&, lo, hi]() {
        for (std::size_t i = lo; i < hi; ++i) results[i] = predict(pairs[i]);
      });
    }
    for (std::thread& t : workers) t.join();
  }

  std::vector<RigidTransform> preds, gts;
  preds.reserve(pairs.size());
  gts.reserve(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    preds.push_back(results[i].transform);
    gts.push_back(pairs[i].pair.gt);
  }
  MetricsReport rep = compute_metrics(preds, gts);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    rep.per_pair[i].name = pairs[i].name;
    rep.per_pair[i].final_loss = results[i].final_total;
    rep.per_pair[i].diverged = results[i].diverged;
  }
  return rep;
}

struct ExperimentConfig {
  CorpusConfig eval_corpus;  // base evaluation corpus (sdf_from should be "partial")
  InferOptions infer;
  bool include_icp = false;
  bool oracle_stub = false;
  int threads = 1;
  std::vector<double> missing_keep_fractions = {0.75, 0.625, 0.5};
};

// Experiment suites. `model` drives every kind; `baseline_model` (trained
// with lambda = 0) is required only for the ablation rows.
inline std::vector<ExperimentRow> run_experiment(ExperimentKind kind,
                                                 const TrainedModel* model,
                                                 const TrainedModel* baseline_model,
                                                 const ExperimentConfig& cfg) {
  if (!cfg.oracle_stub && model == nullptr)
    throw std::invalid_argument("run_experiment: no trained checkpoint supplied");

  auto primary_predictor = [&]() -> Predictor {
    if (cfg.oracle_stub) return oracle_stub_predictor();
    return model_predictor(*model, cfg.infer);
  };

  std::vector<ExperimentRow> rows;
  switch (kind) {
    case ExperimentKind::clean: {
      CorpusConfig cc = cfg.eval_corpus;
      cc.noise.sigma = 0.0;
      std::vector<CorpusPair> pairs = generate_corpus(cc);
      rows.push_back({"model", evaluate_corpus(pairs, primary_predictor(), cfg.threads)});
      if (cfg.include_icp)
        rows.push_back({"icp", evaluate_corpus(pairs, icp_predictor(), cfg.threads)});
      break;
    }
    case ExperimentKind::gaussian_noise: {
      CorpusConfig cc = cfg.eval_corpus;
      if (cc.noise.sigma <= 0.0) cc.noise.sigma = 0.01;
      std::vector<CorpusPair> pairs = generate_corpus(cc);
      rows.push_back({"model", evaluate_corpus(pairs, primary_predictor(), cfg.threads)});
      if (cfg.include_icp)
        rows.push_back({"icp", evaluate_corpus(pairs, icp_predictor(), cfg.threads)});
      break;
    }
    case ExperimentKind::missing_sweep: {
      for (double frac : cfg.missing_keep_fractions) {
        CorpusConfig cc = cfg.eval_corpus;
        cc.points_partial = static_cast<std::size_t>(
            std::llround(frac * static_cast<double>(cc.points_full)));
        std::vector<CorpusPair> pairs = generate_corpus(cc);
        rows.push_back({std::to_string(cc.points_partial),
                        evaluate_corpus(pairs, primary_predictor(), cfg.threads)});
      }
      break;
    }
    case ExperimentKind::ablation_lambda0: {
      if (!cfg.oracle_stub && baseline_model == nullptr)
        throw std::invalid_argument(
            "run_experiment: ablation needs a lambda=0 baseline checkpoint");
      std::vector<CorpusPair> pairs = generate_corpus(cfg.eval_corpus);
      Predictor base = cfg.oracle_stub ? oracle_stub_predictor() : [&]() {
        InferOptions o = cfg.infer;
        o.lambda = 0.0;
        return model_predictor(*baseline_model, o);
      }();
      rows.push_back({"lambda=0", evaluate_corpus(pairs, base, cfg.threads)});
      rows.push_back({"lambda=0.1", evaluate_corpus(pairs, primary_predictor(), cfg.threads)});
      break;
    }
    case ExperimentKind::two_step: {
      std::vector<CorpusPair> pairs = generate_corpus(cfg.eval_corpus);
      rows.push_back({"joint", evaluate_corpus(pairs, primary_predictor(), cfg.threads)});
      Predictor two = cfg.oracle_stub ? oracle_stub_predictor()
                                      : two_step_predictor(*model, cfg.infer);
      rows.push_back({"two_step", evaluate_corpus(pairs, two, cfg.threads)});
      break;
    }
  }
  return rows;
}

// ---- report output ---------------------------------------------------------------------

inline void write_report_csv(const std::string& path, const std::vector<ExperimentRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
  out << "label,MSE(R),RMSE(R),MAE(R),MSE(t),RMSE(t),MAE(t),diverged,pairs\n";
  for (const ExperimentRow& r : rows) {
    out << r.label << ',' << fmt_double(r.report.mse_r) << ',' << fmt_double(r.report.rmse_r)
        << ',' << fmt_double(r.report.mae_r) << ',' << fmt_double(r.report.mse_t) << ','
        << fmt_double(r.report.rmse_t) << ',' << fmt_double(r.report.mae_t) << ','
        << r.report.diverged_count() << ',' << r.report.per_pair.size() << '\n';
  }
}

inline void write_per_pair_csv(const std::string& path, const std::vector<ExperimentRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_per_pair_csv: cannot open " + path);
  out << "label,pair,err_rx_deg,err_ry_deg,err_rz_deg,err_tx,err_ty,err_tz,"
         "geodesic_deg,final_loss,diverged\n";
  for (const ExperimentRow& r : rows)
    for (const PairRecord& p : r.report.per_pair) {
      out << r.label << ',' << p.name;
      for (int k = 0; k < 3; ++k) out << ',' << fmt_double(p.angle_err_deg[k]);
      for (int k = 0; k < 3; ++k) out << ',' << fmt_double(p.trans_err[k]);
      out << ',' << fmt_double(p.geodesic_deg) << ',' << fmt_double(p.final_loss) << ','
          << (p.diverged ? 1 : 0) << '\n';
    }
}

inline void print_report_table(std::ostream& os, const std::vector<ExperimentRow>& rows) {
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %12s %12s %12s %12s %12s %12s %9s", "label",
                "MSE(R)", "RMSE(R)", "MAE(R)", "MSE(t)", "RMSE(t)", "MAE(t)", "diverged");
  os << line << '\n';
  for (const ExperimentRow& r : rows) {
    std::snprintf(line, sizeof(line),
                  "%-12s %12.6f %12.6f %12.6f %12.6f %12.6f %12.6f %6zu/%-2zu",
                  r.label.c_str(), r.report.mse_r, r.report.rmse_r, r.report.mae_r,
                  r.report.mse_t, r.report.rmse_t, r.report.mae_t,
                  r.report.diverged_count(), r.report.per_pair.size());
    os << line << '\n';
  }
}

}  // namespace lalign
