#include <latentalign/evalharness.hpp>

#include <catch2/catch.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace lalign;

namespace {

RigidTransform make_t(double rx, double ry, double rz, double tx, double ty, double tz) {
  RigidTransform t;
  t.angles = Vec3(rx, ry, rz);
  t.translation = Vec3(tx, ty, tz);
  return t;
}

PointSet random_cloud(Rng& rng, std::size_t n) {
  PointSet ps;
  for (std::size_t i = 0; i < n; ++i)
    ps.points.emplace_back(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  return ps;
}

}  // namespace

TEST_CASE("metrics are zero when predictions equal ground truth", "[evalharness]") {
  std::vector<RigidTransform> ts = {make_t(0.1, 0.2, 0.3, 0.4, 0.5, 0.6),
                                    make_t(0.0, 0.7, 0.1, -0.2, 0.0, 0.3)};
  MetricsReport rep = compute_metrics(ts, ts);
  CHECK(rep.mse_r == 0.0);
  CHECK(rep.rmse_r == 0.0);
  CHECK(rep.mae_r == 0.0);
  CHECK(rep.mse_t == 0.0);
  CHECK(rep.rmse_t == 0.0);
  CHECK(rep.mae_t == 0.0);
  CHECK(rep.per_pair[0].geodesic_deg == Approx(0.0).margin(1e-6));
}

TEST_CASE("single-pair hand-computed metrics", "[evalharness]") {
  const double deg2rad = M_PI / 180.0;
  std::vector<RigidTransform> pred = {make_t(3.0 * deg2rad, 0, 0, 0, 0, 0)};
  std::vector<RigidTransform> gt = {make_t(0, 0, 0, 0, 0, 0)};
  MetricsReport rep = compute_metrics(pred, gt);
  CHECK(rep.mse_r == Approx(3.0).margin(1e-12));
  CHECK(rep.rmse_r == Approx(std::sqrt(3.0)).margin(1e-12));
  CHECK(rep.mae_r == Approx(1.0).margin(1e-12));
  CHECK(rep.mse_t == 0.0);
}

TEST_CASE("rmse squared equals mse exactly on random inputs", "[evalharness]") {
  Rng rng(80);
  std::vector<RigidTransform> pred, gt;
  for (int i = 0; i < 17; ++i) {
    pred.push_back(make_t(rng.uniform(0, 0.8), rng.uniform(0, 0.8), rng.uniform(0, 0.8),
                          rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                          rng.uniform(-0.5, 0.5)));
    gt.push_back(make_t(rng.uniform(0, 0.8), rng.uniform(0, 0.8), rng.uniform(0, 0.8),
                        rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5),
                        rng.uniform(-0.5, 0.5)));
  }
  MetricsReport rep = compute_metrics(pred, gt);
  CHECK(rep.rmse_r * rep.rmse_r == Approx(rep.mse_r).epsilon(1e-12));
  CHECK(rep.rmse_t * rep.rmse_t == Approx(rep.mse_t).epsilon(1e-12));
  CHECK(rep.mae_r <= rep.rmse_r);
  CHECK(rep.mae_t <= rep.rmse_t);
}

TEST_CASE("metrics are invariant under pair permutation", "[evalharness]") {
  Rng rng(81);
  std::vector<RigidTransform> pred, gt;
  for (int i = 0; i < 9; ++i) {
    pred.push_back(make_t(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                          rng.uniform(-1, 1), 0, 0));
    gt.push_back(make_t(rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1),
                        rng.uniform(-1, 1), 0, 0));
  }
  MetricsReport a = compute_metrics(pred, gt);
  std::reverse(pred.begin(), pred.end());
  std::reverse(gt.begin(), gt.end());
  MetricsReport b = compute_metrics(pred, gt);
  CHECK(a.mse_r == Approx(b.mse_r).epsilon(1e-12));
  CHECK(a.mae_t == Approx(b.mae_t).epsilon(1e-12));

  std::vector<RigidTransform> shorter(pred.begin(), pred.end() - 1);
  CHECK_THROWS_AS(compute_metrics(shorter, gt), std::invalid_argument);
}

TEST_CASE("icp recovers the identity in one iteration", "[evalharness]") {
  Rng rng(82);
  PointSet cloud = random_cloud(rng, 60);
  IcpResult res = icp_register(cloud, cloud);
  CHECK(res.iterations == 1);
  CHECK(res.converged);
  CHECK((res.transform.rotation - Mat3::Identity()).norm() < 1e-9);
  CHECK(res.transform.translation.norm() < 1e-9);
}

TEST_CASE("icp recovers a small rotation on a noise-free full pair", "[evalharness]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 83, "s");
  PointSet source = sample_shape(spec, 200);
  RigidTransform gt = make_t(5.0 * M_PI / 180.0, 3.0 * M_PI / 180.0,
                             4.0 * M_PI / 180.0, 0.02, -0.03, 0.01);
  PointSet target = apply_transform(source, gt);
  IcpResult res = icp_register(source, target);
  CHECK(geodesic_rotation_error_deg(res.transform.rotation, gt.rotation()) < 0.1);
  CHECK((res.transform.translation - gt.translation).norm() < 1e-3);
}

TEST_CASE("icp correspondence MSE never increases", "[evalharness]") {
  Rng rng(84);
  for (int trial = 0; trial < 5; ++trial) {
    ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 900 + trial, "s");
    PointSet source = sample_shape(spec, 120);
    RigidTransform gt = make_t(rng.uniform(0, 0.4), rng.uniform(0, 0.4),
                               rng.uniform(0, 0.4), rng.uniform(-0.3, 0.3),
                               rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3));
    PointSet target = apply_transform(source, gt);
    IcpResult res = icp_register(source, target);
    for (std::size_t i = 1; i < res.mse_log.size(); ++i)
      CHECK(res.mse_log[i] <= res.mse_log[i - 1] + 1e-15);
  }
}

TEST_CASE("best-fit rigid step beats a brute-force rotation grid", "[evalharness]") {
  // 5-point instance with known correspondences; the closed-form solution
  // must be at least as good as every rotation on a coarse grid (translation
  // solved in closed form per rotation).
  Rng rng(85);
  std::vector<Vec3> src, dst;
  RigidTransform gt = make_t(0.35, 0.2, 0.5, 0.3, -0.1, 0.2);
  Mat3 r_gt = gt.rotation();
  for (int i = 0; i < 5; ++i) {
    Vec3 p(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    src.push_back(p);
    dst.push_back(r_gt * p + gt.translation +
                  0.05 * Vec3(rng.normal(), rng.normal(), rng.normal()));
  }
  RigidMap fit = best_fit_rigid(src, dst);
  auto mse_of = [&](const Mat3& r) {
    Vec3 cs = Vec3::Zero(), cd = Vec3::Zero();
    for (int i = 0; i < 5; ++i) {
      cs += src[static_cast<std::size_t>(i)];
      cd += dst[static_cast<std::size_t>(i)];
    }
    cs /= 5.0;
    cd /= 5.0;
    Vec3 t = cd - r * cs;
    double mse = 0.0;
    for (int i = 0; i < 5; ++i)
      mse += (r * src[static_cast<std::size_t>(i)] + t - dst[static_cast<std::size_t>(i)])
                 .squaredNorm();
    return mse / 5.0;
  };
  const double mse_fit = mse_of(fit.rotation);
  const int n = 24;
  for (int a = 0; a < n; ++a)
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < n; ++c) {
        Mat3 r = rotation_from_angles(Vec3(2 * M_PI * a / n, 2 * M_PI * b / n,
                                           2 * M_PI * c / n));
        CHECK(mse_of(r) >= mse_fit - 1e-12);
      }
}

TEST_CASE("best-fit never returns a reflection, even for degenerate spreads",
          "[evalharness]") {
  // coplanar points (rank-2 covariance)
  std::vector<Vec3> src = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {0.5, 0.5, 0}};
  std::vector<Vec3> dst = src;
  for (Vec3& p : dst) p = Vec3(-p.x(), p.y(), p.z());  // mirrored target
  RigidMap fit = best_fit_rigid(src, dst);
  CHECK(fit.rotation.determinant() == Approx(1.0).margin(1e-9));
}

TEST_CASE("oracle stub zeroes the harness metrics", "[evalharness]") {
  CorpusConfig cc;
  cc.seed = 86;
  cc.shape_count = 2;
  cc.transforms_per_shape = 2;
  cc.points_full = 32;
  cc.points_partial = 24;
  std::vector<CorpusPair> pairs = generate_corpus(cc);
  MetricsReport rep = evaluate_corpus(pairs, oracle_stub_predictor());
  CHECK(rep.mse_r == 0.0);
  CHECK(rep.rmse_t == 0.0);
  CHECK(rep.mae_r == 0.0);
  CHECK(rep.diverged_count() == 0);
}

TEST_CASE("threaded evaluation matches single-threaded results", "[evalharness]") {
  CorpusConfig cc;
  cc.seed = 87;
  cc.shape_count = 3;
  cc.transforms_per_shape = 2;
  cc.points_full = 32;
  cc.points_partial = 24;
  std::vector<CorpusPair> pairs = generate_corpus(cc);
  Predictor icp = icp_predictor();
  MetricsReport serial = evaluate_corpus(pairs, icp, 1);
  MetricsReport threaded = evaluate_corpus(pairs, icp, 3);
  CHECK(serial.mse_r == threaded.mse_r);
  CHECK(serial.mse_t == threaded.mse_t);
  for (std::size_t i = 0; i < serial.per_pair.size(); ++i)
    CHECK(serial.per_pair[i].name == threaded.per_pair[i].name);
}

TEST_CASE("missing sweep emits one row per keep fraction", "[evalharness]") {
  ExperimentConfig cfg;
  cfg.eval_corpus.seed = 88;
  cfg.eval_corpus.shape_count = 1;
  cfg.eval_corpus.transforms_per_shape = 2;
  cfg.eval_corpus.points_full = 64;
  cfg.eval_corpus.points_partial = 48;
  cfg.oracle_stub = true;
  std::vector<ExperimentRow> rows =
      run_experiment(ExperimentKind::missing_sweep, nullptr, nullptr, cfg);
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].label == "48");
  CHECK(rows[1].label == "40");
  CHECK(rows[2].label == "32");
  for (const ExperimentRow& r : rows) CHECK(r.report.mse_r == 0.0);
}

TEST_CASE("ablation experiment pairs rows over the same corpus", "[evalharness]") {
  ExperimentConfig cfg;
  cfg.eval_corpus.seed = 89;
  cfg.eval_corpus.shape_count = 1;
  cfg.eval_corpus.transforms_per_shape = 2;
  cfg.eval_corpus.points_full = 32;
  cfg.eval_corpus.points_partial = 24;
  cfg.oracle_stub = true;
  std::vector<ExperimentRow> rows =
      run_experiment(ExperimentKind::ablation_lambda0, nullptr, nullptr, cfg);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].label == "lambda=0");
  CHECK(rows[1].label == "lambda=0.1");
  REQUIRE(rows[0].report.per_pair.size() == rows[1].report.per_pair.size());
  for (std::size_t i = 0; i < rows[0].report.per_pair.size(); ++i)
    CHECK(rows[0].report.per_pair[i].name == rows[1].report.per_pair[i].name);

  cfg.oracle_stub = false;
  CHECK_THROWS_AS(run_experiment(ExperimentKind::ablation_lambda0, nullptr, nullptr, cfg),
                  std::invalid_argument);
}

TEST_CASE("report CSV keeps the table column order", "[evalharness]") {
  std::vector<ExperimentRow> rows(1);
  rows[0].label = "model";
  rows[0].report.mse_r = 1;
  rows[0].report.rmse_r = 2;
  rows[0].report.mae_r = 3;
  rows[0].report.mse_t = 4;
  rows[0].report.rmse_t = 5;
  rows[0].report.mae_t = 6;
  std::string path =
      (std::filesystem::temp_directory_path() / "latentalign_report.csv").string();
  write_report_csv(path, rows);
  std::ifstream in(path);
  std::string header, body;
  std::getline(in, header);
  std::getline(in, body);
  CHECK(header == "label,MSE(R),RMSE(R),MAE(R),MSE(t),RMSE(t),MAE(t),diverged,pairs");
  CHECK(body.rfind("model,1,2,3,4,5,6", 0) == 0);
  std::remove(path.c_str());
}

TEST_CASE("geodesic error matches the Euler difference for single-axis cases",
          "[evalharness]") {
  const double deg2rad = M_PI / 180.0;
  Mat3 a = rotation_from_angles(Vec3(0, 0, 10 * deg2rad));
  Mat3 b = rotation_from_angles(Vec3(0, 0, 4 * deg2rad));
  CHECK(geodesic_rotation_error_deg(a, b) == Approx(6.0).margin(1e-9));
}
