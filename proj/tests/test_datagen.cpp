#include <latentalign/datagen.hpp>

#include <catch2/catch.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

using namespace lalign;

namespace {
std::string temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::create_directories(p);
  return p.string();
}

ShapeSpec single_primitive(PrimitiveKind kind, double p0, double p1 = 1.0,
                           double p2 = 1.0) {
  ShapeSpec spec;
  spec.generator = GeneratorKind::sphere;  // unused by sample_shape_raw
  Primitive prim;
  prim.kind = kind;
  prim.p0 = p0;
  prim.p1 = p1;
  prim.p2 = p2;
  spec.primitives.push_back(prim);
  return spec;
}
}  // namespace

TEST_CASE("sphere samples sit on the unit sphere before normalization", "[datagen]") {
  Rng rng(50);
  ShapeSpec spec = single_primitive(PrimitiveKind::sphere, 1.0);
  for (const Vec3& p : sample_shape_raw(spec, 500, rng))
    CHECK(std::abs(p.norm() - 1.0) < 1e-12);
}

TEST_CASE("box samples lie on one of the six faces", "[datagen]") {
  Rng rng(51);
  const double hx = 0.7, hy = 0.4, hz = 0.9;
  ShapeSpec spec = single_primitive(PrimitiveKind::box, hx, hy, hz);
  for (const Vec3& p : sample_shape_raw(spec, 500, rng)) {
    const bool on_x = std::abs(std::abs(p.x()) - hx) < 1e-12 &&
                      std::abs(p.y()) <= hy + 1e-12 && std::abs(p.z()) <= hz + 1e-12;
    const bool on_y = std::abs(std::abs(p.y()) - hy) < 1e-12 &&
                      std::abs(p.x()) <= hx + 1e-12 && std::abs(p.z()) <= hz + 1e-12;
    const bool on_z = std::abs(std::abs(p.z()) - hz) < 1e-12 &&
                      std::abs(p.x()) <= hx + 1e-12 && std::abs(p.y()) <= hy + 1e-12;
    CHECK((on_x || on_y || on_z));
  }
}

TEST_CASE("cylinder and torus samples satisfy their surface equations", "[datagen]") {
  Rng rng(52);
  ShapeSpec cyl = single_primitive(PrimitiveKind::cylinder, 0.5, 1.4);
  for (const Vec3& p : sample_shape_raw(cyl, 400, rng)) {
    const double r = std::hypot(p.x(), p.y());
    const bool lateral = std::abs(r - 0.5) < 1e-12 && std::abs(p.z()) <= 0.7 + 1e-12;
    const bool cap = std::abs(std::abs(p.z()) - 0.7) < 1e-12 && r <= 0.5 + 1e-12;
    CHECK((lateral || cap));
  }

  ShapeSpec tor = single_primitive(PrimitiveKind::torus, 0.8, 0.2);
  for (const Vec3& p : sample_shape_raw(tor, 400, rng)) {
    const double ring = std::hypot(p.x(), p.y()) - 0.8;
    CHECK(std::abs(std::hypot(ring, p.z()) - 0.2) < 1e-12);
  }
}

TEST_CASE("mesh sampling keeps points on the triangle planes", "[datagen]") {
  std::string dir = temp_dir("latentalign_datagen");
  std::string path = dir + "/tetra.off";
  {
    std::ofstream out(path);
    out << "OFF\n4 4 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n"
        << "3 0 2 1\n3 0 1 3\n3 0 3 2\n3 1 2 3\n";
  }
  ShapeSpec spec;
  spec.generator = GeneratorKind::mesh_file;
  spec.mesh_path = path;
  Rng rng(53);
  TriangleMesh mesh = read_mesh(path);
  for (const Vec3& p : sample_shape_raw(spec, 300, rng)) {
    bool on_any = false;
    for (const auto& t : mesh.triangles) {
      const Vec3 a = mesh.vertices[t[0]];
      const Vec3 n = (mesh.vertices[t[1]] - a).cross(mesh.vertices[t[2]] - a);
      if (std::abs(n.normalized().dot(p - a)) < 1e-9) on_any = true;
    }
    CHECK(on_any);
  }
  std::remove(path.c_str());
}

TEST_CASE("sample_shape normalizes to the unit ball with zero centroid", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 77, "s");
  PointSet ps = sample_shape(spec, 256);
  REQUIRE(ps.size() == 256);
  double max_norm = 0.0;
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : ps.points) {
    max_norm = std::max(max_norm, p.norm());
    centroid += p;
  }
  CHECK(max_norm == Approx(1.0).margin(1e-12));
  CHECK((centroid / 256.0).norm() < 1e-12);

  PointSet again = sample_shape(spec, 256);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(ps.points[i] == again.points[i]);
}

TEST_CASE("holdout samples live on the same normalized surface", "[datagen]") {
  const double hx = 0.7, hy = 0.4, hz = 0.9;
  ShapeSpec spec = single_primitive(PrimitiveKind::box, hx, hy, hz);
  spec.seed = 99;

  // reconstruct the base cloud's normalization
  Rng rng = Rng::derive(spec.seed, 0x5a317e5ull);
  std::vector<Vec3> raw = sample_shape_raw(spec, 64, rng);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : raw) centroid += p;
  centroid /= 64.0;
  double max_norm = 0.0;
  for (const Vec3& p : raw) max_norm = std::max(max_norm, (p - centroid).norm());

  PointSet holdout = sample_shape_holdout(spec, 64, 100);
  REQUIRE(holdout.size() == 100);
  for (const Vec3& q : holdout.points) {
    Vec3 p = q * max_norm + centroid;  // undo the base normalization
    const bool on_x = std::abs(std::abs(p.x()) - hx) < 1e-9;
    const bool on_y = std::abs(std::abs(p.y()) - hy) < 1e-9;
    const bool on_z = std::abs(std::abs(p.z()) - hz) < 1e-9;
    CHECK((on_x || on_y || on_z));
  }

  // the base stream is untouched: sample_shape still returns the same cloud
  PointSet base = sample_shape(spec, 64);
  PointSet base2 = sample_shape(spec, 64);
  for (std::size_t i = 0; i < 64; ++i) CHECK(base.points[i] == base2.points[i]);
}

TEST_CASE("degenerate specs are rejected", "[datagen]") {
  ShapeSpec spec = single_primitive(PrimitiveKind::box, 0.0, 0.0, 0.0);
  Rng rng(54);
  CHECK_THROWS_AS(sample_shape_raw(spec, 10, rng), std::invalid_argument);
  ShapeSpec none;
  none.primitives.clear();
  CHECK_THROWS_AS(sample_shape_raw(none, 10, rng), std::invalid_argument);
}

TEST_CASE("make_pair honours the protocol ranges and correspondence", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 5, "s");
  TransformConfig tc;
  CropConfig cc{96};
  NoiseConfig nc;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    RegistrationPair pair = make_pair(spec, 128, tc, cc, nc, seed);
    REQUIRE(pair.source.size() == 128);
    REQUIRE(pair.target_full.size() == 128);
    REQUIRE(pair.target_partial.size() == 96);
    for (int k = 0; k < 3; ++k) {
      CHECK(pair.gt.angles[k] >= 0.0);
      CHECK(pair.gt.angles[k] <= M_PI / 4);
      CHECK(std::abs(pair.gt.translation[k]) <= 0.5);
    }
    // exact correspondence by construction, before noise
    CHECK(clipped_chamfer(apply_transform(pair.source, pair.gt), pair.target_full,
                          INFINITY) == 0.0);
    // partial is a subset of the full target
    std::set<std::string> full_pts;
    for (const Vec3& p : pair.target_full.points)
      full_pts.insert(fmt_double(p.x()) + "," + fmt_double(p.y()) + "," + fmt_double(p.z()));
    for (const Vec3& p : pair.target_partial.points)
      CHECK(full_pts.count(fmt_double(p.x()) + "," + fmt_double(p.y()) + "," +
                           fmt_double(p.z())) == 1);
  }
}

TEST_CASE("make_pair rejects keep counts above the sample count", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::box, 77, "s");
  CHECK_THROWS_AS(make_pair(spec, 32, {}, CropConfig{33}, {}, 1), std::invalid_argument);
  PointSet empty;
  CHECK_THROWS_AS(make_sdf_samples(empty, 1), std::invalid_argument);
}

TEST_CASE("make_pair with keep = n returns the whole target", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::box, 6, "s");
  RegistrationPair pair = make_pair(spec, 64, {}, CropConfig{64}, {}, 3);
  REQUIRE(pair.target_partial.size() == 64);
  for (std::size_t i = 0; i < 64; ++i)
    CHECK(pair.target_partial.points[i] == pair.target_full.points[i]);
}

TEST_CASE("make_pair is bit-identical for a fixed seed", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 9, "s");
  RegistrationPair a = make_pair(spec, 64, {}, CropConfig{48}, {}, 42);
  RegistrationPair b = make_pair(spec, 64, {}, CropConfig{48}, {}, 42);
  CHECK(a.gt.angles == b.gt.angles);
  CHECK(a.gt.translation == b.gt.translation);
  for (std::size_t i = 0; i < a.source.size(); ++i)
    CHECK(a.source.points[i] == b.source.points[i]);
  for (std::size_t i = 0; i < a.target_partial.size(); ++i)
    CHECK(a.target_partial.points[i] == b.target_partial.points[i]);
}

TEST_CASE("crop keeps exactly the k nearest points (sort oracle)", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 13, "s");
  PointSet target = sample_shape(spec, 128);
  Rng rng(11);
  Vec3 crop_seed;
  PointSet partial = crop_k_nearest(target, 96, rng, &crop_seed);
  REQUIRE(partial.size() == 96);
  CHECK(partial.tag == PointTag::partial);

  // sort-based oracle: k smallest distances to the crop seed
  std::vector<double> dists;
  for (const Vec3& p : target.points) dists.push_back(dist_sq(crop_seed, p));
  std::vector<double> sorted = dists;
  std::sort(sorted.begin(), sorted.end());

  // the kept distance multiset is exactly the 96 smallest distances
  std::multiset<double> kept_set;
  for (const Vec3& p : partial.points) kept_set.insert(dist_sq(crop_seed, p));
  std::multiset<double> expect(sorted.begin(), sorted.begin() + 96);
  CHECK(kept_set == expect);
  // max kept distance does not exceed the smallest discarded distance
  CHECK(*kept_set.rbegin() <= sorted[96]);
}

TEST_CASE("add_noise: zero sigma is the identity, clip bounds hold", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::box, 21, "s");
  PointSet ps = sample_shape(spec, 200);
  PointSet same = add_noise(ps, 0.0, 0.05, 1);
  for (std::size_t i = 0; i < ps.size(); ++i) CHECK(same.points[i] == ps.points[i]);

  // paper setting: sigma 0.01, clip 0.05
  PointSet noisy = add_noise(ps, 0.01, 0.05, 2);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (int k = 0; k < 3; ++k)
      CHECK(std::abs(noisy.points[i][k] - ps.points[i][k]) <= 0.05);

  CHECK_THROWS_AS(add_noise(ps, -1.0, 0.05, 1), std::invalid_argument);
  CHECK_THROWS_AS(add_noise(ps, 0.01, 0.0, 1), std::invalid_argument);
}

TEST_CASE("add_noise empirical std matches the clipped-normal moment", "[datagen]") {
  // Analytic second moment of clip(X, [-c, c]) for X ~ N(0, sigma^2):
  //   E[Y^2] = sigma^2 (1 - 2 Phi(-a) - 2 a phi(a)) + c^2 * 2 Phi(-a),  a = c/sigma
  auto clipped_std = [](double sigma, double c) {
    const double a = c / sigma;
    const double phi = std::exp(-0.5 * a * a) / std::sqrt(2.0 * M_PI);
    const double tail = 0.5 * std::erfc(a / std::sqrt(2.0));
    return std::sqrt(sigma * sigma * (1.0 - 2.0 * tail - 2.0 * a * phi) +
                     c * c * 2.0 * tail);
  };

  PointSet big;
  const int n = 334000;  // ~1e6 coordinates
  big.points.assign(n, Vec3::Zero());

  for (auto [sigma, clip] : {std::pair{0.04, 0.05}, std::pair{0.01, 0.05}}) {
    PointSet noisy = add_noise(big, sigma, clip, 77);
    double sum2 = 0.0;
    for (const Vec3& p : noisy.points) sum2 += p.squaredNorm();
    const double emp = std::sqrt(sum2 / (3.0 * n));
    const double ana = clipped_std(sigma, clip);
    CHECK(std::abs(emp - ana) / ana < 0.05);
  }
}

TEST_CASE("make_sdf_samples structure and distance oracle", "[datagen]") {
  ShapeSpec spec = make_shape_spec(GeneratorKind::composite, 31, "s");
  PointSet target = sample_shape(spec, 100);
  SdfSampleConfig cfg;
  std::vector<SdfSample> samples = make_sdf_samples(target, 5, cfg);
  REQUIRE(samples.size() == 4 * target.size());

  for (std::size_t i = 0; i < target.size(); ++i) {
    const SdfSample& surf = samples[4 * i + 3];
    CHECK(surf.distance == 0.0);
    CHECK(surf.location == target.points[i]);
  }
  for (const SdfSample& s : samples) {
    CHECK(s.distance >= 0.0);
    CHECK(s.distance <= cfg.clamp);
    // linear-scan oracle, exact up to the shared clamp
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : target.points) {
      double dx = p.x() - s.location.x(), dy = p.y() - s.location.y(),
             dz = p.z() - s.location.z();
      best = std::min(best, (dx * dx + dy * dy) + dz * dz);
    }
    CHECK(s.distance == std::min(std::sqrt(best), cfg.clamp));
  }

  // huge clamp: stored distances are the exact unclamped nearest distances
  SdfSampleConfig loose;
  loose.clamp = 100.0;
  std::vector<SdfSample> raw = make_sdf_samples(target, 5, loose);
  for (const SdfSample& s : raw) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& p : target.points) {
      double dx = p.x() - s.location.x(), dy = p.y() - s.location.y(),
             dz = p.z() - s.location.z();
      best = std::min(best, (dx * dx + dy * dy) + dz * dz);
    }
    CHECK(s.distance == std::sqrt(best));
  }
}

TEST_CASE("corpus write/read round-trips and regenerates identically", "[datagen]") {
  CorpusConfig cfg;
  cfg.seed = 9;
  cfg.shape_count = 2;
  cfg.transforms_per_shape = 2;
  cfg.points_full = 48;
  cfg.points_partial = 36;
  cfg.generators = {"composite", "box"};

  std::vector<CorpusPair> pairs = generate_corpus(cfg);
  REQUIRE(pairs.size() == 4);

  std::string dir = temp_dir("latentalign_corpus");
  std::filesystem::remove_all(dir);
  write_corpus(dir, cfg, pairs);
  std::string dir2 = temp_dir("latentalign_corpus2");
  std::filesystem::remove_all(dir2);
  write_corpus(dir2, cfg, generate_corpus(cfg));

  // byte-identical regeneration
  for (const CorpusPair& cp : pairs) {
    for (const char* f : {"/source.ply", "/target_full.ply", "/target_partial.ply",
                          "/gt.json", "/sdf_samples.csv"}) {
      std::ifstream a(dir + "/" + cp.name + f), b(dir2 + "/" + cp.name + f);
      std::stringstream sa, sb;
      sa << a.rdbuf();
      sb << b.rdbuf();
      CHECK(sa.str() == sb.str());
    }
  }

  std::vector<CorpusPair> back = read_corpus(dir);
  REQUIRE(back.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(back[i].name == pairs[i].name);
    REQUIRE(back[i].pair.source.size() == pairs[i].pair.source.size());
    for (std::size_t k = 0; k < pairs[i].pair.source.size(); ++k)
      CHECK(back[i].pair.source.points[k] == pairs[i].pair.source.points[k]);
    REQUIRE(back[i].sdf_samples.size() == pairs[i].sdf_samples.size());
    for (std::size_t k = 0; k < pairs[i].sdf_samples.size(); ++k)
      CHECK(back[i].sdf_samples[k].distance == pairs[i].sdf_samples[k].distance);
    CHECK((back[i].pair.gt.translation - pairs[i].pair.gt.translation).norm() == 0.0);
    CHECK((back[i].pair.gt.angles - pairs[i].pair.gt.angles).norm() < 1e-15);
  }
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("corpus config JSON round-trips", "[datagen]") {
  CorpusConfig cfg;
  cfg.seed = 123;
  cfg.shape_seed = 7;
  cfg.noise.sigma = 0.01;
  cfg.sdf_from = "partial";
  CorpusConfig back = corpus_config_from_json(corpus_config_to_json(cfg));
  CHECK(back.seed == cfg.seed);
  CHECK(back.shape_seed == cfg.shape_seed);
  CHECK(back.noise.sigma == cfg.noise.sigma);
  CHECK(back.sdf_from == "partial");
  CHECK_THROWS_AS(corpus_config_from_json(nlohmann::json{{"sdf_from", "nope"}}),
                  std::invalid_argument);
}
