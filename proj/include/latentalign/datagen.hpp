#pragma once

// Shape sampling and pair construction. Procedural primitives (and meshes)
// stand in for a large shape corpus at desk scale; the pairing protocol -
// per-axis rotations in [0, 45] degrees, translations in [-0.5, 0.5], crop to
// the k nearest neighbours of a random seed point, optional clipped Gaussian
// noise - is preserved exactly. Everything is a pure function of
// (config, seed): each pair derives its own streams from (master seed, pair
// index), so parallel and serial generation emit identical corpora.

#include <latentalign/geometry.hpp>
#include <latentalign/io.hpp>
#include <latentalign/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

// ---- shape specs ---------------------------------------------------------------

enum class PrimitiveKind { sphere, box, cylinder, torus };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  // sphere: p0 = radius
  // box: p0, p1, p2 = half extents
  // cylinder: p0 = radius, p1 = height (capped)
  // torus: p0 = major radius, p1 = minor radius
  double p0 = 1.0, p1 = 1.0, p2 = 1.0;
  Vec3 offset = Vec3::Zero();

  double surface_area() const {
    switch (kind) {
      case PrimitiveKind::sphere:
        return 4.0 * M_PI * p0 * p0;
      case PrimitiveKind::box:
        return 8.0 * (p0 * p1 + p1 * p2 + p0 * p2);
      case PrimitiveKind::cylinder:
        return 2.0 * M_PI * p0 * p1 + 2.0 * M_PI * p0 * p0;
      case PrimitiveKind::torus:
        return 4.0 * M_PI * M_PI * p0 * p1;
    }
    return 0.0;
  }
};

enum class GeneratorKind { sphere, box, cylinder, torus, composite, mesh_file };

struct ShapeSpec {
  GeneratorKind generator = GeneratorKind::sphere;
  std::vector<Primitive> primitives;  // 1, or 2 for composite
  std::string mesh_path;              // for mesh_file
  std::uint64_t seed = 0;
  std::string id;
};

// ---- surface sampling ------------------------------------------------------------

namespace detail {

inline Vec3 sample_sphere_surface(double radius, Rng& rng) {
  // Normalized Gaussian triple is exactly area-uniform on the sphere.
  for (;;) {
    Vec3 v(rng.normal(), rng.normal(), rng.normal());
    double n = v.norm();
    if (n > 1e-12) return (radius / n) * v;
  }
}

inline Vec3 sample_box_surface(double hx, double hy, double hz, Rng& rng) {
  const double ax = hy * hz, ay = hx * hz, az = hx * hy;  // quarter areas per pair
  double u = rng.uniform() * (ax + ay + az);
  double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  double a = rng.uniform(), b = rng.uniform();
  if (u < ax)
    return Vec3(side * hx, (2.0 * a - 1.0) * hy, (2.0 * b - 1.0) * hz);
  if (u < ax + ay)
    return Vec3((2.0 * a - 1.0) * hx, side * hy, (2.0 * b - 1.0) * hz);
  return Vec3((2.0 * a - 1.0) * hx, (2.0 * b - 1.0) * hy, side * hz);
}

inline Vec3 sample_cylinder_surface(double radius, double height, Rng& rng) {
  const double lateral = 2.0 * M_PI * radius * height;
  const double caps = 2.0 * M_PI * radius * radius;
  if (rng.uniform() * (lateral + caps) < lateral) {
    double a = 2.0 * M_PI * rng.uniform();
    double z = (rng.uniform() - 0.5) * height;
    return Vec3(radius * std::cos(a), radius * std::sin(a), z);
  }
  double z = rng.uniform() < 0.5 ? -0.5 * height : 0.5 * height;
  double r = radius * std::sqrt(rng.uniform());
  double a = 2.0 * M_PI * rng.uniform();
  return Vec3(r * std::cos(a), r * std::sin(a), z);
}

inline Vec3 sample_torus_surface(double major, double minor, Rng& rng) {
  // Area element is proportional to (major + minor*cos(phi)); rejection on phi.
  for (;;) {
    double phi = 2.0 * M_PI * rng.uniform();
    double accept = (major + minor * std::cos(phi)) / (major + minor);
    if (rng.uniform() <= accept) {
      double theta = 2.0 * M_PI * rng.uniform();
      double ring = major + minor * std::cos(phi);
      return Vec3(ring * std::cos(theta), ring * std::sin(theta),
                  minor * std::sin(phi));
    }
  }
}

inline Vec3 sample_primitive_surface(const Primitive& prim, Rng& rng) {
  Vec3 p;
  switch (prim.kind) {
    case PrimitiveKind::sphere:
      p = sample_sphere_surface(prim.p0, rng);
      break;
    case PrimitiveKind::box:
      p = sample_box_surface(prim.p0, prim.p1, prim.p2, rng);
      break;
    case PrimitiveKind::cylinder:
      p = sample_cylinder_surface(prim.p0, prim.p1, rng);
      break;
    case PrimitiveKind::torus:
      p = sample_torus_surface(prim.p0, prim.p1, rng);
      break;
  }
  return p + prim.offset;
}

inline double triangle_area(const Vec3& a, const Vec3& b, const Vec3& c) {
  return 0.5 * (b - a).cross(c - a).norm();
}

inline Vec3 sample_triangle(const Vec3& a, const Vec3& b, const Vec3& c, Rng& rng) {
  // sqrt trick gives exact uniform density over the triangle
  double su = std::sqrt(rng.uniform());
  double v = rng.uniform();
  return (1.0 - su) * a + su * (1.0 - v) * b + su * v * c;
}

}  // namespace detail

// Raw surface samples before normalization; exposed for geometric tests.
inline std::vector<Vec3> sample_shape_raw(const ShapeSpec& spec, std::size_t n, Rng& rng) {
  if (n < 1) throw std::invalid_argument("sample_shape_raw: need n >= 1");
  std::vector<Vec3> pts;
  pts.reserve(n);
  if (spec.generator == GeneratorKind::mesh_file) {
    TriangleMesh mesh = read_mesh(spec.mesh_path);
    if (mesh.triangles.empty())
      throw std::invalid_argument("sample_shape_raw: mesh has no faces: " + spec.mesh_path);
    std::vector<double> cumulative;
    cumulative.reserve(mesh.triangles.size());
    double total = 0.0;
    for (const auto& t : mesh.triangles) {
      total += detail::triangle_area(mesh.vertices[t[0]], mesh.vertices[t[1]],
                                     mesh.vertices[t[2]]);
      cumulative.push_back(total);
    }
    if (!(total > 0.0))
      throw std::invalid_argument("sample_shape_raw: degenerate mesh (zero area)");
    for (std::size_t i = 0; i < n; ++i) {
      double u = rng.uniform() * total;
      std::size_t k = static_cast<std::size_t>(
          std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      if (k >= mesh.triangles.size()) k = mesh.triangles.size() - 1;
      const auto& t = mesh.triangles[k];
      pts.push_back(detail::sample_triangle(mesh.vertices[t[0]], mesh.vertices[t[1]],
                                            mesh.vertices[t[2]], rng));
    }
    return pts;
  }

  if (spec.primitives.empty())
    throw std::invalid_argument("sample_shape_raw: no primitives in spec");
  double total_area = 0.0;
  std::vector<double> cumulative;
  for (const Primitive& p : spec.primitives) {
    total_area += p.surface_area();
    cumulative.push_back(total_area);
  }
  if (!(total_area > 0.0))
    throw std::invalid_argument("sample_shape_raw: degenerate spec (zero area)");
  for (std::size_t i = 0; i < n; ++i) {
    double u = rng.uniform() * total_area;
    std::size_t k = static_cast<std::size_t>(
        std::lower_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
    if (k >= spec.primitives.size()) k = spec.primitives.size() - 1;
    pts.push_back(detail::sample_primitive_surface(spec.primitives[k], rng));
  }
  return pts;
}

// n points on the shape surface, centered at the origin and scaled so the
// largest point norm is exactly 1.
inline PointSet sample_shape(const ShapeSpec& spec, std::size_t n) {
  Rng rng = Rng::derive(spec.seed, 0x5a317e5ull);
  std::vector<Vec3> pts = sample_shape_raw(spec, n, rng);
  Vec3 centroid = Vec3::Zero();
  for (const Vec3& p : pts) centroid += p;
  centroid /= static_cast<double>(pts.size());
  double max_norm = 0.0;
  for (Vec3& p : pts) {
    p -= centroid;
    max_norm = std::max(max_norm, p.norm());
  }
  if (!(max_norm > 0.0))
    throw std::invalid_argument("sample_shape: degenerate shape (all points coincide)");
  PointSet ps;
  ps.points.reserve(pts.size());
  for (Vec3& p : pts) ps.points.push_back(p / max_norm);
  ps.tag = PointTag::full;
  ps.source_id = spec.id;
  return ps;
}

// Fresh surface points on the SAME normalized surface that sample_shape(spec,
// n_base) produced: the stream draws the base points first (identically),
// then n_extra more, and the extras are mapped through the base cloud's
// centering and scaling. Used to hold out evaluation points for a shape
// whose base sampling defined the model's coordinate frame.
inline PointSet sample_shape_holdout(const ShapeSpec& spec, std::size_t n_base,
                                     std::size_t n_extra) {
  Rng rng = Rng::derive(spec.seed, 0x5a317e5ull);
  std::vector<Vec3> pts = sample_shape_raw(spec, n_base + n_extra, rng);
  Vec3 centroid = Vec3::Zero();
  for (std::size_t i = 0; i < n_base; ++i) centroid += pts[i];
  centroid /= static_cast<double>(n_base);
  double max_norm = 0.0;
  for (std::size_t i = 0; i < n_base; ++i)
    max_norm = std::max(max_norm, (pts[i] - centroid).norm());
  if (!(max_norm > 0.0))
    throw std::invalid_argument("sample_shape_holdout: degenerate base cloud");
  PointSet ps;
  ps.points.reserve(n_extra);
  for (std::size_t i = n_base; i < pts.size(); ++i)
    ps.points.push_back((pts[i] - centroid) / max_norm);
  ps.tag = PointTag::full;
  ps.source_id = spec.id;
  return ps;
}

// ---- pair construction -------------------------------------------------------------

struct RegistrationPair {
  PointSet source;          // full, canonical pose
  PointSet target_full;     // source under gt, before crop/noise
  PointSet target_partial;  // k nearest neighbours of a random crop seed
  RigidTransform gt;
  double noise_sigma = 0.0;
};

struct TransformConfig {
  double rot_max_deg = 45.0;   // per-axis uniform [0, rot_max_deg]
  double trans_range = 0.5;    // per-axis uniform [-trans_range, trans_range]
};

struct CropConfig {
  std::size_t keep = 768;  // number of target points kept
};

struct NoiseConfig {
  double sigma = 0.0;
  double clip = 0.05;
};

// I.i.d. Gaussian perturbation per coordinate, each component clipped to
// [-clip, clip]. sigma = 0 returns the input unchanged.
inline PointSet add_noise(const PointSet& ps, double sigma, double clip, std::uint64_t seed) {
  if (sigma < 0.0) throw std::invalid_argument("add_noise: sigma must be >= 0");
  if (!(clip > 0.0)) throw std::invalid_argument("add_noise: clip must be > 0");
  if (sigma == 0.0) return ps;
  Rng rng = Rng::derive(seed, 0xad0153ull);
  PointSet out = ps;
  for (Vec3& p : out.points)
    for (int k = 0; k < 3; ++k)
      p[k] += std::clamp(rng.normal(0.0, sigma), -clip, clip);
  return out;
}

// Keeps the k nearest target points around a crop seed drawn uniformly in
// [-1, 1]^3. Kept points preserve their original ordering.
inline PointSet crop_k_nearest(const PointSet& target, std::size_t keep, Rng& rng,
                               Vec3* seed_out = nullptr) {
  if (keep > target.size())
    throw std::invalid_argument("crop_k_nearest: keep count exceeds target size");
  Vec3 seed_point(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
  if (seed_out != nullptr) *seed_out = seed_point;
  std::vector<std::size_t> order(target.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> d(target.size());
  for (std::size_t i = 0; i < target.size(); ++i)
    d[i] = dist_sq(seed_point, target.points[i]);
  std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep) - 1,
                   order.end(), [&](std::size_t a, std::size_t b) {
                     if (d[a] != d[b]) return d[a] < d[b];
                     return a < b;
                   });
  std::vector<std::size_t> kept(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep));
  std::sort(kept.begin(), kept.end());
  PointSet out;
  out.points.reserve(keep);
  for (std::size_t i : kept) out.points.push_back(target.points[i]);
  out.tag = PointTag::partial;
  out.source_id = target.source_id;
  return out;
}

inline RegistrationPair make_pair(const ShapeSpec& spec, std::size_t n_full,
                                  const TransformConfig& tcfg, const CropConfig& ccfg,
                                  const NoiseConfig& ncfg, std::uint64_t seed) {
  if (ccfg.keep > n_full)
    throw std::invalid_argument("make_pair: crop keep count exceeds sample count");
  RegistrationPair pair;
  pair.source = sample_shape(spec, n_full);

  Rng trng = Rng::derive(seed, 0x7f01ull);
  const double deg2rad = M_PI / 180.0;
  pair.gt.angles = Vec3(trng.uniform(0.0, tcfg.rot_max_deg) * deg2rad,
                        trng.uniform(0.0, tcfg.rot_max_deg) * deg2rad,
                        trng.uniform(0.0, tcfg.rot_max_deg) * deg2rad);
  pair.gt.translation = Vec3(trng.uniform(-tcfg.trans_range, tcfg.trans_range),
                             trng.uniform(-tcfg.trans_range, tcfg.trans_range),
                             trng.uniform(-tcfg.trans_range, tcfg.trans_range));

  pair.target_full = apply_transform(pair.source, pair.gt);
  Rng crng = Rng::derive(seed, 0xc809ull);
  pair.target_partial = crop_k_nearest(pair.target_full, ccfg.keep, crng);

  pair.noise_sigma = ncfg.sigma;
  if (ncfg.sigma > 0.0) {
    pair.source = add_noise(pair.source, ncfg.sigma, ncfg.clip, mix_seed(seed, 0xa01ull));
    pair.target_partial =
        add_noise(pair.target_partial, ncfg.sigma, ncfg.clip, mix_seed(seed, 0xa02ull));
  }
  return pair;
}

// ---- SDF training samples ------------------------------------------------------------

struct SdfSampleConfig {
  int perturbed_per_point = 3;
  double perturb_std = 0.2;
  double clamp = 0.03;
};

// For each target point: `perturbed_per_point` Gaussian-perturbed locations
// whose distance is the (clamped) nearest distance back to the target set,
// plus the point itself as an on-surface sample with distance zero.
inline std::vector<SdfSample> make_sdf_samples(const PointSet& target, std::uint64_t seed,
                                               const SdfSampleConfig& cfg = {}) {
  if (target.empty()) throw std::invalid_argument("make_sdf_samples: empty target");
  Rng rng = Rng::derive(seed, 0x5dfull);
  KdTree3 tree(target.points);
  std::vector<SdfSample> samples;
  samples.reserve(target.size() * static_cast<std::size_t>(cfg.perturbed_per_point + 1));
  for (const Vec3& p : target.points) {
    for (int k = 0; k < cfg.perturbed_per_point; ++k) {
      Vec3 q = p + Vec3(rng.normal(0.0, cfg.perturb_std), rng.normal(0.0, cfg.perturb_std),
                        rng.normal(0.0, cfg.perturb_std));
      double d = std::sqrt(tree.nearest(q).dist_sq);
      samples.push_back({q, std::min(d, cfg.clamp)});
    }
    samples.push_back({p, 0.0});
  }
  return samples;
}

// ---- corpus --------------------------------------------------------------------------

struct CorpusConfig {
  std::uint64_t seed = 1;
  std::uint64_t shape_seed = 0;  // 0: follow `seed`; shapes get their own stream
  int shape_count = 8;
  int transforms_per_shape = 4;
  std::vector<std::string> generators = {"composite"};
  std::vector<std::string> mesh_files;  // extra shapes appended after procedural ones
  std::size_t points_full = 1024;
  std::size_t points_partial = 768;
  TransformConfig transform;
  NoiseConfig noise;
  std::string sdf_from = "full";  // "full" for training corpora, "partial" for evaluation
  SdfSampleConfig sdf;

  std::uint64_t effective_shape_seed() const { return shape_seed ? shape_seed : seed; }
};

inline GeneratorKind generator_from_name(const std::string& name) {
  if (name == "sphere") return GeneratorKind::sphere;
  if (name == "box") return GeneratorKind::box;
  if (name == "cylinder") return GeneratorKind::cylinder;
  if (name == "torus") return GeneratorKind::torus;
  if (name == "composite") return GeneratorKind::composite;
  if (name == "mesh_file") return GeneratorKind::mesh_file;
  throw std::invalid_argument("unknown generator: " + name);
}

namespace detail {

inline Primitive random_primitive(Rng& rng, double scale, bool allow_sphere) {
  Primitive prim;
  int kinds = allow_sphere ? 4 : 3;
  switch (rng.uniform_int(0, kinds - 1)) {
    case 0:
      prim.kind = PrimitiveKind::box;
      prim.p0 = scale * rng.uniform(0.35, 1.0);
      prim.p1 = scale * rng.uniform(0.35, 1.0);
      prim.p2 = scale * rng.uniform(0.35, 1.0);
      break;
    case 1:
      prim.kind = PrimitiveKind::cylinder;
      prim.p0 = scale * rng.uniform(0.3, 0.7);
      prim.p1 = scale * rng.uniform(1.0, 2.0);
      break;
    case 2:
      prim.kind = PrimitiveKind::torus;
      prim.p0 = scale * rng.uniform(0.6, 1.0);
      prim.p1 = scale * rng.uniform(0.15, 0.35);
      break;
    default:
      prim.kind = PrimitiveKind::sphere;
      prim.p0 = scale * rng.uniform(0.5, 1.0);
      break;
  }
  return prim;
}

}  // namespace detail

// Draws a concrete shape from a generator family. Composites pair two
// differently-sized primitives at an offset, which breaks the rotational
// symmetries that would make ground-truth rotations unrecoverable.
inline ShapeSpec make_shape_spec(GeneratorKind kind, std::uint64_t seed,
                                 const std::string& id, const std::string& mesh_path = "") {
  ShapeSpec spec;
  spec.generator = kind;
  spec.seed = seed;
  spec.id = id;
  Rng rng = Rng::derive(seed, 0x54ac3ull);
  switch (kind) {
    case GeneratorKind::sphere: {
      Primitive p;
      p.kind = PrimitiveKind::sphere;
      p.p0 = 1.0;
      spec.primitives.push_back(p);
      break;
    }
    case GeneratorKind::box: {
      Primitive p;
      p.kind = PrimitiveKind::box;
      p.p0 = rng.uniform(0.35, 1.0);
      p.p1 = rng.uniform(0.35, 1.0);
      p.p2 = rng.uniform(0.35, 1.0);
      spec.primitives.push_back(p);
      break;
    }
    case GeneratorKind::cylinder: {
      Primitive p;
      p.kind = PrimitiveKind::cylinder;
      p.p0 = rng.uniform(0.3, 0.7);
      p.p1 = rng.uniform(1.0, 2.0);
      spec.primitives.push_back(p);
      break;
    }
    case GeneratorKind::torus: {
      Primitive p;
      p.kind = PrimitiveKind::torus;
      p.p0 = rng.uniform(0.6, 1.0);
      p.p1 = rng.uniform(0.15, 0.35);
      spec.primitives.push_back(p);
      break;
    }
    case GeneratorKind::composite: {
      Primitive a = detail::random_primitive(rng, 1.0, false);
      Primitive b = detail::random_primitive(rng, 0.55, true);
      double phi = rng.uniform(0.0, 2.0 * M_PI);
      double cz = rng.uniform(-0.6, 0.6);
      Vec3 dir(std::cos(phi), std::sin(phi), cz);
      b.offset = dir.normalized() * rng.uniform(0.9, 1.4);
      spec.primitives.push_back(a);
      spec.primitives.push_back(b);
      break;
    }
    case GeneratorKind::mesh_file:
      spec.mesh_path = mesh_path;
      break;
  }
  return spec;
}

inline std::vector<ShapeSpec> corpus_shapes(const CorpusConfig& cfg) {
  std::vector<ShapeSpec> shapes;
  const std::uint64_t sseed = cfg.effective_shape_seed();
  for (int i = 0; i < cfg.shape_count; ++i) {
    const std::string& gen = cfg.generators[static_cast<std::size_t>(i) % cfg.generators.size()];
    char id[32];
    std::snprintf(id, sizeof(id), "shape%03d", i);
    shapes.push_back(make_shape_spec(generator_from_name(gen), mix_seed(sseed, i + 1), id));
  }
  for (std::size_t m = 0; m < cfg.mesh_files.size(); ++m) {
    char id[32];
    std::snprintf(id, sizeof(id), "mesh%03zu", m);
    shapes.push_back(make_shape_spec(GeneratorKind::mesh_file,
                                     mix_seed(sseed, 0x300 + m), id, cfg.mesh_files[m]));
  }
  return shapes;
}

struct CorpusPair {
  std::string name;
  RegistrationPair pair;
  std::vector<SdfSample> sdf_samples;
};

// Pure function of (config): pair p of shape s uses streams derived from the
// master seed and the pair index only.
inline CorpusPair generate_pair(const CorpusConfig& cfg, const std::vector<ShapeSpec>& shapes,
                                std::size_t pair_index) {
  const std::size_t shape_index = pair_index / static_cast<std::size_t>(cfg.transforms_per_shape);
  if (shape_index >= shapes.size())
    throw std::invalid_argument("generate_pair: pair index out of range");
  const std::uint64_t pair_seed = mix_seed(cfg.seed, pair_index + 1);

  CorpusPair cp;
  char name[32];
  std::snprintf(name, sizeof(name), "pair_%04zu", pair_index);
  cp.name = name;
  CropConfig crop{cfg.points_partial};
  cp.pair = make_pair(shapes[shape_index], cfg.points_full, cfg.transform, crop, cfg.noise,
                      pair_seed);
  const PointSet& sdf_target =
      cfg.sdf_from == "partial" ? cp.pair.target_partial : cp.pair.target_full;
  cp.sdf_samples = make_sdf_samples(sdf_target, mix_seed(pair_seed, 0x5d1ull), cfg.sdf);
  return cp;
}

inline std::size_t corpus_pair_count(const CorpusConfig& cfg) {
  return (static_cast<std::size_t>(cfg.shape_count) + cfg.mesh_files.size()) *
         static_cast<std::size_t>(cfg.transforms_per_shape);
}

inline std::vector<CorpusPair> generate_corpus(const CorpusConfig& cfg) {
  std::vector<ShapeSpec> shapes = corpus_shapes(cfg);
  std::vector<CorpusPair> pairs;
  const std::size_t count = corpus_pair_count(cfg);
  pairs.reserve(count);
  for (std::size_t i = 0; i < count; ++i) pairs.push_back(generate_pair(cfg, shapes, i));
  return pairs;
}

// ---- corpus config JSON ---------------------------------------------------------------

inline nlohmann::ordered_json corpus_config_to_json(const CorpusConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["shape_seed"] = c.shape_seed;
  j["shape_count"] = c.shape_count;
  j["transforms_per_shape"] = c.transforms_per_shape;
  j["generators"] = c.generators;
  j["mesh_files"] = c.mesh_files;
  j["points_full"] = c.points_full;
  j["points_partial"] = c.points_partial;
  j["rot_max_deg"] = c.transform.rot_max_deg;
  j["trans_range"] = c.transform.trans_range;
  j["noise_sigma"] = c.noise.sigma;
  j["noise_clip"] = c.noise.clip;
  j["sdf_from"] = c.sdf_from;
  j["sdf_perturbed_per_point"] = c.sdf.perturbed_per_point;
  j["sdf_perturb_std"] = c.sdf.perturb_std;
  j["sdf_clamp"] = c.sdf.clamp;
  return j;
}

inline CorpusConfig corpus_config_from_json(const nlohmann::json& j) {
  CorpusConfig c;
  c.seed = j.value("seed", c.seed);
  c.shape_seed = j.value("shape_seed", c.shape_seed);
  c.shape_count = j.value("shape_count", c.shape_count);
  c.transforms_per_shape = j.value("transforms_per_shape", c.transforms_per_shape);
  if (j.contains("generators")) c.generators = j.at("generators").get<std::vector<std::string>>();
  if (j.contains("mesh_files")) c.mesh_files = j.at("mesh_files").get<std::vector<std::string>>();
  c.points_full = j.value("points_full", c.points_full);
  c.points_partial = j.value("points_partial", c.points_partial);
  c.transform.rot_max_deg = j.value("rot_max_deg", c.transform.rot_max_deg);
  c.transform.trans_range = j.value("trans_range", c.transform.trans_range);
  c.noise.sigma = j.value("noise_sigma", c.noise.sigma);
  c.noise.clip = j.value("noise_clip", c.noise.clip);
  c.sdf_from = j.value("sdf_from", c.sdf_from);
  c.sdf.perturbed_per_point = j.value("sdf_perturbed_per_point", c.sdf.perturbed_per_point);
  c.sdf.perturb_std = j.value("sdf_perturb_std", c.sdf.perturb_std);
  c.sdf.clamp = j.value("sdf_clamp", c.sdf.clamp);
  if (c.generators.empty() && c.mesh_files.empty())
    throw std::invalid_argument("corpus config: no generators or mesh files");
  if (c.points_partial > c.points_full)
    throw std::invalid_argument("corpus config: points_partial exceeds points_full");
  if (c.shape_count < 0 || c.transforms_per_shape < 1)
    throw std::invalid_argument("corpus config: bad shape/transform counts");
  if (c.sdf_from != "full" && c.sdf_from != "partial")
    throw std::invalid_argument("corpus config: sdf_from must be 'full' or 'partial'");
  return c;
}

// ---- corpus directory I/O ----------------------------------------------------------------

inline void write_gt_json(const std::string& path, const RegistrationPair& pair) {
  nlohmann::ordered_json j;
  const double rad2deg = 180.0 / M_PI;
  j["angles_deg"] = {pair.gt.angles.x() * rad2deg, pair.gt.angles.y() * rad2deg,
                     pair.gt.angles.z() * rad2deg};
  j["translation"] = {pair.gt.translation.x(), pair.gt.translation.y(),
                      pair.gt.translation.z()};
  j["noise_sigma"] = pair.noise_sigma;
  j["source_id"] = pair.source.source_id;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_gt_json: cannot open " + path);
  out << j.dump(2) << '\n';
}

inline RigidTransform read_gt_json(const std::string& path, double* noise_sigma = nullptr,
                                   std::string* source_id = nullptr) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_gt_json: cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in);
  RigidTransform t;
  const double deg2rad = M_PI / 180.0;
  for (int k = 0; k < 3; ++k) {
    t.angles[k] = j.at("angles_deg").at(k).get<double>() * deg2rad;
    t.translation[k] = j.at("translation").at(k).get<double>();
  }
  if (noise_sigma != nullptr) *noise_sigma = j.value("noise_sigma", 0.0);
  if (source_id != nullptr) *source_id = j.value("source_id", std::string());
  return t;
}

inline void write_sdf_csv(const std::string& path, const std::vector<SdfSample>& samples) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sdf_csv: cannot open " + path);
  out << "x,y,z,distance\n";
  for (const SdfSample& s : samples)
    out << fmt_double(s.location.x()) << ',' << fmt_double(s.location.y()) << ','
        << fmt_double(s.location.z()) << ',' << fmt_double(s.distance) << '\n';
}

inline std::vector<SdfSample> read_sdf_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_sdf_csv: cannot open " + path);
  std::string line;
  std::getline(in, line);  // header
  std::vector<SdfSample> samples;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    SdfSample s;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &s.location.x(), &s.location.y(),
                    &s.location.z(), &s.distance) != 4)
      throw std::runtime_error("read_sdf_csv: bad row in " + path);
    samples.push_back(s);
  }
  return samples;
}

inline void write_pair_dir(const std::string& dir, const CorpusPair& cp) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  write_ply(dir + "/source.ply", cp.pair.source);
  write_ply(dir + "/target_full.ply", cp.pair.target_full);
  write_ply(dir + "/target_partial.ply", cp.pair.target_partial);
  write_gt_json(dir + "/gt.json", cp.pair);
  write_sdf_csv(dir + "/sdf_samples.csv", cp.sdf_samples);
}

inline CorpusPair read_pair_dir(const std::string& dir) {
  CorpusPair cp;
  cp.name = std::filesystem::path(dir).filename().string();
  cp.pair.source = read_ply(dir + "/source.ply");
  cp.pair.source.tag = PointTag::full;
  cp.pair.target_full = read_ply(dir + "/target_full.ply");
  cp.pair.target_full.tag = PointTag::transformed;
  cp.pair.target_partial = read_ply(dir + "/target_partial.ply");
  cp.pair.target_partial.tag = PointTag::partial;
  std::string source_id;
  cp.pair.gt = read_gt_json(dir + "/gt.json", &cp.pair.noise_sigma, &source_id);
  cp.pair.source.source_id = source_id;
  cp.pair.target_full.source_id = source_id;
  cp.pair.target_partial.source_id = source_id;
  cp.sdf_samples = read_sdf_csv(dir + "/sdf_samples.csv");
  return cp;
}

inline void write_corpus(const std::string& dir, const CorpusConfig& cfg,
                         const std::vector<CorpusPair>& pairs) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(dir + "/config.json");
    if (!out) throw std::runtime_error("write_corpus: cannot open config.json");
    out << corpus_config_to_json(cfg).dump(2) << '\n';
  }
  for (const CorpusPair& cp : pairs) write_pair_dir(dir + "/" + cp.name, cp);
}

inline std::vector<CorpusPair> read_corpus(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_directory() && entry.path().filename().string().rfind("pair_", 0) == 0)
      names.push_back(entry.path().string());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw std::runtime_error("read_corpus: no pair_* directories in " + dir);
  std::vector<CorpusPair> pairs;
  pairs.reserve(names.size());
  for (const std::string& n : names) pairs.push_back(read_pair_dir(n));
  return pairs;
}

}  // namespace lalign
