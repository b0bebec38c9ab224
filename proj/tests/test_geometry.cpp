#include <latentalign/geometry.hpp>
#include <latentalign/rng.hpp>

#include <catch2/catch.hpp>

#include <cmath>

using namespace lalign;

namespace {

// Independent rotation oracle: compose per-axis quaternions qz * qy * qx and
// convert to a matrix. Shares no code with rotation_from_angles.
struct Quat {
  double w, x, y, z;
};

Quat quat_mul(const Quat& a, const Quat& b) {
  return {a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
          a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
          a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
          a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w};
}

Quat axis_quat(int axis, double angle) {
  Quat q{std::cos(angle / 2.0), 0.0, 0.0, 0.0};
  double s = std::sin(angle / 2.0);
  if (axis == 0) q.x = s;
  if (axis == 1) q.y = s;
  if (axis == 2) q.z = s;
  return q;
}

Mat3 quat_to_matrix(const Quat& q) {
  Mat3 m;
  m << 1 - 2 * (q.y * q.y + q.z * q.z), 2 * (q.x * q.y - q.w * q.z),
      2 * (q.x * q.z + q.w * q.y), 2 * (q.x * q.y + q.w * q.z),
      1 - 2 * (q.x * q.x + q.z * q.z), 2 * (q.y * q.z - q.w * q.x),
      2 * (q.x * q.z - q.w * q.y), 2 * (q.y * q.z + q.w * q.x),
      1 - 2 * (q.x * q.x + q.y * q.y);
  return m;
}

Mat3 rotation_oracle(const Vec3& angles) {
  Quat q = quat_mul(axis_quat(2, angles.z()),
                    quat_mul(axis_quat(1, angles.y()), axis_quat(0, angles.x())));
  return quat_to_matrix(q);
}

PointSet random_cloud(Rng& rng, std::size_t n, double scale = 1.0) {
  PointSet ps;
  ps.points.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ps.points.emplace_back(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                           rng.uniform(-scale, scale));
  return ps;
}

// Brute-force clipped Chamfer, written as the plain double loop: one sum per
// direction, added once (the formula's two-term structure).
double chamfer_oracle(const PointSet& a, const PointSet& b, double sigma_t) {
  double dir1 = 0.0;
  for (const Vec3& y : b.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& x : a.points) {
      double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
      double d = (dx * dx + dy * dy) + dz * dz;
      if (d < best) best = d;
    }
    dir1 += std::min(sigma_t, best);
  }
  double dir2 = 0.0;
  for (const Vec3& x : a.points) {
    double best = std::numeric_limits<double>::infinity();
    for (const Vec3& y : b.points) {
      double dx = x.x() - y.x(), dy = x.y() - y.y(), dz = x.z() - y.z();
      double d = (dx * dx + dy * dy) + dz * dz;
      if (d < best) best = d;
    }
    dir2 += std::min(sigma_t, best);
  }
  return dir1 + dir2;
}

}  // namespace

TEST_CASE("rotation_from_angles identity and forced single-axis case", "[geometry]") {
  CHECK((rotation_from_angles(Vec3::Zero()) - Mat3::Identity()).norm() == 0.0);

  Mat3 r = rotation_from_angles(Vec3(0, 0, M_PI / 2));
  Mat3 expect;
  expect << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((r - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("rotation_from_angles is orthonormal with unit determinant", "[geometry]") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    Vec3 a(rng.uniform(-2 * M_PI, 2 * M_PI), rng.uniform(-2 * M_PI, 2 * M_PI),
           rng.uniform(-2 * M_PI, 2 * M_PI));
    Mat3 r = rotation_from_angles(a);
    CHECK((r.transpose() * r - Mat3::Identity()).norm() < 1e-9);
    CHECK(std::abs(r.determinant() - 1.0) < 1e-9);
  }
}

TEST_CASE("rotation_from_angles agrees with the quaternion oracle", "[geometry]") {
  Mat3 r = rotation_from_angles(Vec3(M_PI / 4, M_PI / 6, M_PI / 3));
  Mat3 oracle = rotation_oracle(Vec3(M_PI / 4, M_PI / 6, M_PI / 3));
  CHECK((r - oracle).cwiseAbs().maxCoeff() < 1e-12);

  Rng rng(12);
  for (int i = 0; i < 100; ++i) {
    Vec3 a(rng.uniform(-M_PI, M_PI), rng.uniform(-M_PI, M_PI), rng.uniform(-M_PI, M_PI));
    CHECK((rotation_from_angles(a) - rotation_oracle(a)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rotation_from_angles rejects non-finite input", "[geometry]") {
  CHECK_THROWS_AS(rotation_from_angles(Vec3(std::nan(""), 0, 0)), std::invalid_argument);
  CHECK_THROWS_AS(rotation_from_angles(Vec3(0, INFINITY, 0)), std::invalid_argument);
}

TEST_CASE("rotation_angle_derivatives match finite differences", "[geometry]") {
  Rng rng(13);
  const double h = 1e-6;
  for (int i = 0; i < 20; ++i) {
    Vec3 a(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    auto dr = rotation_angle_derivatives(a);
    for (int k = 0; k < 3; ++k) {
      Vec3 ap = a, am = a;
      ap[k] += h;
      am[k] -= h;
      Mat3 fd = (rotation_from_angles(ap) - rotation_from_angles(am)) / (2 * h);
      CHECK((fd - dr[k]).cwiseAbs().maxCoeff() < 1e-8);
    }
  }
}

TEST_CASE("euler_from_rotation round-trips within the working range", "[geometry]") {
  Rng rng(14);
  for (int i = 0; i < 100; ++i) {
    Vec3 a(rng.uniform(0.0, M_PI / 4), rng.uniform(0.0, M_PI / 4),
           rng.uniform(0.0, M_PI / 4));
    Vec3 back = euler_from_rotation(rotation_from_angles(a));
    CHECK((back - a).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("apply_transform identity, analytic case and ordering", "[geometry]") {
  Rng rng(15);
  PointSet ps = random_cloud(rng, 50);
  PointSet out = apply_transform(ps, RigidTransform{});
  REQUIRE(out.size() == ps.size());
  CHECK(out.tag == PointTag::transformed);
  for (std::size_t i = 0; i < ps.size(); ++i)
    CHECK((out.points[i] - ps.points[i]).norm() == 0.0);

  RigidTransform t;
  t.angles = Vec3(0, 0, M_PI / 2);
  PointSet unit;
  unit.points = {Vec3(1, 0, 0)};
  Vec3 moved = apply_transform(unit, t).points[0];
  CHECK((moved - Vec3(0, 1, 0)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("apply then inverse recovers the input", "[geometry]") {
  Rng rng(16);
  RigidTransform t;
  t.angles = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  t.translation = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
  PointSet ps = random_cloud(rng, 100);
  PointSet back = apply_map(apply_transform(ps, t), inverse(t));
  for (std::size_t i = 0; i < ps.size(); ++i)
    CHECK((back.points[i] - ps.points[i]).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("inverse of identity and pure translation", "[geometry]") {
  RigidMap id = inverse(RigidTransform{});
  CHECK((id.rotation - Mat3::Identity()).norm() == 0.0);
  CHECK(id.translation.norm() == 0.0);

  RigidTransform t;
  t.translation = Vec3(1, 2, 3);
  RigidMap inv = inverse(t);
  CHECK((inv.translation - Vec3(-1, -2, -3)).norm() < 1e-15);

  Rng rng(17);
  RigidTransform r;
  r.angles = Vec3(0.3, -0.8, 1.2);
  r.translation = Vec3(0.5, -0.25, 2.0);
  RigidMap rinv = inverse(r);
  for (int i = 0; i < 100; ++i) {
    Vec3 p(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
    Vec3 back = rinv(RigidMap::from(r)(p));
    CHECK((back - p).norm() < 1e-10);
  }
}

TEST_CASE("apply_transform preserves pairwise distances", "[geometry]") {
  Rng rng(18);
  PointSet ps = random_cloud(rng, 40);
  RigidTransform t;
  t.angles = Vec3(rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3));
  t.translation = Vec3(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
  PointSet moved = apply_transform(ps, t);
  for (std::size_t i = 0; i < ps.size(); ++i)
    for (std::size_t j = i + 1; j < ps.size(); j += 7) {
      double d0 = (ps.points[i] - ps.points[j]).norm();
      double d1 = (moved.points[i] - moved.points[j]).norm();
      CHECK(std::abs(d1 - d0) < 1e-9 * std::max(1.0, d0));
    }
}

TEST_CASE("nearest_distance_sq basics and errors", "[geometry]") {
  PointSet target;
  target.points = {Vec3(0, 0, 0), Vec3(1, 0, 0)};
  CHECK(nearest_distance_sq(Vec3(1, 0, 0), target) == 0.0);
  CHECK(nearest_distance_sq(Vec3(2, 0, 0), target) == 1.0);
  PointSet empty;
  CHECK_THROWS_AS(nearest_distance_sq(Vec3(0, 0, 0), empty), std::invalid_argument);
}

TEST_CASE("KdTree3 matches the linear-scan oracle exactly", "[geometry]") {
  Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 1 + rng.uniform_index(300);
    PointSet target = random_cloud(rng, n);
    KdTree3 tree(target.points);
    for (int q = 0; q < 50; ++q) {
      Vec3 query(rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(-2, 2));
      auto [idx, d] = nearest_point_linear(query, target.points);
      KdTree3::Hit hit = tree.nearest(query);
      CHECK(hit.dist_sq == d);  // exact equality, same distance expression
      CHECK(dist_sq(query, target.points[static_cast<std::size_t>(hit.index)]) == d);
    }
  }
}

TEST_CASE("clipped_chamfer trivial and forced-clip cases", "[geometry]") {
  Rng rng(20);
  PointSet p = random_cloud(rng, 64);
  CHECK(clipped_chamfer(p, p, 0.1) == 0.0);
  CHECK(clipped_chamfer(p, p, INFINITY) == 0.0);

  PointSet a, b;
  a.points = {Vec3(0, 0, 0)};
  b.points = {Vec3(3, 0, 0)};
  CHECK(clipped_chamfer(a, b, 1.0) == 2.0);  // both directions clip at 1

  PointSet empty;
  CHECK_THROWS_AS(clipped_chamfer(empty, p, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(clipped_chamfer(p, empty, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(clipped_chamfer(p, p, 0.0), std::invalid_argument);
}

TEST_CASE("clipped_chamfer equals the brute-force double loop exactly", "[geometry]") {
  Rng rng(21);
  for (int trial = 0; trial < 30; ++trial) {
    PointSet a = random_cloud(rng, 1 + rng.uniform_index(100));
    PointSet b = random_cloud(rng, 1 + rng.uniform_index(100));
    double sigma = trial % 3 == 0 ? INFINITY : rng.uniform(0.01, 2.0);
    CHECK(clipped_chamfer(a, b, sigma) == chamfer_oracle(a, b, sigma));
  }
}

TEST_CASE("clipped_chamfer symmetry and clip monotonicity", "[geometry]") {
  Rng rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    PointSet a = random_cloud(rng, 40);
    PointSet b = random_cloud(rng, 55);
    double s1 = rng.uniform(0.01, 0.5);
    double s2 = s1 + rng.uniform(0.0, 1.0);
    CHECK(clipped_chamfer(a, b, s1) == clipped_chamfer(b, a, s1));
    CHECK(clipped_chamfer(a, b, s1) <= clipped_chamfer(a, b, s2));
    CHECK(clipped_chamfer(a, b, s2) <= clipped_chamfer(a, b, INFINITY));
  }
}
