#pragma once

// Core 3D types: point sets, Euler-angle rigid transforms, exact nearest
// neighbour queries and the clipped Chamfer alignment loss. Everything here
// is a pure function over immutable inputs.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class PointTag { full, partial, transformed };

struct PointSet {
  std::vector<Vec3> points;
  PointTag tag = PointTag::full;
  std::string source_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

// A query location paired with its truncated unsigned distance to a shape
// surface. Distances are clamped at generation time; see datagen.
struct SdfSample {
  Vec3 location = Vec3::Zero();
  double distance = 0.0;
};

// Squared distance with a fixed evaluation order. Both the brute-force scans
// and the k-d tree use this same expression, which is what makes "exact
// agreement with the linear-scan oracle" a meaningful contract.
inline double dist_sq(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return (dx * dx + dy * dy) + dz * dz;
}

inline bool all_finite(const Vec3& v) {
  return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z());
}

// Rz * Ry * Rx from (rx, ry, rz) in radians, right-handed axis rotations.
inline Mat3 rotation_from_angles(const Vec3& angles) {
  if (!all_finite(angles))
    throw std::invalid_argument("rotation_from_angles: non-finite angles");
  const double cx = std::cos(angles.x()), sx = std::sin(angles.x());
  const double cy = std::cos(angles.y()), sy = std::sin(angles.y());
  const double cz = std::cos(angles.z()), sz = std::sin(angles.z());
  Mat3 rx, ry, rz;
  rx << 1, 0, 0,
        0, cx, -sx,
        0, sx, cx;
  ry << cy, 0, sy,
        0, 1, 0,
        -sy, 0, cy;
  rz << cz, -sz, 0,
        sz, cz, 0,
        0, 0, 1;
  return rz * ry * rx;
}

// d(Rz*Ry*Rx)/d(rx, ry, rz), used by the differentiable transform op.
inline std::array<Mat3, 3> rotation_angle_derivatives(const Vec3& angles) {
  const double cx = std::cos(angles.x()), sx = std::sin(angles.x());
  const double cy = std::cos(angles.y()), sy = std::sin(angles.y());
  const double cz = std::cos(angles.z()), sz = std::sin(angles.z());
  Mat3 rx, ry, rz, drx, dry, drz;
  rx << 1, 0, 0, 0, cx, -sx, 0, sx, cx;
  ry << cy, 0, sy, 0, 1, 0, -sy, 0, cy;
  rz << cz, -sz, 0, sz, cz, 0, 0, 0, 1;
  drx << 0, 0, 0, 0, -sx, -cx, 0, cx, -sx;
  dry << -sy, 0, cy, 0, 0, 0, -cy, 0, -sy;
  drz << -sz, -cz, 0, cz, -sz, 0, 0, 0, 0;
  return {Mat3(rz * ry * drx), Mat3(rz * dry * rx), Mat3(drz * ry * rx)};
}

// Recovers (rx, ry, rz) from a rotation matrix under the same Rz*Ry*Rx
// convention. Valid away from the ry = +-90 degree gimbal lock; ground-truth
// rotations in this project stay within [0, 45] degrees per axis.
inline Vec3 euler_from_rotation(const Mat3& r) {
  const double sy = -r(2, 0);
  const double ry = std::asin(std::clamp(sy, -1.0, 1.0));
  double rx, rz;
  if (std::abs(sy) < 1.0 - 1e-12) {
    rx = std::atan2(r(2, 1), r(2, 2));
    rz = std::atan2(r(1, 0), r(0, 0));
  } else {
    // Gimbal lock: rx and rz are coupled; put everything into rx.
    rx = std::atan2(-r(1, 2), r(1, 1));
    rz = 0.0;
  }
  return Vec3(rx, ry, rz);
}

struct RigidTransform {
  Vec3 angles = Vec3::Zero();       // (rx, ry, rz), radians
  Vec3 translation = Vec3::Zero();

  Mat3 rotation() const { return rotation_from_angles(angles); }
};

// Matrix-form rigid mapping. inverse() lands here: the inverse of an Euler
// transform composes as (R^T, -R^T t) without recovering angles.
struct RigidMap {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 operator()(const Vec3& p) const { return rotation * p + translation; }

  static RigidMap from(const RigidTransform& t) {
    return RigidMap{t.rotation(), t.translation};
  }
};

inline RigidMap inverse(const RigidMap& m) {
  Mat3 rt = m.rotation.transpose();
  return RigidMap{rt, Vec3(-(rt * m.translation))};
}

inline RigidMap inverse(const RigidTransform& t) {
  return inverse(RigidMap::from(t));
}

inline PointSet apply_map(const PointSet& ps, const RigidMap& m) {
  PointSet out;
  out.points.reserve(ps.size());
  for (const Vec3& p : ps.points) out.points.push_back(m(p));
  out.tag = PointTag::transformed;
  out.source_id = ps.source_id;
  return out;
}

inline PointSet apply_transform(const PointSet& ps, const RigidTransform& t) {
  if (ps.empty()) throw std::invalid_argument("apply_transform: empty set");
  return apply_map(ps, RigidMap::from(t));
}

// Exact linear-scan nearest neighbour; ties keep the lowest index.
inline std::pair<int, double> nearest_point_linear(const Vec3& q,
                                                   const std::vector<Vec3>& pts) {
  if (pts.empty())
    throw std::invalid_argument("nearest_point_linear: empty target");
  int best = 0;
  double best_d = dist_sq(q, pts[0]);
  for (std::size_t i = 1; i < pts.size(); ++i) {
    double d = dist_sq(q, pts[i]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return {best, best_d};
}

inline double nearest_distance_sq(const Vec3& q, const PointSet& target) {
  if (target.empty())
    throw std::invalid_argument("nearest_distance_sq: empty target");
  return nearest_point_linear(q, target.points).second;
}

// Exact 3D k-d tree (median split, flat node array). Pruning only discards a
// subtree when its slab distance strictly exceeds the current best squared
// distance, so results match the linear scan value for value.
class KdTree3 {
 public:
  KdTree3() = default;

  explicit KdTree3(const std::vector<Vec3>& pts) : pts_(pts) {
    if (pts_.empty()) throw std::invalid_argument("KdTree3: empty point set");
    order_.resize(pts_.size());
    std::iota(order_.begin(), order_.end(), 0);
    nodes_.reserve(pts_.size() * 2);
    root_ = build(0, static_cast<int>(pts_.size()));
  }

  std::size_t size() const { return pts_.size(); }

  struct Hit {
    int index = -1;
    double dist_sq = std::numeric_limits<double>::infinity();
  };

  Hit nearest(const Vec3& q) const {
    Hit best;
    search(root_, q, best);
    return best;
  }

 private:
  struct Node {
    int left = -1, right = -1;
    int begin = 0, end = 0;  // leaf range into order_
    int axis = 0;
    double split = 0.0;
  };

  static constexpr int kLeafSize = 8;

  int build(int begin, int end) {
    Node node;
    node.begin = begin;
    node.end = end;
    int id = static_cast<int>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin <= kLeafSize) return id;

    Vec3 lo = pts_[order_[begin]], hi = pts_[order_[begin]];
    for (int i = begin + 1; i < end; ++i) {
      lo = lo.cwiseMin(pts_[order_[i]]);
      hi = hi.cwiseMax(pts_[order_[i]]);
    }
    Vec3 extent = hi - lo;
    int axis = 0;
    if (extent.y() > extent.x()) axis = 1;
    if (extent.z() > extent[axis]) axis = 2;

    int mid = (begin + end) / 2;
    std::nth_element(order_.begin() + begin, order_.begin() + mid,
                     order_.begin() + end, [&](int a, int b) {
                       if (pts_[a][axis] != pts_[b][axis])
                         return pts_[a][axis] < pts_[b][axis];
                       return a < b;
                     });
    double split = pts_[order_[mid]][axis];

    int left = build(begin, mid);
    int right = build(mid, end);
    nodes_[id].left = left;
    nodes_[id].right = right;
    nodes_[id].axis = axis;
    nodes_[id].split = split;
    return id;
  }

  void search(int id, const Vec3& q, Hit& best) const {
    const Node& node = nodes_[id];
    if (node.left < 0) {
      for (int i = node.begin; i < node.end; ++i) {
        int idx = order_[i];
        double d = dist_sq(q, pts_[idx]);
        if (d < best.dist_sq || (d == best.dist_sq && idx < best.index)) {
          best.dist_sq = d;
          best.index = idx;
        }
      }
      return;
    }
    double delta = q[node.axis] - node.split;
    int near = delta < 0.0 ? node.left : node.right;
    int far = delta < 0.0 ? node.right : node.left;
    search(near, q, best);
    if (delta * delta <= best.dist_sq) search(far, q, best);
  }

  std::vector<Vec3> pts_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
  int root_ = -1;
};

namespace detail {
// Chamfer switches to the k-d tree above this size; below it the scan wins.
constexpr std::size_t kChamferKdThreshold = 32;

inline double chamfer_one_way(const std::vector<Vec3>& from,
                              const std::vector<Vec3>& to, double sigma_t) {
  double total = 0.0;
  if (to.size() >= kChamferKdThreshold) {
    KdTree3 tree(to);
    for (const Vec3& q : from) total += std::min(sigma_t, tree.nearest(q).dist_sq);
  } else {
    for (const Vec3& q : from)
      total += std::min(sigma_t, nearest_point_linear(q, to).second);
  }
  return total;
}
}  // namespace detail

// Eq-style clipped Chamfer: sum over both directions of
// min(sigma_t, nearest squared distance). sigma_t = infinity recovers the
// plain Chamfer distance.
inline double clipped_chamfer(const PointSet& a, const PointSet& b,
                              double sigma_t) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("clipped_chamfer: empty point set");
  if (!(sigma_t > 0.0))
    throw std::invalid_argument("clipped_chamfer: sigma_t must be positive");
  return detail::chamfer_one_way(b.points, a.points, sigma_t) +
         detail::chamfer_one_way(a.points, b.points, sigma_t);
}

}  // namespace lalign
