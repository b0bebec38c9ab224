#pragma once

// Transform-regression auto-decoder: every source point is stacked with the
// target's latent code, pushed through shared-weight per-point layers, max
// pooled, and decoded by fully-connected layers into six numbers - three
// Euler angles (raw radians) and a translation. The loss transforms the
// source by the prediction and measures the clipped Chamfer distance to the
// (possibly partial) target.

#include <latentalign/completion.hpp>

#include <stdexcept>
#include <vector>

namespace lalign {

constexpr double kDefaultSigmaT = 0.1;  // squared-distance clip for the Chamfer loss

struct RegistrationNet {
  NetParams params;
  std::size_t pool_after = 2;  // layers [0, pool_after) are per-point, rest follow the pool

  // Shared-weight point layers (latent+3 -> widths...), max pool, then
  // fully-connected head ending in width 6 (angles + translation), linear.
  static RegistrationNet make(std::uint64_t seed, std::vector<int> point_widths = {256, 128},
                              std::vector<int> fc_widths = {128, 64},
                              bool batch_norm = false, double dropout = 0.0) {
    if (point_widths.empty() || fc_widths.empty())
      throw std::invalid_argument("RegistrationNet: need point and fc layers");
    Rng rng = Rng::derive(seed, 0x4e97ull);
    RegistrationNet net;
    int in = kLatentDim + 3;
    for (int w : point_widths) {
      net.params.layers.push_back(make_layer(LayerKind::pointwise_linear, in, w, true, rng));
      in = w;
    }
    net.pool_after = point_widths.size();
    for (int w : fc_widths) {
      Layer l = make_layer(LayerKind::fully_connected, in, w, true, rng);
      if (batch_norm) enable_batch_norm(l);
      l.dropout = dropout;
      net.params.layers.push_back(std::move(l));
      in = w;
    }
    net.params.layers.push_back(make_layer(LayerKind::fully_connected, in, 6, false, rng));
    net.params.validate();
    net.check_structure();
    return net;
  }

  void check_structure() const {
    if (pool_after == 0 || pool_after >= params.layers.size())
      throw std::invalid_argument("RegistrationNet: pool must sit between layer groups");
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      const bool is_point = i < pool_after;
      if (is_point && params.layers[i].kind != LayerKind::pointwise_linear)
        throw std::invalid_argument("RegistrationNet: per-point layers must precede the pool");
      if (!is_point && params.layers[i].kind != LayerKind::fully_connected)
        throw std::invalid_argument("RegistrationNet: fully-connected layers must follow the pool");
    }
    if (params.layers.back().out_dim() != 6)
      throw std::invalid_argument("RegistrationNet: head width must be 6");
    if (params.layers.back().relu)
      throw std::invalid_argument("RegistrationNet: head must be linear");
  }
};

inline Mat pointset_matrix(const PointSet& ps) {
  Mat m(static_cast<Eigen::Index>(ps.size()), 3);
  for (std::size_t i = 0; i < ps.size(); ++i)
    m.row(static_cast<Eigen::Index>(i)) = ps.points[i].transpose();
  return m;
}

// Plain (eval mode) prediction. The transform is built from angles via the
// rotation constructor, never from raw matrix entries, so the rotation
// invariants hold by construction.
inline RigidTransform predict_transform(const RegistrationNet& net, const LatentCode& z,
                                        const PointSet& source) {
  check_latent(z);
  if (source.empty())
    throw std::invalid_argument("predict_transform: empty source");
  Mat h(static_cast<Eigen::Index>(source.size()), kLatentDim + 3);
  h.leftCols(kLatentDim) = z.values.transpose().replicate(static_cast<Eigen::Index>(source.size()), 1);
  h.rightCols(3) = pointset_matrix(source);
  for (std::size_t i = 0; i < net.pool_after; ++i)
    h = layer_forward(net.params.layers[i], h, NetMode::eval);
  auto [pooled, argmax] = max_pool_points(h);
  Mat g = pooled;
  for (std::size_t i = net.pool_after; i < net.params.layers.size(); ++i)
    g = layer_forward(net.params.layers[i], g, NetMode::eval);
  RigidTransform t;
  t.angles = Vec3(g(0, 0), g(0, 1), g(0, 2));
  t.translation = Vec3(g(0, 3), g(0, 4), g(0, 5));
  return t;
}

// Records prediction + transform + clipped Chamfer onto the tape. Outputs the
// predicted transform as a side channel when requested.
inline ad::Var record_registration_loss(ad::Tape& tape, RegistrationNet& net, ad::Var z_var,
                                        const PointSet& source, const PointSet& target,
                                        double sigma_t, NetBinding& binding,
                                        bool trainable_net, NetMode mode,
                                        Rng* dropout_rng = nullptr,
                                        RigidTransform* predicted = nullptr) {
  if (source.empty() || target.empty())
    throw std::invalid_argument("registration_loss: empty point set");
  Mat source_mat = pointset_matrix(source);
  ad::Var h = tape.concat_broadcast(z_var, source_mat);
  for (std::size_t i = 0; i < net.pool_after; ++i)
    h = record_layer(tape, net.params.layers[i], h, mode, trainable_net, binding, dropout_rng,
                     trainable_net);
  ad::Var g = tape.colwise_max(h);
  for (std::size_t i = net.pool_after; i < net.params.layers.size(); ++i)
    g = record_layer(tape, net.params.layers[i], g, mode, trainable_net, binding, dropout_rng,
                     trainable_net);
  ad::Var angles = tape.slice_cols(g, 0, 3);
  ad::Var trans = tape.slice_cols(g, 3, 3);
  if (predicted != nullptr) {
    const Mat& av = tape.value(angles);
    const Mat& tv = tape.value(trans);
    predicted->angles = Vec3(av(0, 0), av(0, 1), av(0, 2));
    predicted->translation = Vec3(tv(0, 0), tv(0, 1), tv(0, 2));
  }
  ad::Var moved = tape.euler_transform(angles, trans, source_mat);
  return tape.clipped_chamfer_vs(moved, target.points, sigma_t);
}

// Plain loss value: clipped Chamfer between the transformed source (under the
// predicted transform) and the target. Matches the recorded value exactly.
inline double registration_loss(const RegistrationNet& net, const LatentCode& z,
                                const PointSet& source, const PointSet& target,
                                double sigma_t) {
  if (source.empty() || target.empty())
    throw std::invalid_argument("registration_loss: empty point set");
  RigidTransform t = predict_transform(net, z, source);
  return clipped_chamfer(apply_transform(source, t), target, sigma_t);
}

}  // namespace lalign
