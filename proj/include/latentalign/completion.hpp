#pragma once

// Auto-decoder for truncated distance fields: g(z, query) -> distance. The
// latent code is a free 256-vector owned by one target shape and optimized
// alongside (training) or instead of (inference) the network weights. Loss is
// the clamped-L1 data term plus a Gaussian prior on the code.

#include <latentalign/datagen.hpp>
#include <latentalign/net.hpp>

#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

constexpr int kLatentDim = 256;
constexpr double kSdfClamp = 0.03;
constexpr double kLatentInitStd = 0.06;
constexpr double kDefaultPriorWeight = 1e-4;  // the 1/sigma^2 multiplier on ||z||^2

struct LatentCode {
  Vector values;  // exactly kLatentDim entries
  std::string shape_id;
};

inline void check_latent(const LatentCode& z) {
  if (z.values.size() != kLatentDim)
    throw std::invalid_argument("LatentCode: dimension must be " +
                                std::to_string(kLatentDim));
  if (!z.values.allFinite())
    throw std::invalid_argument("LatentCode: non-finite values");
}

// 256 i.i.d. draws from N(0, 0.06^2).
inline LatentCode init_latent(std::uint64_t seed, std::string shape_id = "") {
  Rng rng = Rng::derive(seed, 0x1a7e27ull);
  LatentCode z;
  z.values = Vector(kLatentDim);
  for (int i = 0; i < kLatentDim; ++i) z.values(i) = rng.normal(0.0, kLatentInitStd);
  z.shape_id = std::move(shape_id);
  return z;
}

struct CompletionNet {
  NetParams params;

  // n_layers fully-connected layers: (latent+3) -> width -> ... -> 1, ReLU on
  // hidden layers, linear output. The output bias starts positive so that
  // unsupervised regions of space extrapolate toward "far from the surface"
  // rather than dipping below the extraction threshold.
  static CompletionNet make(std::uint64_t seed, int width = 512, int n_layers = 7,
                            bool batch_norm = false, double dropout = 0.0) {
    if (n_layers < 2) throw std::invalid_argument("CompletionNet: need at least 2 layers");
    Rng rng = Rng::derive(seed, 0xc0357ull);
    CompletionNet net;
    int in = kLatentDim + 3;
    for (int i = 0; i < n_layers; ++i) {
      const bool last = (i == n_layers - 1);
      int out = last ? 1 : width;
      Layer l = make_layer(LayerKind::fully_connected, in, out, /*relu=*/!last, rng);
      if (!last && batch_norm) enable_batch_norm(l);
      if (!last) l.dropout = dropout;
      if (last) l.bias(0) = 0.1;
      net.params.layers.push_back(std::move(l));
      in = out;
    }
    net.params.validate();
    return net;
  }
};

inline Mat stack_latent_queries(const LatentCode& z, const Mat& queries) {
  Mat input(queries.rows(), kLatentDim + 3);
  input.leftCols(kLatentDim) = z.values.transpose().replicate(queries.rows(), 1);
  input.rightCols(3) = queries;
  return input;
}

// Batched deterministic evaluation (eval mode); rows are independent queries.
inline Vector sdf_forward_batch(const CompletionNet& net, const LatentCode& z,
                                const Mat& queries) {
  check_latent(z);
  if (queries.cols() != 3)
    throw std::invalid_argument("sdf_forward_batch: queries must be Kx3");
  Mat h = stack_latent_queries(z, queries);
  for (const Layer& l : net.params.layers) h = layer_forward(l, h, NetMode::eval);
  return h.col(0);
}

inline double sdf_forward(const CompletionNet& net, const LatentCode& z, const Vec3& query) {
  Mat q(1, 3);
  q << query.x(), query.y(), query.z();
  return sdf_forward_batch(net, z, q)(0);
}

// Records data term + prior onto the tape:
//   mean_j |clamp(pred_j) - clamp(s_j)| + prior_weight * ||z||^2
inline ad::Var record_completion_loss(ad::Tape& tape, CompletionNet& net, ad::Var z_var,
                                      const std::vector<SdfSample>& samples,
                                      double prior_weight, NetBinding& binding,
                                      bool trainable_net, NetMode mode,
                                      Rng* dropout_rng = nullptr,
                                      double clamp = kSdfClamp) {
  if (samples.empty())
    throw std::invalid_argument("completion_loss: empty sample list");
  Mat queries(static_cast<Eigen::Index>(samples.size()), 3);
  Vector targets(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    queries.row(static_cast<Eigen::Index>(i)) = samples[i].location.transpose();
    targets(static_cast<Eigen::Index>(i)) = samples[i].distance;
  }
  ad::Var h = tape.concat_broadcast(z_var, queries);
  for (Layer& l : net.params.layers)
    h = record_layer(tape, l, h, mode, trainable_net, binding, dropout_rng,
                     /*update_running_stats=*/trainable_net);
  ad::Var data = tape.clamped_l1(h, targets, clamp);
  ad::Var prior = tape.sum_squares(z_var);
  return tape.add_scaled(1.0, data, prior_weight, prior);
}

// Plain loss value in eval mode; matches the recorded value exactly.
inline double completion_loss(const CompletionNet& net, const LatentCode& z,
                              const std::vector<SdfSample>& samples, double prior_weight,
                              double clamp = kSdfClamp) {
  check_latent(z);
  if (samples.empty())
    throw std::invalid_argument("completion_loss: empty sample list");
  Mat queries(static_cast<Eigen::Index>(samples.size()), 3);
  for (std::size_t i = 0; i < samples.size(); ++i)
    queries.row(static_cast<Eigen::Index>(i)) = samples[i].location.transpose();
  Mat h = stack_latent_queries(z, queries);
  for (const Layer& l : net.params.layers) h = layer_forward(l, h, NetMode::eval);
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    total += std::abs(std::min(h(static_cast<Eigen::Index>(i), 0), clamp) -
                      std::min(samples[i].distance, clamp));
  double data = total / static_cast<double>(samples.size());
  return 1.0 * data + prior_weight * z.values.squaredNorm();
}

struct GridConfig {
  int resolution = 64;
  double lo = -1.2;
  double hi = 1.2;
  double iso_eps = 0.01;
};

// Evaluates the decoder on a regular grid and returns cell centers whose
// predicted distance falls under iso_eps: an approximate surface cloud. An
// empty result is returned as-is (warning-level outcome, caller decides).
inline PointSet extract_completed_points(const CompletionNet& net, const LatentCode& z,
                                         const GridConfig& grid = {}) {
  check_latent(z);
  if (grid.resolution < 2 || !(grid.hi > grid.lo))
    throw std::invalid_argument("extract_completed_points: bad grid config");
  const int res = grid.resolution;
  const double step = (grid.hi - grid.lo) / static_cast<double>(res);
  PointSet out;
  out.tag = PointTag::full;
  out.source_id = z.shape_id;
  // Evaluate slab by slab to keep the working set small.
  Mat queries(static_cast<Eigen::Index>(res) * res, 3);
  for (int ix = 0; ix < res; ++ix) {
    const double x = grid.lo + (ix + 0.5) * step;
    Eigen::Index row = 0;
    for (int iy = 0; iy < res; ++iy)
      for (int iz = 0; iz < res; ++iz, ++row) {
        queries(row, 0) = x;
        queries(row, 1) = grid.lo + (iy + 0.5) * step;
        queries(row, 2) = grid.lo + (iz + 0.5) * step;
      }
    Vector pred = sdf_forward_batch(net, z, queries);
    for (Eigen::Index r = 0; r < pred.size(); ++r)
      if (pred(r) < grid.iso_eps)
        out.points.emplace_back(queries(r, 0), queries(r, 1), queries(r, 2));
  }
  return out;
}

}  // namespace lalign
