#pragma once

// Reverse-mode differentiation over matrix-valued nodes. A Tape records one
// forward pass; backward() walks the nodes in reverse creation order, which
// is a topological order because ops only reference earlier nodes. Tapes are
// cheap throwaway objects: one per optimization step.
//
// The op set is exactly what the two decoders and their losses need. Each op
// mirrors the arithmetic of its plain (non-recorded) counterpart expression
// for expression, so recorded loss values are bit-identical to the values the
// standalone loss functions report.

#include <latentalign/geometry.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

namespace lalign::ad {

using Mat = Eigen::MatrixXd;

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// y = x * W^T + 1 b^T. Evaluated row by row (GEMV per row) rather than as one
// GEMM: the per-row arithmetic is then independent of the batch size and of
// row order, which is what makes "batched equals per-row exactly" and exact
// pooling permutation invariance hold. Measured within ~10% of the GEMM path
// at the sizes used here.
inline Mat affine_forward(const Mat& x, const Mat& w, const Eigen::VectorXd& b) {
  Mat y(x.rows(), w.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    y.row(i).transpose().noalias() = w * x.row(i).transpose() + b;
  return y;
}

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Mat value, bool requires_grad) {
    return push(std::move(value), requires_grad, {});
  }

  Var constant(Mat value) { return leaf(std::move(value), false); }

  const Mat& value(Var v) const { return node(v).value; }

  double scalar(Var v) const {
    const Mat& m = value(v);
    if (m.rows() != 1 || m.cols() != 1)
      throw std::logic_error("Tape::scalar: node is not 1x1");
    return m(0, 0);
  }

  // Only meaningful after backward(); zero matrix for untouched grads.
  const Mat& grad(Var v) const {
    if (!ran_backward_)
      throw std::logic_error("Tape::grad: backward has not run");
    return node(v).grad;
  }

  bool needs_grad(Var v) const { return node(v).needs_grad; }

  // ---- ops ----------------------------------------------------------------

  Var affine_rows(Var x, Var w, Var b) {
    const Mat& xv = value(x);
    const Mat& wv = value(w);
    const Mat& bv = value(b);
    if (xv.cols() != wv.cols())
      throw std::invalid_argument("affine_rows: input width " +
                                  std::to_string(xv.cols()) +
                                  " does not match layer in_dim " +
                                  std::to_string(wv.cols()));
    if (bv.rows() != wv.rows() || bv.cols() != 1)
      throw std::invalid_argument("affine_rows: bias shape mismatch");
    Mat y = affine_forward(xv, wv, Eigen::VectorXd(bv.col(0)));
    Var out = push(std::move(y), any_grad({x, w, b}), {x, w, b});
    set_backward(out, [this, out, x, w, b]() {
      const Mat& gy = node(out).grad;
      if (needs_grad(x)) node(x).grad.noalias() += gy * node(w).value;
      if (needs_grad(w)) node(w).grad.noalias() += gy.transpose() * node(x).value;
      if (needs_grad(b)) node(b).grad.col(0) += gy.colwise().sum().transpose();
    });
    return out;
  }

  Var relu(Var x) {
    Mat y = value(x).cwiseMax(0.0);
    Var out = push(std::move(y), needs_grad(x), {x});
    set_backward(out, [this, out, x]() {
      if (!needs_grad(x)) return;
      const Mat& gy = node(out).grad;
      const Mat& xv = node(x).value;
      node(x).grad.array() += gy.array() * (xv.array() > 0.0).cast<double>();
    });
    return out;
  }

  // Column-wise max over rows; ties keep the lowest row index, and gradient
  // routes only to the argmax rows.
  Var colwise_max(Var x) {
    const Mat& xv = value(x);
    if (xv.rows() < 1) throw std::invalid_argument("colwise_max: empty input");
    Mat y(1, xv.cols());
    std::vector<int> argmax(static_cast<std::size_t>(xv.cols()));
    for (Eigen::Index j = 0; j < xv.cols(); ++j) {
      Eigen::Index row = 0;
      y(0, j) = xv.col(j).maxCoeff(&row);
      argmax[static_cast<std::size_t>(j)] = static_cast<int>(row);
    }
    Var out = push(std::move(y), needs_grad(x), {x});
    set_backward(out, [this, out, x, argmax = std::move(argmax)]() {
      if (!needs_grad(x)) return;
      const Mat& gy = node(out).grad;
      Mat& gx = node(x).grad;
      for (Eigen::Index j = 0; j < gy.cols(); ++j)
        gx(argmax[static_cast<std::size_t>(j)], j) += gy(0, j);
    });
    return out;
  }

  // Rows [z | fixed_i]: stacks the (1 x K) code in front of every row of the
  // fixed matrix. Gradient w.r.t. z sums over rows.
  Var concat_broadcast(Var z, const Mat& fixed) {
    const Mat& zv = value(z);
    if (zv.rows() != 1)
      throw std::invalid_argument("concat_broadcast: code must be a row vector");
    const Eigen::Index n = fixed.rows(), k = zv.cols();
    Mat y(n, k + fixed.cols());
    y.leftCols(k) = zv.replicate(n, 1);
    y.rightCols(fixed.cols()) = fixed;
    Var out = push(std::move(y), needs_grad(z), {z});
    set_backward(out, [this, out, z, k]() {
      if (!needs_grad(z)) return;
      const Mat& gy = node(out).grad;
      node(z).grad.row(0) += gy.leftCols(k).colwise().sum();
    });
    return out;
  }

  Var slice_cols(Var x, Eigen::Index j0, Eigen::Index n) {
    const Mat& xv = value(x);
    if (j0 < 0 || j0 + n > xv.cols())
      throw std::invalid_argument("slice_cols: range out of bounds");
    Mat y = xv.middleCols(j0, n);
    Var out = push(std::move(y), needs_grad(x), {x});
    set_backward(out, [this, out, x, j0, n]() {
      if (!needs_grad(x)) return;
      node(x).grad.middleCols(j0, n) += node(out).grad;
    });
    return out;
  }

  Var add_scaled(double alpha, Var a, double beta, Var b) {
    const Mat& av = value(a);
    const Mat& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols())
      throw std::invalid_argument("add_scaled: shape mismatch");
    Mat y = alpha * av + beta * bv;
    Var out = push(std::move(y), any_grad({a, b}), {a, b});
    set_backward(out, [this, out, a, b, alpha, beta]() {
      const Mat& gy = node(out).grad;
      if (needs_grad(a)) node(a).grad += alpha * gy;
      if (needs_grad(b)) node(b).grad += beta * gy;
    });
    return out;
  }

  Var scale(Var a, double s) {
    Mat y = s * value(a);
    Var out = push(std::move(y), needs_grad(a), {a});
    set_backward(out, [this, out, a, s]() {
      if (needs_grad(a)) node(a).grad += s * node(out).grad;
    });
    return out;
  }

  Var sum_squares(Var x) {
    const Mat& xv = value(x);
    Mat y(1, 1);
    y(0, 0) = xv.squaredNorm();
    Var out = push(std::move(y), needs_grad(x), {x});
    set_backward(out, [this, out, x]() {
      if (!needs_grad(x)) return;
      node(x).grad += 2.0 * node(out).grad(0, 0) * node(x).value;
    });
    return out;
  }

  // Applies the Euler rigid transform row by row: y_i = R p_i + t. The value
  // path matches apply_transform exactly (same per-point expression).
  Var euler_transform(Var angles, Var trans, const Mat& pts) {
    const Mat& av = value(angles);
    const Mat& tv = value(trans);
    if (av.rows() != 1 || av.cols() != 3 || tv.rows() != 1 || tv.cols() != 3)
      throw std::invalid_argument("euler_transform: expected 1x3 angle and translation rows");
    const Vec3 ang(av(0, 0), av(0, 1), av(0, 2));
    const Vec3 t(tv(0, 0), tv(0, 1), tv(0, 2));
    const Mat3 r = rotation_from_angles(ang);
    Mat y(pts.rows(), 3);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
      Vec3 p(pts(i, 0), pts(i, 1), pts(i, 2));
      Vec3 q = r * p + t;
      y(i, 0) = q.x();
      y(i, 1) = q.y();
      y(i, 2) = q.z();
    }
    Var out = push(std::move(y), any_grad({angles, trans}), {angles, trans});
    set_backward(out, [this, out, angles, trans, ang, pts]() {
      const Mat& gy = node(out).grad;
      if (needs_grad(trans)) node(trans).grad.row(0) += gy.colwise().sum();
      if (needs_grad(angles)) {
        const std::array<Mat3, 3> dr = rotation_angle_derivatives(ang);
        for (int k = 0; k < 3; ++k) {
          // d loss / d angle_k = sum_i gy_i . (dR_k p_i)
          double acc = 0.0;
          for (Eigen::Index i = 0; i < pts.rows(); ++i) {
            Vec3 p(pts(i, 0), pts(i, 1), pts(i, 2));
            Vec3 dp = dr[static_cast<std::size_t>(k)] * p;
            acc += gy(i, 0) * dp.x() + gy(i, 1) * dp.y() + gy(i, 2) * dp.z();
          }
          node(angles).grad(0, k) += acc;
        }
      }
    });
    return out;
  }

  // Clipped Chamfer against a fixed target cloud. Value accumulation order
  // and distance expression mirror geometry::clipped_chamfer; nearest
  // neighbour choices are treated as locally constant, and clipped terms get
  // subgradient zero.
  Var clipped_chamfer_vs(Var xt, const std::vector<Vec3>& target, double sigma_t) {
    if (target.empty())
      throw std::invalid_argument("clipped_chamfer_vs: empty target");
    if (!(sigma_t > 0.0))
      throw std::invalid_argument("clipped_chamfer_vs: sigma_t must be positive");
    const Mat& xv = value(xt);
    if (xv.cols() != 3 || xv.rows() < 1)
      throw std::invalid_argument("clipped_chamfer_vs: expected nonempty Nx3 input");

    std::vector<Vec3> moved(static_cast<std::size_t>(xv.rows()));
    for (Eigen::Index i = 0; i < xv.rows(); ++i)
      moved[static_cast<std::size_t>(i)] = Vec3(xv(i, 0), xv(i, 1), xv(i, 2));

    const bool kd_moved = moved.size() >= detail::kChamferKdThreshold;
    const bool kd_target = target.size() >= detail::kChamferKdThreshold;
    KdTree3 moved_tree, target_tree;
    if (kd_moved) moved_tree = KdTree3(moved);
    if (kd_target) target_tree = KdTree3(target);

    auto nn_moved = [&](const Vec3& q) -> std::pair<int, double> {
      if (kd_moved) {
        auto h = moved_tree.nearest(q);
        return {h.index, h.dist_sq};
      }
      return nearest_point_linear(q, moved);
    };
    auto nn_target = [&](const Vec3& q) -> std::pair<int, double> {
      if (kd_target) {
        auto h = target_tree.nearest(q);
        return {h.index, h.dist_sq};
      }
      return nearest_point_linear(q, target);
    };

    // direction 1: every target point to its nearest moved point. The two
    // direction sums are kept separate and added once, matching the plain
    // clipped_chamfer value bit for bit.
    double dir1 = 0.0;
    std::vector<std::pair<int, int>> pull;  // (moved idx, target idx), unclipped
    pull.reserve(target.size());
    for (std::size_t j = 0; j < target.size(); ++j) {
      auto [idx, d] = nn_moved(target[j]);
      dir1 += std::min(sigma_t, d);
      if (d < sigma_t) pull.emplace_back(idx, static_cast<int>(j));
    }
    // direction 2: every moved point to its nearest target point
    double dir2 = 0.0;
    std::vector<int> push_to(moved.size(), -1);  // target idx, -1 if clipped
    for (std::size_t i = 0; i < moved.size(); ++i) {
      auto [idx, d] = nn_target(moved[i]);
      dir2 += std::min(sigma_t, d);
      if (d < sigma_t) push_to[i] = idx;
    }

    Mat y(1, 1);
    y(0, 0) = dir1 + dir2;
    Var out = push(std::move(y), needs_grad(xt), {xt});
    set_backward(out, [this, out, xt, target, moved = std::move(moved),
                       pull = std::move(pull), push_to = std::move(push_to)]() {
      if (!needs_grad(xt)) return;
      const double g = node(out).grad(0, 0);
      Mat& gx = node(xt).grad;
      for (const auto& [i, j] : pull) {
        const Vec3 d = moved[static_cast<std::size_t>(i)] - target[static_cast<std::size_t>(j)];
        gx(i, 0) += g * 2.0 * d.x();
        gx(i, 1) += g * 2.0 * d.y();
        gx(i, 2) += g * 2.0 * d.z();
      }
      for (std::size_t i = 0; i < push_to.size(); ++i) {
        if (push_to[i] < 0) continue;
        const Vec3 d = moved[i] - target[static_cast<std::size_t>(push_to[i])];
        gx(static_cast<Eigen::Index>(i), 0) += g * 2.0 * d.x();
        gx(static_cast<Eigen::Index>(i), 1) += g * 2.0 * d.y();
        gx(static_cast<Eigen::Index>(i), 2) += g * 2.0 * d.z();
      }
    });
    return out;
  }

  // Mean over samples of |min(pred, clamp) - min(target, clamp)|. Gradient
  // uses sign() with sign(0) = 0 and subgradient 0 once the prediction is
  // clamped.
  Var clamped_l1(Var pred, const Eigen::VectorXd& target, double clamp) {
    const Mat& pv = value(pred);
    if (pv.cols() != 1 || pv.rows() != target.size())
      throw std::invalid_argument("clamped_l1: prediction/target shape mismatch");
    if (pv.rows() == 0) throw std::invalid_argument("clamped_l1: empty samples");
    const Eigen::Index n = pv.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      total += std::abs(std::min(pv(i, 0), clamp) - std::min(target(i), clamp));
    Mat y(1, 1);
    y(0, 0) = total / static_cast<double>(n);
    Var out = push(std::move(y), needs_grad(pred), {pred});
    set_backward(out, [this, out, pred, target, clamp, n]() {
      if (!needs_grad(pred)) return;
      const double g = node(out).grad(0, 0) / static_cast<double>(n);
      const Mat& pv = node(pred).value;
      Mat& gp = node(pred).grad;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (pv(i, 0) >= clamp) continue;
        const double diff = std::min(pv(i, 0), clamp) - std::min(target(i), clamp);
        if (diff > 0.0)
          gp(i, 0) += g;
        else if (diff < 0.0)
          gp(i, 0) -= g;
      }
    });
    return out;
  }

  // Batch normalization over rows using the supplied batch statistics
  // (biased variance). Caller computes mu/var so it can also maintain the
  // running estimates.
  Var batch_norm_rows(Var x, Var gamma, Var beta, const Eigen::RowVectorXd& mu,
                      const Eigen::RowVectorXd& var, double eps) {
    const Mat& xv = value(x);
    const Eigen::Index n = xv.rows(), d = xv.cols();
    if (mu.size() != d || var.size() != d)
      throw std::invalid_argument("batch_norm_rows: stat width mismatch");
    Eigen::RowVectorXd inv_sd = (var.array() + eps).sqrt().inverse();
    Mat xhat = (xv.rowwise() - mu).array().rowwise() * inv_sd.array();
    Mat y = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), any_grad({x, gamma, beta}), {x, gamma, beta});
    set_backward(out, [this, out, x, gamma, beta, xhat = std::move(xhat),
                       inv_sd = std::move(inv_sd), n]() {
      const Mat& gy = node(out).grad;
      if (needs_grad(gamma))
        node(gamma).grad.row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
      if (needs_grad(beta)) node(beta).grad.row(0) += gy.colwise().sum();
      if (needs_grad(x)) {
        // dL/dxhat = gy * gamma; standard batch-norm input gradient
        Mat dxhat = gy.array().rowwise() * node(gamma).value.row(0).array();
        Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        Eigen::RowVectorXd sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum();
        const double invn = 1.0 / static_cast<double>(n);
        Mat gx = (dxhat.array() -
                  (xhat.array().rowwise() * (invn * sum_dxhat_xhat).array()) -
                  ((Mat::Ones(dxhat.rows(), 1) * (invn * sum_dxhat)).array()))
                     .matrix();
        gx = gx.array().rowwise() * inv_sd.array();
        node(x).grad += gx;
      }
    });
    return out;
  }

  // Normalization with fixed statistics (eval mode / degenerate batches):
  // y = gamma * (x - mean) * inv_sd + beta, columns independent.
  Var affine_norm_rows(Var x, Var gamma, Var beta, const Eigen::RowVectorXd& mean,
                       const Eigen::RowVectorXd& inv_sd) {
    const Mat& xv = value(x);
    Mat xhat = (xv.rowwise() - mean).array().rowwise() * inv_sd.array();
    Mat y = (xhat.array().rowwise() * value(gamma).row(0).array()).matrix();
    y.rowwise() += value(beta).row(0);
    Var out = push(std::move(y), any_grad({x, gamma, beta}), {x, gamma, beta});
    set_backward(out, [this, out, x, gamma, beta, xhat = std::move(xhat),
                       inv_sd]() {
      const Mat& gy = node(out).grad;
      if (needs_grad(gamma))
        node(gamma).grad.row(0) += (gy.array() * xhat.array()).colwise().sum().matrix();
      if (needs_grad(beta)) node(beta).grad.row(0) += gy.colwise().sum();
      if (needs_grad(x)) {
        Mat gx = gy.array().rowwise() *
                 (node(gamma).value.row(0).array() * inv_sd.array());
        node(x).grad += gx;
      }
    });
    return out;
  }

  // Elementwise mask (inverted dropout: mask entries are 0 or 1/(1-rate)).
  Var dropout_mask(Var x, const Mat& mask) {
    const Mat& xv = value(x);
    if (xv.rows() != mask.rows() || xv.cols() != mask.cols())
      throw std::invalid_argument("dropout_mask: shape mismatch");
    Mat y = xv.cwiseProduct(mask);
    Var out = push(std::move(y), needs_grad(x), {x});
    set_backward(out, [this, out, x, mask]() {
      if (needs_grad(x)) node(x).grad += node(out).grad.cwiseProduct(mask);
    });
    return out;
  }

  // ---- reverse pass ---------------------------------------------------------

  void backward(Var loss) {
    if (ran_backward_)
      throw std::logic_error("Tape::backward: called twice without a new forward pass");
    const Mat& lv = value(loss);
    if (lv.rows() != 1 || lv.cols() != 1)
      throw std::logic_error("Tape::backward: loss must be scalar");
    for (Node& n : nodes_) n.grad = Mat::Zero(n.value.rows(), n.value.cols());
    nodes_[static_cast<std::size_t>(loss.id)].grad(0, 0) = 1.0;
    for (std::size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back && nodes_[i].needs_grad) nodes_[i].back();
    }
    ran_backward_ = true;
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Node& node(Var v) {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }
  const Node& node(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw std::logic_error("Tape: invalid node handle");
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  bool any_grad(std::initializer_list<Var> vars) const {
    for (Var v : vars)
      if (needs_grad(v)) return true;
    return false;
  }

  Var push(Mat value, bool needs, std::initializer_list<Var>) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void set_backward(Var v, std::function<void()> fn) {
    node(v).back = std::move(fn);
  }

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

}  // namespace lalign::ad
