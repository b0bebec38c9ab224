#pragma once

// Parameterized layers, forward evaluation (plain and tape-recorded),
// gradient buffers and the Adam optimizer. Both decoders are built from the
// same Layer record: a kernel-size-1 convolution over points is a shared-
// weight per-row linear map, so pointwise and fully-connected layers share
// the affine implementation and differ only in how the surrounding network
// arranges them.

#include <latentalign/autodiff.hpp>
#include <latentalign/rng.hpp>

#include <json.hpp>

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lalign {

using Mat = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class LayerKind { pointwise_linear, fully_connected };
enum class NetMode { train, eval };

struct Layer {
  LayerKind kind = LayerKind::fully_connected;
  Mat weight;   // out x in
  Vector bias;  // out
  bool relu = true;
  bool batch_norm = false;
  double dropout = 0.0;
  // Normalization state, sized out_dim when batch_norm is on.
  Vector bn_gamma, bn_beta, bn_run_mean, bn_run_var;

  Eigen::Index in_dim() const { return weight.cols(); }
  Eigen::Index out_dim() const { return weight.rows(); }
};

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct NetParams {
  std::vector<Layer> layers;
  NetMode mode = NetMode::train;

  void validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      if (l.weight.size() == 0 || l.bias.size() != l.out_dim())
        throw std::invalid_argument("NetParams: layer " + std::to_string(i) +
                                    " has inconsistent shapes");
      if (i + 1 < layers.size() && layers[i + 1].in_dim() != l.out_dim())
        throw std::invalid_argument("NetParams: dimension chain broken at layer " +
                                    std::to_string(i));
      if (!l.weight.allFinite() || !l.bias.allFinite())
        throw std::invalid_argument("NetParams: non-finite parameters in layer " +
                                    std::to_string(i));
      if (l.batch_norm) {
        if (l.bn_gamma.size() != l.out_dim() || l.bn_beta.size() != l.out_dim() ||
            l.bn_run_mean.size() != l.out_dim() || l.bn_run_var.size() != l.out_dim())
          throw std::invalid_argument("NetParams: normalization state size mismatch");
        if ((l.bn_run_var.array() <= 0.0).any())
          throw std::invalid_argument("NetParams: running variance must stay positive");
      }
    }
  }
};

// Kaiming-style fan-in uniform init, seeded.
inline Layer make_layer(LayerKind kind, int in_dim, int out_dim, bool relu, Rng& rng) {
  Layer l;
  l.kind = kind;
  l.relu = relu;
  l.weight = Mat(out_dim, in_dim);
  const double bound = std::sqrt(6.0 / static_cast<double>(in_dim));
  for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c)
      l.weight(r, c) = rng.uniform(-bound, bound);
  l.bias = Vector::Zero(out_dim);
  return l;
}

inline void enable_batch_norm(Layer& l) {
  l.batch_norm = true;
  l.bn_gamma = Vector::Ones(l.out_dim());
  l.bn_beta = Vector::Zero(l.out_dim());
  l.bn_run_mean = Vector::Zero(l.out_dim());
  l.bn_run_var = Vector::Ones(l.out_dim());
}

// ---- plain forward ----------------------------------------------------------

// One layer applied to rows of x. In train mode dropout needs an rng; batch
// statistics are used only when the batch has at least two rows, otherwise
// the running estimates stand in (single-row batches carry no statistics).
inline Mat layer_forward(const Layer& layer, const Mat& x, NetMode mode,
                         Rng* dropout_rng = nullptr,
                         Layer* running_stats_out = nullptr) {
  if (x.cols() != layer.in_dim())
    throw std::invalid_argument("layer_forward: input width " +
                                std::to_string(x.cols()) + " does not match in_dim " +
                                std::to_string(layer.in_dim()));
  Mat y = ad::affine_forward(x, layer.weight, layer.bias);
  if (layer.batch_norm) {
    RowVector mean, var;
    if (mode == NetMode::train && y.rows() >= 2) {
      mean = y.colwise().mean();
      Mat centered = y.rowwise() - mean;
      var = centered.array().square().colwise().sum() /
            static_cast<double>(y.rows());
      if (running_stats_out != nullptr) {
        const double n = static_cast<double>(y.rows());
        RowVector unbiased = var * (n / (n - 1.0));
        running_stats_out->bn_run_mean =
            (1.0 - kBnMomentum) * running_stats_out->bn_run_mean +
            kBnMomentum * mean.transpose();
        running_stats_out->bn_run_var =
            (1.0 - kBnMomentum) * running_stats_out->bn_run_var +
            kBnMomentum * unbiased.transpose();
      }
    } else {
      mean = layer.bn_run_mean.transpose();
      var = layer.bn_run_var.transpose();
    }
    RowVector inv_sd = (var.array() + kBnEps).sqrt().inverse();
    y = (y.rowwise() - mean).array().rowwise() * inv_sd.array();
    y = y.array().rowwise() * layer.bn_gamma.transpose().array();
    y.rowwise() += layer.bn_beta.transpose();
  }
  if (layer.relu) y = y.cwiseMax(0.0);
  if (layer.dropout > 0.0 && mode == NetMode::train) {
    if (dropout_rng == nullptr)
      throw std::logic_error("layer_forward: dropout in train mode needs an rng");
    const double keep = 1.0 - layer.dropout;
    for (Eigen::Index r = 0; r < y.rows(); ++r)
      for (Eigen::Index c = 0; c < y.cols(); ++c)
        y(r, c) = dropout_rng->uniform() < keep ? y(r, c) / keep : 0.0;
  }
  return y;
}

// Spec-facing alias: per-point shared-weight map (1D convolution, kernel 1).
inline Mat pointwise_linear_forward(const Mat& inputs, const Layer& layer,
                                    NetMode mode = NetMode::eval) {
  return layer_forward(layer, inputs, mode);
}

// Column-wise max with argmax indices (ties keep the lowest row).
inline std::pair<RowVector, std::vector<int>> max_pool_points(const Mat& inputs) {
  if (inputs.rows() < 1)
    throw std::invalid_argument("max_pool_points: empty input");
  RowVector out(inputs.cols());
  std::vector<int> argmax(static_cast<std::size_t>(inputs.cols()));
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    Eigen::Index row = 0;
    out(j) = inputs.col(j).maxCoeff(&row);
    argmax[static_cast<std::size_t>(j)] = static_cast<int>(row);
  }
  return {out, argmax};
}

// ---- recorded forward --------------------------------------------------------

struct LayerVars {
  ad::Var weight, bias, gamma, beta;
};

struct NetBinding {
  std::vector<LayerVars> layers;
};

// Records one layer onto the tape. Parameters become leaves that require
// gradients when `trainable` is set; binding rows line up with net layers.
inline ad::Var record_layer(ad::Tape& tape, Layer& layer, ad::Var x, NetMode mode,
                            bool trainable, NetBinding& binding,
                            Rng* dropout_rng = nullptr,
                            bool update_running_stats = false) {
  LayerVars vars;
  vars.weight = tape.leaf(layer.weight, trainable);
  vars.bias = tape.leaf(Mat(layer.bias), trainable);
  ad::Var y = tape.affine_rows(x, vars.weight, vars.bias);
  if (layer.batch_norm) {
    vars.gamma = tape.leaf(Mat(layer.bn_gamma.transpose()), trainable);
    vars.beta = tape.leaf(Mat(layer.bn_beta.transpose()), trainable);
    const Mat& pre = tape.value(y);
    if (mode == NetMode::train && pre.rows() >= 2) {
      RowVector mean = pre.colwise().mean();
      Mat centered = pre.rowwise() - mean;
      RowVector var = centered.array().square().colwise().sum() /
                      static_cast<double>(pre.rows());
      if (update_running_stats) {
        const double n = static_cast<double>(pre.rows());
        RowVector unbiased = var * (n / (n - 1.0));
        layer.bn_run_mean = (1.0 - kBnMomentum) * layer.bn_run_mean +
                            kBnMomentum * mean.transpose();
        layer.bn_run_var = (1.0 - kBnMomentum) * layer.bn_run_var +
                           kBnMomentum * unbiased.transpose();
      }
      y = tape.batch_norm_rows(y, vars.gamma, vars.beta, mean, var, kBnEps);
    } else {
      RowVector mean = layer.bn_run_mean.transpose();
      RowVector inv_sd =
          (layer.bn_run_var.transpose().array() + kBnEps).sqrt().inverse();
      y = tape.affine_norm_rows(y, vars.gamma, vars.beta, mean, inv_sd);
    }
  }
  if (layer.relu) y = tape.relu(y);
  if (layer.dropout > 0.0 && mode == NetMode::train) {
    if (dropout_rng == nullptr)
      throw std::logic_error("record_layer: dropout in train mode needs an rng");
    const Mat& yv = tape.value(y);
    const double keep = 1.0 - layer.dropout;
    Mat mask(yv.rows(), yv.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
      for (Eigen::Index c = 0; c < mask.cols(); ++c)
        mask(r, c) = dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
    y = tape.dropout_mask(y, mask);
  }
  binding.layers.push_back(vars);
  return y;
}

// ---- gradients ---------------------------------------------------------------

struct LayerGrads {
  Mat weight;
  Vector bias, bn_gamma, bn_beta;
};

struct GradBuffer {
  std::vector<LayerGrads> layers;

  static GradBuffer zeros_like(const NetParams& net) {
    GradBuffer g;
    g.layers.reserve(net.layers.size());
    for (const Layer& l : net.layers) {
      LayerGrads lg;
      lg.weight = Mat::Zero(l.weight.rows(), l.weight.cols());
      lg.bias = Vector::Zero(l.bias.size());
      if (l.batch_norm) {
        lg.bn_gamma = Vector::Zero(l.bn_gamma.size());
        lg.bn_beta = Vector::Zero(l.bn_beta.size());
      }
      g.layers.push_back(std::move(lg));
    }
    return g;
  }

  void scale(double s) {
    for (LayerGrads& lg : layers) {
      lg.weight *= s;
      lg.bias *= s;
      if (lg.bn_gamma.size() > 0) lg.bn_gamma *= s;
      if (lg.bn_beta.size() > 0) lg.bn_beta *= s;
    }
  }
};

// Pulls the parameter gradients for one recorded net out of the tape,
// accumulating into `grads` (callers batch by summing several passes).
inline void accumulate_grads(const ad::Tape& tape, const NetBinding& binding,
                             const NetParams& net, GradBuffer& grads,
                             double scale = 1.0) {
  if (binding.layers.size() != net.layers.size() ||
      grads.layers.size() != net.layers.size())
    throw std::invalid_argument("accumulate_grads: binding/net/grads mismatch");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const LayerVars& v = binding.layers[i];
    grads.layers[i].weight += scale * tape.grad(v.weight);
    grads.layers[i].bias += scale * tape.grad(v.bias).col(0);
    if (net.layers[i].batch_norm) {
      grads.layers[i].bn_gamma += scale * tape.grad(v.gamma).row(0).transpose();
      grads.layers[i].bn_beta += scale * tape.grad(v.beta).row(0).transpose();
    }
  }
}

// ---- Adam ---------------------------------------------------------------------

struct TensorView {
  std::string name;
  double* data = nullptr;
  const double* cdata = nullptr;
  std::ptrdiff_t size = 0;
};

inline std::vector<TensorView> param_views(NetParams& net, const std::string& prefix) {
  std::vector<TensorView> views;
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    Layer& l = net.layers[i];
    std::string base = prefix + ".layer" + std::to_string(i);
    views.push_back({base + ".weight", l.weight.data(), l.weight.data(), l.weight.size()});
    views.push_back({base + ".bias", l.bias.data(), l.bias.data(), l.bias.size()});
    if (l.batch_norm) {
      views.push_back({base + ".bn_gamma", l.bn_gamma.data(), l.bn_gamma.data(), l.bn_gamma.size()});
      views.push_back({base + ".bn_beta", l.bn_beta.data(), l.bn_beta.data(), l.bn_beta.size()});
    }
  }
  return views;
}

inline std::vector<TensorView> grad_views(const GradBuffer& grads, const NetParams& net,
                                          const std::string& prefix) {
  std::vector<TensorView> views;
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    const LayerGrads& g = grads.layers[i];
    std::string base = prefix + ".layer" + std::to_string(i);
    views.push_back({base + ".weight", nullptr, g.weight.data(), g.weight.size()});
    views.push_back({base + ".bias", nullptr, g.bias.data(), g.bias.size()});
    if (net.layers[i].batch_norm) {
      views.push_back({base + ".bn_gamma", nullptr, g.bn_gamma.data(), g.bn_gamma.size()});
      views.push_back({base + ".bn_beta", nullptr, g.bn_beta.data(), g.bn_beta.size()});
    }
  }
  return views;
}

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  long long step = 0;
  std::vector<Vector> m, v;  // aligned with the view list
};

// Standard Adam with decoupled weight decay. Moment buffers are allocated on
// first use from the view shapes. Throws (naming the tensor) on non-finite
// gradients before touching any parameter.
inline void adam_step(std::vector<TensorView> params,
                      const std::vector<TensorView>& grads, AdamState& state) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient view mismatch");
  for (std::size_t t = 0; t < grads.size(); ++t) {
    if (params[t].size != grads[t].size)
      throw std::invalid_argument("adam_step: size mismatch for " + params[t].name);
    for (std::ptrdiff_t i = 0; i < grads[t].size; ++i)
      if (!std::isfinite(grads[t].cdata[i]))
        throw std::runtime_error("adam_step: non-finite gradient in " + grads[t].name);
  }
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
      state.m[t] = Vector::Zero(params[t].size);
      state.v[t] = Vector::Zero(params[t].size);
    }
  }
  if (state.m.size() != params.size())
    throw std::invalid_argument("adam_step: optimizer state does not match parameters");

  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t t = 0; t < params.size(); ++t) {
    double* p = params[t].data;
    const double* g = grads[t].cdata;
    Vector& m = state.m[t];
    Vector& v = state.v[t];
    if (m.size() != params[t].size)
      throw std::invalid_argument("adam_step: moment size mismatch for " + params[t].name);
    for (std::ptrdiff_t i = 0; i < params[t].size; ++i) {
      m(i) = state.beta1 * m(i) + (1.0 - state.beta1) * g[i];
      v(i) = state.beta2 * v(i) + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m(i) / bc1;
      const double vhat = v(i) / bc2;
      p[i] -= state.lr * (mhat / (std::sqrt(vhat) + state.eps) +
                          state.weight_decay * p[i]);
    }
  }
}

// Spec-facing overload over whole nets.
inline void adam_step(NetParams& params, const GradBuffer& grads, AdamState& state) {
  adam_step(param_views(params, "net"), grad_views(grads, params, "net"), state);
}

// ---- checkpoint serialization --------------------------------------------------

using Json = nlohmann::ordered_json;

inline Json to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

inline Json to_json(const Mat& m) {
  Json a = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    a.push_back(std::move(row));
  }
  return a;
}

inline Vector vector_from_json(const Json& a) {
  Vector v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) v(static_cast<Eigen::Index>(i)) = a[i].get<double>();
  return v;
}

inline Mat mat_from_json(const Json& a) {
  const std::size_t rows = a.size();
  if (rows == 0) return Mat(0, 0);
  const std::size_t cols = a[0].size();
  Mat m(rows, cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c)
      m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = a[r][c].get<double>();
  return m;
}

inline Json layer_to_json(const Layer& l) {
  Json j;
  j["kind"] = l.kind == LayerKind::pointwise_linear ? "pointwise_linear" : "fully_connected";
  j["in_dim"] = l.in_dim();
  j["out_dim"] = l.out_dim();
  j["relu"] = l.relu;
  j["dropout"] = l.dropout;
  j["weight"] = to_json(l.weight);
  j["bias"] = to_json(l.bias);
  j["batch_norm"] = l.batch_norm;
  if (l.batch_norm) {
    j["bn_gamma"] = to_json(l.bn_gamma);
    j["bn_beta"] = to_json(l.bn_beta);
    j["bn_run_mean"] = to_json(l.bn_run_mean);
    j["bn_run_var"] = to_json(l.bn_run_var);
  }
  return j;
}

inline Layer layer_from_json(const Json& j) {
  Layer l;
  l.kind = j.at("kind").get<std::string>() == "pointwise_linear"
               ? LayerKind::pointwise_linear
               : LayerKind::fully_connected;
  l.relu = j.at("relu").get<bool>();
  l.dropout = j.at("dropout").get<double>();
  l.weight = mat_from_json(j.at("weight"));
  l.bias = vector_from_json(j.at("bias"));
  l.batch_norm = j.at("batch_norm").get<bool>();
  if (l.batch_norm) {
    l.bn_gamma = vector_from_json(j.at("bn_gamma"));
    l.bn_beta = vector_from_json(j.at("bn_beta"));
    l.bn_run_mean = vector_from_json(j.at("bn_run_mean"));
    l.bn_run_var = vector_from_json(j.at("bn_run_var"));
  }
  return l;
}

inline Json net_to_json(const NetParams& net) {
  Json j;
  j["mode"] = net.mode == NetMode::train ? "train" : "eval";
  j["layers"] = Json::array();
  for (const Layer& l : net.layers) j["layers"].push_back(layer_to_json(l));
  return j;
}

inline NetParams net_from_json(const Json& j) {
  NetParams net;
  net.mode = j.at("mode").get<std::string>() == "train" ? NetMode::train : NetMode::eval;
  for (const Json& lj : j.at("layers")) net.layers.push_back(layer_from_json(lj));
  net.validate();
  return net;
}

inline Json adam_to_json(const AdamState& s) {
  Json j;
  j["lr"] = s.lr;
  j["beta1"] = s.beta1;
  j["beta2"] = s.beta2;
  j["eps"] = s.eps;
  j["weight_decay"] = s.weight_decay;
  j["step"] = s.step;
  j["m"] = Json::array();
  j["v"] = Json::array();
  for (const Vector& m : s.m) j["m"].push_back(to_json(m));
  for (const Vector& v : s.v) j["v"].push_back(to_json(v));
  return j;
}

inline AdamState adam_from_json(const Json& j) {
  AdamState s;
  s.lr = j.at("lr").get<double>();
  s.beta1 = j.at("beta1").get<double>();
  s.beta2 = j.at("beta2").get<double>();
  s.eps = j.at("eps").get<double>();
  s.weight_decay = j.at("weight_decay").get<double>();
  s.step = j.at("step").get<long long>();
  for (const Json& m : j.at("m")) s.m.push_back(vector_from_json(m));
  for (const Json& v : j.at("v")) s.v.push_back(vector_from_json(v));
  return s;
}

}  // namespace lalign
