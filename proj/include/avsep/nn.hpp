#pragma once

#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "avsep/ops.hpp"

namespace avsep {

// Normal(0, sigma) truncated to two standard deviations.
inline Tensor truncated_normal(const AxisList& axes,
                               const std::vector<std::size_t>& dims,
                               double sigma, std::mt19937_64& rng) {
  Tensor t(axes, dims);
  std::normal_distribution<double> dist(0.0, sigma);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v;
    do {
      v = dist(rng);
    } while (std::abs(v) > 2.0 * sigma);
    t[i] = v;
  }
  return t;
}

// Flat registry of trainable leaves. Names are stable across runs so
// checkpoints and the optimizer can address parameters by name.
class ParamStore {
 public:
  Var add(const std::string& name, Tensor init) {
    if (params_.count(name))
      throw ConfigError("duplicate parameter name: " + name);
    Var v(std::move(init), true);
    params_.emplace(name, v);
    order_.push_back(name);
    return v;
  }

  bool has(const std::string& name) const { return params_.count(name) > 0; }

  Var get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end())
      throw ConfigError("unknown parameter name: " + name);
    return it->second;
  }

  const std::vector<std::string>& names() const { return order_; }

  std::vector<Var> vars() const {
    std::vector<Var> vs;
    for (const auto& n : order_) vs.push_back(params_.at(n));
    return vs;
  }

  std::size_t count() const { return order_.size(); }

  std::size_t total_scalars() const {
    std::size_t n = 0;
    for (const auto& name : order_) n += params_.at(name).value().size();
    return n;
  }

  void clear_grads() {
    for (const auto& name : order_) params_.at(name).clear_grad();
  }

 private:
  std::map<std::string, Var> params_;
  std::vector<std::string> order_;
};

// Affine map on the Depth axis. The weight lives as (Depth in, DepthK out);
// after contraction the output axis is relabeled back to Depth so layers
// compose without bookkeeping.
class DenseLayer {
 public:
  DenseLayer() = default;

  DenseLayer(ParamStore& ps, const std::string& name, std::size_t in_dim,
             std::size_t out_dim, std::mt19937_64& rng, double sigma,
             bool with_bias = true) {
    weight_ = ps.add(name + ".w",
                     truncated_normal({Axis::Depth, Axis::DepthK},
                                      {in_dim, out_dim}, sigma, rng));
    if (with_bias) bias_ = ps.add(name + ".b", Tensor({Axis::Depth}, {out_dim}));
  }

  Var operator()(const Var& x) const {
    Var h = tensor_inner_product(x, weight_, AxisSet({Axis::Depth}));
    h = relabel(h, Axis::DepthK, Axis::Depth);
    return bias_.defined() ? add_bc(h, bias_) : h;
  }

  Var weight() const { return weight_; }
  Var bias() const { return bias_; }

 private:
  Var weight_, bias_;
};

inline Var relu(const Var& x) { return clamp_min(x, 0.0); }

// Normalizes each Depth fiber to zero mean and unit variance, then applies a
// learned per-channel gain and bias.
class LayerNorm {
 public:
  static constexpr double kEps = 1e-6;

  LayerNorm() = default;

  LayerNorm(ParamStore& ps, const std::string& name, std::size_t dim) {
    gain_ = ps.add(name + ".g", Tensor::filled({Axis::Depth}, {dim}, 1.0));
    bias_ = ps.add(name + ".b", Tensor({Axis::Depth}, {dim}));
  }

  Var operator()(const Var& x) const {
    AxisSet depth({Axis::Depth});
    Var mu = mean_over(x, depth);
    Var xc = add_bc(x, scale(mu, -1.0));
    Var var = mean_over(square(xc), depth);
    Var inv = rsqrt(add_const(var, kEps));
    Var normed = mul_bc(xc, inv);
    return add_bc(mul_bc(normed, gain_), bias_);
  }

  Var gain() const { return gain_; }
  Var bias() const { return bias_; }

 private:
  Var gain_, bias_;
};

}  // namespace avsep
