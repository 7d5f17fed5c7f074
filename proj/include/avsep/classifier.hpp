#pragma once

#include <cmath>
#include <string>

#include "avsep/nn.hpp"
#include "avsep/ops.hpp"

namespace avsep {

// Single affine logit head tied across sources, followed by a sigmoid.
class OnScreenHead {
 public:
  OnScreenHead() = default;

  OnScreenHead(ParamStore& ps, const std::string& name, std::size_t depth,
               std::mt19937_64& rng) {
    head_ = DenseLayer(ps, name + ".fz", depth, 1, rng,
                       1.0 / std::sqrt(double(depth)));
    if (head_.weight().value().dim(Axis::DepthK) != 1)
      throw ConfigError("classifier head must output one logit");
  }

  // z: (Src, Depth) -> logits (Src), probs (Src).
  std::pair<Var, Var> operator()(const Var& z) const {
    Var logits = merge_axes(head_(z), Axis::Src, Axis::Depth, Axis::Src);
    return {logits, sigmoid(logits)};
  }

 private:
  DenseLayer head_;
};

// Soft on-screen estimate: probability-weighted sum of the sources.
inline Var onscreen_mixdown(const Var& probs, const Var& s) {
  if (probs.value().dim(Axis::Src) != s.value().dim(Axis::Src))
    throw DimensionError("probability count does not match sources");
  return tensor_inner_product(probs, s, {Axis::Src});
}

// Mixdown with a global scalar offset on the logits; zero offset reproduces
// the uncalibrated estimate exactly.
inline Var calibrated_mixdown(const Var& logits, const Var& s, double theta) {
  Var probs = sigmoid(add_const(logits, theta));
  return onscreen_mixdown(probs, s);
}

}  // namespace avsep
