#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avsep/nn.hpp"
#include "avsep/ops.hpp"

namespace avsep {

struct WaveBuffer {
  std::vector<double> samples;
  std::uint32_t sample_rate = 8000;
};

inline Var wave_to_var(const WaveBuffer& w, bool requires_grad = false) {
  if (w.samples.empty()) throw DimensionError("empty waveform");
  Tensor t({Axis::Sample}, {w.samples.size()});
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = w.samples[i];
  return Var(std::move(t), requires_grad);
}

struct SeparatorConfig {
  std::size_t num_sources = 4;
  std::size_t window = 32;
  std::size_t hop = 16;
  std::size_t latent = 64;     // analysis basis signals
  std::size_t kernel = 3;      // mask net temporal kernel
  double dropout_rate = 0.0;   // reserved; the mask net uses none

  void validate() const {
    if (num_sources == 0) throw ConfigError("source count must be positive");
    if (window == 0 || hop == 0 || hop > window)
      throw ConfigError("separator window/hop invalid");
    if (latent == 0 || kernel % 2 == 0)
      throw ConfigError("latent size positive, kernel odd");
  }
};

// Redistributes the residual uniformly so estimates sum to the mixture:
// s'_m = s_m + (x - sum_k s_k) / M. Idempotent.
inline Var mixture_consistency(const Var& s, const Var& x) {
  if (!s.value().has_axis(Axis::Src))
    throw ContractError("source estimates lack a source axis");
  std::size_t m = s.value().dim(Axis::Src);
  Var residual = sub(x, sum_over(s, {Axis::Src}));
  return add_bc(s, scale(residual, 1.0 / double(m)));
}

// Dilated 1-D convolution over the frame axis with same-length output.
class TemporalConv {
 public:
  TemporalConv() = default;

  TemporalConv(ParamStore& ps, const std::string& name, std::size_t kernel,
               std::size_t dilation, std::size_t in_ch, std::size_t out_ch,
               std::mt19937_64& rng)
      : kernel_(kernel), dilation_(dilation) {
    double sigma = 1.0 / std::sqrt(double(kernel * in_ch));
    weight_ = ps.add(name + ".w",
                     truncated_normal({Axis::TapB, Axis::Depth, Axis::DepthK},
                                      {kernel, in_ch, out_ch}, sigma, rng));
    bias_ = ps.add(name + ".b", Tensor({Axis::Depth}, {out_ch}));
  }

  Var operator()(const Var& h) const {
    std::size_t pad = (kernel_ - 1) / 2 * dilation_;
    Var hp = pad_axis(h, Axis::Time, pad, pad);
    Var f = frame_signal(hp, Axis::Time, Axis::Time, Axis::TapB, kernel_, 1,
                         dilation_);
    Var out = tensor_inner_product(f, weight_, {Axis::TapB, Axis::Depth});
    out = relabel(out, Axis::DepthK, Axis::Depth);
    return add_bc(out, bias_);
  }

 private:
  std::size_t kernel_ = 3, dilation_ = 1;
  Var weight_, bias_;
};

// Waveform-in, waveform-out mask-based separation: learnable analysis
// filterbank, a small dilated conv stack predicting per-source sigmoid masks
// over the latent, transposed synthesis, and the consistency projection.
class Separator {
 public:
  Separator() = default;

  Separator(ParamStore& ps, const std::string& name,
            const SeparatorConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg) {
    cfg_.validate();
    double enc_sigma = 1.0 / std::sqrt(double(cfg_.window));
    enc_ = ps.add(name + ".enc",
                  truncated_normal({Axis::Tap, Axis::DepthK},
                                   {cfg_.window, cfg_.latent}, enc_sigma, rng));
    conv1_ = TemporalConv(ps, name + ".c1", cfg_.kernel, 1, cfg_.latent,
                          cfg_.latent, rng);
    conv2_ = TemporalConv(ps, name + ".c2", cfg_.kernel, 2, cfg_.latent,
                          cfg_.latent, rng);
    conv3_ = TemporalConv(ps, name + ".c3", cfg_.kernel, 4, cfg_.latent,
                          cfg_.num_sources * cfg_.latent, rng);
    double dec_sigma = 1.0 / std::sqrt(double(cfg_.latent));
    dec_ = ps.add(name + ".dec",
                  truncated_normal({Axis::Depth, Axis::Tap},
                                   {cfg_.latent, cfg_.window}, dec_sigma, rng));
  }

  const SeparatorConfig& config() const { return cfg_; }

  // x: (Sample). Returns (Src, Sample) summing to x.
  Var operator()(const Var& x) const {
    std::size_t len = x.value().dim(Axis::Sample);
    std::size_t padded = padded_length(len);
    Var xp = pad_axis(x, Axis::Sample, 0, padded - len);

    Var framed = frame_signal(xp, Axis::Sample, Axis::Time, Axis::Tap,
                              cfg_.window, cfg_.hop);
    Var latents = relabel(tensor_inner_product(framed, enc_, {Axis::Tap}),
                          Axis::DepthK, Axis::Depth);  // (Time, latent)

    Var h = relu(conv1_(latents));
    h = relu(conv2_(h));
    Var m = sigmoid(conv3_(h));  // (Time, M*latent)
    Var masks = split_axis(m, Axis::Depth, Axis::Src, Axis::Depth,
                           cfg_.num_sources, cfg_.latent);
    Var masked = mul_bc(masks, latents);  // (Time, Src, latent)

    Var wins = tensor_inner_product(masked, dec_, {Axis::Depth});
    wins = transpose(wins, {Axis::Src, Axis::Time, Axis::Tap});
    Var s = overlap_add(wins, Axis::Time, Axis::Tap, Axis::Sample, cfg_.hop,
                        padded);
    if (padded != len) s = slice(s, Axis::Sample, 0, len);
    return mixture_consistency(s, x);
  }

  std::size_t padded_length(std::size_t len) const {
    if (len <= cfg_.window) return cfg_.window;
    std::size_t steps = (len - cfg_.window + cfg_.hop - 1) / cfg_.hop;
    return cfg_.window + steps * cfg_.hop;
  }

 private:
  SeparatorConfig cfg_;
  Var enc_, dec_;
  TemporalConv conv1_, conv2_, conv3_;
};

}  // namespace avsep
