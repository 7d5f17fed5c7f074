#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "avsep/nn.hpp"
#include "avsep/ops.hpp"

namespace avsep {

struct VideoClip {
  Tensor frames;  // (Time, Row, Col), values in [0, 1]
  double fps = 16.0;
};

struct EmbeddingConfig {
  std::size_t depth = 32;        // shared embedding width D
  std::size_t grid_side = 4;     // g; spatial rows G = g*g
  std::size_t mel_bins = 32;
  std::size_t stft_window = 200;  // 25 ms at 8 kHz
  std::size_t stft_hop = 80;      // 10 ms at 8 kHz
  std::size_t conv_channels = 8;
  double sample_rate = 8000.0;
  double fps = 16.0;

  std::size_t grid_cells() const { return grid_side * grid_side; }

  void validate() const {
    if (depth == 0 || grid_side == 0 || mel_bins == 0 || conv_channels == 0)
      throw ConfigError("embedding dims must be positive");
    if (stft_window == 0 || stft_hop == 0 || stft_hop > stft_window)
      throw ConfigError("stft window/hop invalid");
  }
};

namespace detail {

inline double hz_to_mel(double f) {
  return 2595.0 * std::log10(1.0 + f / 700.0);
}
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// Triangular mel filterbank over the one-sided spectrum: (freq bins, mel).
inline Tensor mel_filterbank(std::size_t n_fft, std::size_t mel_bins,
                             double sample_rate) {
  std::size_t bins = n_fft / 2 + 1;
  std::vector<double> centers(mel_bins + 2);
  double mel_hi = hz_to_mel(sample_rate / 2.0);
  for (std::size_t i = 0; i < centers.size(); ++i)
    centers[i] = mel_to_hz(mel_hi * double(i) / double(mel_bins + 1));
  Tensor fb({Axis::Depth, Axis::DepthK}, {bins, mel_bins});
  for (std::size_t b = 0; b < bins; ++b) {
    double f = double(b) * sample_rate / double(n_fft);
    for (std::size_t m = 0; m < mel_bins; ++m) {
      double lo = centers[m], c = centers[m + 1], hi = centers[m + 2];
      double v = 0.0;
      if (f > lo && f < hi)
        v = f <= c ? (f - lo) / (c - lo) : (hi - f) / (hi - c);
      fb[b * mel_bins + m] = v;
    }
  }
  return fb;
}

// Real DFT bases scaled by a Hann window: (Tap, DepthK = freq bins).
inline std::pair<Tensor, Tensor> windowed_dft(std::size_t n_fft) {
  std::size_t bins = n_fft / 2 + 1;
  Tensor re({Axis::Tap, Axis::DepthK}, {n_fft, bins});
  Tensor im({Axis::Tap, Axis::DepthK}, {n_fft, bins});
  const double pi = 3.14159265358979323846;
  for (std::size_t k = 0; k < n_fft; ++k) {
    double w = 0.5 - 0.5 * std::cos(2.0 * pi * double(k) / double(n_fft));
    for (std::size_t b = 0; b < bins; ++b) {
      double phase = 2.0 * pi * double(k) * double(b) / double(n_fft);
      re[k * bins + b] = w * std::cos(phase);
      im[k * bins + b] = -w * std::sin(phase);
    }
  }
  return {re, im};
}

// Linear time-resampling matrix (Time in, TimeK out) with rows of unit sum.
inline Tensor resample_matrix(std::size_t t_in, std::size_t t_out) {
  Tensor r({Axis::Time, Axis::TimeK}, {t_in, t_out});
  for (std::size_t o = 0; o < t_out; ++o) {
    double pos = t_out == 1 ? double(t_in - 1) / 2.0
                            : double(o) * double(t_in - 1) / double(t_out - 1);
    std::size_t lo = std::size_t(pos);
    if (lo >= t_in - 1) lo = t_in - 1;
    double frac = pos - double(lo);
    r[lo * t_out + o] += 1.0 - frac;
    if (frac > 0.0 && lo + 1 < t_in) r[(lo + 1) * t_out + o] += frac;
  }
  return r;
}

}  // namespace detail

// Log mel spectrogram, floored at 1e-5 before the log. Works on any tensor
// with a Sample axis; extra leading axes (sources) pass through.
inline Var log_mel(const Var& wave, const EmbeddingConfig& cfg) {
  if (wave.value().dim(Axis::Sample) < cfg.stft_window)
    throw ContractError("clip shorter than one analysis window");
  Var framed = frame_signal(wave, Axis::Sample, Axis::Time, Axis::Tap,
                            cfg.stft_window, cfg.stft_hop);
  auto [re_m, im_m] = detail::windowed_dft(cfg.stft_window);
  Var re = tensor_inner_product(framed, constant(re_m), {Axis::Tap});
  Var im = tensor_inner_product(framed, constant(im_m), {Axis::Tap});
  Var power = relabel(add(square(re), square(im)), Axis::DepthK, Axis::Depth);
  Tensor fb = detail::mel_filterbank(cfg.stft_window, cfg.mel_bins,
                                     cfg.sample_rate);
  Var mel = relabel(tensor_inner_product(power, constant(fb), {Axis::Depth}),
                    Axis::DepthK, Axis::Depth);
  return log_op(clamp_min(mel, 1e-5));
}

// Strided 2-D convolution over a pair of axes, valid or same padding.
class Conv2d {
 public:
  Conv2d() = default;

  Conv2d(ParamStore& ps, const std::string& name, std::size_t kernel,
         std::size_t stride, std::size_t in_ch, std::size_t out_ch,
         std::mt19937_64& rng, bool with_bias = true)
      : kernel_(kernel), stride_(stride), in_ch_(in_ch) {
    double sigma = 1.0 / std::sqrt(double(kernel * kernel *
                                          (in_ch == 0 ? 1 : in_ch)));
    AxisList waxes = in_ch == 0
                         ? AxisList{Axis::Tap, Axis::TapB, Axis::DepthK}
                         : AxisList{Axis::Tap, Axis::TapB, Axis::Depth,
                                    Axis::DepthK};
    std::vector<std::size_t> wdims =
        in_ch == 0 ? std::vector<std::size_t>{kernel, kernel, out_ch}
                   : std::vector<std::size_t>{kernel, kernel, in_ch, out_ch};
    weight_ = ps.add(name + ".w", truncated_normal(waxes, wdims, sigma, rng));
    // A small positive start keeps the rectifier gates open on sparse,
    // mostly-dark frames; zero biases can leave a whole stage dead at init.
    if (with_bias)
      bias_ = ps.add(name + ".b",
                     Tensor::filled({Axis::Depth}, {out_ch}, 0.1));
  }

  // Convolves (row_axis, col_axis); channels on Depth when in_ch > 0.
  Var operator()(const Var& x, Axis row_axis, Axis col_axis, bool same) const {
    Var h = x;
    std::size_t pad = same ? (kernel_ - 1) / 2 : 0;
    if (pad) {
      h = pad_axis(h, row_axis, pad, pad);
      h = pad_axis(h, col_axis, pad, pad);
    }
    h = frame_signal(h, row_axis, row_axis, Axis::Tap, kernel_, stride_);
    h = frame_signal(h, col_axis, col_axis, Axis::TapB, kernel_, stride_);
    AxisSet reduce = in_ch_ == 0 ? AxisSet{Axis::Tap, Axis::TapB}
                                 : AxisSet{Axis::Tap, Axis::TapB, Axis::Depth};
    Var out = relabel(tensor_inner_product(h, weight_, reduce), Axis::DepthK,
                      Axis::Depth);
    if (bias_.defined()) out = add_bc(out, bias_);
    return out;
  }

 private:
  std::size_t kernel_ = 3, stride_ = 2, in_ch_ = 0;
  Var weight_, bias_;
};

// Per-source log mel features through two strided convolutions over
// (time, mel), a mel average pool, linear resampling of the time axis to the
// video frame count, and a dense map to the shared depth.
class AudioEmbedder {
 public:
  AudioEmbedder() = default;

  AudioEmbedder(ParamStore& ps, const std::string& name,
                const EmbeddingConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg) {
    cfg_.validate();
    conv1_ = Conv2d(ps, name + ".c1", 3, 2, 0, cfg_.conv_channels, rng);
    conv2_ = Conv2d(ps, name + ".c2", 3, 2, cfg_.conv_channels,
                    cfg_.conv_channels, rng);
    dense_ = DenseLayer(ps, name + ".d", cfg_.conv_channels, cfg_.depth, rng,
                        1.0 / std::sqrt(double(cfg_.conv_channels)));
  }

  // s: (Src, Sample) -> (Src, Time = t_out, Depth).
  Var operator()(const Var& s, std::size_t t_out) const {
    Var feats = log_mel(s, cfg_);                      // (Src, Time, mel)
    Var h = relabel(feats, Axis::Depth, Axis::Row);    // mel to a free axis
    h = relu(conv1_(h, Axis::Time, Axis::Row, true));  // (Src, T/2, mel/2, C)
    h = relu(conv2_(h, Axis::Time, Axis::Row, true));
    h = mean_over(h, {Axis::Row});                     // (Src, T/4, C)
    Tensor r = detail::resample_matrix(h.value().dim(Axis::Time), t_out);
    h = relabel(tensor_inner_product(h, constant(r), {Axis::Time}),
                Axis::TimeK, Axis::Time);              // (Src, C, T)
    h = transpose(h, {Axis::Src, Axis::Time, Axis::Depth});
    return dense_(h);
  }

 private:
  EmbeddingConfig cfg_;
  Conv2d conv1_, conv2_;
  DenseLayer dense_;
};

// Frame-independent strided conv stack shrinking each frame to the g-by-g
// grid, flattened to G spatial rows and mapped to the shared depth.
class VideoEmbedder {
 public:
  VideoEmbedder() = default;

  VideoEmbedder(ParamStore& ps, const std::string& name,
                const EmbeddingConfig& cfg, std::size_t px_side,
                std::mt19937_64& rng)
      : cfg_(cfg) {
    cfg_.validate();
    if (px_side < cfg_.grid_side || px_side % cfg_.grid_side != 0)
      throw ConfigError("frame side not reducible to the grid side");
    std::size_t factor = px_side / cfg_.grid_side;
    while (factor > 1) {
      if (factor % 2 != 0)
        throw ConfigError("frame/grid ratio must be a power of two");
      std::size_t in_ch = convs_.empty() ? 0 : cfg_.conv_channels;
      convs_.emplace_back(ps, name + ".c" + std::to_string(convs_.size()), 3,
                          2, in_ch, cfg_.conv_channels, rng);
      factor /= 2;
    }
    if (convs_.empty())
      convs_.emplace_back(ps, name + ".c0", 3, 1, 0, cfg_.conv_channels, rng);
    dense_ = DenseLayer(ps, name + ".d", cfg_.conv_channels, cfg_.depth, rng,
                        1.0 / std::sqrt(double(cfg_.conv_channels)));
  }

  // frames: (Time, Row, Col) -> (Space, Time, Depth).
  Var operator()(const Var& frames) const {
    Var h = frames;
    for (const Conv2d& c : convs_)
      h = relu(c(h, Axis::Row, Axis::Col, true));
    std::size_t g = cfg_.grid_side;
    if (h.value().dim(Axis::Row) != g || h.value().dim(Axis::Col) != g)
      throw DimensionError("conv stack did not reach the grid size");
    h = transpose(h, {Axis::Row, Axis::Col, Axis::Time, Axis::Depth});
    h = merge_axes(h, Axis::Row, Axis::Col, Axis::Space);  // (Space, T, C)
    return dense_(h);
  }

 private:
  EmbeddingConfig cfg_;
  std::vector<Conv2d> convs_;
  DenseLayer dense_;
};

}  // namespace avsep
