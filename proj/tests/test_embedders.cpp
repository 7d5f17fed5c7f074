#include <catch2/catch_amalgamated.hpp>

#include "avsep/embedders.hpp"
#include "avsep/gradcheck.hpp"
#include "support.hpp"

using namespace avsep;
using avsep::test::max_abs_diff;
using avsep::test::random_tensor;

namespace {

EmbeddingConfig tiny_cfg() {
  EmbeddingConfig cfg;
  cfg.depth = 3;
  cfg.grid_side = 2;
  cfg.mel_bins = 4;
  cfg.stft_window = 8;
  cfg.stft_hop = 4;
  cfg.conv_channels = 2;
  cfg.sample_rate = 100.0;
  return cfg;
}

}  // namespace

TEST_CASE("silence maps to the spectrogram floor") {
  EmbeddingConfig cfg;
  Tensor x({Axis::Sample}, {1000});
  Var lm = log_mel(Var(x), cfg);
  double floor = std::log(1e-5);
  for (std::size_t i = 0; i < lm.value().size(); ++i)
    REQUIRE(lm.value()[i] == Catch::Approx(floor));
}

TEST_CASE("frame count follows the window arithmetic") {
  EmbeddingConfig cfg;  // window 200, hop 80
  Tensor x({Axis::Sample}, {16000});
  Var lm = log_mel(Var(x), cfg);
  REQUIRE(lm.value().dim(Axis::Time) == 1 + (16000 - 200) / 80);
  REQUIRE(lm.value().dim(Axis::Depth) == cfg.mel_bins);

  Tensor x_short({Axis::Sample}, {199});
  REQUIRE_THROWS_AS(log_mel(Var(x_short), cfg), ContractError);
}

TEST_CASE("a tone at a band center dominates its neighbors") {
  EmbeddingConfig cfg;  // 32 mel bins over 0..4 kHz
  // Band centers from the mel scale directly, independent arithmetic.
  auto mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
  auto hz = [](double m) {
    return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
  };
  double top = mel(4000.0);
  std::size_t band = 12;
  double f_center = hz(top * double(band + 1) / double(cfg.mel_bins + 1));

  Tensor x({Axis::Sample}, {8000});
  const double pi = 3.14159265358979323846;
  for (std::size_t i = 0; i < 8000; ++i)
    x[i] = 0.5 * std::sin(2.0 * pi * f_center * double(i) / 8000.0);
  Var lm = log_mel(Var(x), cfg);

  std::size_t frames = lm.value().dim(Axis::Time);
  std::vector<double> band_mean(cfg.mel_bins, 0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t b = 0; b < cfg.mel_bins; ++b)
      band_mean[b] += lm.value()[t * cfg.mel_bins + b] / double(frames);
  REQUIRE(band_mean[band] > band_mean[band - 1]);
  REQUIRE(band_mean[band] > band_mean[band + 1]);
}

TEST_CASE("audio embedder emits per-source frame-aligned embeddings") {
  std::mt19937_64 rng(301);
  EmbeddingConfig cfg = tiny_cfg();
  ParamStore ps;
  AudioEmbedder emb(ps, "a", cfg, rng);

  Tensor s = random_tensor({Axis::Src, Axis::Sample}, {3, 24}, rng);
  // Duplicate source 0 into source 2.
  for (std::size_t i = 0; i < 24; ++i) s[2 * 24 + i] = s[i];
  Var z = emb(Var(s), 5);
  REQUIRE(z.value().axes() == (AxisList{Axis::Src, Axis::Time, Axis::Depth}));
  REQUIRE(z.value().dims() == (std::vector<std::size_t>{3, 5, 3}));
  for (std::size_t i = 0; i < 5 * 3; ++i)
    REQUIRE(z.value()[2 * 15 + i] == z.value()[i]);
}

TEST_CASE("audio embedder gradients agree with finite differences") {
  std::mt19937_64 rng(302);
  EmbeddingConfig cfg = tiny_cfg();
  ParamStore ps;
  AudioEmbedder emb(ps, "a", cfg, rng);
  Var s(random_tensor({Axis::Src, Axis::Sample}, {2, 16}, rng, -0.5, 0.5),
        true);
  Tensor wv = random_tensor({Axis::Src, Axis::Time, Axis::Depth}, {2, 3, 3},
                            rng);
  std::vector<Var> leaves = ps.vars();
  leaves.push_back(s);
  auto res = grad_check(
      [&](const std::vector<Var>& ls) {
        return sum_all(mul(emb(ls.back(), 3), constant(wv)));
      },
      leaves, ps.names());
  INFO("worst " << res.worst_leaf << " analytic " << res.analytic
                << " numeric " << res.numeric);
  REQUIRE(res.max_rel_err < 1e-4);
}

TEST_CASE("video embedder flattens the grid and respects frame independence") {
  std::mt19937_64 rng(303);
  EmbeddingConfig cfg = tiny_cfg();
  ParamStore ps;
  VideoEmbedder emb(ps, "v", cfg, 8, rng);  // 8 px -> 2x2 grid, two layers

  Tensor frames = random_tensor({Axis::Time, Axis::Row, Axis::Col}, {3, 8, 8},
                                rng, 0.0, 1.0);
  // Duplicate frame 0 into frame 2.
  for (std::size_t i = 0; i < 64; ++i) frames[2 * 64 + i] = frames[i];
  Var z = emb(Var(frames));
  REQUIRE(z.value().axes() ==
          (AxisList{Axis::Space, Axis::Time, Axis::Depth}));
  REQUIRE(z.value().dims() == (std::vector<std::size_t>{4, 3, 3}));

  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t d = 0; d < 3; ++d)
      REQUIRE(z.value()[(g * 3 + 2) * 3 + d] == z.value()[g * 9 + d]);

  // Editing one frame moves only that frame's column.
  Tensor edited = frames.clone();
  edited[64] += 0.25;  // frame 1, pixel (0,0)
  Var z2 = emb(Var(edited));
  for (std::size_t g = 0; g < 4; ++g)
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t d = 0; d < 3; ++d) {
        double a = z.value()[(g * 3 + t) * 3 + d];
        double b = z2.value()[(g * 3 + t) * 3 + d];
        if (t != 1) REQUIRE(a == b);
      }

  REQUIRE_THROWS_AS(VideoEmbedder(ps, "bad", cfg, 7, rng), ConfigError);
  REQUIRE_THROWS_AS(VideoEmbedder(ps, "bad6", cfg, 6, rng), ConfigError);
}

TEST_CASE("translating a blob translates the strongest grid activation") {
  std::mt19937_64 rng(304);
  EmbeddingConfig cfg = tiny_cfg();
  cfg.grid_side = 4;
  cfg.conv_channels = 1;
  ParamStore ps;
  VideoEmbedder emb(ps, "v", cfg, 8, rng);  // single stride-2 layer

  // Bias-free, nonnegative single conv so activations track input mass.
  {
    Tensor& w = ps.get("v.c0.w").mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = std::abs(w[i]) + 0.1;
    Tensor& b = ps.get("v.c0.b").mutable_value();
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = 0.0;
  }

  auto grid_argmax = [&](std::size_t r0, std::size_t c0) {
    Tensor frames({Axis::Time, Axis::Row, Axis::Col}, {1, 8, 8});
    frames[r0 * 8 + c0] = 1.0;  // one bright pixel
    Var z = emb(Var(frames));
    // Channel activity per cell via the pre-dense conv output is reflected
    // in the embedding magnitude; compare cells by their conv response using
    // the dense-free proxy: embedding minus bias has rank 1 in the channel,
    // so the cell with the largest |z - bias| wins.
    const Tensor& db = ps.get("v.d.b").value();
    std::size_t best = 0;
    double best_v = -1.0;
    for (std::size_t g = 0; g < 16; ++g) {
      double mag = 0;
      for (std::size_t d = 0; d < 3; ++d) {
        double v = z.value()[g * 3 + d] - db[d];
        mag += v * v;
      }
      if (mag > best_v) {
        best_v = mag;
        best = g;
      }
    }
    return best;
  };

  // Stride 2: shifting the pixel two columns right moves the argmax one cell.
  std::size_t base = grid_argmax(4, 2);
  std::size_t shifted = grid_argmax(4, 4);
  REQUIRE(shifted == base + 1);
  std::size_t down = grid_argmax(6, 2);
  REQUIRE(down == base + 4);
}

TEST_CASE("video embedder gradients agree with finite differences") {
  std::mt19937_64 rng(305);
  EmbeddingConfig cfg = tiny_cfg();
  ParamStore ps;
  VideoEmbedder emb(ps, "v", cfg, 4, rng);
  Var frames(random_tensor({Axis::Time, Axis::Row, Axis::Col}, {2, 4, 4}, rng,
                           0.0, 1.0),
             true);
  Tensor wv = random_tensor({Axis::Space, Axis::Time, Axis::Depth}, {4, 2, 3},
                            rng);
  std::vector<Var> leaves = ps.vars();
  leaves.push_back(frames);
  auto res = grad_check(
      [&](const std::vector<Var>& ls) {
        return sum_all(mul(emb(ls.back()), constant(wv)));
      },
      leaves, ps.names());
  INFO("worst " << res.worst_leaf << " analytic " << res.analytic
                << " numeric " << res.numeric);
  REQUIRE(res.max_rel_err < 1e-4);
}
