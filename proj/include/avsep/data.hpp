#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsep/embedders.hpp"
#include "avsep/errors.hpp"
#include "avsep/io.hpp"
#include "avsep/losses.hpp"
#include "avsep/separator.hpp"

namespace avsep {

enum class SourceFamily { kTone, kNoiseBurst, kChirp };

inline const char* family_name(SourceFamily f) {
  switch (f) {
    case SourceFamily::kTone: return "tone";
    case SourceFamily::kNoiseBurst: return "noise_burst";
    case SourceFamily::kChirp: return "chirp";
  }
  throw ContractError("unknown source family");
}

inline SourceFamily family_from_name(const std::string& name) {
  if (name == "tone") return SourceFamily::kTone;
  if (name == "noise_burst") return SourceFamily::kNoiseBurst;
  if (name == "chirp") return SourceFamily::kChirp;
  throw ConfigError("unknown source family '" + name + "'");
}

// Synthetic scene generator parameters. Scenes are desk-scale stand-ins for
// real clips: every on-screen source is drawn as a moving blob whose
// brightness follows that source's loudness frame by frame, so the video
// carries exact synchrony information and nothing else.
struct SceneConfig {
  std::size_t num_sources = 2;     // generated sources per scene, 1..3
  double on_screen_fraction = 0.5; // chance each source is visible
  double clip_seconds = 2.0;
  double sample_rate = 8000.0;
  double fps = 16.0;
  std::size_t px_side = 32;
  double noise_floor = 0.0;        // optional on-scene noise amplitude
  // Families sources may draw from; narrowing this tunes task difficulty.
  std::vector<SourceFamily> allowed_families = {
      SourceFamily::kTone, SourceFamily::kNoiseBurst, SourceFamily::kChirp};
  // When positive, scene pairing redraws the background until every tone
  // carrier in one scene sits at least this far from every tone carrier in
  // the other, measured after Nyquist folding. Mixture pairs then stay
  // resolvable at short analysis windows.
  double min_cross_gap_hz = 0.0;

  std::size_t num_samples() const {
    return std::size_t(std::lround(clip_seconds * sample_rate));
  }
  std::size_t num_frames() const {
    return std::size_t(std::lround(clip_seconds * fps));
  }
  std::size_t samples_per_frame() const {
    return std::size_t(std::lround(sample_rate / fps));
  }

  void validate() const {
    if (num_sources < 1 || num_sources > 3)
      throw ConfigError("scenes carry between 1 and 3 sources");
    if (on_screen_fraction < 0 || on_screen_fraction > 1)
      throw ConfigError("on_screen_fraction must lie in [0,1]");
    if (clip_seconds <= 0 || sample_rate <= 0 || fps <= 0)
      throw ConfigError("clip timing values must be positive");
    if (px_side < 8) throw ConfigError("frames need at least 8 pixels a side");
    if (noise_floor < 0) throw ConfigError("noise_floor must be >= 0");
    if (allowed_families.empty())
      throw ConfigError("at least one source family must be allowed");
    if (min_cross_gap_hz < 0)
      throw ConfigError("min_cross_gap_hz must be >= 0");
    if (num_samples() % num_frames() != 0)
      throw ConfigError("sample rate must be an integer multiple of fps");
  }
};

// Fully expanded scene: per-source waveforms and visibility flags, the
// rendered clip, and the derived sums. All audio sits on the 1/32768 grid so
// later mixture sums are exact in double precision.
struct Scene {
  VideoClip clip;
  std::vector<std::vector<double>> source_audio;
  std::vector<int> on_screen;
  std::vector<SourceFamily> families;
  std::vector<double> carrier_hz;               // drawn carrier per source;
                                                // start frequency for chirps
  std::vector<std::vector<double>> envelopes;   // per-frame RMS per source
  std::vector<std::vector<int>> blob_rows;      // per-frame centers, ON only
  std::vector<std::vector<int>> blob_cols;
  WaveBuffer soundtrack;  // sum of every source (plus noise floor)
  WaveBuffer on_audio;    // sum of on-screen sources only
  std::uint64_t seed = 0;
};

// One training or evaluation example: two reference mixtures, their exact
// sum, the primary scene's frames, and the ground truth needed for metrics.
struct MoMExample {
  ExampleKind kind = ExampleKind::kNOn;
  VideoClip clip;
  WaveBuffer r1;        // primary soundtrack
  WaveBuffer r2;        // synthetic off-screen audio, may be silent
  WaveBuffer mixture;   // r1 + r2, sample-exact
  WaveBuffer on_truth;  // ground-truth on-screen audio of the primary scene
  std::vector<int> truth_on_flags;
  std::uint64_t id = 0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Snaps a sample onto the dyadic grid that survives both summation and
// 16-bit export without drift.
inline double snap(double v) {
  return std::lround(std::clamp(v, -0.999, 0.999) * 32768.0) / 32768.0;
}

}  // namespace detail

// Deterministic scene synthesis. Each source draws a family, a carrier, and
// a slow amplitude envelope; visible sources additionally get a bouncing
// blob path whose peak pixel equals the source's frame RMS exactly.
inline Scene synth_scene(const SceneConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(detail::splitmix64(seed));
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  std::size_t n = cfg.num_samples();
  std::size_t frames = cfg.num_frames();
  std::size_t spf = cfg.samples_per_frame();
  double sr = cfg.sample_rate;
  const double pi = 3.14159265358979323846;

  Scene scene;
  scene.seed = seed;
  scene.clip.fps = cfg.fps;
  scene.clip.frames =
      Tensor({Axis::Time, Axis::Row, Axis::Col},
             {frames, cfg.px_side, cfg.px_side});
  scene.soundtrack.samples.assign(n, 0.0);
  scene.soundtrack.sample_rate = std::uint32_t(sr);
  scene.on_audio = scene.soundtrack;

  double amp_cap = 0.4 / double(cfg.num_sources);
  for (std::size_t m = 0; m < cfg.num_sources; ++m) {
    SourceFamily family =
        cfg.allowed_families[rng() % cfg.allowed_families.size()];
    bool visible = u01(rng) < cfg.on_screen_fraction;
    double amp = amp_cap * (0.5 + 0.5 * u01(rng));
    double env_rate = 0.5 + 1.5 * u01(rng);  // Hz
    double env_phase = 2 * pi * u01(rng);
    double f0 = 200.0 + 2800.0 * u01(rng);
    double f1 = 200.0 + 2800.0 * u01(rng);
    double duty = 0.3 + 0.4 * u01(rng);

    std::vector<double> s(n);
    for (std::size_t i = 0; i < n; ++i) {
      double t = double(i) / sr;
      double env = 0.55 + 0.45 * std::sin(2 * pi * env_rate * t + env_phase);
      double carrier = 0.0;
      switch (family) {
        case SourceFamily::kTone:
          carrier = std::sin(2 * pi * f0 * t);
          break;
        case SourceFamily::kNoiseBurst: {
          double gate_pos = std::fmod(env_rate * t + env_phase / (2 * pi), 1.0);
          double gate = gate_pos < duty ? 1.0 : 0.05;
          carrier = gate * (2.0 * u01(rng) - 1.0);
          env = 1.0;  // the gate is the envelope for bursts
          break;
        }
        case SourceFamily::kChirp: {
          double frac = double(i) / double(n);
          carrier = std::sin(2 * pi * (f0 * t + 0.5 * (f1 - f0) * t * frac));
          break;
        }
      }
      s[i] = detail::snap(amp * env * carrier);
    }

    std::vector<double> env_trace(frames);
    for (std::size_t f = 0; f < frames; ++f) {
      double acc = 0.0;
      for (std::size_t i = 0; i < spf; ++i) {
        double v = s[f * spf + i];
        acc += v * v;
      }
      env_trace[f] = std::sqrt(acc / double(spf));
    }

    for (std::size_t i = 0; i < n; ++i) {
      scene.soundtrack.samples[i] += s[i];
      if (visible) scene.on_audio.samples[i] += s[i];
    }
    scene.source_audio.push_back(std::move(s));
    scene.on_screen.push_back(visible ? 1 : 0);
    scene.families.push_back(family);
    scene.carrier_hz.push_back(f0);
    scene.envelopes.push_back(env_trace);

    std::vector<int> rows(frames, 0), cols(frames, 0);
    if (visible) {
      // Each source roams its own horizontal band so one blob's peak pixel
      // never sits under another blob's tail.
      double band = double(cfg.px_side) / double(cfg.num_sources);
      double row_lo = band * m + std::min(3.0, band / 3.0);
      double row_hi = band * (m + 1) - std::min(3.0, band / 3.0);
      if (row_hi < row_lo) row_hi = row_lo;
      double col_lo = 3.0, col_hi = double(cfg.px_side) - 4.0;
      double r = row_lo + (row_hi - row_lo) * u01(rng);
      double c = col_lo + (col_hi - col_lo) * u01(rng);
      double vr = 0.8 * (2 * u01(rng) - 1.0);
      double vc = 1.5 * (2 * u01(rng) - 1.0);
      for (std::size_t f = 0; f < frames; ++f) {
        rows[f] = int(std::lround(std::clamp(r, row_lo, row_hi)));
        cols[f] = int(std::lround(std::clamp(c, col_lo, col_hi)));
        double peak = env_trace[f];
        // Gaussian bump with its peak pixel exactly at the frame RMS;
        // overlapping blobs compose by max so each peak stays faithful.
        for (int dr = -3; dr <= 3; ++dr) {
          for (int dc = -3; dc <= 3; ++dc) {
            int rr = rows[f] + dr, cc = cols[f] + dc;
            if (rr < 0 || cc < 0 || rr >= int(cfg.px_side) ||
                cc >= int(cfg.px_side))
              continue;
            double fall = std::exp(-(dr * dr + dc * dc) / (2.0 * 1.2 * 1.2));
            double& px = scene.clip.frames[(f * cfg.px_side + rr) *
                                               cfg.px_side + cc];
            px = std::max(px, peak * fall);
          }
        }
        r += vr;
        c += vc;
        if (r < row_lo || r > row_hi) vr = -vr, r += 2 * vr;
        if (c < col_lo || c > col_hi) vc = -vc, c += 2 * vc;
      }
    }
    scene.blob_rows.push_back(std::move(rows));
    scene.blob_cols.push_back(std::move(cols));
  }

  if (cfg.noise_floor > 0.0) {
    for (std::size_t i = 0; i < n; ++i) {
      double v = detail::snap(cfg.noise_floor * (2.0 * u01(rng) - 1.0));
      scene.soundtrack.samples[i] += v;
      scene.on_audio.samples[i] += v;
    }
  }
  return scene;
}

// Position a sampled sinusoid actually occupies: frequencies fold at the
// Nyquist rate, so gap checks must compare folded values.
inline double aliased_hz(double f, double sample_rate) {
  double r = std::fmod(f, sample_rate);
  if (r < 0) r += sample_rate;
  return r <= sample_rate / 2.0 ? r : sample_rate - r;
}

// True when every tone carrier of one scene clears every tone carrier of the
// other by gap_hz after folding. Bursts and chirps are broadband enough to
// never block a pairing.
inline bool carriers_compatible(const Scene& a, const Scene& b,
                                double gap_hz) {
  double sr = double(a.soundtrack.sample_rate);
  for (std::size_t i = 0; i < a.families.size(); ++i) {
    if (a.families[i] != SourceFamily::kTone) continue;
    double fa = aliased_hz(a.carrier_hz[i], sr);
    for (std::size_t j = 0; j < b.families.size(); ++j) {
      if (b.families[j] != SourceFamily::kTone) continue;
      double fb = aliased_hz(b.carrier_hz[j], sr);
      if (std::abs(fa - fb) < gap_hz) return false;
    }
  }
  return true;
}

// Background draw for scene pairing. With min_cross_gap_hz set it redraws
// from seeds derived off the given one until the carriers clear the primary,
// so the result is still a pure function of (cfg, primary, seed). A capped
// attempt count keeps impossible configurations from looping forever.
inline Scene synth_background(const SceneConfig& cfg, const Scene& primary,
                              std::uint64_t seed) {
  Scene bg = synth_scene(cfg, seed);
  if (cfg.min_cross_gap_hz <= 0) return bg;
  for (int attempt = 1; attempt < 64; ++attempt) {
    if (carriers_compatible(primary, bg, cfg.min_cross_gap_hz)) break;
    bg = synth_scene(cfg,
                     detail::splitmix64(seed ^ (0x9D5CF0B6ULL + attempt)));
  }
  return bg;
}

// Noisy on-screen MoM: the primary clip keeps its frames and soundtrack,
// another scene's soundtrack plays the off-screen reference.
inline MoMExample make_non_mom(const Scene& primary, const Scene& background) {
  if (primary.soundtrack.samples.size() !=
      background.soundtrack.samples.size())
    throw DimensionError("scene lengths differ");
  MoMExample ex;
  ex.kind = ExampleKind::kNOn;
  ex.clip = primary.clip;
  ex.r1 = primary.soundtrack;
  ex.r2 = background.soundtrack;
  ex.mixture = ex.r1;
  for (std::size_t i = 0; i < ex.mixture.samples.size(); ++i)
    ex.mixture.samples[i] += ex.r2.samples[i];
  ex.on_truth = primary.on_audio;
  ex.truth_on_flags = primary.on_screen;
  return ex;
}

// Trusted-label examples. Single-mixture kinds play the scene alone; MoM
// kinds add a background soundtrack. LOn wants unanimously visible scenes,
// LOff unanimously invisible ones.
inline MoMExample make_labeled_example(const Scene& scene, ExampleKind kind,
                                       const Scene* background = nullptr) {
  bool want_on =
      kind == ExampleKind::kLOnSingle || kind == ExampleKind::kLOnMoM;
  bool want_mom =
      kind == ExampleKind::kLOnMoM || kind == ExampleKind::kLOffMoM;
  if (kind == ExampleKind::kNOn)
    throw ContractError("noisy examples come from make_non_mom");
  for (int flag : scene.on_screen)
    if (flag != (want_on ? 1 : 0))
      throw ContractError(want_on ? "labeled-on example needs an all-on scene"
                                  : "labeled-off example needs an all-off scene");
  if (want_mom && background == nullptr)
    throw ContractError("mixture-of-mixtures kinds need a background scene");

  MoMExample ex;
  ex.kind = kind;
  ex.clip = scene.clip;
  ex.r1 = scene.soundtrack;
  ex.r2 = scene.soundtrack;
  std::fill(ex.r2.samples.begin(), ex.r2.samples.end(), 0.0);
  if (want_mom) ex.r2 = background->soundtrack;
  ex.mixture = ex.r1;
  for (std::size_t i = 0; i < ex.mixture.samples.size(); ++i)
    ex.mixture.samples[i] += ex.r2.samples[i];
  ex.on_truth = scene.on_audio;
  ex.truth_on_flags = scene.on_screen;
  return ex;
}

enum class SampleMode { kUnsupervised, kSemiSupervised };

inline const char* mode_name(SampleMode m) {
  return m == SampleMode::kUnsupervised ? "unsupervised" : "semi_supervised";
}

inline SampleMode mode_from_name(const std::string& name) {
  if (name == "unsupervised") return SampleMode::kUnsupervised;
  if (name == "semi_supervised") return SampleMode::kSemiSupervised;
  throw ConfigError("unknown sampling mode '" + name + "'");
}

// Draws one example kind per slot: all noisy when unsupervised, otherwise
// half noisy and the rest split evenly across the four labeled kinds.
inline ExampleKind draw_kind(SampleMode mode, std::mt19937_64& rng) {
  if (mode == SampleMode::kUnsupervised) return ExampleKind::kNOn;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  double r = u01(rng);
  if (r < 0.5) return ExampleKind::kNOn;
  if (r < 0.625) return ExampleKind::kLOnSingle;
  if (r < 0.75) return ExampleKind::kLOnMoM;
  if (r < 0.875) return ExampleKind::kLOffSingle;
  return ExampleKind::kLOffMoM;
}

// Generates a batch. Every example owns an independent stream derived from
// (seed, index), so batches are reproducible and order-independent.
inline std::vector<MoMExample> sample_batch(const SceneConfig& cfg,
                                            SampleMode mode,
                                            std::size_t batch_size,
                                            std::uint64_t seed) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  cfg.validate();
  std::vector<MoMExample> batch;
  for (std::size_t i = 0; i < batch_size; ++i) {
    std::uint64_t base = detail::splitmix64(seed ^ (0xA24BAED4963EE407ULL +
                                                    0x9E3779B97F4A7C15ULL * i));
    std::mt19937_64 rng(base);
    ExampleKind kind = draw_kind(mode, rng);
    SceneConfig scene_cfg = cfg;
    std::uint64_t s1 = rng(), s2 = rng();
    MoMExample ex;
    switch (kind) {
      case ExampleKind::kNOn: {
        Scene primary = synth_scene(scene_cfg, s1);
        Scene background = synth_background(scene_cfg, primary, s2);
        ex = make_non_mom(primary, background);
        break;
      }
      case ExampleKind::kLOnSingle:
      case ExampleKind::kLOnMoM: {
        scene_cfg.on_screen_fraction = 1.0;
        Scene scene = synth_scene(scene_cfg, s1);
        SceneConfig bg_cfg = cfg;
        Scene background = synth_background(bg_cfg, scene, s2);
        ex = make_labeled_example(scene, kind,
                                  kind == ExampleKind::kLOnMoM ? &background
                                                               : nullptr);
        break;
      }
      case ExampleKind::kLOffSingle:
      case ExampleKind::kLOffMoM: {
        scene_cfg.on_screen_fraction = 0.0;
        Scene scene = synth_scene(scene_cfg, s1);
        SceneConfig bg_cfg = cfg;
        Scene background = synth_background(bg_cfg, scene, s2);
        ex = make_labeled_example(scene, kind,
                                  kind == ExampleKind::kLOffMoM ? &background
                                                                : nullptr);
        break;
      }
    }
    ex.id = base;
    batch.push_back(std::move(ex));
  }
  return batch;
}

// On-disk layout: one directory per example holding numbered frame images,
// the two reference tracks, their mixture, and a ground-truth sidecar.
inline void write_example_dir(const std::string& dir, const MoMExample& ex) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::size_t frames = ex.clip.frames.dim(Axis::Time);
  std::size_t side = ex.clip.frames.dim(Axis::Row);
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<double> px(side * side);
    for (std::size_t i = 0; i < px.size(); ++i)
      px[i] = ex.clip.frames[f * px.size() + i];
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", f);
    write_pgm(dir + "/" + name, px, side, side);
  }
  write_wav(dir + "/primary.wav", ex.r1.samples, ex.r1.sample_rate);
  write_wav(dir + "/background.wav", ex.r2.samples, ex.r2.sample_rate);
  write_wav(dir + "/mixture.wav", ex.mixture.samples, ex.mixture.sample_rate);
  write_wav(dir + "/onscreen.wav", ex.on_truth.samples,
            ex.on_truth.sample_rate);

  nlohmann::json truth;
  truth["kind"] = kind_name(ex.kind);
  truth["id"] = ex.id;
  truth["num_frames"] = frames;
  truth["px_side"] = side;
  truth["sample_rate"] = ex.r1.sample_rate;
  truth["fps"] = ex.clip.fps;
  truth["on_screen_flags"] = ex.truth_on_flags;
  std::ofstream out(dir + "/truth.json");
  out << truth.dump(2) << "\n";
}

inline void write_dataset(const std::string& out_dir,
                          const std::vector<MoMExample>& examples) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ex_%05zu", i);
    write_example_dir(out_dir + "/" + name, examples[i]);
  }
}

// Rebuilds an example from its directory. Audio passed through the 16-bit
// files, so waveforms agree with the generated ones to one quantization
// step rather than bitwise.
inline MoMExample read_example_dir(const std::string& dir) {
  std::ifstream in(dir + "/truth.json");
  if (!in) throw Error("cannot read " + dir + "/truth.json");
  nlohmann::json truth;
  in >> truth;

  MoMExample ex;
  ex.kind = kind_from_name(truth.at("kind").get<std::string>());
  ex.id = truth.at("id").get<std::uint64_t>();
  ex.truth_on_flags = truth.at("on_screen_flags").get<std::vector<int>>();
  std::size_t frames = truth.at("num_frames").get<std::size_t>();
  std::size_t side = truth.at("px_side").get<std::size_t>();

  ex.clip.fps = truth.at("fps").get<double>();
  ex.clip.frames = Tensor({Axis::Time, Axis::Row, Axis::Col},
                          {frames, side, side});
  for (std::size_t f = 0; f < frames; ++f) {
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%03zu.pgm", f);
    std::size_t h = 0, w = 0;
    auto px = read_pgm(dir + "/" + name, &h, &w);
    if (w != side || h != side)
      throw Error(dir + ": frame size disagrees with the sidecar");
    for (std::size_t i = 0; i < px.size(); ++i)
      ex.clip.frames[f * side * side + i] = px[i];
  }

  auto load = [&](const char* name, WaveBuffer& dst) {
    std::uint32_t rate = 0;
    dst.samples = read_wav(dir + "/" + name, &rate);
    dst.sample_rate = rate;
  };
  load("primary.wav", ex.r1);
  load("background.wav", ex.r2);
  load("mixture.wav", ex.mixture);
  load("onscreen.wav", ex.on_truth);
  return ex;
}

inline std::vector<MoMExample> read_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::vector<MoMExample> examples;
  for (std::size_t i = 0;; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "ex_%05zu", i);
    std::string sub = dir + "/" + name;
    if (!fs::exists(sub + "/truth.json")) break;
    examples.push_back(read_example_dir(sub));
  }
  if (examples.empty())
    throw Error(dir + ": no example directories found");
  return examples;
}

}  // namespace avsep
