#pragma once

#include <random>
#include <string>
#include <vector>

#include "avsep/attention.hpp"
#include "avsep/classifier.hpp"
#include "avsep/embedders.hpp"
#include "avsep/separator.hpp"

namespace avsep {

// Dimensions of the assembled audio-visual model. The attention depth is the
// shared embedding width, so the two must agree.
struct ModelConfig {
  SeparatorConfig separator;
  EmbeddingConfig embedding;
  AttentionConfig attention;
  std::size_t px_side = 32;

  void validate() const {
    separator.validate();
    embedding.validate();
    attention.validate();
    if (attention.depth != embedding.depth)
      throw ConfigError("attention depth must equal the embedding depth");
  }
};

// Full pipeline: separate the mixture, embed each estimated source and the
// video grid, align them with attention, and score each source for
// on-screen-ness.
class AvModel {
 public:
  AvModel() = default;

  AvModel(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng)
      : cfg_(cfg) {
    cfg_.validate();
    separator = Separator(ps, "sep", cfg.separator, rng);
    audio_embedder = AudioEmbedder(ps, "aemb", cfg.embedding, rng);
    video_embedder = VideoEmbedder(ps, "vemb", cfg.embedding, cfg.px_side, rng);
    encoder = AvEncoder(ps, "enc", cfg.attention, rng);
    head = OnScreenHead(ps, "head", cfg.attention.depth, rng);
  }

  struct Forward {
    Var sources;  // (Src, Sample), mixture-consistent
    Var pooled;   // (Src, Depth)
    Var logits;   // (Src)
    Var probs;    // (Src)
    std::vector<AttentionMap> maps;
  };

  // separate_grad=false runs the separator outside the tape, for training
  // phases that keep it frozen.
  Forward operator()(const Var& mixture, const VideoClip& clip, bool training,
                     std::mt19937_64& rng, bool separate_grad = true) const {
    Forward f;
    if (separate_grad) {
      f.sources = separator(mixture);
    } else {
      NoGradGuard guard;
      f.sources = separator(mixture);
    }
    std::size_t t = clip.frames.dim(Axis::Time);
    Var za = audio_embedder(f.sources, t);
    Var zv = video_embedder(Var(clip.frames));
    EncodeResult enc = encoder(za, zv, training, rng);
    f.pooled = enc.z;
    f.maps = std::move(enc.maps);
    auto out = head(f.pooled);
    f.logits = out.first;
    f.probs = out.second;
    return f;
  }

  const ModelConfig& config() const { return cfg_; }

  Separator separator;
  AudioEmbedder audio_embedder;
  VideoEmbedder video_embedder;
  AvEncoder encoder;
  OnScreenHead head;

 private:
  ModelConfig cfg_;
};

// Parameter names belonging to one component of the assembled model.
inline std::vector<std::string> params_with_prefix(const ParamStore& ps,
                                                   const std::string& prefix) {
  std::vector<std::string> out;
  for (const auto& name : ps.names())
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  return out;
}

}  // namespace avsep
