#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "avsep/io.hpp"
#include "avsep/nn.hpp"
#include "avsep/ops.hpp"

namespace avsep {

enum class AttentionVariant { kJointSa, kSepSa, kJointCma, kSepCma };

inline const char* variant_name(AttentionVariant v) {
  switch (v) {
    case AttentionVariant::kJointSa: return "joint_sa";
    case AttentionVariant::kSepSa: return "sep_sa";
    case AttentionVariant::kJointCma: return "joint_cma";
    case AttentionVariant::kSepCma: return "sep_cma";
  }
  return "?";
}

inline AttentionVariant variant_from_name(const std::string& s) {
  if (s == "joint_sa") return AttentionVariant::kJointSa;
  if (s == "sep_sa") return AttentionVariant::kSepSa;
  if (s == "joint_cma") return AttentionVariant::kJointCma;
  if (s == "sep_cma") return AttentionVariant::kSepCma;
  throw ConfigError("unknown attention variant: " + s);
}

struct AttentionConfig {
  std::size_t num_heads = 2;
  std::size_t depth = 32;
  std::size_t num_blocks = 2;
  double dropout_rate = 0.0;
  AttentionVariant variant = AttentionVariant::kSepCma;

  void validate() const {
    if (num_heads == 0 || depth == 0 || num_blocks == 0)
      throw ConfigError("attention dims must be positive");
    if (depth % num_heads != 0)
      throw ConfigError("depth " + std::to_string(depth) +
                        " not divisible by heads " + std::to_string(num_heads));
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
      throw ConfigError("dropout rate must lie in [0, 1)");
  }
};

// Normalized attention weights. Axes carry the full story: Head, the query
// axes of the request, and key-side (suffix K) attended axes summing to one
// per query position and head.
struct AttentionMap {
  Tensor weights;
};

// Scaled dot-product attention with its own query/key/value projections.
// Attended axes of K and V are moved to key-side labels so the scores hold
// query and key coordinates at once; axes shared with Q but not attended
// stay aligned elementwise.
class Attend {
 public:
  Attend() = default;

  Attend(ParamStore& ps, const std::string& name, std::size_t depth,
         std::mt19937_64& rng) {
    double sigma = 1.0 / std::sqrt(double(depth));
    fq_ = DenseLayer(ps, name + ".fq", depth, depth, rng, sigma);
    // A key bias shifts every score of a query by the same amount and the
    // softmax cancels it, so the parameter would be inert; omit it.
    fk_ = DenseLayer(ps, name + ".fk", depth, depth, rng, sigma, false);
    fv_ = DenseLayer(ps, name + ".fv", depth, depth, rng, sigma);
  }

  std::pair<Var, Var> operator()(const Var& q, const Var& k, const Var& v,
                                 const AxisSet& attend_axes) const {
    if (!k.value().same_shape(v.value()))
      throw DimensionError("keys and values must share axes and shape");
    for (Axis a : attend_axes)
      if (!k.value().has_axis(a))
        throw ContractError(std::string("attended axis absent from keys: ") +
                            axis_name(a));

    Var qp = fq_(q);
    Var kp = fk_(k);
    Var vp = fv_(v);

    std::vector<std::pair<Axis, Axis>> to_key;
    AxisList keyed_axes;
    for (Axis a : attend_axes) {
      to_key.emplace_back(a, keyed(a));
      keyed_axes.push_back(keyed(a));
    }
    Var kk = relabel(kp, to_key);
    Var vk = relabel(vp, to_key);

    double scale_factor =
        1.0 / std::sqrt(double(qp.value().dim(Axis::Depth)));
    Var scores =
        scale(tensor_inner_product(kk, qp, {Axis::Depth}), scale_factor);
    Var alpha = softmax_over_axes(scores, AxisSet(keyed_axes));
    Var context = tensor_inner_product(alpha, vk, AxisSet(keyed_axes));
    Var out = transpose(context, q.value().axes());
    return {out, alpha};
  }

 private:
  DenseLayer fq_, fk_, fv_;
};

// Multi-head wrapper: one depth-to-depth projection per side whose output is
// read as H contiguous blocks of D/H, a shared inner attention at head depth,
// head concatenation, and an output dense.
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;

  MultiHeadAttention(ParamStore& ps, const std::string& name, std::size_t depth,
                     std::size_t heads, std::mt19937_64& rng) {
    if (heads == 0 || depth % heads != 0)
      throw ConfigError("depth " + std::to_string(depth) +
                        " not divisible by heads " + std::to_string(heads));
    depth_ = depth;
    heads_ = heads;
    double sigma = 1.0 / std::sqrt(double(depth));
    proj_q_ = DenseLayer(ps, name + ".q", depth, depth, rng, sigma);
    proj_kv_ = DenseLayer(ps, name + ".kv", depth, depth, rng, sigma);
    attend_ = Attend(ps, name + ".att", depth / heads, rng);
    out_ = DenseLayer(ps, name + ".o", depth, depth, rng, sigma);
  }

  // Keys and values are the same tensor.
  std::pair<Var, Var> operator()(const Var& q, const Var& kv,
                                 const AxisSet& attend_axes) const {
    std::size_t dh = depth_ / heads_;
    Var qh = split_axis(proj_q_(q), Axis::Depth, Axis::Head, Axis::Depth,
                        heads_, dh);
    Var kh = split_axis(proj_kv_(kv), Axis::Depth, Axis::Head, Axis::Depth,
                        heads_, dh);
    auto [ctx, alpha] = attend_(qh, kh, kh, attend_axes);
    Var merged = merge_axes(ctx, Axis::Head, Axis::Depth, Axis::Depth);
    return {out_(merged), alpha};
  }

  std::size_t depth() const { return depth_; }
  std::size_t heads() const { return heads_; }

 private:
  std::size_t depth_ = 0, heads_ = 0;
  DenseLayer proj_q_, proj_kv_, out_;
  Attend attend_;
};

// Residual attention block: b = MHA(Z, Z) + Z, out = LN(dense(dropout(b)) + b).
class SaBlock {
 public:
  SaBlock() = default;

  SaBlock(ParamStore& ps, const std::string& name, const AttentionConfig& cfg,
          std::mt19937_64& rng) {
    mha_ = MultiHeadAttention(ps, name + ".mha", cfg.depth, cfg.num_heads, rng);
    dense_ = DenseLayer(ps, name + ".d", cfg.depth, cfg.depth, rng,
                        1.0 / std::sqrt(double(cfg.depth)));
    ln_ = LayerNorm(ps, name + ".ln", cfg.depth);
    rate_ = cfg.dropout_rate;
  }

  Var operator()(const Var& z, const AxisSet& attend_axes, bool training,
                 std::mt19937_64& rng, Var* alpha_out = nullptr) const {
    auto [m, alpha] = mha_(z, z, attend_axes);
    if (alpha_out) *alpha_out = alpha;
    Var b = add(m, z);
    Var h = dense_(dropout(b, rate_, training, rng));
    return ln_(add(h, b));
  }

 private:
  MultiHeadAttention mha_;
  DenseLayer dense_;
  LayerNorm ln_;
  double rate_ = 0.0;
};

// One direction of cross-modal attention: the query stream attends into the
// other modality, with both residuals anchored on the query-side input.
class CmaDirection {
 public:
  CmaDirection() = default;

  CmaDirection(ParamStore& ps, const std::string& name,
               const AttentionConfig& cfg, std::mt19937_64& rng) {
    mha_ = MultiHeadAttention(ps, name + ".mha", cfg.depth, cfg.num_heads, rng);
    ln_mid_ = LayerNorm(ps, name + ".ln1", cfg.depth);
    ln_out_ = LayerNorm(ps, name + ".ln2", cfg.depth);
    dense_ = DenseLayer(ps, name + ".d", cfg.depth, cfg.depth, rng,
                        1.0 / std::sqrt(double(cfg.depth)));
    rate_ = cfg.dropout_rate;
  }

  Var operator()(const Var& q_in, const Var& kv_in, const AxisSet& attend_axes,
                 bool training, std::mt19937_64& rng,
                 Var* alpha_out = nullptr) const {
    auto [a1, alpha] = mha_(q_in, kv_in, attend_axes);
    if (alpha_out) *alpha_out = alpha;
    Var a2 = ln_mid_(add(a1, q_in));
    Var h = dense_(dropout(a2, rate_, training, rng));
    return ln_out_(add(h, q_in));
  }

 private:
  MultiHeadAttention mha_;
  LayerNorm ln_mid_, ln_out_;
  DenseLayer dense_;
  double rate_ = 0.0;
};

// Summarizes a per-source sequence into one vector per source: the query is
// the time-sum of the sequence, attended over time, with no residual.
class AttentionalPool {
 public:
  AttentionalPool() = default;

  AttentionalPool(ParamStore& ps, const std::string& name,
                  const AttentionConfig& cfg, std::mt19937_64& rng) {
    mha_ = MultiHeadAttention(ps, name + ".mha", cfg.depth, cfg.num_heads, rng);
  }

  Var operator()(const Var& z_seq) const {
    Var query = sum_over(z_seq, {Axis::Time});
    auto [out, alpha] = mha_(query, z_seq, {Axis::Time});
    (void)alpha;
    return out;
  }

 private:
  MultiHeadAttention mha_;
};

struct EncodeResult {
  Var z;                             // (Src, Depth)
  std::vector<AttentionMap> maps;    // one per block, spatially informative stage
};

// Stacked audio-visual encoder covering all four attention layouts. Audio
// enters as (Src, Time, Depth), video as (Space, Time, Depth); the result is
// one embedding per estimated source.
class AvEncoder {
 public:
  AvEncoder() = default;

  AvEncoder(ParamStore& ps, const std::string& name, const AttentionConfig& cfg,
            std::mt19937_64& rng)
      : cfg_(cfg) {
    cfg_.validate();
    for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
      std::string base = name + ".l" + std::to_string(l);
      switch (cfg_.variant) {
        case AttentionVariant::kJointSa:
          joint_sa_.emplace_back(ps, base + ".sa", cfg_, rng);
          break;
        case AttentionVariant::kSepSa:
          audio_time_.emplace_back(ps, base + ".at", cfg_, rng);
          video_time_.emplace_back(ps, base + ".vt", cfg_, rng);
          joint_sa_.emplace_back(ps, base + ".sa", cfg_, rng);
          break;
        case AttentionVariant::kJointCma:
          audio_cma_.emplace_back(ps, base + ".ac", cfg_, rng);
          video_cma_.emplace_back(ps, base + ".vc", cfg_, rng);
          break;
        case AttentionVariant::kSepCma:
          audio_time_.emplace_back(ps, base + ".at", cfg_, rng);
          video_time_.emplace_back(ps, base + ".vt", cfg_, rng);
          audio_cma_.emplace_back(ps, base + ".ac", cfg_, rng);
          video_cma_.emplace_back(ps, base + ".vc", cfg_, rng);
          break;
      }
    }
    pool_ = AttentionalPool(ps, name + ".pool", cfg_, rng);
  }

  const AttentionConfig& config() const { return cfg_; }

  EncodeResult operator()(const Var& z_audio, const Var& z_video, bool training,
                          std::mt19937_64& rng) const {
    if (z_audio.value().dim(Axis::Time) != z_video.value().dim(Axis::Time))
      throw DimensionError("audio/video frame counts differ");
    if (z_audio.value().dim(Axis::Depth) != cfg_.depth ||
        z_video.value().dim(Axis::Depth) != cfg_.depth)
      throw DimensionError("embedding depth does not match configuration");

    std::size_t m = z_audio.value().dim(Axis::Src);
    EncodeResult res;

    switch (cfg_.variant) {
      case AttentionVariant::kJointSa:
      case AttentionVariant::kSepSa: {
        Var za = relabel(z_audio, Axis::Src, Axis::Joint);
        Var zv = relabel(z_video, Axis::Space, Axis::Joint);
        Var z = concat({za, zv}, Axis::Joint);
        for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
          Var alpha;
          if (cfg_.variant == AttentionVariant::kSepSa) {
            Var a = slice(z, Axis::Joint, 0, m);
            Var v = slice(z, Axis::Joint, m, z.value().dim(Axis::Joint) - m);
            a = audio_time_[l](a, {Axis::Time}, training, rng);
            v = video_time_[l](v, {Axis::Time}, training, rng);
            z = concat({a, v}, Axis::Joint);
            z = joint_sa_[l](z, {Axis::Joint}, training, rng, &alpha);
          } else {
            z = joint_sa_[l](z, {Axis::Joint, Axis::Time}, training, rng,
                             &alpha);
          }
          res.maps.push_back({alpha.value().clone()});
        }
        Var za_out = relabel(slice(z, Axis::Joint, 0, m), Axis::Joint,
                             Axis::Src);
        res.z = pool_(za_out);
        break;
      }
      case AttentionVariant::kJointCma:
      case AttentionVariant::kSepCma: {
        Var a = z_audio;
        Var v = z_video;
        bool sep = cfg_.variant == AttentionVariant::kSepCma;
        AxisSet audio_axes = sep ? AxisSet{Axis::Space}
                                 : AxisSet{Axis::Space, Axis::Time};
        AxisSet video_axes = sep ? AxisSet{Axis::Src}
                                 : AxisSet{Axis::Src, Axis::Time};
        for (std::size_t l = 0; l < cfg_.num_blocks; ++l) {
          if (sep) {
            a = audio_time_[l](a, {Axis::Time}, training, rng);
            v = video_time_[l](v, {Axis::Time}, training, rng);
          }
          Var alpha;
          Var a_next = audio_cma_[l](a, v, audio_axes, training, rng, &alpha);
          Var v_next = video_cma_[l](v, a, video_axes, training, rng);
          a = a_next;
          v = v_next;
          res.maps.push_back({alpha.value().clone()});
        }
        res.z = pool_(a);
        break;
      }
    }
    return res;
  }

 private:
  AttentionConfig cfg_;
  std::vector<SaBlock> joint_sa_, audio_time_, video_time_;
  std::vector<CmaDirection> audio_cma_, video_cma_;
  AttentionalPool pool_;
};

// Collapses raw attention weights to a per-source, per-frame map over the
// visual grid. Head contributions are summed. Key-side time (joint variants)
// indexes the frame and query time is summed out; aligned time indexes the
// frame directly. For self-attention weights the key-side joint axis is
// sliced to its video rows and queries to their source rows.
inline Tensor spatial_attention(const Tensor& alpha, std::size_t num_sources) {
  NoGradGuard ng;
  Var w{alpha.clone(), false};
  AxisList sum;
  if (w.value().has_axis(Axis::Head)) sum.push_back(Axis::Head);
  bool keyed_time = w.value().has_axis(Axis::TimeK);
  if (keyed_time && w.value().has_axis(Axis::Time)) sum.push_back(Axis::Time);
  if (!sum.empty()) w = sum_over(w, AxisSet(sum));

  if (w.value().has_axis(Axis::JointK)) {
    std::size_t joint = w.value().dim(Axis::JointK);
    if (joint <= num_sources)
      throw ContractError("attention weights hold no video rows");
    w = slice(w, Axis::JointK, num_sources, joint - num_sources);
    w = relabel(w, Axis::JointK, Axis::Space);
    w = relabel(slice(w, Axis::Joint, 0, num_sources), Axis::Joint, Axis::Src);
  } else if (w.value().has_axis(Axis::SpaceK)) {
    w = relabel(w, Axis::SpaceK, Axis::Space);
  } else {
    throw ContractError("attention weights hold no spatial axis");
  }
  if (keyed_time) w = relabel(w, Axis::TimeK, Axis::Time);
  return transpose(w, {Axis::Src, Axis::Time, Axis::Space}).value();
}

// Writes one grid file per (frame, source): head-summed spatial attention
// scaled by that source's on-screen probability. The spatial axis unfolds
// row-major onto a square grid.
inline std::vector<std::string> export_attention_maps(
    const AttentionMap& map, const Tensor& probs, const std::string& out_dir) {
  if (!probs.defined() || !probs.has_axis(Axis::Src))
    throw ContractError("per-source probabilities missing");
  std::size_t m = probs.dim(Axis::Src);
  Tensor spatial = spatial_attention(map.weights, m);
  if (spatial.dim(Axis::Src) != m)
    throw ContractError("probability count does not match sources");
  std::size_t t = spatial.dim(Axis::Time);
  std::size_t g = spatial.dim(Axis::Space);
  std::size_t side = std::size_t(std::lround(std::sqrt(double(g))));
  if (side * side != g)
    throw DimensionError("spatial grid is not square");

  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  for (std::size_t f = 0; f < t; ++f) {
    for (std::size_t s = 0; s < m; ++s) {
      std::vector<std::vector<double>> grid(side,
                                            std::vector<double>(side, 0.0));
      for (std::size_t c = 0; c < g; ++c)
        grid[c / side][c % side] =
            probs[s] * spatial[(s * t + f) * g + c];
      std::string path = out_dir + "/attn_f" + std::to_string(f) + "_s" +
                         std::to_string(s) + ".csv";
      write_csv_matrix(path, grid);
      written.push_back(path);
    }
  }
  return written;
}

}  // namespace avsep
