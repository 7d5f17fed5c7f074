#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsep/data.hpp"
#include "avsep/losses.hpp"
#include "avsep/metrics.hpp"
#include "avsep/model.hpp"

namespace avsep {

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 8;
  std::size_t steps = 1000;
  std::size_t eval_every = 100;
  std::size_t eval_count = 16;  // held-out examples per evaluation
  std::uint64_t seed = 1;
  SampleMode mode = SampleMode::kUnsupervised;
  bool finetune_separator = false;
  bool freeze_embedders = false;
  double lambda = 1.0;  // classification weight
  double tau = 1e-3;    // signal-loss threshold

  void validate() const {
    if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 1) throw ConfigError("steps must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
    if (eval_count < 2) throw ConfigError("eval_count must be >= 2");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (tau <= 0) throw ConfigError("tau must be > 0");
  }
};

// First-order adaptive-moment optimizer with bias correction. Parameters
// without a gradient this step are left untouched.
class Adam {
 public:
  explicit Adam(double lr = 1e-4, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(ParamStore& ps, const std::vector<std::string>& names) {
    ++t_;
    double c1 = 1.0 - std::pow(b1_, double(t_));
    double c2 = 1.0 - std::pow(b2_, double(t_));
    for (const auto& name : names) {
      Var p = ps.get(name);
      if (!p.has_grad()) continue;
      const Tensor& g = p.grad();
      Slot& slot = slots_[name];
      if (!slot.init) {
        slot.m = Tensor(g.axes(), g.dims());
        slot.v = Tensor(g.axes(), g.dims());
        slot.init = true;
      }
      Tensor& value = p.mutable_value();
      for (std::size_t i = 0; i < g.size(); ++i) {
        slot.m[i] = b1_ * slot.m[i] + (1.0 - b1_) * g[i];
        slot.v[i] = b2_ * slot.v[i] + (1.0 - b2_) * g[i] * g[i];
        double mhat = slot.m[i] / c1;
        double vhat = slot.v[i] / c2;
        value[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

  // Schedules adjust the rate between steps; moments are kept.
  void set_learning_rate(double lr) {
    if (lr <= 0) throw ConfigError("learning_rate must be > 0");
    lr_ = lr;
  }
  double learning_rate() const { return lr_; }

 private:
  struct Slot {
    Tensor m, v;
    bool init = false;
  };
  std::map<std::string, Slot> slots_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct TrainLogEntry {
  std::size_t step = 0;
  double total = 0.0;
  double mixit = 0.0;
  double cls = 0.0;
};

namespace detail {

inline void emit_log_line(std::ostream* log, const TrainLogEntry& e) {
  if (!log) return;
  nlohmann::json j;
  j["step"] = e.step;
  j["total"] = e.total;
  j["mixit"] = e.mixit;
  j["cls"] = e.cls;
  *log << j.dump() << "\n";
}

inline std::uint64_t step_seed(std::uint64_t seed, std::size_t step,
                               std::uint64_t salt) {
  return avsep::detail::splitmix64(seed ^ (salt + 0x9E3779B97F4A7C15ULL *
                                                      (step + 1)));
}

inline Tensor wave_tensor(const WaveBuffer& w) {
  Tensor t({Axis::Sample}, {w.samples.size()});
  for (std::size_t i = 0; i < w.samples.size(); ++i) t[i] = w.samples[i];
  return t;
}

}  // namespace detail

// Audio-only MixIT pretraining of the separator. Returns the per-step loss
// curve; the caller owns checkpointing of the parameter store.
inline std::vector<TrainLogEntry> pretrain_separator(
    ParamStore& ps, Separator& sep, const SceneConfig& scene_cfg,
    const TrainConfig& tcfg, std::ostream* log = nullptr) {
  tcfg.validate();
  scene_cfg.validate();
  Adam opt(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon);
  std::vector<std::string> names = ps.names();
  std::vector<TrainLogEntry> curve;

  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    auto batch =
        sample_batch(scene_cfg, SampleMode::kUnsupervised, tcfg.batch_size,
                     detail::step_seed(tcfg.seed, step, 0xB5EA7ULL));
    try {
      ps.clear_grads();
      Var total;
      for (const auto& ex : batch) {
        Tensor r1 = detail::wave_tensor(ex.r1);
        Tensor r2 = detail::wave_tensor(ex.r2);
        Var s = sep(wave_to_var(ex.mixture));
        MixAssignment a = mixit_loss(r1, r2, s.value(), tcfg.tau);
        Var term = mixit_training_loss(r1, r2, s, a, tcfg.tau);
        total = total.defined() ? add(total, term) : term;
      }
      Var loss = scale(total, 1.0 / double(batch.size()));
      if (!std::isfinite(loss.scalar()))
        throw NumericError("non-finite loss");
      backward(loss);
      opt.step(ps, names);
      TrainLogEntry e{step, loss.scalar(), loss.scalar(), 0.0};
      curve.push_back(e);
      detail::emit_log_line(log, e);
    } catch (const NumericError& err) {
      throw NumericError("pretraining aborted at step " +
                         std::to_string(step) + ": " + err.what());
    }
  }
  return curve;
}

// Deterministic held-out set: even ids are noisy on-screen MoMs, odd ids
// alternate between the two off-screen kinds so suppression is measurable.
inline std::vector<MoMExample> make_eval_set(const SceneConfig& cfg,
                                             std::size_t count,
                                             std::uint64_t seed) {
  std::vector<MoMExample> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::uint64_t s1 = detail::step_seed(seed, i, 0xE7A1ULL);
    std::uint64_t s2 = detail::step_seed(seed, i, 0xE7A2ULL);
    if (i % 2 == 0) {
      Scene primary = synth_scene(cfg, s1);
      Scene background = synth_background(cfg, primary, s2);
      out.push_back(make_non_mom(primary, background));
    } else {
      SceneConfig off_cfg = cfg;
      off_cfg.on_screen_fraction = 0.0;
      Scene scene = synth_scene(off_cfg, s1);
      if (i % 4 == 1) {
        out.push_back(
            make_labeled_example(scene, ExampleKind::kLOffSingle));
      } else {
        Scene background = synth_background(cfg, scene, s2);
        out.push_back(make_labeled_example(scene, ExampleKind::kLOffMoM,
                                           &background));
      }
    }
    out.back().id = i;
  }
  return out;
}

// Runs the model over examples and fills one record per example with the
// metrics valid for its kind, per-source scores, and the Gram matrix that
// later re-weights the mixdown during calibration. theta shifts the logits
// before the mixdown, matching the calibrated inference path.
inline std::vector<EvalRecord> evaluate_model(
    const AvModel& model, const std::vector<MoMExample>& examples,
    double theta = 0.0, double tau = 1e-3) {
  NoGradGuard guard;
  std::mt19937_64 rng(0);
  std::vector<EvalRecord> records;
  for (const auto& ex : examples) {
    auto fwd = model(wave_to_var(ex.mixture), ex.clip, false, rng);
    const Tensor& s = fwd.sources.value();
    std::size_t m_count = s.dim(Axis::Src);
    std::size_t n = s.dim(Axis::Sample);

    EvalRecord r;
    r.id = double(ex.id);
    r.on_screen = !is_off_screen_kind(ex.kind);
    r.mix_power = 0.0;
    for (double v : ex.mixture.samples) r.mix_power += v * v;
    r.gram.assign(m_count * m_count, 0.0);
    for (std::size_t a = 0; a < m_count; ++a)
      for (std::size_t b = a; b < m_count; ++b) {
        double dot = 0.0;
        for (std::size_t i = 0; i < n; ++i)
          dot += s[a * n + i] * s[b * n + i];
        r.gram[a * m_count + b] = dot;
        r.gram[b * m_count + a] = dot;
      }
    for (std::size_t m = 0; m < m_count; ++m) {
      r.logits.push_back(fwd.logits.value()[m]);
      r.probs.push_back(fwd.probs.value()[m]);
      r.powers.push_back(r.gram[m * m_count + m]);
    }

    // Reference labels: off-screen examples have none on screen by
    // definition; otherwise the oracle assignment against the true
    // on-screen audio and its complement in the mixture decides.
    if (!r.on_screen) {
      r.labels.assign(m_count, 0);
    } else {
      Tensor on_ref = detail::wave_tensor(ex.on_truth);
      Tensor off_ref({Axis::Sample}, {n});
      for (std::size_t i = 0; i < n; ++i)
        off_ref[i] = ex.mixture.samples[i] - ex.on_truth.samples[i];
      MixAssignment truth = mixit_loss(on_ref, off_ref, s, tau);
      r.labels = truth.pseudo_labels;
    }

    std::vector<double> xon(n, 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
      double w = 1.0 / (1.0 + std::exp(-(r.logits[m] + theta)));
      for (std::size_t i = 0; i < n; ++i) xon[i] += w * s[m * n + i];
    }
    double nan = std::numeric_limits<double>::quiet_NaN();
    r.snr_db = r.on_screen ? snr(ex.on_truth.samples, xon) : nan;
    r.si_snr_db = r.on_screen ? si_snr(ex.on_truth.samples, xon) : nan;
    r.osr_db = r.on_screen ? nan : osr(ex.mixture.samples, xon);
    records.push_back(std::move(r));
  }
  return records;
}

// One saved evaluation point during joint training.
struct EvalPoint {
  std::size_t step = 0;
  double score = 0.0;
  std::vector<EvalRecord> records;
  std::map<std::string, Tensor> snapshot;
};

struct TrainRun {
  std::vector<TrainLogEntry> log;
  std::vector<EvalPoint> evals;
};

inline std::map<std::string, Tensor> snapshot_params(const ParamStore& ps) {
  std::map<std::string, Tensor> out;
  for (const auto& name : ps.names()) out[name] = ps.get(name).value().clone();
  return out;
}

inline void restore_params(ParamStore& ps,
                           const std::map<std::string, Tensor>& snapshot) {
  for (const auto& [name, tensor] : snapshot) {
    Tensor& dst = ps.get(name).mutable_value();
    if (!dst.same_shape(tensor))
      throw DimensionError("snapshot shape mismatch for " + name);
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = tensor[i];
  }
}

// Joint audio-visual training: separate, embed, align, classify, and follow
// the summed selection and classification losses. The separator only joins
// the tape when fine-tuning is on; embedders can be frozen likewise.
inline TrainRun train_audio_visual(ParamStore& ps, AvModel& model,
                                   const SceneConfig& scene_cfg,
                                   const TrainConfig& tcfg,
                                   std::ostream* log = nullptr) {
  tcfg.validate();
  scene_cfg.validate();
  Adam opt(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.epsilon);

  std::vector<std::string> trainable;
  for (const auto& name : ps.names()) {
    bool is_sep = name.rfind("sep.", 0) == 0;
    bool is_emb =
        name.rfind("aemb.", 0) == 0 || name.rfind("vemb.", 0) == 0;
    if (is_sep && !tcfg.finetune_separator) continue;
    if (is_emb && tcfg.freeze_embedders) continue;
    trainable.push_back(name);
  }

  auto eval_examples =
      make_eval_set(scene_cfg, tcfg.eval_count,
                    avsep::detail::splitmix64(tcfg.seed ^ 0x5EED0E7AULL));

  TrainRun run;
  std::mt19937_64 dropout_rng(avsep::detail::splitmix64(tcfg.seed ^ 0xD0ULL));
  for (std::size_t step = 0; step < tcfg.steps; ++step) {
    auto batch = sample_batch(scene_cfg, tcfg.mode, tcfg.batch_size,
                              detail::step_seed(tcfg.seed, step, 0x7A11ULL));
    try {
      ps.clear_grads();
      Var total_mixit, total_cls;
      std::size_t cls_terms = 0;
      for (const auto& ex : batch) {
        auto fwd = model(wave_to_var(ex.mixture), ex.clip, true, dropout_rng,
                         tcfg.finetune_separator);
        Tensor r1 = detail::wave_tensor(ex.r1);
        Tensor r2 = detail::wave_tensor(ex.r2);
        MixAssignment a =
            mixit_loss(r1, r2, fwd.sources.value(), tcfg.tau);
        Var mix_term = mixit_training_loss(r1, r2, fwd.sources, a, tcfg.tau);
        total_mixit =
            total_mixit.defined() ? add(total_mixit, mix_term) : mix_term;

        if (tcfg.lambda > 0.0) {
          std::vector<int> labels =
              is_off_screen_kind(ex.kind)
                  ? std::vector<int>(a.pseudo_labels.size(), 0)
                  : a.pseudo_labels;
          try {
            Var cls = classification_loss(ex.kind, labels, fwd.probs);
            total_cls = total_cls.defined() ? add(total_cls, cls) : cls;
            ++cls_terms;
          } catch (const NoActiveSourceError&) {
            // No on-screen assignment; this example trains signal only.
          }
        }
      }
      double inv = 1.0 / double(batch.size());
      Var loss = scale(total_mixit, inv);
      double cls_value = 0.0;
      if (total_cls.defined()) {
        Var cls_mean = scale(total_cls, 1.0 / double(cls_terms));
        cls_value = cls_mean.scalar();
        loss = add(loss, scale(cls_mean, tcfg.lambda));
      }
      if (!std::isfinite(loss.scalar()))
        throw NumericError("non-finite loss");
      backward(loss);
      opt.step(ps, trainable);

      TrainLogEntry e{step, loss.scalar(),
                      scale(total_mixit, inv).scalar(), cls_value};
      run.log.push_back(e);
      detail::emit_log_line(log, e);
    } catch (const NumericError& err) {
      throw NumericError("training aborted at step " + std::to_string(step) +
                         ": " + err.what());
    }

    if ((step + 1) % tcfg.eval_every == 0 || step + 1 == tcfg.steps) {
      EvalPoint point;
      point.step = step + 1;
      point.records = evaluate_model(model, eval_examples, 0.0, tcfg.tau);
      point.score = model_selection_score(point.records);
      point.snapshot = snapshot_params(ps);
      run.evals.push_back(std::move(point));
    }
  }
  return run;
}

// Highest selection score wins; ties keep the earliest step.
inline std::size_t select_checkpoint(const std::vector<EvalPoint>& evals) {
  if (evals.empty()) throw ContractError("no evaluation points to select from");
  std::size_t best = 0;
  for (std::size_t i = 1; i < evals.size(); ++i)
    if (evals[i].score > evals[best].score) best = i;
  return best;
}

}  // namespace avsep
