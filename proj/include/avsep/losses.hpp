#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "avsep/errors.hpp"
#include "avsep/ops.hpp"
#include "avsep/tensor.hpp"

namespace avsep {

// The five example kinds used during training. NOn carries noisy on-screen
// labels derived from the mix assignment; LOn and LOff carry trusted labels.
enum class ExampleKind {
  kNOn,
  kLOnSingle,
  kLOnMoM,
  kLOffSingle,
  kLOffMoM,
};

inline const char* kind_name(ExampleKind k) {
  switch (k) {
    case ExampleKind::kNOn: return "non_mom";
    case ExampleKind::kLOnSingle: return "lon_single";
    case ExampleKind::kLOnMoM: return "lon_mom";
    case ExampleKind::kLOffSingle: return "loff_single";
    case ExampleKind::kLOffMoM: return "loff_mom";
  }
  throw ContractError("unknown example kind");
}

inline ExampleKind kind_from_name(const std::string& name) {
  for (ExampleKind k :
       {ExampleKind::kNOn, ExampleKind::kLOnSingle, ExampleKind::kLOnMoM,
        ExampleKind::kLOffSingle, ExampleKind::kLOffMoM}) {
    if (name == kind_name(k)) return k;
  }
  throw ConfigError("unknown example kind '" + name + "'");
}

inline bool is_off_screen_kind(ExampleKind k) {
  return k == ExampleKind::kLOffSingle || k == ExampleKind::kLOffMoM;
}

struct LossConfig {
  double snr_threshold = 1e-3;       // power-ratio floor of the signal loss
  double classification_weight = 1.0;

  void validate() const {
    if (!(snr_threshold > 0)) throw ConfigError("snr_threshold must be > 0");
    if (classification_weight < 0)
      throw ConfigError("classification_weight must be >= 0");
  }
};

namespace detail {

inline double sq_norm(const double* p, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += p[i] * p[i];
  return s;
}

}  // namespace detail

// Soft-thresholded negative SNR of an estimate against a reference, in dB.
// Bounded below by 10*log10(tau), reached exactly when est == ref. A silent
// reference degenerates to a pure energy penalty on the estimate.
inline double thresholded_snr_loss_value(const double* ref, const double* est,
                                         std::size_t n, double tau) {
  double ref_pow = detail::sq_norm(ref, n);
  if (ref_pow == 0.0) {
    double est_pow = detail::sq_norm(est, n);
    return 10.0 * std::log10(est_pow + 1e-8);
  }
  double err_pow = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double d = ref[i] - est[i];
    err_pow += d * d;
  }
  return 10.0 * std::log10(err_pow + tau * ref_pow) - 10.0 * std::log10(ref_pow);
}

inline double thresholded_snr_loss_value(const Tensor& ref, const Tensor& est,
                                         double tau) {
  if (ref.size() != est.size())
    throw DimensionError("snr loss needs equal-length signals");
  return thresholded_snr_loss_value(ref.data(), est.data(), ref.size(), tau);
}

// Differentiable form of the same loss over Sample vectors.
inline Var thresholded_snr_loss(const Var& ref, const Var& est, double tau) {
  if (ref.value().size() != est.value().size())
    throw DimensionError("snr loss needs equal-length signals");
  double ref_pow = detail::sq_norm(ref.value().data(), ref.value().size());
  if (ref_pow == 0.0) {
    Var est_pow = sum_all(square(est));
    return scale(log10_op(add_const(est_pow, 1e-8)), 10.0);
  }
  Var err = sum_all(square(sub(ref, est)));
  Var rp = sum_all(square(ref));
  Var num = log10_op(add(err, scale(rp, tau)));
  return scale(sub(num, log10_op(rp)), 10.0);
}

// Winner of the exhaustive search over binary source-to-reference
// assignments. Row 1 holds the sources reconstructing the first (primary)
// reference; pseudo-labels mark exactly those sources.
struct MixAssignment {
  std::vector<int> row1;
  std::vector<int> row2;
  std::vector<int> pseudo_labels;  // copy of row1
  double loss = 0.0;
  std::size_t index = 0;  // binary counter value, bit m set = source m to r2
};

// Exhaustively searches all 2^M assignments of sources to the two
// references, minimizing the summed thresholded SNR loss. Assignments are
// enumerated as a binary counter over source bits (bit clear = reference 1)
// and ties keep the lowest counter value.
inline MixAssignment mixit_loss(const Tensor& r1, const Tensor& r2,
                                const Tensor& est, double tau = 1e-3) {
  std::size_t m_count = est.dim(Axis::Src);
  std::size_t n = est.dim(Axis::Sample);
  if (r1.size() != n || r2.size() != n)
    throw DimensionError("references must match the estimate length");
  if (m_count > 8)
    throw ContractError(
        "exhaustive assignment search supports at most 8 sources; use a "
        "greedy fallback explicitly for larger banks");

  std::vector<double> sum1(n), sum2(n);
  MixAssignment best;
  bool have_best = false;
  std::size_t total = std::size_t(1) << m_count;
  for (std::size_t k = 0; k < total; ++k) {
    std::fill(sum1.begin(), sum1.end(), 0.0);
    std::fill(sum2.begin(), sum2.end(), 0.0);
    for (std::size_t m = 0; m < m_count; ++m) {
      const double* src = est.data() + m * n;
      double* dst = (k >> m) & 1 ? sum2.data() : sum1.data();
      for (std::size_t i = 0; i < n; ++i) dst[i] += src[i];
    }
    double loss = thresholded_snr_loss_value(r1.data(), sum1.data(), n, tau) +
                  thresholded_snr_loss_value(r2.data(), sum2.data(), n, tau);
    if (!have_best || loss < best.loss) {
      have_best = true;
      best.loss = loss;
      best.index = k;
    }
  }
  best.row1.assign(m_count, 0);
  best.row2.assign(m_count, 0);
  for (std::size_t m = 0; m < m_count; ++m) {
    if ((best.index >> m) & 1)
      best.row2[m] = 1;
    else
      best.row1[m] = 1;
  }
  best.pseudo_labels = best.row1;
  return best;
}

// Differentiable loss of one fixed assignment: gradients flow through the
// estimated sources while the assignment itself stays a constant choice.
inline Var mixit_training_loss(const Tensor& r1, const Tensor& r2,
                               const Var& est, const MixAssignment& a,
                               double tau = 1e-3) {
  std::size_t m_count = est.value().dim(Axis::Src);
  if (a.row1.size() != m_count)
    throw DimensionError("assignment width must match the source count");
  Tensor w1({Axis::Src}, {m_count});
  Tensor w2({Axis::Src}, {m_count});
  for (std::size_t m = 0; m < m_count; ++m) {
    w1[m] = a.row1[m];
    w2[m] = a.row2[m];
  }
  Var mix1 = tensor_inner_product(constant(w1), est, {Axis::Src});
  Var mix2 = tensor_inner_product(constant(w2), est, {Axis::Src});
  return add(thresholded_snr_loss(constant(r1), mix1, tau),
             thresholded_snr_loss(constant(r2), mix2, tau));
}

namespace detail {

inline double clamp_prob(double p) {
  const double lo = 1e-7;
  if (p < lo) return lo;
  if (p > 1.0 - lo) return 1.0 - lo;
  return p;
}

inline double ce_nats(int label, double prob) {
  double p = clamp_prob(prob);
  return label ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace detail

// Cross-entropy in nats between binary labels and predicted probabilities,
// summed over sources, with probabilities clamped away from 0 and 1.
inline double exact_ce_loss(const std::vector<int>& y,
                            const std::vector<double>& probs) {
  if (y.size() != probs.size())
    throw DimensionError("label and probability counts differ");
  double total = 0.0;
  for (std::size_t m = 0; m < y.size(); ++m)
    total += detail::ce_nats(y[m], probs[m]);
  return total;
}

// Candidate label settings for the active-combinations loss: subsets of the
// active labels with at least one source kept active.
inline std::vector<std::vector<int>> active_combination_candidates(
    const std::vector<int>& y) {
  std::size_t active = 0;
  for (int v : y) active += v != 0;
  if (active == 0)
    throw NoActiveSourceError("no active source; skip the classification term");
  std::vector<std::size_t> slots;
  for (std::size_t m = 0; m < y.size(); ++m)
    if (y[m]) slots.push_back(m);
  std::vector<std::vector<int>> out;
  std::size_t total = std::size_t(1) << active;
  for (std::size_t k = 1; k < total; ++k) {
    std::vector<int> l(y.size(), 0);
    for (std::size_t j = 0; j < active; ++j)
      if ((k >> j) & 1) l[slots[j]] = 1;
    out.push_back(std::move(l));
  }
  return out;
}

// Minimum cross-entropy over the admissible label settings; robust to labels
// that mark a silent source active, since the setting may drop it.
inline std::vector<int> active_combinations_argmin(
    const std::vector<int>& y, const std::vector<double>& probs) {
  std::vector<int> best;
  double best_loss = 0.0;
  for (const auto& l : active_combination_candidates(y)) {
    double loss = exact_ce_loss(l, probs);
    if (best.empty() || loss < best_loss) {
      best = l;
      best_loss = loss;
    }
  }
  return best;
}

inline double active_combinations_loss(const std::vector<int>& y,
                                       const std::vector<double>& probs) {
  return exact_ce_loss(active_combinations_argmin(y, probs), probs);
}

// Differentiable clamped cross-entropy for a fixed label vector against a
// probability Var holding one value per source.
inline Var ce_loss(const std::vector<int>& labels, const Var& probs) {
  if (probs.value().size() != labels.size())
    throw DimensionError("label and probability counts differ");
  Var p = clamp_min(probs, 1e-7);
  Var one = constant(Tensor::filled(p.value().axes(), p.value().dims(), 1.0));
  Var q = clamp_min(sub(one, p), 1e-7);
  Tensor wy(p.value().axes(), p.value().dims());
  Tensor wn(p.value().axes(), p.value().dims());
  for (std::size_t m = 0; m < labels.size(); ++m) {
    wy[m] = labels[m] ? 1.0 : 0.0;
    wn[m] = labels[m] ? 0.0 : 1.0;
  }
  AxisSet all(p.value().axes());
  Var pos = tensor_inner_product(constant(wy), log_op(p), all);
  Var neg = tensor_inner_product(constant(wn), log_op(q), all);
  return scale(add(pos, neg), -1.0);
}

// Per-example classification term: noisy labels go through the
// active-combinations search, trusted labels use the labels directly.
inline Var classification_loss(ExampleKind kind, const std::vector<int>& labels,
                               const Var& probs) {
  if (kind == ExampleKind::kNOn) {
    std::vector<double> pv(probs.value().data(),
                           probs.value().data() + probs.value().size());
    return ce_loss(active_combinations_argmin(labels, pv), probs);
  }
  return ce_loss(labels, probs);
}

inline Var total_loss(const Var& mixit_term, const Var& classification_term,
                      double lambda) {
  if (lambda == 0.0) return mixit_term;
  return add(mixit_term, scale(classification_term, lambda));
}

}  // namespace avsep
