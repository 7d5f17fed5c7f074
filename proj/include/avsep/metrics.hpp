#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "avsep/errors.hpp"
#include "avsep/io.hpp"
#include "avsep/separator.hpp"

namespace avsep {

// All ratio metrics are clamped to this symmetric range so silent signals
// order totally instead of raising.
inline constexpr double kMetricCapDb = 100.0;

namespace detail {

inline double vec_power(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return s;
}

// 10*log10(num/den) on powers with the cap rules: a vanishing denominator
// pins to +cap, a vanishing numerator to -cap.
inline double capped_power_ratio_db(double num, double den) {
  if (den <= 0.0) return kMetricCapDb;
  if (num <= 0.0) return -kMetricCapDb;
  double db = 10.0 * std::log10(num / den);
  return std::clamp(db, -kMetricCapDb, kMetricCapDb);
}

}  // namespace detail

inline double snr(const std::vector<double>& ref,
                  const std::vector<double>& est) {
  if (ref.size() != est.size())
    throw DimensionError("snr needs equal-length signals");
  double err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double d = ref[i] - est[i];
    err += d * d;
  }
  return detail::capped_power_ratio_db(detail::vec_power(ref), err);
}

inline double osr(const std::vector<double>& mixture,
                  const std::vector<double>& onscreen_est) {
  if (mixture.size() != onscreen_est.size())
    throw DimensionError("osr needs equal-length signals");
  return detail::capped_power_ratio_db(detail::vec_power(mixture),
                                       detail::vec_power(onscreen_est));
}

inline double si_snr(const std::vector<double>& ref,
                     const std::vector<double>& est) {
  if (ref.size() != est.size())
    throw DimensionError("si_snr needs equal-length signals");
  double ref_pow = detail::vec_power(ref);
  double alpha = 0.0;
  if (ref_pow > 0.0) {
    double dot = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) dot += ref[i] * est[i];
    alpha = dot / ref_pow;
  }
  double target = 0.0, err = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    double t = alpha * ref[i];
    target += t * t;
    double d = t - est[i];
    err += d * d;
  }
  return detail::capped_power_ratio_db(target, err);
}

inline double snr(const WaveBuffer& ref, const WaveBuffer& est) {
  return snr(ref.samples, est.samples);
}
inline double osr(const WaveBuffer& mixture, const WaveBuffer& onscreen_est) {
  return osr(mixture.samples, onscreen_est.samples);
}
inline double si_snr(const WaveBuffer& ref, const WaveBuffer& est) {
  return si_snr(ref.samples, est.samples);
}

// One scored source for the ROC sweep.
struct ScoredSource {
  double score = 0.0;
  double weight = 1.0;
  int label = 0;
};

// Weighted ROC area via the rank statistic: tied scores earn half credit,
// which matches a trapezoidal sweep over thresholds.
inline double weighted_auc_roc(std::vector<ScoredSource> pts) {
  double w_pos = 0.0, w_neg = 0.0;
  for (const auto& p : pts) (p.label ? w_pos : w_neg) += p.weight;
  if (w_pos <= 0.0 || w_neg <= 0.0)
    throw DegenerateLabelsError("auc needs both label classes present");
  std::sort(pts.begin(), pts.end(),
            [](const ScoredSource& a, const ScoredSource& b) {
              return a.score < b.score;
            });
  double below_neg = 0.0, num = 0.0;
  std::size_t i = 0;
  while (i < pts.size()) {
    std::size_t j = i;
    double gp = 0.0, gn = 0.0;
    while (j < pts.size() && pts[j].score == pts[i].score) {
      (pts[j].label ? gp : gn) += pts[j].weight;
      ++j;
    }
    num += gp * below_neg + 0.5 * gp * gn;
    below_neg += gn;
    i = j;
  }
  return num / (w_pos * w_neg);
}

// Everything the offline metrics need about one evaluated example. The
// source Gram matrix lets calibration re-weight the mixdown at any offset
// without touching audio again.
struct EvalRecord {
  double id = 0.0;
  bool on_screen = false;
  double snr_db = 0.0;     // on-screen examples only
  double si_snr_db = 0.0;  // on-screen examples only
  double osr_db = 0.0;     // off-screen examples only
  double mix_power = 0.0;
  std::vector<double> logits;
  std::vector<double> probs;
  std::vector<double> powers;
  std::vector<int> labels;
  std::vector<double> gram;  // row-major M*M inner products of the sources

  std::size_t num_sources() const { return logits.size(); }
};

// Per-source ROC points across a record set; each example's sources are
// weighted by their share of that example's separated power.
inline std::vector<ScoredSource> auc_points(
    const std::vector<EvalRecord>& records) {
  std::vector<ScoredSource> pts;
  for (const auto& r : records) {
    double total = 0.0;
    for (double p : r.powers) total += p;
    for (std::size_t m = 0; m < r.probs.size(); ++m) {
      double w = total > 0.0 ? r.powers[m] / total : 0.0;
      pts.push_back({r.probs[m], w, r.labels[m]});
    }
  }
  return pts;
}

inline double weighted_auc_roc(const std::vector<EvalRecord>& records) {
  return weighted_auc_roc(auc_points(records));
}

// Suppression the calibrated mixdown would reach on this example at offset
// theta, from the stored Gram matrix alone.
inline double osr_at_theta(const EvalRecord& r, double theta) {
  std::size_t m_count = r.num_sources();
  if (r.gram.size() != m_count * m_count)
    throw ContractError("record lacks the source Gram matrix");
  std::vector<double> w(m_count);
  for (std::size_t m = 0; m < m_count; ++m)
    w[m] = 1.0 / (1.0 + std::exp(-(r.logits[m] + theta)));
  double on_pow = 0.0;
  for (std::size_t a = 0; a < m_count; ++a)
    for (std::size_t b = 0; b < m_count; ++b)
      on_pow += w[a] * w[b] * r.gram[a * m_count + b];
  return detail::capped_power_ratio_db(r.mix_power, std::max(on_pow, 0.0));
}

// Lower-middle median; even counts pick the smaller of the two central
// values.
inline double median_lower(std::vector<double> v) {
  if (v.empty()) throw ContractError("median of an empty set");
  std::sort(v.begin(), v.end());
  return v[(v.size() - 1) / 2];
}

struct CalibrationResult {
  double theta = 0.0;
  double achieved_median_osr = 0.0;
  double target_osr = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Binary search for the logit offset whose median off-screen suppression
// matches the target. The median is nonincreasing in theta, so bisection
// brackets the target whenever it lies inside the attainable range;
// otherwise the nearer bound is returned unconverged.
inline CalibrationResult calibrate(const std::vector<EvalRecord>& records,
                                   double target_osr, double theta_lo = -30.0,
                                   double theta_hi = 30.0, double tol = 0.01,
                                   int max_iter = 100) {
  std::vector<const EvalRecord*> off;
  for (const auto& r : records)
    if (!r.on_screen) off.push_back(&r);
  if (off.empty()) throw ContractError("calibration needs off-screen records");

  auto median_osr = [&](double theta) {
    std::vector<double> vals;
    vals.reserve(off.size());
    for (const EvalRecord* r : off) vals.push_back(osr_at_theta(*r, theta));
    return median_lower(vals);
  };

  CalibrationResult res;
  res.target_osr = target_osr;
  // A target at the metric cap stands for "beyond measurable" and never
  // counts as converged, even though the capped readings can tie it.
  bool target_capped = std::abs(target_osr) >= kMetricCapDb;
  double f_lo = median_osr(theta_lo);
  double f_hi = median_osr(theta_hi);
  if (target_osr >= f_lo) {
    res.theta = theta_lo;
    res.achieved_median_osr = f_lo;
    res.converged = !target_capped && std::abs(f_lo - target_osr) <= tol;
    return res;
  }
  if (target_osr <= f_hi) {
    res.theta = theta_hi;
    res.achieved_median_osr = f_hi;
    res.converged = !target_capped && std::abs(f_hi - target_osr) <= tol;
    return res;
  }
  double lo = theta_lo, hi = theta_hi;
  double mid = 0.0, achieved = 0.0;
  while (res.iterations < max_iter) {
    mid = 0.5 * (lo + hi);
    achieved = median_osr(mid);
    ++res.iterations;
    if (std::abs(achieved - target_osr) <= tol) {
      res.converged = true;
      break;
    }
    if (achieved > target_osr)
      lo = mid;  // suppression still above target; push weights up
    else
      hi = mid;
  }
  res.theta = mid;
  res.achieved_median_osr = achieved;
  return res;
}

// Checkpoint-selection score: the weaker of reconstruction quality on
// on-screen examples and suppression on off-screen examples.
inline double model_selection_score(const std::vector<EvalRecord>& records) {
  std::vector<double> snrs, osrs;
  for (const auto& r : records)
    (r.on_screen ? snrs : osrs).push_back(r.on_screen ? r.snr_db : r.osr_db);
  if (snrs.empty() || osrs.empty())
    throw ContractError("selection needs both on- and off-screen records");
  return std::min(median_lower(snrs), median_lower(osrs));
}

struct EvalSummary {
  double median_snr = 0.0;
  double median_osr = 0.0;
  double si_snr = 0.0;
  double auc = std::numeric_limits<double>::quiet_NaN();
  double theta = 0.0;
};

inline EvalSummary compute_eval_summary(const std::vector<EvalRecord>& records,
                                        double theta) {
  EvalSummary s;
  s.theta = theta;
  std::vector<double> snrs, osrs, sis;
  for (const auto& r : records) {
    if (r.on_screen) {
      snrs.push_back(r.snr_db);
      sis.push_back(r.si_snr_db);
    } else {
      osrs.push_back(r.osr_db);
    }
  }
  if (!snrs.empty()) s.median_snr = median_lower(snrs);
  if (!osrs.empty()) s.median_osr = median_lower(osrs);
  if (!sis.empty()) s.si_snr = median_lower(sis);
  try {
    s.auc = weighted_auc_roc(records);
  } catch (const DegenerateLabelsError&) {
  }
  return s;
}

// CSV round-trip. Column layout: scalar fields, then per-source logit, prob,
// power, label blocks, then the flattened Gram matrix.
inline void write_eval_records(const std::string& path,
                               const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("no records to write");
  std::size_t m_count = records.front().num_sources();
  CsvTable t;
  t.columns = {"id", "on_screen", "snr_db", "si_snr_db", "osr_db",
               "mix_power"};
  for (std::size_t m = 0; m < m_count; ++m)
    t.columns.push_back("logit_" + std::to_string(m));
  for (std::size_t m = 0; m < m_count; ++m)
    t.columns.push_back("prob_" + std::to_string(m));
  for (std::size_t m = 0; m < m_count; ++m)
    t.columns.push_back("power_" + std::to_string(m));
  for (std::size_t m = 0; m < m_count; ++m)
    t.columns.push_back("label_" + std::to_string(m));
  for (std::size_t a = 0; a < m_count; ++a)
    for (std::size_t b = 0; b < m_count; ++b)
      t.columns.push_back("gram_" + std::to_string(a) + "_" +
                          std::to_string(b));
  for (const auto& r : records) {
    if (r.num_sources() != m_count)
      throw DimensionError("records disagree on source count");
    std::vector<double> row = {r.id,       r.on_screen ? 1.0 : 0.0,
                               r.snr_db,   r.si_snr_db,
                               r.osr_db,   r.mix_power};
    row.insert(row.end(), r.logits.begin(), r.logits.end());
    row.insert(row.end(), r.probs.begin(), r.probs.end());
    row.insert(row.end(), r.powers.begin(), r.powers.end());
    for (int l : r.labels) row.push_back(l);
    row.insert(row.end(), r.gram.begin(), r.gram.end());
    t.rows.push_back(std::move(row));
  }
  write_csv(path, t);
}

inline std::vector<EvalRecord> read_eval_records(const std::string& path) {
  CsvTable t = read_csv(path);
  std::size_t m_count = 0;
  for (const auto& c : t.columns)
    if (c.rfind("logit_", 0) == 0) ++m_count;
  if (t.columns.size() != 6 + 4 * m_count + m_count * m_count)
    throw ContractError("unexpected eval record layout in " + path);
  std::vector<EvalRecord> records;
  for (const auto& row : t.rows) {
    EvalRecord r;
    r.id = row[0];
    r.on_screen = row[1] != 0.0;
    r.snr_db = row[2];
    r.si_snr_db = row[3];
    r.osr_db = row[4];
    r.mix_power = row[5];
    std::size_t at = 6;
    r.logits.assign(row.begin() + at, row.begin() + at + m_count);
    at += m_count;
    r.probs.assign(row.begin() + at, row.begin() + at + m_count);
    at += m_count;
    r.powers.assign(row.begin() + at, row.begin() + at + m_count);
    at += m_count;
    for (std::size_t m = 0; m < m_count; ++m)
      r.labels.push_back(int(row[at + m]));
    at += m_count;
    r.gram.assign(row.begin() + at, row.end());
    records.push_back(std::move(r));
  }
  return records;
}

}  // namespace avsep
