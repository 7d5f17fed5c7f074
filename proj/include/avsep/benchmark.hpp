#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "avsep/attention.hpp"

namespace avsep {

// Measurement dimensions. The defaults match the model-scale operating
// point recorded in the output metadata: four sources over an 8x8 grid.
struct BenchDims {
  std::size_t num_sources = 4;   // M
  std::size_t grid_cells = 64;   // G
  std::size_t depth = 128;       // D
  std::size_t num_heads = 4;     // H
  std::size_t num_blocks = 2;    // L

  void validate() const {
    if (num_sources == 0 || grid_cells == 0 || depth == 0 || num_heads == 0 ||
        num_blocks == 0)
      throw ConfigError("benchmark dims must be positive");
    if (depth % num_heads != 0)
      throw ConfigError("depth must be divisible by the head count");
  }
};

// Attended query/key pairs per encoder pass. This is the term that
// separates the four layouts; projections and feedforwards scale linearly
// with the token count and are identical in kind across variants.
inline std::uint64_t attended_pairs(AttentionVariant variant, std::size_t m,
                                    std::size_t g, std::size_t t,
                                    std::size_t blocks) {
  if (m == 0 || g == 0 || t == 0 || blocks == 0)
    throw ConfigError("pair counts need positive dimensions");
  std::uint64_t M = m, G = g, T = t;
  std::uint64_t per_block = 0;
  switch (variant) {
    case AttentionVariant::kJointSa:
      per_block = (M + G) * T * (M + G) * T;
      break;
    case AttentionVariant::kSepSa:
      per_block = M * T * T + G * T * T + T * (M + G) * (M + G);
      break;
    case AttentionVariant::kJointCma:
      per_block = 2 * M * G * T * T;
      break;
    case AttentionVariant::kSepCma:
      per_block = M * T * T + G * T * T + 2 * M * G * T;
      break;
  }
  return per_block * blocks;
}

// Exact multiply count for attention scores plus context sums: each
// attended pair costs one length-D dot product for its score and D
// score-times-value multiplies for its context share.
inline std::uint64_t flop_model(AttentionVariant variant, std::size_t m,
                                std::size_t g, std::size_t t, std::size_t d,
                                std::size_t h, std::size_t blocks) {
  if (d == 0 || h == 0 || d % h != 0)
    throw ConfigError("depth must be a positive multiple of the head count");
  return 2 * std::uint64_t(d) * attended_pairs(variant, m, g, t, blocks);
}

struct BenchPoint {
  AttentionVariant variant = AttentionVariant::kJointSa;
  std::size_t t = 0;
  double wall_time = 0.0;        // median seconds over the repeats
  std::size_t peak_memory = 0;   // allocator peak during the passes
  std::uint64_t flop_estimate = 0;
  bool oom = false;
  std::size_t repeats = 0;
};

namespace detail {

// Restores the allocator budget even when a measurement throws.
class BudgetGuard {
 public:
  explicit BudgetGuard(std::size_t budget)
      : saved_(MemoryMeter::instance().budget()) {
    MemoryMeter::instance().set_budget(budget);
  }
  ~BudgetGuard() { MemoryMeter::instance().set_budget(saved_); }

 private:
  std::size_t saved_;
};

inline Tensor random_embedding(AxisList axes, std::vector<std::size_t> dims,
                               std::mt19937_64& rng) {
  Tensor t(std::move(axes), std::move(dims));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace detail

// Forward-pass timing and peak allocation of one variant over a frame-count
// grid. Inference only, batch one; the first pass warms up and is not
// timed. A nonzero budget caps allocator bytes, and a breach is recorded as
// an out-of-memory point instead of propagating.
inline std::vector<BenchPoint> measure(AttentionVariant variant,
                                       const std::vector<std::size_t>& t_grid,
                                       const BenchDims& dims,
                                       std::size_t repeats,
                                       std::size_t budget_bytes = 0) {
  dims.validate();
  if (repeats < 5) throw ConfigError("benchmark repeats must be at least 5");

  AttentionConfig cfg;
  cfg.num_heads = dims.num_heads;
  cfg.depth = dims.depth;
  cfg.num_blocks = dims.num_blocks;
  cfg.variant = variant;

  ParamStore ps;
  std::mt19937_64 rng(48879);
  AvEncoder enc(ps, "enc", cfg, rng);

  std::vector<BenchPoint> points;
  for (std::size_t t : t_grid) {
    BenchPoint p;
    p.variant = variant;
    p.t = t;
    p.repeats = repeats;
    p.flop_estimate = flop_model(variant, dims.num_sources, dims.grid_cells,
                                 t, dims.depth, dims.num_heads,
                                 dims.num_blocks);

    NoGradGuard inference;
    std::mt19937_64 data_rng(0x5EED ^ (t * 1337));
    Var za{detail::random_embedding({Axis::Src, Axis::Time, Axis::Depth},
                                    {dims.num_sources, t, dims.depth},
                                    data_rng),
           false};
    Var zv{detail::random_embedding({Axis::Space, Axis::Time, Axis::Depth},
                                    {dims.grid_cells, t, dims.depth},
                                    data_rng),
           false};

    MemoryMeter::instance().reset_peak();
    detail::BudgetGuard guard(budget_bytes);
    try {
      std::mt19937_64 fwd_rng(0);
      enc(za, zv, false, fwd_rng);  // warm-up, untimed
      std::vector<double> times;
      for (std::size_t r = 0; r < repeats; ++r) {
        auto start = std::chrono::steady_clock::now();
        enc(za, zv, false, fwd_rng);
        std::chrono::duration<double> dt =
            std::chrono::steady_clock::now() - start;
        times.push_back(dt.count());
      }
      std::sort(times.begin(), times.end());
      p.wall_time = times[(times.size() - 1) / 2];
    } catch (const MemoryBudgetError&) {
      p.oom = true;
      p.wall_time = 0.0;
    }
    p.peak_memory = MemoryMeter::instance().peak();
    points.push_back(p);
  }
  return points;
}

// Largest frame count a variant completed without breaching the budget;
// zero when every point ran out of memory.
inline std::size_t max_completed_t(const std::vector<BenchPoint>& points) {
  std::size_t best = 0;
  for (const auto& p : points)
    if (!p.oom) best = std::max(best, p.t);
  return best;
}

inline void write_bench_csv(const std::string& path,
                            const std::vector<BenchPoint>& points) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  os << "variant,T,median_s,peak_bytes,flops,oom\n";
  char buf[64];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g", p.wall_time);
    os << variant_name(p.variant) << "," << p.t << "," << buf << ","
       << p.peak_memory << "," << p.flop_estimate << "," << (p.oom ? 1 : 0)
       << "\n";
  }
  if (!os) throw Error("short write to " + path);
}

inline std::vector<BenchPoint> read_bench_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read " + path);
  std::string line;
  if (!std::getline(is, line) ||
      line != "variant,T,median_s,peak_bytes,flops,oom")
    throw Error(path + ": not a benchmark table");
  std::vector<BenchPoint> points;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    BenchPoint p;
    std::getline(ls, field, ',');
    p.variant = variant_from_name(field);
    std::getline(ls, field, ',');
    p.t = std::stoull(field);
    std::getline(ls, field, ',');
    p.wall_time = std::stod(field);
    std::getline(ls, field, ',');
    p.peak_memory = std::stoull(field);
    std::getline(ls, field, ',');
    p.flop_estimate = std::stoull(field);
    std::getline(ls, field, ',');
    p.oom = field == "1";
    points.push_back(p);
  }
  return points;
}

// Plot-ready JSON: per-variant series plus the dimensions they were
// measured at, so a figure can be regenerated from this file alone.
inline void write_bench_json(const std::string& path,
                             const std::vector<BenchPoint>& points,
                             const BenchDims& dims, std::size_t repeats,
                             std::size_t budget_bytes) {
  nlohmann::json j;
  j["dims"] = {{"num_sources", dims.num_sources},
               {"grid_cells", dims.grid_cells},
               {"depth", dims.depth},
               {"num_heads", dims.num_heads},
               {"num_blocks", dims.num_blocks}};
  j["repeats"] = repeats;
  j["budget_bytes"] = budget_bytes;
  nlohmann::json series = nlohmann::json::object();
  for (const auto& p : points) {
    auto& s = series[variant_name(p.variant)];
    s["T"].push_back(p.t);
    s["median_s"].push_back(p.wall_time);
    s["peak_bytes"].push_back(p.peak_memory);
    s["flops"].push_back(p.flop_estimate);
    s["oom"].push_back(p.oom);
  }
  j["series"] = std::move(series);
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  os << j.dump(2) << "\n";
  if (!os) throw Error("short write to " + path);
}

}  // namespace avsep
