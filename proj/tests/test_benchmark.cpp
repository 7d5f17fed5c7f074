#include <cstdint>
#include <filesystem>

#include <catch2/catch_amalgamated.hpp>
#include <nlohmann/json.hpp>

#include "avsep/benchmark.hpp"

using namespace avsep;

namespace {

// Independent pair enumeration: walk every attention stage of a variant and
// count each attended (query, key) pair with explicit loops.
std::uint64_t loop_pairs(AttentionVariant v, std::size_t m, std::size_t g,
                         std::size_t t, std::size_t blocks) {
  std::uint64_t total = 0;
  for (std::size_t l = 0; l < blocks; ++l) {
    switch (v) {
      case AttentionVariant::kJointSa:
        for (std::size_t q = 0; q < (m + g) * t; ++q)
          for (std::size_t k = 0; k < (m + g) * t; ++k) ++total;
        break;
      case AttentionVariant::kSepSa:
        for (std::size_t row = 0; row < m; ++row)
          for (std::size_t q = 0; q < t; ++q)
            for (std::size_t k = 0; k < t; ++k) ++total;
        for (std::size_t row = 0; row < g; ++row)
          for (std::size_t q = 0; q < t; ++q)
            for (std::size_t k = 0; k < t; ++k) ++total;
        for (std::size_t frame = 0; frame < t; ++frame)
          for (std::size_t q = 0; q < m + g; ++q)
            for (std::size_t k = 0; k < m + g; ++k) ++total;
        break;
      case AttentionVariant::kJointCma:
        for (std::size_t mq = 0; mq < m * t; ++mq)
          for (std::size_t vk = 0; vk < g * t; ++vk) ++total;
        for (std::size_t vq = 0; vq < g * t; ++vq)
          for (std::size_t mk = 0; mk < m * t; ++mk) ++total;
        break;
      case AttentionVariant::kSepCma:
        for (std::size_t row = 0; row < m + g; ++row)
          for (std::size_t q = 0; q < t; ++q)
            for (std::size_t k = 0; k < t; ++k) ++total;
        for (std::size_t frame = 0; frame < t; ++frame) {
          for (std::size_t mq = 0; mq < m; ++mq)
            for (std::size_t vk = 0; vk < g; ++vk) ++total;
          for (std::size_t vq = 0; vq < g; ++vq)
            for (std::size_t mk = 0; mk < m; ++mk) ++total;
        }
        break;
    }
  }
  return total;
}

BenchDims tiny_dims() {
  BenchDims d;
  d.num_sources = 2;
  d.grid_cells = 4;
  d.depth = 16;
  d.num_heads = 2;
  d.num_blocks = 1;
  return d;
}

}  // namespace

TEST_CASE("doubling scales the joint attention count exactly fourfold") {
  auto f = [](std::size_t m, std::size_t g, std::size_t t) {
    return flop_model(AttentionVariant::kJointSa, m, g, t, 128, 4, 2);
  };
  REQUIRE(double(f(4, 64, 128)) / double(f(4, 64, 64)) == 4.0);
  REQUIRE(double(f(8, 128, 64)) / double(f(4, 64, 64)) == 4.0);
  REQUIRE(double(f(2, 6, 32)) / double(f(1, 3, 32)) == 4.0);
}

TEST_CASE("the separable layout matches a hand enumeration of pairs") {
  std::uint64_t pairs = 0;
  for (std::size_t row = 0; row < 4; ++row)
    for (std::size_t q = 0; q < 64; ++q)
      for (std::size_t k = 0; k < 64; ++k) ++pairs;
  for (std::size_t row = 0; row < 16; ++row)
    for (std::size_t q = 0; q < 64; ++q)
      for (std::size_t k = 0; k < 64; ++k) ++pairs;
  for (std::size_t frame = 0; frame < 64; ++frame)
    for (std::size_t q = 0; q < 20; ++q)
      for (std::size_t k = 0; k < 20; ++k) ++pairs;
  REQUIRE(flop_model(AttentionVariant::kSepSa, 4, 16, 64, 32, 4, 1) ==
          2 * 32 * pairs);
}

TEST_CASE("every variant agrees with brute pair enumeration") {
  struct Case {
    std::size_t m, g, t, blocks;
  };
  const Case cases[] = {{1, 1, 1, 1}, {2, 4, 8, 1},  {3, 9, 16, 2},
                        {4, 16, 32, 1}, {8, 32, 64, 1}, {5, 7, 24, 3}};
  for (const auto& c : cases)
    for (auto v : {AttentionVariant::kJointSa, AttentionVariant::kSepSa,
                   AttentionVariant::kJointCma, AttentionVariant::kSepCma}) {
      std::uint64_t want = loop_pairs(v, c.m, c.g, c.t, c.blocks);
      REQUIRE(attended_pairs(v, c.m, c.g, c.t, c.blocks) == want);
      REQUIRE(flop_model(v, c.m, c.g, c.t, 24, 3, c.blocks) == 2 * 24 * want);
    }
}

TEST_CASE("asymptotic ranking puts joint self-attention on top") {
  // At model-scale dims the leading T^2(M+G)^2 term dominates every other
  // layout, and the time-axis terms keep both separable variants above a
  // pure cross-modal pass.
  std::size_t m = 4, g = 64, d = 128, h = 4, l = 2;
  for (std::size_t t : {128, 256, 512}) {
    auto joint_sa = flop_model(AttentionVariant::kJointSa, m, g, t, d, h, l);
    auto sep_sa = flop_model(AttentionVariant::kSepSa, m, g, t, d, h, l);
    auto joint_cma = flop_model(AttentionVariant::kJointCma, m, g, t, d, h, l);
    auto sep_cma = flop_model(AttentionVariant::kSepCma, m, g, t, d, h, l);
    REQUIRE(joint_sa > joint_cma);
    REQUIRE(joint_sa > sep_sa);
    REQUIRE(sep_sa > sep_cma);
    REQUIRE(joint_cma > sep_cma);
  }
  // The joint/separable gap widens with T.
  auto ratio = [&](std::size_t t) {
    return double(flop_model(AttentionVariant::kJointSa, m, g, t, d, h, l)) /
           double(flop_model(AttentionVariant::kSepSa, m, g, t, d, h, l));
  };
  REQUIRE(ratio(64) < ratio(128));
  REQUIRE(ratio(128) < ratio(256));
}

TEST_CASE("flop model rejects invalid dimensions") {
  REQUIRE_THROWS_AS(flop_model(AttentionVariant::kJointSa, 4, 64, 32, 15, 4, 2),
                    ConfigError);
  REQUIRE_THROWS_AS(flop_model(AttentionVariant::kJointSa, 0, 64, 32, 16, 4, 2),
                    ConfigError);
  REQUIRE_THROWS_AS(attended_pairs(AttentionVariant::kSepSa, 4, 64, 0, 2),
                    ConfigError);
  BenchDims d = tiny_dims();
  d.depth = 15;
  REQUIRE_THROWS_AS(d.validate(), ConfigError);
}

TEST_CASE("measurement records timing, memory, and flops per grid point") {
  auto points = measure(AttentionVariant::kSepCma, {4, 8}, tiny_dims(), 5);
  REQUIRE(points.size() == 2);
  REQUIRE(points[0].t == 4);
  REQUIRE(points[1].t == 8);
  for (const auto& p : points) {
    REQUIRE_FALSE(p.oom);
    REQUIRE(p.wall_time > 0.0);
    REQUIRE(p.peak_memory > 0);
    REQUIRE(p.repeats == 5);
    REQUIRE(p.flop_estimate ==
            flop_model(AttentionVariant::kSepCma, 2, 4, p.t, 16, 2, 1));
  }
  REQUIRE(points[1].flop_estimate > points[0].flop_estimate);
  REQUIRE_THROWS_AS(measure(AttentionVariant::kSepCma, {4}, tiny_dims(), 4),
                    ConfigError);
}

TEST_CASE("a tight budget yields a recorded out-of-memory point") {
  // Calibrate the ceiling against an unbudgeted run so the test works at
  // any ambient allocation level, then halve the forward's own footprint.
  std::size_t live = MemoryMeter::instance().live();
  auto free_run = measure(AttentionVariant::kJointSa, {16}, tiny_dims(), 5);
  REQUIRE(free_run[0].peak_memory > live);
  std::size_t footprint = free_run[0].peak_memory - live;
  std::size_t budget = live + footprint / 2;

  auto points = measure(AttentionVariant::kJointSa, {16}, tiny_dims(), 5,
                        budget);
  REQUIRE(points.size() == 1);
  REQUIRE(points[0].oom);
  REQUIRE(points[0].wall_time == 0.0);
  REQUIRE(points[0].flop_estimate == free_run[0].flop_estimate);
  REQUIRE(MemoryMeter::instance().budget() == 0);
  REQUIRE(max_completed_t(points) == 0);
  REQUIRE(max_completed_t(free_run) == 16);
}

TEST_CASE("under one budget the separable layout reaches further in time") {
  BenchDims dims = tiny_dims();
  std::vector<std::size_t> grid = {4, 8, 16, 32, 64};
  std::size_t live = MemoryMeter::instance().live();
  auto joint_free = measure(AttentionVariant::kJointSa, {32}, dims, 5);
  std::size_t budget = live + (joint_free[0].peak_memory - live);

  auto joint = measure(AttentionVariant::kJointSa, grid, dims, 5, budget);
  auto sep = measure(AttentionVariant::kSepSa, grid, dims, 5, budget);
  REQUIRE(max_completed_t(sep) > max_completed_t(joint));
  REQUIRE(max_completed_t(joint) >= 4);
}

TEST_CASE("benchmark tables round-trip through files") {
  auto points = measure(AttentionVariant::kJointCma, {4, 8}, tiny_dims(), 5);
  points[1].oom = true;  // exercise the flag in serialized form

  std::string csv = "bench_tmp.csv";
  write_bench_csv(csv, points);
  auto back = read_bench_csv(csv);
  REQUIRE(back.size() == points.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    REQUIRE(back[i].variant == points[i].variant);
    REQUIRE(back[i].t == points[i].t);
    REQUIRE(back[i].wall_time == points[i].wall_time);
    REQUIRE(back[i].peak_memory == points[i].peak_memory);
    REQUIRE(back[i].flop_estimate == points[i].flop_estimate);
    REQUIRE(back[i].oom == points[i].oom);
  }
  std::filesystem::remove(csv);

  std::string jpath = "bench_tmp.json";
  write_bench_json(jpath, points, tiny_dims(), 5, 12345);
  std::ifstream is(jpath);
  nlohmann::json j;
  is >> j;
  REQUIRE(j["dims"]["grid_cells"] == 4);
  REQUIRE(j["repeats"] == 5);
  REQUIRE(j["budget_bytes"] == 12345);
  auto& s = j["series"]["joint_cma"];
  REQUIRE(s["T"].size() == 2);
  REQUIRE(s["flops"][0] == points[0].flop_estimate);
  REQUIRE(s["oom"][1] == true);
  std::filesystem::remove(jpath);
}

TEST_CASE("repeated measurement of one point is stable") {
  auto a = measure(AttentionVariant::kSepSa, {32}, tiny_dims(), 9);
  auto b = measure(AttentionVariant::kSepSa, {32}, tiny_dims(), 9);
  REQUIRE(a[0].peak_memory == b[0].peak_memory);
  double lo = std::min(a[0].wall_time, b[0].wall_time);
  double hi = std::max(a[0].wall_time, b[0].wall_time);
  REQUIRE(hi / lo < 1.2);
}
