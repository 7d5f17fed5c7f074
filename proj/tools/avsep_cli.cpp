// Command-line driver: wires data generation, training, evaluation,
// calibration, benchmarking, gradient auditing, and attention export into
// one binary with flat key=value configs.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "avsep/benchmark.hpp"
#include "avsep/config.hpp"
#include "avsep/gradcheck.hpp"
#include "avsep/training.hpp"

namespace {

using namespace avsep;
namespace fs = std::filesystem;

const std::map<std::string, std::string> kSceneDefaults = {
    {"scene.sources", "2"},      {"scene.on_fraction", "0.5"},
    {"scene.seconds", "2"},      {"scene.sample_rate", "8000"},
    {"scene.fps", "16"},         {"scene.px", "32"},
    {"scene.noise_floor", "0"},  {"scene.min_gap_hz", "0"},
    {"scene.families", "tone,noise_burst,chirp"},
};

const std::map<std::string, std::string> kSeparatorDefaults = {
    {"sep.sources", "2"}, {"sep.window", "32"}, {"sep.hop", "16"},
    {"sep.latent", "64"}, {"sep.kernel", "3"},
};

const std::map<std::string, std::string> kModelDefaults = {
    {"emb.depth", "32"},   {"emb.grid", "4"},     {"emb.mel", "32"},
    {"emb.window", "200"}, {"emb.hop", "80"},     {"emb.channels", "8"},
    {"attn.heads", "2"},   {"attn.blocks", "2"},  {"attn.dropout", "0"},
    {"attn.variant", "sep_cma"},
};

const std::map<std::string, std::string> kTrainDefaults = {
    {"train.lr", "1e-4"},         {"train.batch", "8"},
    {"train.steps", "1000"},      {"train.eval_every", "100"},
    {"train.eval_count", "16"},   {"train.mode", "unsupervised"},
    {"train.lambda", "1"},        {"train.tau", "1e-3"},
    {"train.finetune_sep", "0"},  {"train.freeze_emb", "0"},
};

std::map<std::string, std::string> merge(
    std::initializer_list<std::map<std::string, std::string>> maps) {
  std::map<std::string, std::string> out;
  for (const auto& m : maps) out.insert(m.begin(), m.end());
  return out;
}

SceneConfig scene_from(const FlatConfig& cfg) {
  SceneConfig s;
  s.num_sources = cfg.count("scene.sources");
  s.on_screen_fraction = cfg.num("scene.on_fraction");
  s.clip_seconds = cfg.num("scene.seconds");
  s.sample_rate = cfg.num("scene.sample_rate");
  s.fps = cfg.num("scene.fps");
  s.px_side = cfg.count("scene.px");
  s.noise_floor = cfg.num("scene.noise_floor");
  s.min_cross_gap_hz = cfg.num("scene.min_gap_hz");
  s.allowed_families.clear();
  std::stringstream fams(cfg.str("scene.families"));
  std::string fam;
  while (std::getline(fams, fam, ','))
    if (!fam.empty()) s.allowed_families.push_back(family_from_name(fam));
  s.validate();
  return s;
}

SeparatorConfig separator_from(const FlatConfig& cfg) {
  SeparatorConfig s;
  s.num_sources = cfg.count("sep.sources");
  s.window = cfg.count("sep.window");
  s.hop = cfg.count("sep.hop");
  s.latent = cfg.count("sep.latent");
  s.kernel = cfg.count("sep.kernel");
  s.validate();
  return s;
}

ModelConfig model_from(const FlatConfig& cfg, double sample_rate, double fps,
                       std::size_t px_side) {
  ModelConfig m;
  m.separator = separator_from(cfg);
  m.embedding.depth = cfg.count("emb.depth");
  m.embedding.grid_side = cfg.count("emb.grid");
  m.embedding.mel_bins = cfg.count("emb.mel");
  m.embedding.stft_window = cfg.count("emb.window");
  m.embedding.stft_hop = cfg.count("emb.hop");
  m.embedding.conv_channels = cfg.count("emb.channels");
  m.embedding.sample_rate = sample_rate;
  m.embedding.fps = fps;
  m.attention.num_heads = cfg.count("attn.heads");
  m.attention.depth = cfg.count("emb.depth");
  m.attention.num_blocks = cfg.count("attn.blocks");
  m.attention.dropout_rate = cfg.num("attn.dropout");
  m.attention.variant = variant_from_name(cfg.str("attn.variant"));
  m.px_side = px_side;
  m.validate();
  return m;
}

TrainConfig train_from(const FlatConfig& cfg) {
  TrainConfig t;
  t.learning_rate = cfg.num("train.lr");
  t.batch_size = cfg.count("train.batch");
  t.steps = cfg.count("train.steps");
  t.eval_every = cfg.count("train.eval_every");
  t.eval_count = cfg.count("train.eval_count");
  t.seed = cfg.uint("seed");
  t.mode = mode_from_name(cfg.str("train.mode"));
  t.lambda = cfg.num("train.lambda");
  t.tau = cfg.num("train.tau");
  t.finetune_separator = cfg.flag("train.finetune_sep");
  t.freeze_embedders = cfg.flag("train.freeze_emb");
  t.validate();
  return t;
}

std::string prepare_out(const FlatConfig& cfg) {
  std::string out = cfg.str("out");
  if (out.empty()) throw ConfigError("an output directory is required");
  fs::create_directories(out);
  cfg.write_resolved(out + "/config.resolved");
  return out;
}

// Commands whose result fits on stdout may skip the output directory.
std::string optional_out(const FlatConfig& cfg) {
  std::string out = cfg.str("out");
  if (!out.empty()) {
    fs::create_directories(out);
    cfg.write_resolved(out + "/config.resolved");
  }
  return out;
}

// Loads a separator-only checkpoint into the matching slice of a full
// model's parameters.
void load_separator_into(const std::string& path, const FlatConfig& cfg,
                         ParamStore& dst) {
  ParamStore tmp;
  std::mt19937_64 rng(0);
  Separator skeleton(tmp, "sep", separator_from(cfg), rng);
  (void)skeleton;
  load_checkpoint(path, tmp);
  for (const auto& name : tmp.names()) {
    Tensor& d = dst.get(name).mutable_value();
    const Tensor& s = tmp.get(name).value();
    if (!d.same_shape(s))
      throw ConfigError("separator checkpoint shape mismatch at " + name);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = s[i];
  }
}

int cmd_gen_data(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  SceneConfig scene = scene_from(cfg);
  auto batch = sample_batch(scene, mode_from_name(cfg.str("mode")),
                            cfg.count("count"), cfg.uint("seed"));
  write_dataset(out, batch);
  std::cout << "wrote " << batch.size() << " examples to " << out << "\n";
  return 0;
}

int cmd_pretrain_sep(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  SceneConfig scene = scene_from(cfg);
  TrainConfig tcfg = train_from(cfg);

  ParamStore ps;
  std::mt19937_64 rng(cfg.uint("seed"));
  Separator sep(ps, "sep", separator_from(cfg), rng);

  std::ofstream log(out + "/pretrain_log.jsonl");
  auto curve = pretrain_separator(ps, sep, scene, tcfg, &log);
  save_checkpoint(out + "/sep.ckpt", ps);

  nlohmann::json summary;
  summary["steps"] = curve.size();
  summary["first_loss"] = curve.front().total;
  summary["final_loss"] = curve.back().total;
  std::ofstream(out + "/summary.json") << summary.dump(2) << "\n";
  std::cout << "pretrained " << curve.size() << " steps, final loss "
            << curve.back().total << "\n";
  return 0;
}

int cmd_train(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  SceneConfig scene = scene_from(cfg);
  TrainConfig tcfg = train_from(cfg);
  ModelConfig mcfg =
      model_from(cfg, scene.sample_rate, scene.fps, scene.px_side);

  ParamStore ps;
  std::mt19937_64 rng(cfg.uint("seed"));
  AvModel model(ps, mcfg, rng);
  if (!cfg.str("init_sep").empty())
    load_separator_into(cfg.str("init_sep"), cfg, ps);

  std::ofstream log(out + "/train_log.jsonl");
  TrainRun run = train_audio_visual(ps, model, scene, tcfg, &log);

  save_checkpoint(out + "/final.ckpt", ps);
  std::size_t best = select_checkpoint(run.evals);
  restore_params(ps, run.evals[best].snapshot);
  save_checkpoint(out + "/best.ckpt", ps);
  write_eval_records(out + "/eval_records.csv", run.evals[best].records);

  nlohmann::json summary;
  summary["steps"] = run.log.size();
  summary["best_step"] = run.evals[best].step;
  summary["best_score"] = run.evals[best].score;
  EvalSummary es = compute_eval_summary(run.evals[best].records, 0.0);
  summary["median_snr_db"] = es.median_snr;
  summary["median_osr_db"] = es.median_osr;
  if (std::isfinite(es.auc)) summary["weighted_auc"] = es.auc;
  std::ofstream(out + "/summary.json") << summary.dump(2) << "\n";
  std::cout << "trained " << run.log.size() << " steps, best at step "
            << run.evals[best].step << " score " << run.evals[best].score
            << "\n";
  return 0;
}

int cmd_eval(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  auto examples = read_dataset(cfg.str("data"));
  double sample_rate = examples.front().r1.sample_rate;
  double fps = examples.front().clip.fps;
  std::size_t px = examples.front().clip.frames.dim(Axis::Row);
  ModelConfig mcfg = model_from(cfg, sample_rate, fps, px);

  ParamStore ps;
  std::mt19937_64 rng(cfg.uint("seed"));
  AvModel model(ps, mcfg, rng);
  if (!cfg.str("ckpt").empty()) load_checkpoint(cfg.str("ckpt"), ps);

  auto records =
      evaluate_model(model, examples, cfg.num("theta"), cfg.num("train.tau"));
  write_eval_records(out + "/eval_records.csv", records);

  EvalSummary es = compute_eval_summary(records, cfg.num("theta"));
  nlohmann::json summary;
  summary["examples"] = records.size();
  summary["median_snr_db"] = es.median_snr;
  summary["median_osr_db"] = es.median_osr;
  summary["median_si_snr_db"] = es.si_snr;
  if (std::isfinite(es.auc)) summary["weighted_auc"] = es.auc;
  summary["theta"] = cfg.num("theta");
  std::ofstream(out + "/summary.json") << summary.dump(2) << "\n";
  std::cout << summary.dump(2) << "\n";
  return 0;
}

int cmd_calibrate(const FlatConfig& cfg) {
  std::string out = optional_out(cfg);
  auto records = read_eval_records(cfg.str("records"));
  CalibrationResult res =
      calibrate(records, cfg.num("target_osr"), cfg.num("theta_lo"),
                cfg.num("theta_hi"), cfg.num("tol"));
  nlohmann::json j;
  j["theta"] = res.theta;
  j["achieved_median_osr"] = res.achieved_median_osr;
  j["target_osr"] = res.target_osr;
  j["iterations"] = res.iterations;
  j["converged"] = res.converged;
  if (!out.empty())
    std::ofstream(out + "/calibration.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_bench(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  BenchDims dims;
  dims.num_sources = cfg.count("bench.sources");
  dims.grid_cells = cfg.count("bench.grid");
  dims.depth = cfg.count("bench.depth");
  dims.num_heads = cfg.count("bench.heads");
  dims.num_blocks = cfg.count("bench.blocks");
  std::size_t repeats = cfg.count("repeats");
  std::size_t budget = cfg.count("budget");

  std::vector<std::size_t> grid;
  for (std::size_t t = cfg.count("tmin"); t <= cfg.count("tmax"); t *= 2)
    grid.push_back(t);
  if (grid.empty()) throw ConfigError("tmin must not exceed tmax");

  std::vector<AttentionVariant> variants;
  std::stringstream vs(cfg.str("variants"));
  std::string name;
  while (std::getline(vs, name, ','))
    if (!name.empty()) variants.push_back(variant_from_name(name));
  if (variants.empty()) throw ConfigError("no benchmark variants given");

  std::vector<BenchPoint> points;
  for (auto v : variants) {
    auto part = measure(v, grid, dims, repeats, budget);
    points.insert(points.end(), part.begin(), part.end());
    std::cout << variant_name(v) << ": max completed T "
              << max_completed_t(part) << "\n";
  }
  write_bench_csv(out + "/bench.csv", points);
  write_bench_json(out + "/bench.json", points, dims, repeats, budget);
  return 0;
}

GradCheckResult gradcheck_attention(AttentionVariant variant,
                                    std::uint64_t seed) {
  AttentionConfig cfg;
  cfg.num_heads = 2;
  cfg.depth = 8;
  cfg.num_blocks = 1;
  cfg.variant = variant;
  ParamStore ps;
  std::mt19937_64 rng(seed);
  AvEncoder enc(ps, "enc", cfg, rng);
  Tensor za = truncated_normal({Axis::Src, Axis::Time, Axis::Depth},
                               {2, 3, 8}, 0.5, rng);
  Tensor zv = truncated_normal({Axis::Space, Axis::Time, Axis::Depth},
                               {4, 3, 8}, 0.5, rng);
  auto fn = [&](const std::vector<Var>&) {
    std::mt19937_64 r(0);
    return sum_all(enc(Var(za.clone(), false), Var(zv.clone(), false), false,
                       r)
                       .z);
  };
  return grad_check(fn, ps.vars(), ps.names());
}

GradCheckResult gradcheck_separator(std::uint64_t seed) {
  SeparatorConfig cfg;
  cfg.num_sources = 2;
  cfg.window = 8;
  cfg.hop = 4;
  cfg.latent = 4;
  ParamStore ps;
  std::mt19937_64 rng(seed);
  Separator sep(ps, "sep", cfg, rng);
  Tensor x = truncated_normal({Axis::Sample}, {48}, 0.3, rng);
  auto fn = [&](const std::vector<Var>&) {
    return sum_all(square(sep(Var(x.clone(), false))));
  };
  return grad_check(fn, ps.vars(), ps.names());
}

GradCheckResult gradcheck_embedders(std::uint64_t seed) {
  EmbeddingConfig cfg;
  cfg.depth = 3;
  cfg.grid_side = 2;
  cfg.mel_bins = 4;
  cfg.stft_window = 8;
  cfg.stft_hop = 4;
  cfg.conv_channels = 2;
  cfg.sample_rate = 100.0;
  cfg.fps = 10.0;
  ParamStore ps;
  std::mt19937_64 rng(seed);
  AudioEmbedder ae(ps, "a", cfg, rng);
  VideoEmbedder ve(ps, "v", cfg, 8, rng);
  Tensor s = truncated_normal({Axis::Src, Axis::Sample}, {2, 40}, 0.3, rng);
  Tensor f = truncated_normal({Axis::Time, Axis::Row, Axis::Col}, {2, 8, 8},
                              0.3, rng);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = std::abs(f[i]);
  auto fn = [&](const std::vector<Var>&) {
    Var za = ae(Var(s.clone(), false), 2);
    Var zv = ve(Var(f.clone(), false));
    return add(sum_all(square(za)), sum_all(square(zv)));
  };
  return grad_check(fn, ps.vars(), ps.names());
}

GradCheckResult gradcheck_classifier(std::uint64_t seed) {
  ParamStore ps;
  std::mt19937_64 rng(seed);
  OnScreenHead head(ps, "head", 6, rng);
  Tensor z = truncated_normal({Axis::Src, Axis::Depth}, {3, 6}, 0.5, rng);
  std::vector<int> labels = {1, 0, 1};
  auto fn = [&](const std::vector<Var>&) {
    auto [logits, probs] = head(Var(z.clone(), false));
    return ce_loss(labels, probs);
  };
  return grad_check(fn, ps.vars(), ps.names());
}

GradCheckResult gradcheck_losses(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Tensor r1 = truncated_normal({Axis::Sample}, {32}, 0.3, rng);
  Tensor r2 = truncated_normal({Axis::Sample}, {32}, 0.3, rng);
  Tensor est0 = truncated_normal({Axis::Src, Axis::Sample}, {2, 32}, 0.3, rng);
  Var est(est0.clone(), true);
  MixAssignment a = mixit_loss(r1, r2, est.value());
  auto fn = [&](const std::vector<Var>&) {
    return mixit_training_loss(r1, r2, est, a);
  };
  return grad_check(fn, {est}, {"est"});
}

GradCheckResult gradcheck_model(std::uint64_t seed) {
  ModelConfig mc;
  mc.separator.num_sources = 2;
  mc.separator.window = 16;
  mc.separator.hop = 8;
  mc.separator.latent = 8;
  mc.embedding.depth = 8;
  mc.embedding.grid_side = 2;
  mc.embedding.mel_bins = 6;
  mc.embedding.stft_window = 32;
  mc.embedding.stft_hop = 16;
  mc.embedding.conv_channels = 2;
  mc.embedding.sample_rate = 400.0;
  mc.embedding.fps = 8.0;
  mc.attention.num_heads = 2;
  mc.attention.depth = 8;
  mc.attention.num_blocks = 1;
  mc.px_side = 8;

  ParamStore ps;
  std::mt19937_64 rng(seed);
  AvModel model(ps, mc, rng);

  SceneConfig sc;
  sc.num_sources = 1;
  sc.on_screen_fraction = 1.0;
  sc.clip_seconds = 0.5;
  sc.sample_rate = 400.0;
  sc.fps = 8.0;
  sc.px_side = 8;
  MoMExample ex = make_non_mom(synth_scene(sc, 101), synth_scene(sc, 102));
  Tensor r1 = detail::wave_tensor(ex.r1);
  Tensor r2 = detail::wave_tensor(ex.r2);
  std::mt19937_64 fr(0);
  auto probe = model(wave_to_var(ex.mixture), ex.clip, false, fr);
  MixAssignment assign = mixit_loss(r1, r2, probe.sources.value());
  std::vector<int> labels(assign.pseudo_labels);
  if (labels == std::vector<int>(labels.size(), 0)) labels[0] = 1;
  auto fn = [&](const std::vector<Var>&) {
    std::mt19937_64 r(0);
    auto fwd = model(wave_to_var(ex.mixture), ex.clip, false, r);
    return add(mixit_training_loss(r1, r2, fwd.sources, assign),
               scale(ce_loss(labels, fwd.probs), 0.5));
  };

  // One representative leaf per stage; the full parameter set would cost
  // minutes of finite differences for no extra structural coverage.
  std::vector<std::string> names;
  for (const std::string& prefix :
       {"sep.", "aemb.", "vemb.", "enc.", "head."}) {
    std::string best;
    for (const auto& n : ps.names()) {
      if (n.rfind(prefix, 0) != 0) continue;
      if (n.find(".vc.") != std::string::npos) continue;
      if (best.empty() ||
          ps.get(n).value().size() < ps.get(best).value().size())
        best = n;
    }
    names.push_back(best);
  }
  names.push_back("head.fz.w");
  std::vector<Var> leaves;
  for (const auto& n : names) leaves.push_back(ps.get(n));
  return grad_check(fn, leaves, names);
}

int cmd_gradcheck(const FlatConfig& cfg) {
  std::string out = optional_out(cfg);
  std::string module = cfg.str("module");
  std::uint64_t seed = cfg.uint("seed");
  GradCheckResult res;
  if (module == "attention") {
    res = gradcheck_attention(variant_from_name(cfg.str("variant")), seed);
  } else if (module == "separator") {
    res = gradcheck_separator(seed);
  } else if (module == "embedders") {
    res = gradcheck_embedders(seed);
  } else if (module == "classifier") {
    res = gradcheck_classifier(seed);
  } else if (module == "losses") {
    res = gradcheck_losses(seed);
  } else if (module == "model") {
    res = gradcheck_model(seed);
  } else {
    throw ConfigError("unknown gradcheck module: " + module);
  }

  nlohmann::json j;
  j["module"] = module;
  if (module == "attention") j["variant"] = cfg.str("variant");
  j["max_rel_err"] = res.max_rel_err;
  j["worst_leaf"] = res.worst_leaf;
  j["worst_index"] = res.worst_index;
  j["analytic"] = res.analytic;
  j["numeric"] = res.numeric;
  j["pass"] = res.max_rel_err < 1e-4;
  if (!out.empty())
    std::ofstream(out + "/gradcheck.json") << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\n";
  if (res.max_rel_err >= 1e-4) {
    std::cerr << "gradient check failed: max relative error "
              << res.max_rel_err << " at " << res.worst_leaf << "\n";
    return 2;
  }
  return 0;
}

int cmd_export_attn(const FlatConfig& cfg) {
  std::string out = prepare_out(cfg);
  SceneConfig scene = scene_from(cfg);
  ModelConfig mcfg =
      model_from(cfg, scene.sample_rate, scene.fps, scene.px_side);

  ParamStore ps;
  std::mt19937_64 rng(cfg.uint("seed"));
  AvModel model(ps, mcfg, rng);
  if (!cfg.str("ckpt").empty()) load_checkpoint(cfg.str("ckpt"), ps);

  Scene primary = synth_scene(scene, cfg.uint("seed") + 1);
  Scene background = synth_scene(scene, cfg.uint("seed") + 2);
  MoMExample ex = make_non_mom(primary, background);
  write_example_dir(out + "/example", ex);

  NoGradGuard ng;
  std::mt19937_64 fr(0);
  auto fwd = model(wave_to_var(ex.mixture), ex.clip, false, fr);

  nlohmann::json manifest;
  manifest["blocks"] = fwd.maps.size();
  for (std::size_t m = 0; m < fwd.probs.value().size(); ++m)
    manifest["probs"].push_back(fwd.probs.value()[m]);
  for (std::size_t l = 0; l < fwd.maps.size(); ++l) {
    std::string dir = out + "/block_" + std::to_string(l);
    auto files = export_attention_maps(fwd.maps[l], fwd.probs.value(), dir);
    for (const auto& f : files)
      manifest["files"].push_back(fs::path(f).lexically_relative(out));
  }
  std::ofstream(out + "/manifest.json") << manifest.dump(2) << "\n";
  std::cout << "exported " << fwd.maps.size() << " attention blocks to "
            << out << "\n";
  return 0;
}

struct Command {
  std::string name;
  std::map<std::string, std::string> defaults;
  int (*run)(const FlatConfig&);
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"audio-visual separation workbench"};
  app.require_subcommand(1);

  const std::vector<Command> commands = {
      {"gen-data",
       merge({kSceneDefaults,
              {{"count", "4"}, {"mode", "unsupervised"}, {"seed", "1"},
               {"out", ""}}}),
       &cmd_gen_data},
      {"pretrain-sep",
       merge({kSceneDefaults, kSeparatorDefaults, kTrainDefaults,
              {{"seed", "1"}, {"out", ""}}}),
       &cmd_pretrain_sep},
      {"train",
       merge({kSceneDefaults, kSeparatorDefaults, kModelDefaults,
              kTrainDefaults,
              {{"seed", "1"}, {"out", ""}, {"init_sep", ""}}}),
       &cmd_train},
      {"eval",
       merge({kSeparatorDefaults, kModelDefaults,
              {{"seed", "1"}, {"out", ""}, {"data", ""}, {"ckpt", ""},
               {"theta", "0"}, {"train.tau", "1e-3"}}}),
       &cmd_eval},
      {"calibrate",
       {{"records", ""}, {"target_osr", "6"}, {"theta_lo", "-30"},
        {"theta_hi", "30"}, {"tol", "0.01"}, {"seed", "1"}, {"out", ""}},
       &cmd_calibrate},
      {"bench",
       {{"variants", "joint_sa,sep_sa,joint_cma,sep_cma"}, {"tmin", "32"},
        {"tmax", "256"}, {"budget", "0"}, {"repeats", "5"},
        {"bench.sources", "4"}, {"bench.grid", "64"}, {"bench.depth", "128"},
        {"bench.heads", "4"}, {"bench.blocks", "2"}, {"seed", "1"},
        {"out", ""}},
       &cmd_bench},
      {"gradcheck",
       {{"module", "model"}, {"variant", "sep_cma"}, {"seed", "1"},
        {"out", ""}},
       &cmd_gradcheck},
      {"export-attn",
       merge({kSceneDefaults, kSeparatorDefaults, kModelDefaults,
              {{"seed", "1"}, {"out", ""}, {"ckpt", ""}}}),
       &cmd_export_attn},
  };

  struct Parsed {
    std::string config_path;
    std::vector<std::pair<std::string, std::string>> overrides;
  };
  std::map<std::string, Parsed> parsed;

  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name);
    Parsed& p = parsed[cmd.name];
    sub->add_option("--config", p.config_path,
                    "flat key=value settings file");
    // Every config key doubles as a long flag; dots become dashes.
    for (const auto& [key, value] : cmd.defaults) {
      std::string flag = "--" + key;
      for (char& c : flag)
        if (c == '.' || c == '_') c = '-';
      sub->add_option_function<std::string>(
          flag,
          [&p, k = key](const std::string& v) { p.overrides.push_back({k, v}); },
          "overrides " + key + " (default " +
              (value.empty() ? "unset" : value) + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  for (const auto& cmd : commands) {
    if (!app.got_subcommand(cmd.name)) continue;
    const Parsed& p = parsed.at(cmd.name);
    try {
      FlatConfig cfg(cmd.defaults);
      if (!p.config_path.empty()) cfg.load_file(p.config_path);
      for (const auto& [k, v] : p.overrides) cfg.set(k, v);
      return cmd.run(cfg);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << "\n";
      return 1;
    } catch (const std::exception& e) {
      std::cerr << "failure: " << e.what() << "\n";
      return 2;
    }
  }
  return 1;
}
