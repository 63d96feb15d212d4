#pragma once

// relocnet command line: evaluate, viewpoint, pairs, synth-scene.
//
// Every command validates its whole configuration before touching the output
// directory. Errors are reported as one line on stderr with a nonzero exit.

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "relocnet/relocnet.hpp"

namespace relocnet::cli {

struct RunConfig {
  std::string command;
  std::filesystem::path root;
  std::vector<std::string> scenes;
  std::string retrieval = "oracle";
  std::filesystem::path features;
  std::filesystem::path ids;
  std::string relpose = "synth";
  std::filesystem::path predictions;
  NoiseConfig noise;
  FusionConfig fusion;
  double beta = 1.0;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::filesystem::path out;

  // viewpoint
  ViewpointSetSpec viewpoint;
  // pairs
  PairThresholds pair_thresholds;
  // synth-scene
  std::size_t n_train = 400;
  std::size_t n_test = 100;
  std::size_t features_dim = 0;
  double features_bandwidth_m = 1.0;
};

/// Throws InvalidConfig for inconsistent settings.
inline void validate(const RunConfig& c) {
  auto fail = [](const std::string& msg) { throw Error(ErrorCode::InvalidConfig, msg); };
  if (c.out.empty()) {
    fail("--out is required");
  }
  const bool needs_data = c.command == "evaluate" || c.command == "viewpoint" || c.command == "pairs";
  if (needs_data && c.root.empty()) {
    fail("--root is required");
  }
  if (c.command == "evaluate" || c.command == "viewpoint") {
    if (c.relpose == "predictions" && c.predictions.empty()) {
      fail("--relpose predictions requires --predictions");
    }
    if (c.relpose == "synth" && !c.predictions.empty()) {
      fail("--predictions given but --relpose is synth");
    }
    if (c.noise.sigma_rot_deg < 0.0 || c.noise.sigma_dir_deg < 0.0) {
      fail("noise sigmas must be non-negative");
    }
    if (!(c.noise.outlier_prob >= 0.0 && c.noise.outlier_prob <= 1.0)) {
      fail("--outlier-prob must be in [0, 1]");
    }
    if (!(c.beta >= 0.0)) {
      fail("--beta must be non-negative");
    }
    if (c.jobs < 1) {
      fail("--jobs must be >= 1");
    }
    c.fusion.validate();
  }
  if (c.command == "evaluate" && c.retrieval == "features" && (c.features.empty() || c.ids.empty())) {
    fail("--retrieval features requires --features and --ids");
  }
  if (c.command == "viewpoint" && c.retrieval == "features") {
    fail("the viewpoint experiment always ranks by ground-truth pose; drop --retrieval features");
  }
  if (c.command == "viewpoint" &&
      (c.viewpoint.set_size < 2 || c.viewpoint.count == 0 || c.viewpoint.interval < c.viewpoint.set_size)) {
    fail("viewpoint sets need set-size >= 2, count >= 1 and interval >= set-size");
  }
  if (c.command == "pairs" && !(c.pair_thresholds.max_dist_m >= 0.0 && c.pair_thresholds.max_angle_deg >= 0.0)) {
    fail("pair thresholds must be non-negative");
  }
  if (c.command == "synth-scene" && (c.n_train < 2 || c.features_bandwidth_m <= 0.0)) {
    fail("--n-train must be >= 2 and --features-bandwidth positive");
  }
}

inline void configure_logging() {
  auto logger = spdlog::get("relocnet");
  if (!logger) {
    logger = spdlog::stderr_color_mt("relocnet");
  }
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::warn);
  if (const char* env = std::getenv("RPF_LOG")) {
    spdlog::set_level(spdlog::level::from_str(env));
  }
}

namespace detail {

inline std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write " + p.string());
  }
  return out;
}

inline std::vector<const ImageRecord*> test_queries(const SceneDatabase& db) {
  auto q = db.select(Split::Test);
  if (q.empty()) {
    throw Error(ErrorCode::MissingSplit, "no test images to localize");
  }
  return q;
}

inline RelposeSource relpose_source(const RunConfig& c, PredictionSet& storage) {
  if (c.relpose == "predictions") {
    storage = load_predictions(c.predictions);
    return RelposeSource::from_predictions(storage);
  }
  NoiseConfig noise = c.noise;
  noise.seed = c.seed;
  return RelposeSource::synthetic(noise);
}

}  // namespace detail

inline int cmd_evaluate(const RunConfig& c) {
  const SceneDatabase db = load_dataset(c.root, c.scenes);
  FeatureStore store;
  RetrievalSource retrieval = RetrievalSource::oracle(c.beta);
  if (c.retrieval == "features") {
    store = load_features(c.features, c.ids);
    retrieval = RetrievalSource::from_features(store);
  }
  PredictionSet preds;
  const RelposeSource relpose = detail::relpose_source(c, preds);
  spdlog::info("evaluating {} queries over {} images", db.select(Split::Test).size(), db.size());

  const auto reports = run_pipeline(db, detail::test_queries(db), retrieval, relpose, c.fusion, {c.jobs});
  for (const auto& r : reports) {
    if (r.n_failures > 0) {
      spdlog::warn("scene {}: {} of {} queries failed and are excluded from medians", r.scene, r.n_failures,
                   r.n_queries);
    }
  }
  std::filesystem::create_directories(c.out);
  detail::open_out(c.out / "report.json") << reports_to_json(reports).dump(2) << '\n';
  auto csv = detail::open_out(c.out / "summary.csv");
  write_summary_csv(csv, reports);
  return 0;
}

inline int cmd_viewpoint(const RunConfig& c) {
  const SceneDatabase db = load_dataset(c.root, c.scenes);
  PredictionSet preds;
  const RelposeSource relpose = detail::relpose_source(c, preds);
  const auto results =
      run_viewpoint_experiment(db, detail::test_queries(db), relpose, c.fusion, c.viewpoint, c.beta, {c.jobs});
  for (const auto& s : results) {
    if (s.skipped) {
      spdlog::warn("scene {} skipped: {}", s.scene, s.reason);
    }
  }
  std::filesystem::create_directories(c.out);
  detail::open_out(c.out / "viewpoint.json") << viewpoint_to_json(results).dump(2) << '\n';
  auto csv = detail::open_out(c.out / "viewpoint.csv");
  write_viewpoint_csv(csv, results);
  return 0;
}

inline int cmd_pairs(const RunConfig& c) {
  const SceneDatabase db = load_dataset(c.root, c.scenes);
  const auto pairs = generate_pairs(db, c.pair_thresholds, c.seed);
  std::filesystem::create_directories(c.out);
  auto out = detail::open_out(c.out / "pairs.jsonl");
  write_pairs(out, pairs);
  spdlog::info("wrote {} pairs", pairs.size());
  return 0;
}

inline int cmd_synth_scene(const RunConfig& c) {
  std::vector<std::string> names = c.scenes.empty() ? std::vector<std::string>{"synth"} : c.scenes;
  SceneDatabase all;
  for (const auto& name : names) {
    SynthSceneConfig sc;
    sc.name = name;
    sc.n_train = c.n_train;
    sc.n_test = c.n_test;
    sc.seed = c.seed;
    all.merge(generate_synthetic_scene(sc));
  }
  std::filesystem::create_directories(c.out);
  for (const auto& name : names) {
    write_scene(c.out, all, name);
  }
  if (c.features_dim > 0) {
    write_features(c.out / "features.rpf", c.out / "features.ids",
                   synthesize_features(all, c.features_dim, c.features_bandwidth_m, c.seed));
  }
  return 0;
}

/// Parses argv and runs one command. Returns the process exit status.
inline int run(int argc, const char* const* argv) {
  configure_logging();
  RunConfig c;
  CLI::App app{"Camera relocalization from retrieved neighbors and relative poses"};
  app.require_subcommand(1);

  auto add_data = [&](CLI::App* sub) {
    sub->add_option("--root", c.root, "Dataset root (one directory per scene)");
    sub->add_option("--scenes", c.scenes, "Scenes to load (default: all under --root)")->delimiter(',');
    sub->add_option("--out", c.out, "Output directory")->required();
    sub->add_option("--seed", c.seed, "Random seed");
  };
  auto add_run = [&](CLI::App* sub) {
    add_data(sub);
    sub->add_option("--retrieval", c.retrieval, "Neighbor retrieval")->check(CLI::IsMember({"features", "oracle"}));
    sub->add_option("--features", c.features, "Feature matrix file (RPF1)");
    sub->add_option("--ids", c.ids, "Feature ids file");
    sub->add_option("--relpose", c.relpose, "Relative pose source")->check(CLI::IsMember({"predictions", "synth"}));
    sub->add_option("--predictions", c.predictions, "Prediction JSONL file");
    sub->add_option("--sigma-rot-deg,--sigma-rot", c.noise.sigma_rot_deg, "Synthetic rotation noise (deg)");
    sub->add_option("--sigma-dir-deg,--sigma-dir", c.noise.sigma_dir_deg, "Synthetic direction noise (deg)");
    sub->add_option("--outlier-prob", c.noise.outlier_prob, "Synthetic outlier probability");
    sub->add_option("--n", c.fusion.n_neighbors, "Neighbors per query");
    sub->add_option("--thresh-deg", c.fusion.angle_thresh_deg, "Inlier angle threshold (deg)");
    sub->add_option("--beta", c.beta, "Rotation weight of the pose metric");
    sub->add_option("--jobs", c.jobs, "Worker threads");
  };

  auto* evaluate = app.add_subcommand("evaluate", "Localize every test image and report median errors");
  add_run(evaluate);
  auto* viewpoint = app.add_subcommand("viewpoint", "Localize with ground-truth neighbor sets at fixed rank offsets");
  add_run(viewpoint);
  viewpoint->add_option("--set-size", c.viewpoint.set_size, "Images per set");
  viewpoint->add_option("--interval", c.viewpoint.interval, "Rank interval between sets");
  viewpoint->add_option("--count", c.viewpoint.count, "Number of sets");
  auto* pairs = app.add_subcommand("pairs", "Generate one training pair per train image");
  add_data(pairs);
  pairs->add_option("--max-dist-m", c.pair_thresholds.max_dist_m, "Max center distance for a partner");
  pairs->add_option("--max-angle-deg", c.pair_thresholds.max_angle_deg, "Max rotation angle for a partner");
  auto* synth = app.add_subcommand("synth-scene", "Write a seeded synthetic dataset in 7-Scenes layout");
  synth->add_option("--scenes", c.scenes, "Scene names")->delimiter(',');
  synth->add_option("--out", c.out, "Dataset root to create")->required();
  synth->add_option("--seed", c.seed, "Random seed");
  synth->add_option("--n-train", c.n_train, "Train images per scene");
  synth->add_option("--n-test", c.n_test, "Test images per scene");
  synth->add_option("--features-dim", c.features_dim, "Also write synthetic descriptors of this size");
  synth->add_option("--features-bandwidth", c.features_bandwidth_m, "Descriptor bump width (m)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  for (auto* sub : {evaluate, viewpoint, pairs, synth}) {
    if (sub->parsed()) {
      c.command = sub->get_name();
    }
  }

  try {
    validate(c);
    if (c.command == "evaluate") {
      return cmd_evaluate(c);
    }
    if (c.command == "viewpoint") {
      return cmd_viewpoint(c);
    }
    if (c.command == "pairs") {
      return cmd_pairs(c);
    }
    return cmd_synth_scene(c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace relocnet::cli
