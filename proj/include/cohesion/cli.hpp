#pragma once

// Command-line front end. Exit status: 0 success, 1 usage error,
// 2 data or convergence error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cohesion/dataset.hpp"
#include "cohesion/error.hpp"
#include "cohesion/experiment.hpp"
#include "cohesion/feature_store.hpp"
#include "cohesion/fusion.hpp"
#include "cohesion/metrics.hpp"
#include "cohesion/svr.hpp"
#include "cohesion/synth.hpp"

namespace cohesion::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline const std::vector<std::string> kModalityRoles{"face", "skeleton", "scene"};

struct RunConfig {
  std::uint64_t seed = 42;
  std::string out;
  std::map<std::string, std::string> features;     // role -> path
  std::map<std::string, std::string> predictions;  // role -> path
  std::string labels;
  std::string splits;
  std::string model;
  std::string kernel = "rbf";
  std::optional<double> gamma;
  double C = 1.0;
  double epsilon = 0.1;
  double tol = 1e-3;
  std::size_t max_iter = 1'000'000;
  std::size_t cache_rows = 512;
  double grid_step = 0.05;
  double balance_ratio = 0.3;
  int balance_level = 2;
  std::string variant = "train";
  std::string eval_split = "val";
  std::string strategy = "grid_search";
  std::string method = "fusion_grid";
  SynthConfig synth;
};

namespace detail {

inline std::ifstream open_input(const std::string& path, std::string_view what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + std::string(what) + " file '" + path + "'");
  return in;
}

inline std::filesystem::path output_dir(const std::string& out) {
  if (out.empty()) throw Error(ErrorCode::Io, "--out is required");
  std::filesystem::path dir(out);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create output directory '" + out + "': " + ec.message());
  return dir;
}

template <typename Writer>
void write_file(const std::filesystem::path& path, Writer&& writer) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::Io, "cannot write '" + path.string() + "'");
  writer(os);
  os.flush();
  if (!os) throw Error(ErrorCode::Io, "write failed for '" + path.string() + "'");
}

/// The file header decides between the built-in spec of `role` and a
/// `custom:<role>` spec of the declared dimension.
inline std::vector<FeatureRecord> load_features(const std::string& role, const std::string& path, ModalitySpec* spec_out) {
  std::string header;
  {
    auto in = open_input(path, role + " features");
    std::getline(in, header);
  }
  auto [modality, dim] = read_feature_header(header);
  ModalitySpec spec = ModalitySpec::from_identifier(role, 0);
  if (modality == "custom:" + role) {
    spec = ModalitySpec::custom(role, dim, role == "face");
  } else if (modality != role) {
    throw Error(ErrorCode::HeaderMismatch, "'" + path + "' holds " + modality + " features, expected " + role);
  }
  auto in = open_input(path, role + " features");
  auto records = parse_feature_file(in, spec);
  if (spec_out) *spec_out = spec;
  return records;
}

inline LabeledDataset load_dataset(const RunConfig& rc) {
  if (rc.labels.empty()) throw Error(ErrorCode::Io, "--labels is required");
  if (rc.splits.empty()) throw Error(ErrorCode::Io, "--splits is required");
  LabeledDataset ds;
  {
    auto in = open_input(rc.labels, "labels");
    ds.labels = parse_labels(in);
  }
  {
    auto in = open_input(rc.splits, "splits");
    ds.splits = parse_splits(in);
  }
  ds.validate();
  return ds;
}

inline std::vector<ModalityInput> load_modalities(const RunConfig& rc) {
  std::vector<ModalityInput> out;
  for (const auto& role : kModalityRoles) {
    auto it = rc.features.find(role);
    if (it == rc.features.end() || it->second.empty()) continue;
    ModalitySpec spec = ModalitySpec::face();
    auto records = load_features(role, it->second, &spec);
    out.push_back({role, per_image_vectors(records, spec)});
  }
  if (out.empty()) throw Error(ErrorCode::NoFeaturesForModality, "no --features-<modality> given");
  return out;
}

inline DatasetVariant variant_of(const std::string& s) {
  auto v = parse_variant(s);
  if (!v) throw CLI::ValidationError("--variant", "unknown variant " + s);
  return *v;
}

inline Split split_of(const std::string& s) {
  auto v = parse_split(s);
  if (!v || *v == Split::train) throw CLI::ValidationError("--eval-split", "expected val or test, got " + s);
  return *v;
}

inline ExperimentConfig experiment_config(const RunConfig& rc) {
  ExperimentConfig cfg;
  cfg.seed = rc.seed;
  cfg.kernel.kind = rc.kernel == "linear" ? KernelKind::linear : KernelKind::rbf;
  cfg.kernel.gamma = rc.gamma;
  cfg.svr.C = rc.C;
  cfg.svr.epsilon = rc.epsilon;
  cfg.svr.tol = rc.tol;
  cfg.svr.max_iter = rc.max_iter;
  cfg.svr.cache_rows = rc.cache_rows;
  cfg.grid_step = rc.grid_step;
  cfg.balance_ratio = rc.balance_ratio;
  cfg.balance_level = rc.balance_level;
  return cfg;
}

inline std::vector<std::string> comma_list(const std::string& s) {
  std::vector<std::string> out;
  for (auto tok : cohesion::detail::split_fields(s, ',')) out.emplace_back(tok);
  return out;
}

// ---------------------------------------------------------------------------

inline void run_synth(const RunConfig& rc, std::ostream& err) {
  SynthConfig cfg = rc.synth;
  cfg.seed = rc.seed;
  const auto dir = output_dir(rc.out);
  const SynthDataset data = synth_generate(cfg);
  for (std::size_t m = 0; m < data.modalities.size(); ++m) {
    const auto& mod = data.modalities[m];
    write_file(dir / (kModalityRoles[m] + ".features"),
               [&](std::ostream& os) { write_feature_file(os, mod.records, mod.spec); });
  }
  write_file(dir / "labels.tsv", [&](std::ostream& os) { write_labels(os, data.dataset.labels); });
  write_file(dir / "splits.tsv", [&](std::ostream& os) { write_splits(os, data.dataset.splits); });
  err << "synth: wrote " << data.dataset.splits.size() << " images to " << dir.string() << '\n';
}

inline void run_balance(const RunConfig& rc, std::ostream& err) {
  const auto ds = load_dataset(rc);
  const auto dir = output_dir(rc.out);
  const auto balanced = balance_downsample(ds, rc.balance_level, rc.balance_ratio, rc.seed);
  write_file(dir / "labels.tsv", [&](std::ostream& os) { write_labels(os, balanced.labels); });
  write_file(dir / "splits.tsv", [&](std::ostream& os) { write_splits(os, balanced.splits); });
  err << "balance: removed " << ds.splits.size() - balanced.splits.size() << " level-" << rc.balance_level
      << " training images\n";
}

inline void run_train(const RunConfig& rc, std::ostream& err) {
  auto cfg = experiment_config(rc);
  cfg.dataset = load_dataset(rc);
  cfg.modalities = load_modalities(rc);
  const auto dir = output_dir(rc.out);
  const auto variant = variant_of(rc.variant);
  const VariantRun run = train_variant(cfg, variant);
  for (const auto& [name, model] : run.models) {
    write_file(dir / (name + ".svr"), [&](std::ostream& os) { save_model(os, model); });
    err << "train: " << name << " nsv=" << model.support_vectors.size() << '\n';
  }
}

inline void run_predict(const RunConfig& rc, std::ostream& err) {
  if (rc.model.empty()) throw Error(ErrorCode::Io, "--model is required");
  SvrModel model;
  {
    auto in = open_input(rc.model, "model");
    model = load_model(in);
  }
  std::vector<std::string> roles;
  for (const auto& [role, path] : rc.features) {
    if (!path.empty()) roles.push_back(role);
  }
  if (roles.size() != 1) throw CLI::ValidationError("predict", "exactly one --features-<modality> is required");
  ModalitySpec spec = ModalitySpec::face();
  const auto records = load_features(roles[0], rc.features.at(roles[0]), &spec);
  PredictionFile pf;
  pf.scale = PredictionScale::normalized;
  for (const auto& [id, v] : per_image_vectors(records, spec)) pf.values.emplace(id, predict_svr(model, v));
  const auto dir = output_dir(rc.out);
  write_file(dir / (roles[0] + ".pred"), [&](std::ostream& os) { write_predictions(os, pf); });
  err << "predict: " << pf.values.size() << " " << roles[0] << " predictions\n";
}

inline void run_fuse(const RunConfig& rc, std::ostream& err) {
  const auto ds = load_dataset(rc);
  std::vector<std::string> names;
  std::vector<PredictionMap> partial;
  for (const auto& role : kModalityRoles) {
    auto it = rc.predictions.find(role);
    if (it == rc.predictions.end() || it->second.empty()) continue;
    auto in = open_input(it->second, role + " predictions");
    auto pf = parse_predictions(in);
    if (pf.scale != PredictionScale::normalized) {
      throw Error(ErrorCode::HeaderMismatch, "'" + it->second + "' must hold normalized predictions");
    }
    names.push_back(role);
    partial.push_back(std::move(pf.values));
  }
  if (names.empty()) throw Error(ErrorCode::NoFeaturesForModality, "no --predictions-<modality> given");
  const auto preds = impute_predictions(names, partial, ds.all_ids(), ds.labeled_ids_in(Split::train));

  FusionWeights w;
  if (rc.strategy == "average") {
    w = uniform_weights(names);
  } else {
    w = grid_search_weights(preds, select_labels(ds.labels, ds.labeled_ids_in(Split::val)), rc.grid_step);
  }
  PredictionFile fused;
  fused.scale = PredictionScale::raw;
  for (const auto& [id, v] : fuse_weighted(preds, w)) fused.values.emplace(id, denormalize_prediction(v));

  const auto dir = output_dir(rc.out);
  write_file(dir / "weights.tsv", [&](std::ostream& os) { write_weights(os, w); });
  write_file(dir / "fused.pred", [&](std::ostream& os) { write_predictions(os, fused); });
  err << "fuse: " << to_string(w.strategy) << " over " << names.size() << " modalities, "
      << preds.total_imputed() << " imputed slots\n";
}

inline void run_evaluate(const RunConfig& rc, std::ostream& out) {
  const auto split = split_of(rc.eval_split);
  const auto variant = variant_of(rc.variant);
  const auto ds = load_dataset(rc);
  PredictionFile pf;
  {
    auto it = rc.predictions.find("fused");
    if (it == rc.predictions.end() || it->second.empty()) throw Error(ErrorCode::Io, "--predictions is required");
    auto in = open_input(it->second, "predictions");
    pf = parse_predictions(in);
  }
  PredictionMap raw;
  for (const auto& [id, v] : pf.values) {
    raw.emplace(id, pf.scale == PredictionScale::raw ? v : denormalize_prediction(v));
  }
  const auto truth = select_labels(ds.labels, ds.labeled_ids_in(split));
  if (truth.empty()) {
    throw Error(ErrorCode::EmptyTruth, "split " + rc.eval_split + " has no labels in '" + rc.labels + "'");
  }
  EvaluationReport report;
  report.seed = rc.seed;
  report.rows.push_back(score_row(raw, truth, rc.method, variant, split));
  if (rc.out.empty()) {
    render_report(out, report);
  } else {
    const auto dir = output_dir(rc.out);
    write_file(dir / "report.tsv", [&](std::ostream& os) { render_report(os, report); });
  }
}

inline void run_pipeline(const RunConfig& rc, std::ostream& out, std::ostream& err) {
  auto cfg = experiment_config(rc);
  const auto variants = rc.variant == "all" ? std::vector<std::string>{"train", "balanced_train", "train_plus_val",
                                                                       "balanced_train_plus_val"}
                                            : comma_list(rc.variant);
  for (const auto& v : variants) cfg.variants.push_back(variant_of(v));
  for (const auto& s : comma_list(rc.eval_split)) cfg.eval_splits.push_back(split_of(s));
  cfg.dataset = load_dataset(rc);
  cfg.modalities = load_modalities(rc);
  cfg.methods = cfg.all_methods();

  const auto dir = output_dir(rc.out);
  std::vector<VariantRun> runs;
  const auto report = run_experiment_matrix(cfg, &runs);
  for (const auto& run : runs) {
    write_file(dir / ("weights_" + std::string(to_string(run.variant)) + ".tsv"),
               [&](std::ostream& os) { write_weights(os, run.grid_weights); });
    err << "pipeline: " << to_string(run.variant) << " trained on " << run.fit_ids.size()
        << " images, weights chosen on " << run.select_ids.size() << '\n';
  }
  write_file(dir / "report.tsv", [&](std::ostream& os) { render_report(os, report); });
  render_report(out, report);
}

}  // namespace detail

/// Parses `args` (without the program name) and runs the chosen subcommand.
inline int dispatch(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  RunConfig rc;
  CLI::App app{"Multi-modal group cohesion regression: per-modality SVR, late fusion, MSE evaluation", "cohesion"};
  app.require_subcommand(1, 1);

  auto add_seed = [&rc](CLI::App* c) { c->add_option("--seed", rc.seed, "random seed")->capture_default_str(); };
  auto add_out = [&rc](CLI::App* c) { c->add_option("--out", rc.out, "output directory"); };
  auto add_data = [&rc](CLI::App* c) {
    c->add_option("--labels", rc.labels, "labels file (#cohesion-labels v1)");
    c->add_option("--splits", rc.splits, "splits file (#cohesion-splits v1)");
  };
  auto add_features = [&rc](CLI::App* c) {
    for (const auto& role : kModalityRoles) {
      c->add_option("--features-" + role, rc.features[role], role + " feature file");
    }
  };
  auto add_svr = [&rc](CLI::App* c) {
    c->add_option("--kernel", rc.kernel, "linear or rbf")->check(CLI::IsMember({"linear", "rbf"}))->capture_default_str();
    c->add_option("--gamma", rc.gamma, "rbf gamma (default 1/dim)")->check(CLI::PositiveNumber);
    c->add_option("--C", rc.C, "box constraint")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--epsilon", rc.epsilon, "tube half-width")->check(CLI::NonNegativeNumber)->capture_default_str();
    c->add_option("--tol", rc.tol, "KKT violation tolerance")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--max-iter", rc.max_iter, "SMO update limit")->check(CLI::PositiveNumber)->capture_default_str();
    c->add_option("--cache-rows", rc.cache_rows, "kernel row cache size")->capture_default_str();
  };
  auto add_balance = [&rc](CLI::App* c) {
    c->add_option("--balance-ratio", rc.balance_ratio, "fraction of the level to remove")
        ->check(CLI::Range(0.0, 1.0))
        ->capture_default_str();
    c->add_option("--balance-level", rc.balance_level, "level to downsample")->check(CLI::Range(0, 3))->capture_default_str();
  };
  auto add_variant = [&rc](CLI::App* c) {
    c->add_option("--variant", rc.variant, "train|balanced_train|train_plus_val|balanced_train_plus_val")
        ->capture_default_str();
  };
  auto add_grid = [&rc](CLI::App* c) {
    c->add_option("--grid-step", rc.grid_step, "fusion weight lattice step")->check(CLI::PositiveNumber)->capture_default_str();
  };

  auto* synth = app.add_subcommand("synth", "generate a seeded synthetic dataset");
  add_seed(synth);
  add_out(synth);
  synth->add_option("--n-train", rc.synth.n_train)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--n-val", rc.synth.n_val)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--n-test", rc.synth.n_test)->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--dim-face", rc.synth.dims[0])->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--dim-skeleton", rc.synth.dims[1])->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--dim-scene", rc.synth.dims[2])->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--sigma-face", rc.synth.noise_sigma[0])->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--sigma-skeleton", rc.synth.noise_sigma[1])->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--sigma-scene", rc.synth.noise_sigma[2])->check(CLI::NonNegativeNumber)->capture_default_str();
  synth->add_option("--max-faces", rc.synth.max_faces)->capture_default_str();
  synth->add_option("--p-zero-faces", rc.synth.p_zero_faces)->check(CLI::Range(0.0, 1.0))->capture_default_str();

  auto* balance = app.add_subcommand("balance", "downsample one level of the training split");
  add_seed(balance);
  add_out(balance);
  add_data(balance);
  add_balance(balance);

  auto* train = app.add_subcommand("train", "train one SVR per modality");
  add_seed(train);
  add_out(train);
  add_data(train);
  add_features(train);
  add_svr(train);
  add_balance(train);
  add_variant(train);

  auto* predict = app.add_subcommand("predict", "run a trained model over a feature file");
  add_out(predict);
  add_features(predict);
  predict->add_option("--model", rc.model, "model file (#cohesion-svr v1)");

  auto* fuse = app.add_subcommand("fuse", "fuse per-modality predictions");
  add_out(fuse);
  add_data(fuse);
  add_grid(fuse);
  for (const auto& role : kModalityRoles) {
    fuse->add_option("--predictions-" + role, rc.predictions[role], role + " predictions (normalized)");
  }
  fuse->add_option("--strategy", rc.strategy, "average or grid_search")
      ->check(CLI::IsMember({"average", "grid_search"}))
      ->capture_default_str();

  auto* evaluate = app.add_subcommand("evaluate", "score a predictions file");
  add_seed(evaluate);
  add_out(evaluate);
  add_data(evaluate);
  add_variant(evaluate);
  evaluate->add_option("--predictions", rc.predictions["fused"], "predictions file");
  evaluate->add_option("--eval-split", rc.eval_split, "val or test")->capture_default_str();
  evaluate->add_option("--method", rc.method, "method name for the report row")->capture_default_str();

  auto* pipeline = app.add_subcommand("pipeline", "train, fuse and evaluate every method");
  add_seed(pipeline);
  add_out(pipeline);
  add_data(pipeline);
  add_features(pipeline);
  add_svr(pipeline);
  add_balance(pipeline);
  add_variant(pipeline);
  add_grid(pipeline);
  pipeline->add_option("--eval-split", rc.eval_split, "val, test, or a comma list")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  try {
    if (synth->parsed()) detail::run_synth(rc, err);
    else if (balance->parsed()) detail::run_balance(rc, err);
    else if (train->parsed()) detail::run_train(rc, err);
    else if (predict->parsed()) detail::run_predict(rc, err);
    else if (fuse->parsed()) detail::run_fuse(rc, err);
    else if (evaluate->parsed()) detail::run_evaluate(rc, out);
    else if (pipeline->parsed()) detail::run_pipeline(rc, out, err);
  } catch (const CLI::ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitOk;
}

inline int dispatch(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args, out, err);
}

}  // namespace cohesion::cli
