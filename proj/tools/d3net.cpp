// d3net command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 runtime or validation failure,
// 3 check failure.

#include "d3net/gradient_suite.hpp"
#include "d3net/rf_analysis.hpp"
#include "d3net/separation.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace d3net;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0, kUsage = 1, kRuntime = 2, kCheckFailed = 3;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckFailed : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::uint64_t default_seed() {
  if (const char* env = std::getenv("D3NET_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UsageError(std::string("D3NET_SEED is not an unsigned integer: ") + env);
    }
  }
  return 0;
}

void log_run(const std::string& command, const std::string& fingerprint, std::uint64_t seed) {
  std::cerr << "[d3net] " << command << " fingerprint " << fingerprint << " seed " << seed << '\n';
}

void write_text(const std::string& path, const std::string& text) {
  if (const fs::path parent = fs::path(path).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

NetworkConfig load_config(const std::string& name, const std::vector<std::string>& overrides) {
  NetworkConfig cfg;
  try {
    cfg = resolve_config(name);
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }
  for (const std::string& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("override '" + kv + "' is not key=value");
    try {
      cfg.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
  }
  cfg.validate();
  return cfg;
}

/// Stem names of a scene directory: every .wav except mixture.wav, sorted.
std::vector<std::string> discover_sources(const std::string& root) {
  if (!fs::is_directory(root)) throw UsageError("directory not found: " + root);
  std::vector<fs::path> scenes;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) scenes.push_back(e.path());
  }
  if (scenes.empty()) throw std::runtime_error("no scene_* directories under " + root);
  std::sort(scenes.begin(), scenes.end());
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(scenes.front())) {
    if (e.path().extension() == ".wav" && e.path().stem() != "mixture") names.insert(e.path().stem().string());
  }
  if (names.empty()) throw std::runtime_error("no stems in " + scenes.front().string());
  return {names.begin(), names.end()};
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct RfArgs {
  Index layers = 3;
  Index kernel = 3;
  std::string scheme = "multi";
  std::string out;
  bool probe = false;
  std::uint64_t seed = 0;
};

int cmd_rf(const RfArgs& a) {
  if (a.layers < 1) throw UsageError("--layers must be >= 1");
  if (a.kernel < 1 || a.kernel % 2 == 0) throw UsageError("--kernel must be odd");
  const rf::Scheme scheme = rf::parse_scheme(a.scheme);
  log_run("rf-analyze",
          fingerprint_text("rf:" + a.scheme + ":" + std::to_string(a.layers) + ":" + std::to_string(a.kernel)), a.seed);
  const rf::BlockReport report = rf::block_report(a.layers, a.kernel, scheme);
  std::cout << report.to_text();
  if (!a.out.empty()) write_text(a.out, report.to_csv());
  if (a.probe) {
    std::mt19937_64 rng(a.seed);
    D2BlockConfig cfg;
    cfg.growth_rate = 2;
    cfg.num_layers = a.layers;
    cfg.kernel = a.kernel;
    cfg.scheme = rf::block_scheme(scheme);
    D2Block block(cfg, {2}, rng);
    rf::linearize_for_probe(block);
    const Index reach = std::max(-report.union_coverage.span_min(), report.union_coverage.span_max());
    const rf::CoverageMap probed = rf::empirical_coverage(block, 2 * reach + 9);
    const bool same = probed == report.union_coverage;
    std::cout << "  autodiff probe: width " << probed.width() << ", blind " << probed.blind_spot_count() << ", "
              << (same ? "matches" : "DIFFERS FROM") << " the analytic union\n";
    if (!same) throw CheckFailed("probe coverage differs from the analytic union");
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config;
  std::vector<std::string> overrides;
  std::string data = "synth";
  std::string source = "0";
  std::string sources;
  Index epochs = 50;
  Index lr_switch = -1;
  double lr = 1e-3;
  double lr_after = 1e-4;
  Index batch_size = 6;
  Index patch_frames = 256;
  Index patches_per_scene = 1;
  Index scenes = 32;
  double scene_seconds = 6.0;
  std::uint64_t data_seed = 1;
  bool no_augment = false;
  std::uint64_t seed = 0;
  std::string out;
  std::string loss_csv;
};

int cmd_train(const TrainArgs& a) {
  const NetworkConfig cfg = load_config(a.config, a.overrides);
  log_run("train " + cfg.name, cfg.fingerprint(), a.seed);

  std::vector<SyntheticScene> scenes;
  if (a.data == "synth") {
    scenes = synth_dataset(a.data_seed, a.scenes, a.scene_seconds, cfg.sample_rate);
  } else {
    scenes = load_scenes(a.data, a.sources.empty() ? discover_sources(a.data) : split_list(a.sources));
  }
  const std::vector<std::string>& names = scenes.front().source_names;
  Index target = -1;
  for (std::size_t j = 0; j < names.size(); ++j) {
    if (names[j] == a.source) target = static_cast<Index>(j);
  }
  if (target < 0) {
    try {
      target = std::stoll(a.source);
    } catch (const std::exception&) {
      target = -1;
    }
  }
  if (target < 0 || target >= static_cast<Index>(names.size())) {
    std::string all;
    for (const auto& n : names) all += " " + n;
    throw UsageError("unknown source '" + a.source + "'; available:" + all);
  }

  TrainConfig tc;
  tc.epochs = a.epochs;
  // desk-scale runs shorter than the paper schedule anneal at 4/5 of the run
  tc.lr_switch_epoch = a.lr_switch >= 0 ? a.lr_switch : (a.epochs > 40 ? 40 : a.epochs * 4 / 5);
  tc.lr_initial = a.lr;
  tc.lr_after = a.lr_after;
  tc.batch_size = a.batch_size;
  tc.patch_frames = a.patch_frames;
  tc.patches_per_scene = a.patches_per_scene;
  tc.seed = a.seed;
  tc.augment = !a.no_augment;
  try {
    tc.validate();
  } catch (const std::exception& e) {
    throw UsageError(e.what());
  }

  const TrainingSet data = make_training_set(scenes, std::min(cfg.max_bin, StftConfig{}.bins()));
  Model model(cfg, a.seed);
  std::cerr << "[d3net] source " << names[target] << ", " << scenes.size() << " scenes, " << model.parameter_count()
            << " parameters\n";
  std::ostringstream csv;
  csv << "epoch,lr,loss\n" << std::setprecision(10);
  train(model, data, target, tc, [&](Index epoch, double loss, double lr) {
    csv << epoch << ',' << lr << ',' << loss << '\n';
    std::cerr << "  epoch " << epoch << " lr " << lr << " loss " << loss << '\n';
  });
  if (const fs::path parent = fs::path(a.out).parent_path(); !parent.empty()) fs::create_directories(parent);
  save_checkpoint(model, a.out, a.epochs);
  write_text(a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv, csv.str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct SeparateArgs {
  std::vector<std::string> ckpts;
  std::string input;
  std::string out;
  Index patch_frames = 256;
  Index hop_frames = 128;
  std::uint64_t seed = 0;
};

int cmd_separate(const SeparateArgs& a) {
  std::vector<Model> models;
  std::vector<std::string> names;
  for (const std::string& path : a.ckpts) {
    CheckpointInfo info;
    models.push_back(load_checkpoint(path, &info));
    names.push_back(fs::path(path).stem().string());
    log_run("separate " + names.back(), info.fingerprint, info.seed);
  }
  if (std::set<std::string>(names.begin(), names.end()).size() != names.size()) {
    throw UsageError("checkpoint file names must be distinct; they name the output stems");
  }
  const AudioClip mixture = read_wav(a.input);
  SeparateOptions opt;
  opt.patch_frames = a.patch_frames;
  opt.hop_frames = a.hop_frames;
  std::vector<Model*> ptrs;
  for (Model& m : models) ptrs.push_back(&m);
  const std::vector<AudioClip> stems = separate(ptrs, mixture, opt);
  fs::create_directories(a.out);
  for (std::size_t j = 0; j < stems.size(); ++j) {
    const std::string path = (fs::path(a.out) / (names[j] + ".wav")).string();
    write_wav(stems[j], path);
    std::cerr << "[d3net] wrote " << path << '\n';
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string est;
  std::string ref;
  std::string out;
  std::string sources;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& a) {
  const std::vector<std::string> sources = a.sources.empty() ? discover_sources(a.ref) : split_list(a.sources);
  log_run("eval", fingerprint_text("eval:" + fs::absolute(a.ref).string()), a.seed);
  std::vector<fs::path> scenes;
  for (const auto& e : fs::directory_iterator(a.ref)) {
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) scenes.push_back(e.path());
  }
  std::sort(scenes.begin(), scenes.end());
  std::vector<std::string> missing;
  for (const fs::path& s : scenes) {
    if (!fs::exists(s / "mixture.wav")) missing.push_back((s / "mixture.wav").string());
    for (const std::string& src : sources) {
      if (!fs::exists(s / (src + ".wav"))) missing.push_back((s / (src + ".wav")).string());
      const fs::path est = fs::path(a.est) / s.filename() / (src + ".wav");
      if (!fs::exists(est)) missing.push_back(est.string());
    }
  }
  if (!missing.empty()) {
    std::string msg = "missing stems:";
    for (const auto& m : missing) msg += "\n  " + m;
    throw std::runtime_error(msg);
  }

  std::ostringstream csv;
  csv << "scene,source,sdr,mixture_sdr\n" << std::fixed << std::setprecision(4);
  std::vector<std::vector<double>> est_scores(sources.size()), mix_scores(sources.size());
  for (const fs::path& s : scenes) {
    const AudioClip mixture = read_wav((s / "mixture.wav").string());
    for (std::size_t j = 0; j < sources.size(); ++j) {
      const AudioClip ref = read_wav((s / (sources[j] + ".wav")).string());
      const AudioClip est = read_wav((fs::path(a.est) / s.filename() / (sources[j] + ".wav")).string());
      const double e = sdr(est, ref), m = sdr(mixture, ref);
      est_scores[j].push_back(e);
      mix_scores[j].push_back(m);
      csv << s.filename().string() << ',' << sources[j] << ',' << e << ',' << m << '\n';
    }
  }
  for (std::size_t j = 0; j < sources.size(); ++j) {
    const double e = median(est_scores[j]), m = median(mix_scores[j]);
    csv << "median," << sources[j] << ',' << e << ',' << m << '\n';
    std::cout << sources[j] << ": median SDR " << std::fixed << std::setprecision(2) << e << " dB, mixture baseline "
              << m << " dB\n";
  }
  write_text(a.out, csv.str());
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradArgs {
  std::string config = "tiny";
  std::vector<std::string> overrides;
  double tol = 1e-6;
  Index frames = 4;
  Index bins = 8;
  Index max_coordinates = 40;
  bool skip_layers = false;
  std::uint64_t seed = 0;
};

int cmd_gradcheck(const GradArgs& a) {
  const NetworkConfig cfg = load_config(a.config, a.overrides);
  log_run("gradcheck " + cfg.name, cfg.fingerprint(), a.seed);
  std::vector<GradCheckRow> rows;
  if (!a.skip_layers) rows = layer_gradchecks(a.seed);
  NetworkCheckOptions opt;
  opt.frames = a.frames;
  opt.bins = a.bins;
  opt.max_coordinates = a.max_coordinates;
  for (GradCheckRow& r : network_gradchecks(cfg, a.seed, opt)) rows.push_back(std::move(r));
  Index failed = 0;
  double worst = 0.0;
  for (const GradCheckRow& r : rows) {
    const bool ok = r.result.max_relative_error < a.tol;
    failed += !ok;
    worst = std::max(worst, r.result.max_relative_error);
    std::cout << (ok ? "pass " : "FAIL ") << std::left << std::setw(48) << r.name << std::scientific
              << std::setprecision(3) << r.result.max_relative_error << "  checked " << r.result.checked
              << "  skipped " << r.result.skipped << '\n';
  }
  std::cout << rows.size() - failed << "/" << rows.size() << " checks below tolerance " << a.tol << ", worst "
            << worst << '\n';
  if (failed) throw CheckFailed(std::to_string(failed) + " gradient checks exceeded the tolerance");
  return kOk;
}

// ---------------------------------------------------------------------------

struct NormArgs {
  std::string ckpt;
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::uint64_t seed = 0;
};

int cmd_weight_norms(const NormArgs& a) {
  if (a.ckpt.empty() == a.config.empty()) throw UsageError("give exactly one of --ckpt or --config");
  std::optional<Model> model;
  if (!a.ckpt.empty()) {
    CheckpointInfo info;
    model.emplace(load_checkpoint(a.ckpt, &info));
    log_run("weight-norms", info.fingerprint, info.seed);
  } else {
    const NetworkConfig cfg = load_config(a.config, a.overrides);
    log_run("weight-norms " + cfg.name, cfg.fingerprint(), a.seed);
    model.emplace(cfg, a.seed);
  }
  const std::string csv = weight_norm_report(*model).to_csv();
  if (a.out.empty()) {
    std::cout << csv;
  } else {
    write_text(a.out, csv);
  }
  return kOk;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::string out;
  Index scenes = 8;
  double seconds = 6.0;
  std::uint64_t seed = 0;
};

int cmd_synth(const SynthArgs& a) {
  if (a.scenes < 1) throw UsageError("--scenes must be >= 1");
  log_run("synth", fingerprint_text("synth:tonal-percussive-v1"), a.seed);
  for (Index i = 0; i < a.scenes; ++i) write_scene(synth_scene(a.seed, i, a.seconds), a.out);
  std::cerr << "[d3net] wrote " << a.scenes << " scenes to " << a.out << '\n';
  return kOk;
}

// ---------------------------------------------------------------------------

struct AblationArgs {
  std::vector<std::string> configs{"tiny-no-dilation", "tiny-standard-dilation", "tiny"};
  Index epochs = 10;
  Index batch_size = 6;
  Index patch_frames = 64;
  Index train_scenes = 32;
  Index test_scenes = 8;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_ablation(const AblationArgs& a) {
  std::vector<AblationEntry> entries;
  for (const std::string& name : a.configs) {
    ExperimentConfig ec;
    ec.network = load_config(name, {});
    log_run("ablation " + ec.network.name, ec.network.fingerprint(), a.seed);
    ec.train.epochs = a.epochs;
    ec.train.lr_switch_epoch = a.epochs > 40 ? 40 : a.epochs * 4 / 5;
    ec.train.batch_size = a.batch_size;
    ec.train.patch_frames = a.patch_frames;
    ec.train.seed = a.seed;
    ec.model_seed = a.seed;
    ec.train_scenes = a.train_scenes;
    ec.test_scenes = a.test_scenes;
    try {
      ec.train.validate();
    } catch (const std::exception& e) {
      throw UsageError(e.what());
    }
    entries.push_back({ec.network.name, to_string(ec.network.dilation),
                       run_experiment(ec, [](const std::string& s) { std::cerr << s << '\n'; })});
  }
  const std::string csv = ablation_csv(entries);
  std::cout << csv;
  if (!a.out.empty()) write_text(a.out, csv);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"D2/D3 dense multidilated networks for music source separation"};
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  try {
    seed = default_seed();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }

  RfArgs rf_args;
  rf_args.seed = seed;
  auto* rf_cmd = app.add_subcommand("rf-analyze", "Receptive-field coverage of one dense block along one axis");
  rf_cmd->add_option("--layers,-L", rf_args.layers, "Layers in the block")->capture_default_str();
  rf_cmd->add_option("--kernel,-k", rf_args.kernel, "Odd kernel size")->capture_default_str();
  rf_cmd->add_option("--scheme", rf_args.scheme, "naive, multi or none")
      ->check(CLI::IsMember({"naive", "multi", "none"}))
      ->capture_default_str();
  rf_cmd->add_option("--out", rf_args.out, "CSV report path");
  rf_cmd->add_flag("--probe", rf_args.probe, "Cross-check the union with an autodiff probe of a random block");
  rf_cmd->add_option("--seed", rf_args.seed, "Seed (default $D3NET_SEED or 0)");

  TrainArgs tr;
  tr.seed = seed;
  auto* train_cmd = app.add_subcommand("train", "Train one source network");
  train_cmd->add_option("--config", tr.config, "Config file or shipped config name")->required();
  train_cmd->add_option("--set", tr.overrides, "Config override key=value (repeatable)");
  train_cmd->add_option("--data", tr.data, "Scene directory or 'synth'")->capture_default_str();
  train_cmd->add_option("--source", tr.source, "Target source name or index")->capture_default_str();
  train_cmd->add_option("--sources", tr.sources, "Comma-separated stem names of a scene directory");
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--lr-switch", tr.lr_switch, "Epoch at which the learning rate drops (default 40, or 4/5 of shorter runs)");
  train_cmd->add_option("--lr", tr.lr)->capture_default_str();
  train_cmd->add_option("--lr-after", tr.lr_after)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size)->capture_default_str();
  train_cmd->add_option("--patch-frames", tr.patch_frames)->capture_default_str();
  train_cmd->add_option("--patches-per-scene", tr.patches_per_scene)->capture_default_str();
  train_cmd->add_option("--scenes", tr.scenes, "Synthetic scene count")->capture_default_str();
  train_cmd->add_option("--scene-seconds", tr.scene_seconds)->capture_default_str();
  train_cmd->add_option("--data-seed", tr.data_seed, "Synthetic data seed")->capture_default_str();
  train_cmd->add_flag("--no-augment", tr.no_augment);
  train_cmd->add_option("--seed", tr.seed, "Model and batch seed (default $D3NET_SEED or 0)");
  train_cmd->add_option("--out", tr.out, "Checkpoint path")->required();
  train_cmd->add_option("--loss-csv", tr.loss_csv, "Loss history path (default <out>.loss.csv)");

  SeparateArgs sep;
  sep.seed = seed;
  auto* sep_cmd = app.add_subcommand("separate", "Separate a mixture with one checkpoint per source");
  sep_cmd->add_option("--ckpt", sep.ckpts, "Checkpoints; each file stem names its output stem")->required();
  sep_cmd->add_option("--in", sep.input, "Mixture WAV")->required();
  sep_cmd->add_option("--out", sep.out, "Output directory")->required();
  sep_cmd->add_option("--patch-frames", sep.patch_frames)->capture_default_str();
  sep_cmd->add_option("--hop-frames", sep.hop_frames)->capture_default_str();

  EvalArgs ev;
  ev.seed = seed;
  auto* eval_cmd = app.add_subcommand("eval", "Median-window SDR of estimated stems against references");
  eval_cmd->add_option("--est", ev.est, "Estimates: <dir>/scene_<id>/<source>.wav")->required();
  eval_cmd->add_option("--ref", ev.ref, "References: <dir>/scene_<id>/{mixture,<source>}.wav")->required();
  eval_cmd->add_option("--out", ev.out, "Scores CSV")->required();
  eval_cmd->add_option("--sources", ev.sources, "Comma-separated sources (default: stems of the first scene)");

  GradArgs gr;
  gr.seed = seed;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every layer type and a network");
  grad_cmd->add_option("--config", gr.config)->capture_default_str();
  grad_cmd->add_option("--set", gr.overrides, "Config override key=value (repeatable)");
  grad_cmd->add_option("--tol", gr.tol, "Relative error tolerance")->capture_default_str();
  grad_cmd->add_option("--frames", gr.frames)->capture_default_str();
  grad_cmd->add_option("--bins", gr.bins, "Input bins; all-full-band configs use it as max_bin")->capture_default_str();
  grad_cmd->add_option("--max-coordinates", gr.max_coordinates, "Per parameter tensor, 0 = all")->capture_default_str();
  grad_cmd->add_flag("--network-only", gr.skip_layers);
  grad_cmd->add_option("--seed", gr.seed, "Seed (default $D3NET_SEED or 0)");

  NormArgs nm;
  nm.seed = seed;
  auto* norm_cmd = app.add_subcommand("weight-norms", "Per-skip L1 norms of the report layer's kernel groups");
  norm_cmd->add_option("--ckpt", nm.ckpt, "Trained checkpoint");
  norm_cmd->add_option("--config", nm.config, "Untrained model from a config instead");
  norm_cmd->add_option("--set", nm.overrides, "Config override key=value (repeatable)");
  norm_cmd->add_option("--out", nm.out, "CSV path (default stdout)");
  norm_cmd->add_option("--seed", nm.seed, "Seed for --config (default $D3NET_SEED or 0)");

  SynthArgs sy;
  sy.seed = seed;
  auto* synth_cmd = app.add_subcommand("synth", "Write synthetic two-source scenes");
  synth_cmd->add_option("--out", sy.out, "Output directory")->required();
  synth_cmd->add_option("--scenes", sy.scenes)->capture_default_str();
  synth_cmd->add_option("--seconds", sy.seconds)->capture_default_str();
  synth_cmd->add_option("--seed", sy.seed, "Seed (default $D3NET_SEED or 0)");

  AblationArgs ab;
  ab.seed = seed;
  auto* ab_cmd = app.add_subcommand("ablation", "Train and score dilation variants under identical seeds");
  ab_cmd->add_option("--configs", ab.configs)->capture_default_str();
  ab_cmd->add_option("--epochs", ab.epochs)->capture_default_str();
  ab_cmd->add_option("--batch-size", ab.batch_size)->capture_default_str();
  ab_cmd->add_option("--patch-frames", ab.patch_frames)->capture_default_str();
  ab_cmd->add_option("--train-scenes", ab.train_scenes)->capture_default_str();
  ab_cmd->add_option("--test-scenes", ab.test_scenes)->capture_default_str();
  ab_cmd->add_option("--seed", ab.seed, "Seed (default $D3NET_SEED or 0)");
  ab_cmd->add_option("--out", ab.out, "CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*rf_cmd) return cmd_rf(rf_args);
    if (*train_cmd) return cmd_train(tr);
    if (*sep_cmd) return cmd_separate(sep);
    if (*eval_cmd) return cmd_eval(ev);
    if (*grad_cmd) return cmd_gradcheck(gr);
    if (*norm_cmd) return cmd_weight_norms(nm);
    if (*synth_cmd) return cmd_synth(sy);
    if (*ab_cmd) return cmd_ablation(ab);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const CheckFailed& e) {
    std::cerr << "check failed: " << e.what() << '\n';
    return kCheckFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
