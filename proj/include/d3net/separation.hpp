#pragma once

#include "d3net/network.hpp"
#include "d3net/spectral.hpp"

#include <functional>
#include <random>
#include <string>
#include <vector>

namespace d3net {

// ---------------------------------------------------------------------------
// Optimisation

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Index step = 0;
  std::vector<Array> m, v;
};

/// One bias-corrected Adam update from the gradients stored on `params`.
/// Throws std::runtime_error naming the parameter on a non-finite gradient.
void adam_step(const TensorList& params, AdamState& state, double lr);

struct TrainConfig {
  Index epochs = 50;
  Index batch_size = 6;
  double lr_initial = 1e-3;
  double lr_after = 1e-4;
  Index lr_switch_epoch = 40;
  Index patch_frames = 256;
  /// Patches drawn per scene in one epoch.
  Index patches_per_scene = 1;
  std::uint64_t seed = 0;
  bool augment = true;
  double divergence_loss = 1e6;

  void validate() const;
  /// Epochs are 0-based.
  double lr_for_epoch(Index epoch) const { return epoch < lr_switch_epoch ? lr_initial : lr_after; }
};

// ---------------------------------------------------------------------------
// Data

struct SyntheticScene {
  Index id = 0;
  std::uint64_t seed = 0;
  std::string recipe = "tonal-percussive-v1";
  std::vector<std::string> source_names;
  std::vector<AudioClip> stems;
  AudioClip mixture;  // exact sum of the stems
};

/// Two sources: "tonal" (harmonic notes with vibrato) and "percussive"
/// (band-passed noise bursts with sharp decays), stereo, band-limited to
/// roughly 2.2 kHz. Scene i depends only on (seed, i).
std::vector<SyntheticScene> synth_dataset(std::uint64_t seed, Index n_scenes, double seconds = 6.0,
                                          int sample_rate = 44100);
SyntheticScene synth_scene(std::uint64_t seed, Index id, double seconds = 6.0, int sample_rate = 44100);

/// Geometric over arithmetic mean of the power spectrum, averaged over frames.
double spectral_flatness(const AudioClip& clip);

/// Writes scene_<id>/mixture.wav and scene_<id>/<source>.wav.
void write_scene(const SyntheticScene& scene, const std::string& root);
/// Loads every scene_* directory below `root` that holds all of `sources`.
std::vector<SyntheticScene> load_scenes(const std::string& root, const std::vector<std::string>& sources);

/// Per-stem complex spectra cached for training, cropped to the first `bins` bins.
struct TrainingScene {
  std::vector<Stft> stems;
};

struct TrainingSet {
  std::vector<TrainingScene> scenes;
  Index bins = 0;
  Index frames() const;
};

TrainingSet make_training_set(const std::vector<SyntheticScene>& scenes, Index bins, const StftConfig& stft = {});

/// Per-item stem transform.
struct AugmentParams {
  std::vector<double> gains;  // one per stem
  std::vector<bool> swap;     // channel swap per stem
};

AugmentParams draw_augment(Index n_stems, std::mt19937_64& rng);
/// Scales and optionally swaps the channels of each stem; gain 1 and no swap is the identity.
std::vector<Stft> augment(const std::vector<Stft>& stems, const AugmentParams& params);

struct Batch {
  Tensor mixture;  // [N, C, T, F] magnitudes
  Tensor target;   // [N, C, T, F] magnitudes of the target source
};

/// Draws one batch. With augmentation each stem of an item may come from a
/// different scene (remixing), with its own gain and channel swap.
Batch draw_batch(const TrainingSet& data, Index target_source, Index batch_size, Index patch_frames, bool augment,
                 std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
  Index steps = 0;
};

using EpochCallback = std::function<void(Index epoch, double loss, double lr)>;

/// MSE on source magnitudes with Adam and the step learning-rate schedule.
/// Throws std::runtime_error when the loss exceeds cfg.divergence_loss or is not finite.
TrainResult train(Model& model, const TrainingSet& data, Index target_source, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Inference

struct SeparateOptions {
  Index patch_frames = 256;
  Index hop_frames = 128;
  StftConfig stft;
};

/// Magnitude estimate [C, T, F] for a whole mixture plane, tiled into patches.
Tensor estimate_magnitude(Model& model, const Tensor& mixture_plane, const SeparateOptions& options = {});

struct MwfOptions {
  /// Added to the trace-normalised spatial covariances.
  double covariance_loading = 0.1;
  /// Regulariser of the mixture covariance inverse, relative to its trace scale.
  double epsilon = 1e-10;
};

/// One-pass multichannel Wiener filter; returns one complex spectrum per source.
std::vector<Stft> mwf(const Stft& mixture, const std::vector<Tensor>& magnitudes, const MwfOptions& options = {});

/// Full pipeline: STFT, per-model magnitude estimates, MWF, inverse STFT.
std::vector<AudioClip> separate(std::vector<Model*> models, const AudioClip& mixture,
                                const SeparateOptions& options = {}, const MwfOptions& mwf_options = {});

// ---------------------------------------------------------------------------
// Evaluation

constexpr double kSdrCap = 100.0;

/// Per-window SDR over non-overlapping 1 s windows (channels pooled); silent
/// reference windows are skipped.
std::vector<double> windowed_sdr(const AudioClip& estimate, const AudioClip& reference);
/// Median of windowed_sdr; throws if every reference window is silent.
double sdr(const AudioClip& estimate, const AudioClip& reference);
double median(std::vector<double> values);

struct SceneScores {
  /// sdr[j][s]: median window SDR of source j on scene s.
  std::vector<std::vector<double>> sdr;
  /// Same with the mixture itself as the estimate.
  std::vector<std::vector<double>> mixture_sdr;
};

/// Separates every scene with one model per source and scores against its stems.
SceneScores evaluate(std::vector<Model*> models, const std::vector<SyntheticScene>& scenes,
                     const SeparateOptions& options = {});

// ---------------------------------------------------------------------------
// Desk-scale experiment: one network per source trained on synthetic scenes,
// scored on held-out scenes.

struct ExperimentConfig {
  NetworkConfig network;
  TrainConfig train;
  Index train_scenes = 32;
  Index test_scenes = 8;
  std::uint64_t train_data_seed = 1;
  std::uint64_t test_data_seed = 2;
  /// Model j is initialised with model_seed + j.
  std::uint64_t model_seed = 0;
  double scene_seconds = 6.0;
  SeparateOptions separate;
};

struct SourceResult {
  std::string source;
  double sdr = 0.0;          // median over held-out scenes
  double mixture_sdr = 0.0;  // baseline with the mixture as the estimate
  double margin() const { return sdr - mixture_sdr; }
};

struct ExperimentResult {
  std::vector<SourceResult> sources;
  std::vector<TrainResult> training;
  std::vector<Model> models;
  double seconds = 0.0;
};

using LogFn = std::function<void(const std::string&)>;

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LogFn& log = {});

struct AblationEntry {
  std::string config;
  std::string dilation;
  ExperimentResult result;
};

/// Columns: config,dilation,source,sdr,mixture_sdr,margin,seconds.
std::string ablation_csv(const std::vector<AblationEntry>& entries);

// ---------------------------------------------------------------------------
// Skip-weight report

struct WeightNormRow {
  Index skip_index;
  Index dilation;
  Index channels;
  double l1_norm;
  double normalized_l1;
  double mean_abs;
  double normalized_mean_abs;
};

struct WeightNormReport {
  std::string layer;
  Index reference_skip = 0;
  std::vector<WeightNormRow> rows;

  /// One comment line naming the layer and reference group, then
  /// skip_index,dilation,channels,l1_norm,normalized_l1,mean_abs,normalized_mean_abs.
  std::string to_csv() const;
};

/// L1 norms of the kernel groups k^i of the report layer, normalised by the
/// group with the highest skip index (the path without a skip connection).
WeightNormReport weight_norm_report(const Model& model);

}  // namespace d3net
