#include "d3net/separation.hpp"

#include "d3net/ops.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace d3net {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Adam

void adam_step(const TensorList& params, AdamState& st, double lr) {
  if (st.m.empty()) {
    for (const NamedTensor& p : params) {
      st.m.push_back(Array::Zero(p.tensor.numel()));
      st.v.push_back(Array::Zero(p.tensor.numel()));
    }
  }
  if (st.m.size() != params.size()) throw std::invalid_argument("adam: parameter list changed between steps");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (st.m[i].size() != params[i].tensor.numel()) {
      throw std::invalid_argument("adam: moment shape mismatch for " + params[i].name);
    }
    if (params[i].tensor.has_grad() && !params[i].tensor.grad().allFinite()) {
      throw std::runtime_error("adam: non-finite gradient in " + params[i].name);
    }
  }
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, double(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].tensor;
    if (!p.has_grad()) continue;
    const Array& g = p.grad();
    st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
    st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * g.square();
    p.values() -= lr * (st.m[i] / c1) / ((st.v[i] / c2).sqrt() + st.eps);
  }
}

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train: batch size must be >= 1");
  if (lr_switch_epoch >= epochs) {
    throw std::invalid_argument("train: learning-rate switch epoch " + std::to_string(lr_switch_epoch) +
                                " must be below the epoch count " + std::to_string(epochs));
  }
  if (lr_initial <= 0 || lr_after <= 0) throw std::invalid_argument("train: learning rates must be positive");
  if (patch_frames < 1 || patches_per_scene < 1) throw std::invalid_argument("train: patch settings must be positive");
}

// ---------------------------------------------------------------------------
// Synthetic scenes

namespace {

// RBJ biquad, direct form I, applied in place.
struct Biquad {
  double b0, b1, b2, a1, a2;

  static Biquad bandpass(double fc, double q, double fs) {
    const double w = 2.0 * std::numbers::pi * fc / fs, alpha = std::sin(w) / (2.0 * q), a0 = 1.0 + alpha;
    return {alpha / a0, 0.0, -alpha / a0, -2.0 * std::cos(w) / a0, (1.0 - alpha) / a0};
  }
  static Biquad lowpass(double fc, double q, double fs) {
    const double w = 2.0 * std::numbers::pi * fc / fs, alpha = std::sin(w) / (2.0 * q), a0 = 1.0 + alpha;
    const double c = std::cos(w);
    return {(1.0 - c) / 2.0 / a0, (1.0 - c) / a0, (1.0 - c) / 2.0 / a0, -2.0 * c / a0, (1.0 - alpha) / a0};
  }
  void apply(Eigen::VectorXd& x) const {
    double x1 = 0, x2 = 0, y1 = 0, y2 = 0;
    for (Index i = 0; i < x.size(); ++i) {
      const double y = b0 * x[i] + b1 * x1 + b2 * x2 - a1 * y1 - a2 * y2;
      x2 = x1;
      x1 = x[i];
      y2 = y1;
      y1 = y;
      x[i] = y;
    }
  }
};

AudioClip pan_to_stereo(const Eigen::VectorXd& mono, double pan, int rate, double target_rms) {
  AudioClip clip;
  clip.sample_rate = rate;
  clip.samples.resize(2, mono.size());
  const double rms = std::sqrt(mono.squaredNorm() / double(std::max<Index>(1, mono.size())));
  const double g = rms > 0 ? target_rms / rms : 0.0;
  clip.samples.row(0) = (g * std::cos(pan * std::numbers::pi / 2.0)) * mono.transpose();
  clip.samples.row(1) = (g * std::sin(pan * std::numbers::pi / 2.0)) * mono.transpose();
  return clip;
}

Eigen::VectorXd tonal_line(std::mt19937_64& rng, Index n, int rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const Index notes = 3 + static_cast<Index>(u(rng) * 4);
  const double vib_rate = 4.0 + 2.0 * u(rng), vib_depth = 0.005 + 0.005 * u(rng);
  const Index attack = rate / 50, release = rate / 20;
  for (Index k = 0; k < notes; ++k) {
    const Index start = k * n / notes, stop = (k + 1) * n / notes;
    const double f0 = 110.0 * std::pow(2.0, 2.0 * u(rng));
    std::vector<double> amp;
    for (int h = 1; h * f0 * (1.0 + vib_depth) < 2000.0; ++h) amp.push_back((0.5 + 0.5 * u(rng)) / h);
    double phase = 0.0;
    for (Index t = start; t < stop; ++t) {
      const double f = f0 * (1.0 + vib_depth * std::sin(2.0 * std::numbers::pi * vib_rate * double(t) / rate));
      phase += 2.0 * std::numbers::pi * f / rate;
      double v = 0.0;
      for (std::size_t h = 0; h < amp.size(); ++h) v += amp[h] * std::sin(double(h + 1) * phase);
      const Index i = t - start, left = stop - 1 - t;
      const double env = std::min({1.0, double(i) / attack, double(left) / release});
      out[t] = env * v;
    }
  }
  return out;
}

Eigen::VectorXd percussive_line(std::mt19937_64& rng, Index n, int rate) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(n);
  const double step = 60.0 / (90.0 + 60.0 * u(rng)) / 2.0;
  for (double at = 0.05 * u(rng); at < double(n) / rate; at += step) {
    if (u(rng) > 0.7) continue;
    const double tau = 0.015 + 0.045 * u(rng), gain = 0.5 + 0.5 * u(rng);
    const Index s = static_cast<Index>(at * rate), len = static_cast<Index>(5.0 * tau * rate);
    for (Index i = 0; i < len && s + i < n; ++i) out[s + i] += gain * std::exp(-double(i) / (tau * rate)) * g(rng);
  }
  const double fc = 300.0 + 900.0 * u(rng);
  Biquad::bandpass(fc, 0.8, rate).apply(out);
  Biquad::lowpass(1800.0, 0.7071, rate).apply(out);
  Biquad::lowpass(1800.0, 0.7071, rate).apply(out);
  return out;
}

}  // namespace

SyntheticScene synth_scene(std::uint64_t seed, Index id, double seconds, int sample_rate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Index n = static_cast<Index>(seconds * sample_rate);
  SyntheticScene scene;
  scene.id = id;
  scene.seed = seed;
  scene.source_names = {"tonal", "percussive"};
  const double pan_t = 0.2 + 0.6 * u(rng), pan_p = 0.2 + 0.6 * u(rng);
  scene.stems.push_back(pan_to_stereo(tonal_line(rng, n, sample_rate), pan_t, sample_rate, 0.1));
  scene.stems.push_back(pan_to_stereo(percussive_line(rng, n, sample_rate), pan_p, sample_rate, 0.1));
  scene.mixture.sample_rate = sample_rate;
  scene.mixture.samples = scene.stems[0].samples + scene.stems[1].samples;
  return scene;
}

std::vector<SyntheticScene> synth_dataset(std::uint64_t seed, Index n_scenes, double seconds, int sample_rate) {
  if (n_scenes < 1) throw std::invalid_argument("synth_dataset: need at least one scene");
  std::vector<SyntheticScene> out;
  for (Index i = 0; i < n_scenes; ++i) out.push_back(synth_scene(seed, i, seconds, sample_rate));
  return out;
}

double spectral_flatness(const AudioClip& clip) {
  const Stft s = stft(clip);
  double total = 0.0;
  Index count = 0;
  for (const Eigen::MatrixXcd& X : s.channels) {
    for (Index t = 0; t < X.rows(); ++t) {
      const Eigen::ArrayXd p = X.row(t).cwiseAbs2().transpose().array() + 1e-20;
      total += std::exp(p.log().mean()) / p.mean();
      ++count;
    }
  }
  return total / double(count);
}

void write_scene(const SyntheticScene& scene, const std::string& root) {
  const fs::path dir = fs::path(root) / ("scene_" + std::to_string(scene.id));
  fs::create_directories(dir);
  write_wav(scene.mixture, (dir / "mixture.wav").string());
  for (std::size_t j = 0; j < scene.stems.size(); ++j) {
    write_wav(scene.stems[j], (dir / (scene.source_names.at(j) + ".wav")).string());
  }
}

std::vector<SyntheticScene> load_scenes(const std::string& root, const std::vector<std::string>& sources) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset directory not found: " + root);
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && e.path().filename().string().rfind("scene_", 0) == 0) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<SyntheticScene> out;
  for (const fs::path& d : dirs) {
    bool complete = fs::exists(d / "mixture.wav");
    for (const std::string& s : sources) complete = complete && fs::exists(d / (s + ".wav"));
    if (!complete) continue;
    SyntheticScene scene;
    const std::string tail = d.filename().string().substr(6);
    scene.id = std::all_of(tail.begin(), tail.end(), ::isdigit) && !tail.empty() ? std::stoll(tail) : Index(out.size());
    scene.recipe = "files";
    scene.source_names = sources;
    scene.mixture = read_wav((d / "mixture.wav").string());
    for (const std::string& s : sources) scene.stems.push_back(read_wav((d / (s + ".wav")).string()));
    out.push_back(std::move(scene));
  }
  if (out.empty()) throw std::runtime_error("no complete scene_* directories under " + root);
  return out;
}

// ---------------------------------------------------------------------------
// Training data

Index TrainingSet::frames() const {
  Index t = 0;
  for (const TrainingScene& s : scenes) t += s.stems.front().frames();
  return t;
}

TrainingSet make_training_set(const std::vector<SyntheticScene>& scenes, Index bins, const StftConfig& stft_cfg) {
  if (scenes.empty()) throw std::invalid_argument("training set: no scenes");
  if (bins < 1 || bins > stft_cfg.bins()) throw std::invalid_argument("training set: bin count out of range");
  TrainingSet out;
  out.bins = bins;
  for (const SyntheticScene& scene : scenes) {
    TrainingScene ts;
    for (const AudioClip& stem : scene.stems) {
      Stft s = stft(stem, stft_cfg);
      for (Eigen::MatrixXcd& X : s.channels) X = X.leftCols(bins).eval();
      ts.stems.push_back(std::move(s));
    }
    if (!out.scenes.empty() && ts.stems.size() != out.scenes.front().stems.size()) {
      throw std::invalid_argument("training set: scenes have different stem counts");
    }
    out.scenes.push_back(std::move(ts));
  }
  return out;
}

AugmentParams draw_augment(Index n_stems, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> gain(0.25, 1.25);
  std::bernoulli_distribution swap(0.5);
  AugmentParams p;
  for (Index j = 0; j < n_stems; ++j) {
    p.gains.push_back(gain(rng));
    p.swap.push_back(swap(rng));
  }
  return p;
}

namespace {

void transform_stem(std::vector<Eigen::MatrixXcd>& channels, double gain, bool swap) {
  for (Eigen::MatrixXcd& X : channels) X *= gain;
  if (swap && channels.size() == 2) std::swap(channels[0], channels[1]);
}

}  // namespace

std::vector<Stft> augment(const std::vector<Stft>& stems, const AugmentParams& params) {
  if (params.gains.size() != stems.size() || params.swap.size() != stems.size()) {
    throw std::invalid_argument("augment: one gain and swap flag per stem");
  }
  std::vector<Stft> out = stems;
  for (std::size_t j = 0; j < out.size(); ++j) transform_stem(out[j].channels, params.gains[j], params.swap[j]);
  return out;
}

Batch draw_batch(const TrainingSet& data, Index target_source, Index batch_size, Index patch_frames, bool aug,
                 std::mt19937_64& rng) {
  const Index n_scenes = static_cast<Index>(data.scenes.size());
  const Index n_stems = static_cast<Index>(data.scenes.front().stems.size());
  if (target_source < 0 || target_source >= n_stems) throw std::invalid_argument("draw_batch: target source out of range");
  const Stft& ref = data.scenes.front().stems.front();
  const Index C = static_cast<Index>(ref.channels.size()), F = data.bins;
  const double scale = 1.0 / sqrt_hann(ref.config.window_size).sum();
  std::uniform_int_distribution<Index> pick(0, n_scenes - 1);

  std::vector<Tensor> mixes, targets;
  for (Index b = 0; b < batch_size; ++b) {
    const Index base = pick(rng);
    const AugmentParams params = aug ? draw_augment(n_stems, rng) : AugmentParams{};
    std::vector<Eigen::MatrixXcd> mix(C, Eigen::MatrixXcd::Zero(patch_frames, F)), target;
    Index shared_offset = -1;
    for (Index j = 0; j < n_stems; ++j) {
      const Stft& s = data.scenes[aug ? pick(rng) : base].stems[j];
      const Index T = s.frames();
      Index offset;
      if (aug || shared_offset < 0) {
        offset = random_patch_offset(T, patch_frames, rng);
        shared_offset = offset;
      } else {
        offset = shared_offset;
      }
      const Index n = std::clamp<Index>(T - offset, 0, patch_frames);
      std::vector<Eigen::MatrixXcd> patch(C, Eigen::MatrixXcd::Zero(patch_frames, F));
      for (Index c = 0; c < C; ++c) patch[c].topRows(n) = s.channels[c].middleRows(offset, n);
      if (aug) transform_stem(patch, params.gains[j], params.swap[j]);
      for (Index c = 0; c < C; ++c) mix[c] += patch[c];
      if (j == target_source) target = std::move(patch);
    }
    Tensor m(Shape{C, patch_frames, F}), t(Shape{C, patch_frames, F});
    for (Index c = 0; c < C; ++c) {
      for (Index i = 0; i < patch_frames; ++i) {
        for (Index f = 0; f < F; ++f) {
          m.data()[(c * patch_frames + i) * F + f] = std::abs(mix[c](i, f)) * scale;
          t.data()[(c * patch_frames + i) * F + f] = std::abs(target[c](i, f)) * scale;
        }
      }
    }
    mixes.push_back(m);
    targets.push_back(t);
  }
  return {stack(mixes), stack(targets)};
}

// ---------------------------------------------------------------------------
// Training

TrainResult train(Model& model, const TrainingSet& data, Index target_source, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.scenes.empty()) throw std::invalid_argument("train: empty training set");
  std::mt19937_64 rng(cfg.seed);
  AdamState state;
  const TensorList params = model.parameters();
  const Index items = static_cast<Index>(data.scenes.size()) * cfg.patches_per_scene;
  const Index steps_per_epoch = std::max<Index>(1, (items + cfg.batch_size - 1) / cfg.batch_size);
  TrainResult result;
  for (Index epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.lr_for_epoch(epoch);
    double total = 0.0;
    for (Index step = 0; step < steps_per_epoch; ++step) {
      const Batch batch = draw_batch(data, target_source, cfg.batch_size, cfg.patch_frames, cfg.augment, rng);
      for (const NamedTensor& p : params) p.tensor.zero_grad();
      ComputeTape tape;
      double loss_value;
      {
        TapeScope scope(tape);
        const Tensor loss = mse_loss(model.forward(batch.mixture, NormMode::train), batch.target);
        loss_value = loss.item();
        if (!std::isfinite(loss_value) || loss_value > cfg.divergence_loss) {
          throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step) + ": loss " + std::to_string(loss_value));
        }
        tape.backward(loss);
      }
      adam_step(params, state, lr);
      total += loss_value;
      ++result.steps;
    }
    result.epoch_loss.push_back(total / double(steps_per_epoch));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back(), lr);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

Tensor estimate_magnitude(Model& model, const Tensor& plane, const SeparateOptions& options) {
  std::vector<SpectrogramPatch> patches = patchify(plane, options.patch_frames, options.hop_frames);
  for (SpectrogramPatch& p : patches) p.magnitude = unstack(model.forward(stack({p.magnitude}), NormMode::eval), 0);
  return overlap_merge(patches, plane.dim(1));
}

std::vector<Stft> mwf(const Stft& mixture, const std::vector<Tensor>& mags, const MwfOptions& options) {
  using Mat = Eigen::MatrixXcd;
  using Vec = Eigen::VectorXcd;
  const Index C = static_cast<Index>(mixture.channels.size()), T = mixture.frames(), F = mixture.bins();
  const Index J = static_cast<Index>(mags.size());
  if (J < 1) throw std::invalid_argument("mwf: no source estimates");
  for (const Tensor& m : mags) {
    if (m.shape() != Shape{C, T, F}) {
      throw std::invalid_argument("mwf: estimate shape " + shape_string(m.shape()) + " does not match mixture " +
                                  shape_string({C, T, F}));
    }
    if ((m.values() < 0).any()) throw std::invalid_argument("mwf: magnitude estimates must be nonnegative");
  }

  // v[j](t, f): channel-averaged power
  std::vector<Eigen::MatrixXd> v(J, Eigen::MatrixXd::Zero(T, F));
  double vmax = 0.0;
  for (Index j = 0; j < J; ++j) {
    const double* p = mags[j].data();
    for (Index c = 0; c < C; ++c)
      for (Index t = 0; t < T; ++t)
        for (Index f = 0; f < F; ++f) v[j](t, f) += p[(c * T + t) * F + f] * p[(c * T + t) * F + f] / double(C);
    vmax = std::max(vmax, v[j].maxCoeff());
  }
  const double floor = std::max(vmax, 1.0) * 1e-12;
  for (auto& vj : v) vj = vj.cwiseMax(floor);

  std::vector<Stft> out(J, mixture);
  const Mat I = Mat::Identity(C, C);
  Vec x(C);
  std::vector<Mat> R(J);
  for (Index f = 0; f < F; ++f) {
    for (Index j = 0; j < J; ++j) {
      Mat acc = Mat::Zero(C, C);
      double wsum = 0.0;
      for (Index t = 0; t < T; ++t) {
        for (Index c = 0; c < C; ++c) x[c] = mixture.channels[c](t, f);
        const double power = x.squaredNorm() / double(C);
        if (power <= 0) continue;
        double vt = 0.0;
        for (Index k = 0; k < J; ++k) vt += v[k](t, f);
        const double w = v[j](t, f) / vt;
        acc += (w / power) * (x * x.adjoint());
        wsum += w;
      }
      Mat r = wsum > 0 ? Mat(acc / wsum) : I;
      const double tr = r.trace().real();
      r = tr > 0 ? Mat(r * (double(C) / tr)) : I;
      R[j] = r + options.covariance_loading * I;
    }
    for (Index t = 0; t < T; ++t) {
      for (Index c = 0; c < C; ++c) x[c] = mixture.channels[c](t, f);
      Mat M = Mat::Zero(C, C);
      for (Index k = 0; k < J; ++k) M += v[k](t, f) * R[k];
      const double scale = M.trace().real() / double(C);
      M += options.epsilon * scale * I;
      const Vec y = M.partialPivLu().solve(x);
      for (Index j = 0; j < J; ++j) {
        const Vec s = v[j](t, f) * (R[j] * y);
        for (Index c = 0; c < C; ++c) out[j].channels[c](t, f) = s[c];
      }
    }
  }
  return out;
}

std::vector<AudioClip> separate(std::vector<Model*> models, const AudioClip& mixture, const SeparateOptions& options,
                                const MwfOptions& mwf_options) {
  if (models.empty()) throw std::invalid_argument("separate: no models");
  for (Model* m : models) {
    if (m->config().sample_rate != mixture.sample_rate) {
      throw std::runtime_error("separate: mixture sample rate " + std::to_string(mixture.sample_rate) +
                               " differs from the model's " + std::to_string(m->config().sample_rate));
    }
    if (m->config().in_channels != mixture.channels()) {
      throw std::runtime_error("separate: mixture has " + std::to_string(mixture.channels()) + " channels, model expects " +
                               std::to_string(m->config().in_channels));
    }
  }
  const Stft spec = stft(mixture, options.stft);
  const Tensor plane = magnitude(spec);
  std::vector<Tensor> estimates;
  for (Model* m : models) estimates.push_back(estimate_magnitude(*m, plane, options));
  std::vector<AudioClip> out;
  for (const Stft& s : mwf(spec, estimates, mwf_options)) out.push_back(istft(s));
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of an empty set");
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + mid, values.end());
  const double hi = values[mid];
  if (values.size() % 2 == 1) return hi;
  return 0.5 * (hi + *std::max_element(values.begin(), values.begin() + mid));
}

std::vector<double> windowed_sdr(const AudioClip& est, const AudioClip& ref) {
  if (est.samples.rows() != ref.samples.rows() || est.samples.cols() != ref.samples.cols()) {
    throw std::invalid_argument("sdr: estimate and reference shapes differ");
  }
  const Index W = ref.sample_rate, n = ref.length();
  std::vector<double> out;
  for (Index s = 0; s < n; s += W) {
    const Index len = std::min(W, n - s);
    const double num = ref.samples.middleCols(s, len).squaredNorm();
    if (num <= 0) continue;
    const double den = (est.samples.middleCols(s, len) - ref.samples.middleCols(s, len)).squaredNorm();
    out.push_back(den <= 0 ? kSdrCap : std::min(kSdrCap, 10.0 * std::log10(num / den)));
  }
  return out;
}

double sdr(const AudioClip& est, const AudioClip& ref) {
  const std::vector<double> w = windowed_sdr(est, ref);
  if (w.empty()) throw std::runtime_error("sdr: reference is silent in every window");
  return median(w);
}

SceneScores evaluate(std::vector<Model*> models, const std::vector<SyntheticScene>& scenes,
                     const SeparateOptions& options) {
  SceneScores out;
  out.sdr.resize(models.size());
  out.mixture_sdr.resize(models.size());
  for (const SyntheticScene& scene : scenes) {
    if (scene.stems.size() != models.size()) {
      throw std::invalid_argument("evaluate: scene " + std::to_string(scene.id) + " has " +
                                  std::to_string(scene.stems.size()) + " stems for " + std::to_string(models.size()) +
                                  " models");
    }
    const std::vector<AudioClip> est = separate(models, scene.mixture, options);
    for (std::size_t j = 0; j < models.size(); ++j) {
      out.sdr[j].push_back(sdr(est[j], scene.stems[j]));
      out.mixture_sdr[j].push_back(sdr(scene.mixture, scene.stems[j]));
    }
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const LogFn& log) {
  const auto t0 = std::chrono::steady_clock::now();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  cfg.network.validate();
  const std::vector<SyntheticScene> train_scenes =
      synth_dataset(cfg.train_data_seed, cfg.train_scenes, cfg.scene_seconds, cfg.network.sample_rate);
  const std::vector<SyntheticScene> test_scenes =
      synth_dataset(cfg.test_data_seed, cfg.test_scenes, cfg.scene_seconds, cfg.network.sample_rate);
  const TrainingSet data = make_training_set(train_scenes, std::min(cfg.network.max_bin, cfg.separate.stft.bins()),
                                             cfg.separate.stft);
  ExperimentResult result;
  const std::vector<std::string>& names = train_scenes.front().source_names;
  for (std::size_t j = 0; j < names.size(); ++j) {
    result.models.emplace_back(cfg.network, cfg.model_seed + j);
    say("training " + cfg.network.name + " for source " + names[j] + " (" +
        std::to_string(result.models.back().parameter_count()) + " parameters)");
    result.training.push_back(train(result.models.back(), data, static_cast<Index>(j), cfg.train,
                                    [&](Index epoch, double loss, double lr) {
                                      std::ostringstream os;
                                      os << "  epoch " << epoch << " lr " << lr << " loss " << loss;
                                      say(os.str());
                                    }));
  }
  std::vector<Model*> ptrs;
  for (Model& m : result.models) ptrs.push_back(&m);
  const SceneScores scores = evaluate(ptrs, test_scenes, cfg.separate);
  for (std::size_t j = 0; j < names.size(); ++j) {
    result.sources.push_back({names[j], median(scores.sdr[j]), median(scores.mixture_sdr[j])});
  }
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

std::string ablation_csv(const std::vector<AblationEntry>& entries) {
  std::ostringstream os;
  os << "config,dilation,source,sdr,mixture_sdr,margin,seconds\n" << std::fixed << std::setprecision(4);
  for (const AblationEntry& e : entries) {
    for (const SourceResult& s : e.result.sources) {
      os << e.config << ',' << e.dilation << ',' << s.source << ',' << s.sdr << ',' << s.mixture_sdr << ',' << s.margin()
         << ',' << e.result.seconds << '\n';
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Skip-weight report

WeightNormReport weight_norm_report(const Model& model) {
  WeightNormReport r;
  const D2Block::Layer& layer = model.weight_norm_layer(&r.layer);
  const auto& groups = layer.conv.groups;
  r.reference_skip = static_cast<Index>(groups.size()) - 1;
  const Tensor& ref = groups.back().kernel;
  const double ref_l1 = ref.values().abs().sum();
  const double ref_mean = ref_l1 / double(ref.numel());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const Tensor& k = groups[i].kernel;
    const double l1 = k.values().abs().sum(), mean = l1 / double(k.numel());
    r.rows.push_back({static_cast<Index>(i), groups[i].dilation, k.dim(1), l1, ref_l1 > 0 ? l1 / ref_l1 : 0.0, mean,
                      ref_mean > 0 ? mean / ref_mean : 0.0});
  }
  if (groups.size() == 1) {
    r.rows.back().normalized_l1 = 1.0;
    r.rows.back().normalized_mean_abs = 1.0;
  }
  return r;
}

std::string WeightNormReport::to_csv() const {
  std::ostringstream os;
  os << "# layer " << layer << ", normalised by skip group " << reference_skip << " (no skip connection)\n";
  os << "skip_index,dilation,channels,l1_norm,normalized_l1,mean_abs,normalized_mean_abs\n";
  os << std::setprecision(10);
  for (const WeightNormRow& row : rows) {
    os << row.skip_index << ',' << row.dilation << ',' << row.channels << ',' << row.l1_norm << ','
       << row.normalized_l1 << ',' << row.mean_abs << ',' << row.normalized_mean_abs << '\n';
  }
  return os.str();
}

}  // namespace d3net
