#pragma once

#include "d3net/tensor.hpp"

#include <Eigen/Core>

#include <complex>
#include <random>
#include <string>
#include <vector>

namespace d3net {

/// Multichannel audio; `samples` is channels x length, values nominally in [-1, 1).
struct AudioClip {
  int sample_rate = 44100;
  Eigen::MatrixXd samples;

  Index channels() const { return samples.rows(); }
  Index length() const { return samples.cols(); }
  void validate() const;
};

enum class WavEncoding { pcm16, pcm32 };

/// Reads 16- or 32-bit PCM with one or two channels; mono is duplicated to stereo.
AudioClip read_wav(const std::string& path);
void write_wav(const AudioClip& clip, const std::string& path, WavEncoding encoding = WavEncoding::pcm16);

struct StftConfig {
  Index window_size = 4096;
  Index hop = 1024;

  Index bins() const { return window_size / 2 + 1; }
  /// Reflect padding applied to both ends before analysis.
  Index pad() const { return window_size / 2; }
  void validate() const;
};

/// Complex coefficients, one frames x bins matrix per channel.
struct Stft {
  StftConfig config;
  int sample_rate = 44100;
  Index signal_length = 0;
  std::vector<Eigen::MatrixXcd> channels;

  Index frames() const { return channels.empty() ? 0 : channels.front().rows(); }
  Index bins() const { return config.bins(); }
};

/// Periodic square-root Hann window.
Eigen::VectorXd sqrt_hann(Index n);
/// Mirror padding (without edge repetition) by `pad` samples on each side.
Eigen::VectorXd reflect_pad(const Eigen::VectorXd& x, Index pad);
/// frames = 1 + floor(length / hop)
Index stft_frame_count(Index length, const StftConfig& config);

Stft stft(const AudioClip& clip, const StftConfig& config = {});
AudioClip istft(const Stft& spec);

/// |X| / sum(window), shaped [channels, frames, bins]. The scale keeps a
/// full-scale sinusoid near unit magnitude.
Tensor magnitude(const Stft& spec);

/// Complex spectrum with the given magnitudes and the phase of `phase_source`.
Stft with_magnitude(const Stft& phase_source, const Tensor& magnitude);

struct SpectrogramPatch {
  Index offset = 0;  // first frame in the parent plane
  Tensor magnitude;  // [channels, patch_frames, bins]
};

/// Tiles frames at offsets 0, hop, 2*hop, ... until the plane is covered; the
/// last patch is zero padded past the end.
std::vector<SpectrogramPatch> patchify(const Tensor& plane, Index patch_frames, Index hop_frames);
/// Mean of overlapping patch frames, cropped to `total_frames`.
Tensor overlap_merge(const std::vector<SpectrogramPatch>& patches, Index total_frames);
/// Frames [offset, offset + patch_frames) of a [C, T, F] plane, zero padded.
Tensor crop_frames(const Tensor& plane, Index offset, Index patch_frames);
Index random_patch_offset(Index total_frames, Index patch_frames, std::mt19937_64& rng);

/// Stacks [C, T, F] tensors into [N, C, T, F].
Tensor stack(const std::vector<Tensor>& items);
/// Item n of an [N, ...] tensor.
Tensor unstack(const Tensor& batch, Index n);

}  // namespace d3net
