#include "d3net/spectral.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <stdexcept>

namespace d3net {

void AudioClip::validate() const {
  if (sample_rate <= 0) throw std::invalid_argument("audio: sample rate must be positive");
  if (channels() < 1) throw std::invalid_argument("audio: no channels");
  if (!samples.allFinite()) throw std::invalid_argument("audio: non-finite sample values");
}

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t read_u32(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
std::uint16_t read_u16(const unsigned char* p) { return std::uint16_t(p[0] | p[1] << 8); }

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>(v >> 8));
}

std::string encoding_name(std::uint16_t format, std::uint16_t bits) {
  std::string base;
  switch (format) {
    case 1: base = "PCM"; break;
    case 3: base = "IEEE float"; break;
    case 6: base = "A-law"; break;
    case 7: base = "mu-law"; break;
    default: base = "format tag " + std::to_string(format);
  }
  return base + " " + std::to_string(bits) + "-bit";
}

}  // namespace

AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open WAV file " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path;
  if (buf.size() < 12 || std::memcmp(buf.data(), "RIFF", 4) != 0 || std::memcmp(buf.data() + 8, "WAVE", 4) != 0) {
    throw std::runtime_error("not a RIFF/WAVE file" + where);
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    const unsigned char* chunk = buf.data() + pos;
    const std::uint32_t size = read_u32(chunk + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16 || body + size > buf.size()) throw std::runtime_error("truncated fmt chunk" + where);
      format = read_u16(buf.data() + body);
      channels = read_u16(buf.data() + body + 2);
      rate = read_u32(buf.data() + body + 4);
      bits = read_u16(buf.data() + body + 14);
      if (format == 0xFFFE) {
        if (size < 40) throw std::runtime_error("truncated extensible fmt chunk" + where);
        format = read_u16(buf.data() + body + 24);
      }
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (body + size > buf.size()) throw std::runtime_error("truncated data chunk" + where);
      data = buf.data() + body;
      data_size = size;
      break;
    }
    pos = body + size + (size & 1u);
  }
  if (!have_fmt) throw std::runtime_error("missing fmt chunk" + where);
  if (!data) throw std::runtime_error("missing data chunk" + where);
  if (format != 1 || (bits != 16 && bits != 32)) {
    throw std::runtime_error("unsupported WAV encoding " + encoding_name(format, bits) + where +
                             " (expected PCM 16-bit or 32-bit)");
  }
  if (channels < 1 || channels > 2) {
    throw std::runtime_error("unsupported channel count " + std::to_string(channels) + where);
  }
  const std::size_t frame_bytes = std::size_t(channels) * bits / 8;
  const Index n = static_cast<Index>(data_size / frame_bytes);
  AudioClip clip;
  clip.sample_rate = static_cast<int>(rate);
  clip.samples.resize(2, n);
  for (Index t = 0; t < n; ++t) {
    for (Index c = 0; c < channels; ++c) {
      const unsigned char* p = data + std::size_t(t) * frame_bytes + std::size_t(c) * bits / 8;
      double v;
      if (bits == 16) {
        v = static_cast<std::int16_t>(read_u16(p)) / 32768.0;
      } else {
        v = static_cast<std::int32_t>(read_u32(p)) / 2147483648.0;
      }
      clip.samples(c, t) = v;
    }
    if (channels == 1) clip.samples(1, t) = clip.samples(0, t);
  }
  return clip;
}

void write_wav(const AudioClip& clip, const std::string& path, WavEncoding encoding) {
  clip.validate();
  if (clip.channels() > 2) throw std::invalid_argument("write_wav: at most 2 channels");
  const std::uint16_t channels = static_cast<std::uint16_t>(clip.channels());
  const std::uint16_t bits = encoding == WavEncoding::pcm16 ? 16 : 32;
  const std::uint32_t data_size = static_cast<std::uint32_t>(clip.length() * channels * bits / 8);
  std::string out;
  out.reserve(44 + data_size);
  out += "RIFF";
  put_u32(out, 36 + data_size);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);
  put_u16(out, channels);
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate));
  put_u32(out, static_cast<std::uint32_t>(clip.sample_rate) * channels * bits / 8);
  put_u16(out, static_cast<std::uint16_t>(channels * bits / 8));
  put_u16(out, bits);
  out += "data";
  put_u32(out, data_size);
  for (Index t = 0; t < clip.length(); ++t) {
    for (Index c = 0; c < channels; ++c) {
      const double v = clip.samples(c, t);
      if (bits == 16) {
        const double q = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
        put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
      } else {
        const double q = std::clamp(std::round(v * 2147483648.0), -2147483648.0, 2147483647.0);
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(q)));
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write WAV file " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("failed writing WAV file " + path);
}

// ---------------------------------------------------------------------------
// STFT

void StftConfig::validate() const {
  if (window_size < 2 || window_size % 2 != 0) throw std::invalid_argument("stft: window size must be even");
  if (hop < 1 || hop > window_size) throw std::invalid_argument("stft: hop must be in 1..window_size");
}

Eigen::VectorXd sqrt_hann(Index n) {
  Eigen::VectorXd w(n);
  for (Index i = 0; i < n; ++i) w[i] = std::sqrt(0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n)));
  return w;
}

Eigen::VectorXd reflect_pad(const Eigen::VectorXd& x, Index pad) {
  const Index n = x.size();
  if (n < 2) throw std::invalid_argument("reflect_pad: signal needs at least 2 samples");
  const Index period = 2 * (n - 1);
  Eigen::VectorXd out(n + 2 * pad);
  for (Index i = 0; i < out.size(); ++i) {
    Index j = (i - pad) % period;
    if (j < 0) j += period;
    out[i] = x[j < n ? j : period - j];
  }
  return out;
}

Index stft_frame_count(Index length, const StftConfig& config) { return 1 + length / config.hop; }

Stft stft(const AudioClip& clip, const StftConfig& config) {
  config.validate();
  clip.validate();
  if (clip.length() < config.hop) {
    throw std::invalid_argument("stft: clip of " + std::to_string(clip.length()) + " samples is shorter than one hop");
  }
  const Index N = config.window_size, B = config.bins();
  const Index frames = stft_frame_count(clip.length(), config);
  const Eigen::VectorXd w = sqrt_hann(N);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);

  Stft out;
  out.config = config;
  out.sample_rate = clip.sample_rate;
  out.signal_length = clip.length();
  std::vector<double> frame(static_cast<std::size_t>(N));
  std::vector<std::complex<double>> spec;
  for (Index c = 0; c < clip.channels(); ++c) {
    Eigen::VectorXd padded = reflect_pad(clip.samples.row(c).transpose(), config.pad());
    // room for the final frame
    const Index need = (frames - 1) * config.hop + N;
    if (padded.size() < need) padded.conservativeResizeLike(Eigen::VectorXd::Zero(need));
    Eigen::MatrixXcd X(frames, B);
    for (Index f = 0; f < frames; ++f) {
      for (Index i = 0; i < N; ++i) frame[i] = padded[f * config.hop + i] * w[i];
      fft.fwd(spec, frame);
      for (Index b = 0; b < B; ++b) X(f, b) = spec[b];
    }
    out.channels.push_back(std::move(X));
  }
  return out;
}

AudioClip istft(const Stft& spec) {
  spec.config.validate();
  const Index N = spec.config.window_size, B = spec.bins(), hop = spec.config.hop, pad = spec.config.pad();
  const Index frames = spec.frames();
  if (frames < 1) throw std::invalid_argument("istft: empty spectrogram");
  const Eigen::VectorXd w = sqrt_hann(N);
  Eigen::FFT<double> fft;
  fft.SetFlag(Eigen::FFT<double>::HalfSpectrum);

  const Index total = (frames - 1) * hop + N;
  Eigen::VectorXd envelope = Eigen::VectorXd::Zero(total);
  for (Index f = 0; f < frames; ++f) envelope.segment(f * hop, N) += w.cwiseAbs2();

  AudioClip clip;
  clip.sample_rate = spec.sample_rate;
  clip.samples.resize(static_cast<Index>(spec.channels.size()), spec.signal_length);
  std::vector<std::complex<double>> half(static_cast<std::size_t>(B));
  std::vector<double> frame;
  for (std::size_t c = 0; c < spec.channels.size(); ++c) {
    const Eigen::MatrixXcd& X = spec.channels[c];
    if (X.cols() != B) throw std::invalid_argument("istft: bin count does not match the window size");
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(total);
    for (Index f = 0; f < frames; ++f) {
      for (Index b = 0; b < B; ++b) half[b] = X(f, b);
      fft.inv(frame, half, N);
      for (Index i = 0; i < N; ++i) acc[f * hop + i] += frame[i] * w[i];
    }
    for (Index t = 0; t < spec.signal_length; ++t) {
      const double e = envelope[pad + t];
      clip.samples(static_cast<Index>(c), t) = e > 1e-12 ? acc[pad + t] / e : 0.0;
    }
  }
  return clip;
}

Tensor magnitude(const Stft& spec) {
  const Index C = static_cast<Index>(spec.channels.size()), T = spec.frames(), F = spec.bins();
  const double scale = 1.0 / sqrt_hann(spec.config.window_size).sum();
  Tensor out(Shape{C, T, F});
  double* p = out.data();
  for (Index c = 0; c < C; ++c)
    for (Index t = 0; t < T; ++t)
      for (Index f = 0; f < F; ++f) *p++ = std::abs(spec.channels[c](t, f)) * scale;
  return out;
}

Stft with_magnitude(const Stft& phase_source, const Tensor& mag) {
  const Index C = static_cast<Index>(phase_source.channels.size()), T = phase_source.frames(), F = phase_source.bins();
  if (mag.shape() != Shape{C, T, F}) {
    throw std::invalid_argument("with_magnitude: expected " + shape_string({C, T, F}) + ", got " +
                                shape_string(mag.shape()));
  }
  const double scale = sqrt_hann(phase_source.config.window_size).sum();
  Stft out = phase_source;
  const double* p = mag.data();
  for (Index c = 0; c < C; ++c) {
    for (Index t = 0; t < T; ++t) {
      for (Index f = 0; f < F; ++f) {
        const std::complex<double> x = phase_source.channels[c](t, f);
        const double a = std::abs(x);
        const std::complex<double> unit = a > 0 ? x / a : std::complex<double>(1.0, 0.0);
        out.channels[c](t, f) = unit * (*p++ * scale);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Patches

Tensor crop_frames(const Tensor& plane, Index offset, Index patch_frames) {
  if (plane.rank() != 3) throw std::invalid_argument("crop_frames: expected [C, T, F], got " + shape_string(plane.shape()));
  const Index C = plane.dim(0), T = plane.dim(1), F = plane.dim(2);
  Tensor out(Shape{C, patch_frames, F});
  const Index n = std::clamp<Index>(T - offset, 0, patch_frames);
  for (Index c = 0; c < C; ++c) {
    if (n > 0) std::copy_n(plane.data() + (c * T + offset) * F, n * F, out.data() + c * patch_frames * F);
  }
  return out;
}

std::vector<SpectrogramPatch> patchify(const Tensor& plane, Index patch_frames, Index hop_frames) {
  if (patch_frames < 1 || hop_frames < 1 || hop_frames > patch_frames) {
    throw std::invalid_argument("patchify: need 1 <= hop <= patch frames");
  }
  if (plane.rank() != 3) throw std::invalid_argument("patchify: expected [C, T, F], got " + shape_string(plane.shape()));
  const Index T = plane.dim(1);
  const Index count = T <= patch_frames ? 1 : (T - patch_frames + hop_frames - 1) / hop_frames + 1;
  std::vector<SpectrogramPatch> out;
  for (Index i = 0; i < count; ++i) out.push_back({i * hop_frames, crop_frames(plane, i * hop_frames, patch_frames)});
  return out;
}

Tensor overlap_merge(const std::vector<SpectrogramPatch>& patches, Index total_frames) {
  if (patches.empty()) throw std::invalid_argument("overlap_merge: no patches");
  const Index C = patches.front().magnitude.dim(0), F = patches.front().magnitude.dim(2);
  Tensor out(Shape{C, total_frames, F});
  std::vector<double> count(static_cast<std::size_t>(total_frames), 0.0);
  for (const SpectrogramPatch& p : patches) {
    const Index P = p.magnitude.dim(1);
    if (p.magnitude.dim(0) != C || p.magnitude.dim(2) != F) throw std::invalid_argument("overlap_merge: patch shapes differ");
    for (Index t = 0; t < P; ++t) {
      const Index g = p.offset + t;
      if (g < 0 || g >= total_frames) continue;
      count[g] += 1.0;
      for (Index c = 0; c < C; ++c) {
        const double* src = p.magnitude.data() + (c * P + t) * F;
        double* dst = out.data() + (c * total_frames + g) * F;
        for (Index f = 0; f < F; ++f) dst[f] += src[f];
      }
    }
  }
  for (Index c = 0; c < C; ++c) {
    for (Index t = 0; t < total_frames; ++t) {
      if (count[t] == 0) continue;
      double* dst = out.data() + (c * total_frames + t) * F;
      for (Index f = 0; f < F; ++f) dst[f] /= count[t];
    }
  }
  return out;
}

Index random_patch_offset(Index total_frames, Index patch_frames, std::mt19937_64& rng) {
  if (total_frames <= patch_frames) return 0;
  return std::uniform_int_distribution<Index>(0, total_frames - patch_frames)(rng);
}

Tensor stack(const std::vector<Tensor>& items) {
  if (items.empty()) throw std::invalid_argument("stack: no items");
  Shape shape{static_cast<Index>(items.size())};
  shape.insert(shape.end(), items.front().shape().begin(), items.front().shape().end());
  Tensor out(shape);
  const Index n = items.front().numel();
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i].shape() != items.front().shape()) throw std::invalid_argument("stack: item shapes differ");
    std::copy_n(items[i].data(), n, out.data() + static_cast<Index>(i) * n);
  }
  return out;
}

Tensor unstack(const Tensor& batch, Index n) {
  Shape shape(batch.shape().begin() + 1, batch.shape().end());
  Tensor out(shape);
  std::copy_n(batch.data() + n * out.numel(), out.numel(), out.data());
  return out;
}

}  // namespace d3net
