#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "d3net/spectral.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

using namespace d3net;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "d3net_test_spectral";
  fs::create_directories(dir);
  return dir / name;
}

AudioClip tone(double freq, double seconds, int rate = 44100, double amp = 0.5) {
  AudioClip clip;
  clip.sample_rate = rate;
  const Index n = static_cast<Index>(seconds * rate);
  clip.samples.resize(2, n);
  for (Index t = 0; t < n; ++t) {
    const double v = amp * std::sin(2.0 * std::numbers::pi * freq * double(t) / rate);
    clip.samples(0, t) = v;
    clip.samples(1, t) = 0.5 * v;
  }
  return clip;
}

AudioClip noise(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.3);
  AudioClip clip;
  clip.samples.resize(2, n);
  for (Index i = 0; i < clip.samples.size(); ++i) clip.samples.data()[i] = g(rng);
  return clip;
}

double relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).norm() / b.norm(); }

}  // namespace

TEST_CASE("wav round trip") {
  const AudioClip clip = tone(440.0, 1.0);
  const fs::path p16 = scratch("tone16.wav");
  write_wav(clip, p16.string());
  const AudioClip back = read_wav(p16.string());
  CHECK(back.sample_rate == 44100);
  REQUIRE(back.samples.rows() == 2);
  REQUIRE(back.length() == clip.length());
  CHECK((back.samples - clip.samples).cwiseAbs().maxCoeff() <= 1.0 / 32768.0);

  const fs::path p32 = scratch("tone32.wav");
  write_wav(clip, p32.string(), WavEncoding::pcm32);
  CHECK((read_wav(p32.string()).samples - clip.samples).cwiseAbs().maxCoeff() <= 1.0 / 2147483648.0);
}

TEST_CASE("mono wav is duplicated to stereo") {
  AudioClip mono = tone(220.0, 0.1);
  mono.samples.conservativeResize(1, Eigen::NoChange);
  const fs::path p = scratch("mono.wav");
  write_wav(mono, p.string());
  const AudioClip back = read_wav(p.string());
  REQUIRE(back.channels() == 2);
  CHECK(back.samples.row(0) == back.samples.row(1));
}

TEST_CASE("wav errors") {
  const AudioClip clip = tone(440.0, 0.1);
  const fs::path p = scratch("trunc.wav");
  write_wav(clip, p.string());
  fs::resize_file(p, 30);
  CHECK_THROWS_AS(read_wav(p.string()), std::runtime_error);
  CHECK_THROWS_AS(read_wav(scratch("missing.wav").string()), std::runtime_error);

  // rewrite the format tag as IEEE float
  const fs::path f = scratch("float.wav");
  write_wav(clip, f.string(), WavEncoding::pcm32);
  {
    std::fstream io(f, std::ios::in | std::ios::out | std::ios::binary);
    io.seekp(20);
    const char tag[2] = {3, 0};
    io.write(tag, 2);
  }
  try {
    read_wav(f.string());
    FAIL("expected an encoding error");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("IEEE float 32-bit") != std::string::npos);
  }
}

TEST_CASE("stft geometry") {
  const StftConfig cfg;
  CHECK(cfg.bins() == 2049);
  CHECK(stft_frame_count(44100, cfg) == 44);
  const Stft s = stft(tone(440.0, 1.0));
  CHECK(s.frames() == 44);
  CHECK(s.channels.size() == 2);
  CHECK(s.channels[0].cols() == 2049);
  CHECK_THROWS_AS(stft(noise(1000, 0)), std::invalid_argument);
}

TEST_CASE("window is COLA at 75% overlap") {
  const Eigen::VectorXd w2 = sqrt_hann(4096).cwiseAbs2();
  for (Index i = 0; i < 1024; ++i) {
    const double s = w2[i] + w2[i + 1024] + w2[i + 2048] + w2[i + 3072];
    CHECK(s == doctest::Approx(2.0).epsilon(1e-12));
  }
}

TEST_CASE("reflect padding") {
  Eigen::VectorXd x(4);
  x << 1, 2, 3, 4;
  Eigen::VectorXd expect(10);
  expect << 4, 3, 2, 1, 2, 3, 4, 3, 2, 1;
  CHECK(reflect_pad(x, 3) == expect);
}

TEST_CASE("impulse reconstruction") {
  AudioClip clip;
  clip.samples = Eigen::MatrixXd::Zero(2, 4 * 4096);
  clip.samples(0, 8192) = 1.0;
  clip.samples(1, 8192) = -0.25;
  const AudioClip back = istft(stft(clip));
  CHECK(relative_error(back.samples, clip.samples) < 1e-6);
}

TEST_CASE("random signal round trip") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const AudioClip clip = noise(3 * 4096 + 517, seed);
    const AudioClip back = istft(stft(clip));
    REQUIRE(back.length() == clip.length());
    const Index lo = 2048, hi = clip.length() - 2048;
    CHECK(relative_error(back.samples.middleCols(lo, hi - lo), clip.samples.middleCols(lo, hi - lo)) <= 1e-6);
    CHECK(relative_error(back.samples, clip.samples) <= 1e-6);
  }
}

TEST_CASE("bin-centred tone peaks at its bin") {
  const double f = 40.0 * 44100.0 / 4096.0;
  CHECK(f == doctest::Approx(430.664).epsilon(1e-5));
  const Stft s = stft(tone(f, 1.0));
  const Tensor mag = magnitude(s);
  const Index F = mag.dim(2), T = mag.dim(1);
  for (Index t = 4; t < T - 4; ++t) {
    Index arg = 0;
    Eigen::Map<const Eigen::VectorXd>(mag.data() + t * F, F).maxCoeff(&arg);
    CHECK(arg == 40);
  }
  // the magnitude scale maps a sinusoid of amplitude a to about a/2 at its bin
  // (the mirrored component leaks slightly through the sidelobes)
  CHECK(mag.data()[10 * F + 40] == doctest::Approx(0.25).epsilon(1e-3));
}

TEST_CASE("zero signal") {
  AudioClip clip;
  clip.samples = Eigen::MatrixXd::Zero(2, 10000);
  for (const auto& X : stft(clip).channels) CHECK(X.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("parseval per frame") {
  const AudioClip clip = noise(20000, 7);
  const StftConfig cfg;
  const Stft s = stft(clip, cfg);
  const Eigen::VectorXd w = sqrt_hann(cfg.window_size);
  const Index N = cfg.window_size;
  for (Index c = 0; c < 2; ++c) {
    Eigen::VectorXd padded = reflect_pad(clip.samples.row(c).transpose(), cfg.pad());
    padded.conservativeResizeLike(Eigen::VectorXd::Zero((s.frames() - 1) * cfg.hop + N));
    for (Index f = 0; f < s.frames(); ++f) {
      const double time_energy = (padded.segment(f * cfg.hop, N).cwiseProduct(w)).squaredNorm();
      const auto& X = s.channels[c];
      double spec_energy = std::norm(X(f, 0)) + std::norm(X(f, N / 2));
      for (Index b = 1; b < N / 2; ++b) spec_energy += 2.0 * std::norm(X(f, b));
      spec_energy /= double(N);
      CHECK(std::abs(spec_energy - time_energy) <= 1e-9 * time_energy);
    }
  }
}

TEST_CASE("magnitude and phase recombine") {
  const Stft s = stft(noise(9000, 3));
  const Stft r = with_magnitude(s, magnitude(s));
  for (std::size_t c = 0; c < s.channels.size(); ++c) {
    CHECK((r.channels[c] - s.channels[c]).cwiseAbs().maxCoeff() <= 1e-9 * s.channels[c].cwiseAbs().maxCoeff());
  }
}

TEST_CASE("patch tiling") {
  std::mt19937_64 rng(0);
  const Tensor plane512 = Tensor::uniform({2, 512, 5}, rng, 0.0, 1.0);
  auto disjoint = patchify(plane512, 256, 256);
  REQUIRE(disjoint.size() == 2);
  CHECK(disjoint[1].offset == 256);
  CHECK((overlap_merge(disjoint, 512).values() == plane512.values()).all());

  const Tensor plane300 = Tensor::uniform({2, 300, 5}, rng, 0.0, 1.0);
  auto tail = patchify(plane300, 256, 256);
  REQUIRE(tail.size() == 2);
  CHECK(tail[1].magnitude.dim(1) == 256);
  // frames 300..511 of the second patch are padding
  CHECK(tail[1].magnitude.data()[(1 * 256 + 100) * 5] == 0.0);
  const Tensor merged = overlap_merge(tail, 300);
  CHECK(merged.shape() == Shape{2, 300, 5});
  CHECK((merged.values() == plane300.values()).all());

  auto half = patchify(plane512, 256, 128);
  CHECK(half.size() == 3);
  CHECK((overlap_merge(half, 512).values() - plane512.values()).abs().maxCoeff() < 1e-15);

  const Tensor constant({1, 700, 3}, 2.5);
  const Tensor c = overlap_merge(patchify(constant, 256, 128), 700);
  CHECK((c.values() == 2.5).all());

  auto shortp = patchify(Tensor({1, 40, 3}, 1.0), 256, 128);
  CHECK(shortp.size() == 1);
  CHECK(random_patch_offset(40, 256, rng) == 0);
  for (int i = 0; i < 100; ++i) {
    const Index o = random_patch_offset(300, 256, rng);
    CHECK((o >= 0 && o <= 44));
  }
}

TEST_CASE("stack and unstack") {
  std::mt19937_64 rng(1);
  const Tensor a = Tensor::uniform({2, 3, 4}, rng, 0, 1), b = Tensor::uniform({2, 3, 4}, rng, 0, 1);
  const Tensor s = stack({a, b});
  CHECK(s.shape() == Shape{2, 2, 3, 4});
  CHECK((unstack(s, 1).values() == b.values()).all());
}
