// Acceptance gate. Prints one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance c1 c5 ...  selected criteria ("learning" = c8, c9 and c10)
//
// Reports (ablation CSV, weight-norm CSVs) go to $D3NET_ACCEPTANCE_OUT or
// ./acceptance_out. Exit status is the number of failed criteria (capped).

#include "d3net/gradient_suite.hpp"
#include "d3net/ops.hpp"
#include "d3net/rf_analysis.hpp"
#include "d3net/separation.hpp"

#include "oracles.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <sstream>

using namespace d3net;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double max_abs_diff(const Tensor& a, const Tensor& b) { return (a.values() - b.values()).abs().maxCoeff(); }

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void report(int id, bool pass, const std::string& detail) {
  failures += !pass;
  std::cout << (pass ? "PASS" : "FAIL") << " criterion " << id << ": " << detail << std::endl;
}

fs::path out_dir() {
  const char* env = std::getenv("D3NET_ACCEPTANCE_OUT");
  const fs::path dir = env ? fs::path(env) : fs::path("acceptance_out");
  fs::create_directories(dir);
  return dir;
}

std::string fmt(double v, int precision = 3) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = Clock::now();
  using namespace rf;
  const CoverageMap direct = path_coverage(enumerate_paths(3).front(), 3, Scheme::naive);
  const bool naive_ok = direct == make_coverage({-4, 0, 4}) && direct.blind_spot_count() == 6;

  // A skip path is the connection from x_i into layer l; what travels along
  // it is x_i with its whole receptive field, read through that group's taps.
  Index skip_paths = 0, skip_blind = 0;
  Index chains = 0, chain_blind = 0, chains_with_gaps = 0;
  for (Index L = 1; L <= 8; ++L) {
    for (Index i = 0; i < L; ++i) {
      ++skip_paths;
      skip_blind += group_coverage(L, i, 3, Scheme::multi).blind_spot_count();
    }
    for (const PathSpec& p : enumerate_paths(L)) {
      const Index b = path_coverage(p, 3, Scheme::multi).blind_spot_count();
      ++chains;
      chain_blind += b;
      chains_with_gaps += b > 0;
    }
  }
  const double secs = seconds_since(t0);
  std::cout << "  naive L=3 direct skip: {";
  for (std::size_t k = 0; k < direct.offsets.size(); ++k) std::cout << (k ? "," : "") << direct.offsets[k];
  std::cout << "}, blind " << direct.blind_spot_count() << '\n';
  std::cout << "  multi, L<=8: " << skip_paths << " skip paths, " << skip_blind << " blind spots\n";
  std::cout << "  multi, L<=8, single-hop-sequence chains: " << chains_with_gaps << " of " << chains
            << " have gaps (" << chain_blind << " blind spots in total); these chains are summands of a"
            << " feature map, not signals of their own\n";
  report(1, naive_ok && skip_blind == 0 && secs < 1.0,
         std::string("naive direct skip ") + (naive_ok ? "{-4,0,4} with 6 blind spots" : "WRONG") +
             ", multidilation skip paths blind spots " + std::to_string(skip_blind) + ", " + fmt(secs) + " s");
}

void criterion2() {
  const auto t0 = Clock::now();
  bool ok = true;
  std::string widths;
  for (Index L = 1; L <= 6; ++L) {
    const Index expected = (Index{1} << (L + 1)) - 1;
    const rf::BlockReport r = rf::block_report(L, 3, rf::Scheme::multi);
    const bool analytic = r.union_coverage.width() == expected && r.union_coverage.blind_spot_count() == 0;

    std::mt19937_64 rng(static_cast<std::uint64_t>(L));
    D2BlockConfig cfg;
    cfg.growth_rate = 2;
    cfg.num_layers = L;
    cfg.scheme = DilationScheme::multi;
    D2Block block(cfg, {2}, rng);
    rf::linearize_for_probe(block);
    const rf::CoverageMap probe = rf::empirical_coverage(block, 2 * expected + 9);
    const bool probed = probe == r.union_coverage;
    ok = ok && analytic && probed;
    widths += (L > 1 ? " " : "") + std::to_string(probe.width());
    if (!analytic || !probed) {
      std::cout << "  L=" << L << ": analytic width " << r.union_coverage.width() << ", probe width " << probe.width()
                << ", expected " << expected << '\n';
    }
  }
  const double secs = seconds_since(t0);
  report(2, ok && secs < 30.0, "union widths L=1..6 (analytic = probe): " + widths + ", " + fmt(secs) + " s");
}

void criterion3() {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::mt19937_64 rng(1000 + trial);
    std::uniform_int_distribution<Index> width(1, 4), size(3, 9), kernel(0, 2);
    const Index groups = width(rng), k = 2 * kernel(rng) + 1, out = width(rng);
    const Index T = size(rng), F = size(rng);
    std::vector<Tensor> ys, kernels;
    MultiDilatedConvParams p;
    for (Index g = 0; g < groups; ++g) {
      const Index c = width(rng);
      ys.push_back(Tensor::randn({2, c, T, F}, rng));
      p.groups.push_back(DilatedGroup{Tensor::randn({out, c, k, k}, rng), 1});
      kernels.push_back(p.groups.back().kernel);
    }
    const Tensor reference = oracle::naive_conv2d(concat(ys, axis::channel), concat(kernels, 1), 1, 1);
    worst = std::max(worst, max_abs_diff(multidilated_conv(ys, p), reference));
  }
  report(3, worst <= 1e-12, "10 random all-dilation-1 cases, max |diff| " + fmt(worst));
}

void criterion4() {
  const auto t0 = Clock::now();
  std::vector<GradCheckRow> rows = layer_gradchecks(0);
  for (GradCheckRow& r : network_gradchecks(resolve_config("tiny"), 0)) rows.push_back(std::move(r));
  double worst = 0.0;
  Index failed = 0;
  for (const GradCheckRow& r : rows) {
    worst = std::max(worst, r.result.max_relative_error);
    if (!(r.result.max_relative_error < 1e-6)) {
      ++failed;
      std::cout << "  " << r.name << ": " << r.result.max_relative_error << '\n';
    }
  }
  const double secs = seconds_since(t0);
  report(4, failed == 0 && secs < 300.0,
         std::to_string(rows.size() - failed) + "/" + std::to_string(rows.size()) +
             " layer and tiny-network checks below 1e-6, worst " + fmt(worst) + ", " + fmt(secs) + " s");
}

void criterion5() {
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, 0.3);
    AudioClip clip;
    clip.sample_rate = 44100;
    clip.samples = Eigen::MatrixXd::NullaryExpr(2, 44100 + 777 * seed, [&] { return g(rng); });
    const AudioClip back = istft(stft(clip));
    const Index lo = 4096, n = clip.length() - 2 * lo;
    const Eigen::MatrixXd a = back.samples.middleCols(lo, n), b = clip.samples.middleCols(lo, n);
    worst = std::max(worst, (a - b).norm() / b.norm());
  }
  report(5, worst <= 1e-6, "4096-sample window, hop 1024, interior relative error " + fmt(worst));
}

void criterion6() {
  // A TF bin is the channel vector x(t, f) the filter acts on; the per-channel
  // ratio is printed too but can be large where one channel nearly vanishes.
  double worst = 0.0, worst_channel = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    std::mt19937_64 rng(50 + trial);
    std::normal_distribution<double> g;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Stft mix;
    mix.signal_length = 16 * 1024;
    const Index T = 17, F = mix.bins();
    for (int c = 0; c < 2; ++c) {
      mix.channels.push_back(Eigen::MatrixXcd::NullaryExpr(T, F, [&] { return std::complex<double>(g(rng), g(rng)); }));
    }
    std::vector<Tensor> est;
    for (int j = 0; j < 2 + trial % 3; ++j) {
      Tensor m(Shape{2, T, F});
      for (double& v : m.values()) v = u(rng) * u(rng);
      est.push_back(m);
    }
    const std::vector<Stft> out = mwf(mix, est);
    Eigen::ArrayXXd err2 = Eigen::ArrayXXd::Zero(T, F), ref2 = Eigen::ArrayXXd::Zero(T, F);
    for (int c = 0; c < 2; ++c) {
      Eigen::MatrixXcd sum = Eigen::MatrixXcd::Zero(T, F);
      for (const Stft& s : out) sum += s.channels[c];
      const Eigen::ArrayXXd e = (sum - mix.channels[c]).array().abs(), r = mix.channels[c].array().abs();
      err2 += e.square();
      ref2 += r.square();
      worst_channel = std::max(worst_channel, (e / r).maxCoeff());
    }
    worst = std::max(worst, (err2 / ref2).sqrt().maxCoeff());
  }
  std::cout << "  largest single-channel ratio " << fmt(worst_channel) << '\n';
  report(6, worst <= 1e-8, "5 random mixtures, max per-bin relative error " + fmt(worst));
}

void criterion7() {
  bool ok = true;
  std::string counts;
  for (const std::string name : {"vocals-table1", "drums-table1", "bass-table1", "other-table1"}) {
    const auto t0 = Clock::now();
    try {
      NetworkConfig cfg = resolve_config(name);
      cfg.validate();
      Model model(cfg, 0);
      std::mt19937_64 rng(7);
      const Tensor x = Tensor::uniform({1, 2, 256, 1600}, rng, 0.0, 1.0);
      const Tensor y = model.forward(x, NormMode::eval);
      const bool shaped = y.shape() == x.shape();
      bool finite = true;
      for (double v : y.values()) finite = finite && std::isfinite(v);
      ok = ok && shaped && finite;
      std::cout << "  " << name << ": " << model.parameter_count() << " parameters, output "
                << (shaped ? "[1,2,256,1600]" : "WRONG SHAPE") << (finite ? "" : " NON-FINITE") << ", "
                << fmt(seconds_since(t0)) << " s\n";
      counts += (counts.empty() ? "" : " ") + std::to_string(model.parameter_count());
    } catch (const std::exception& e) {
      ok = false;
      std::cout << "  " << name << ": " << e.what() << '\n';
    }
  }
  report(7, ok, "four per-source configs build and run on [1,2,256,1600]; parameters " + counts);
}

// ---------------------------------------------------------------------------
// Learning criteria. Every variant shares data, seeds and schedule; only the
// dilation scheme differs.

// Margins measured by the pilot run of this exact setup.
const std::map<std::string, double> kPilotMargin{{"tonal", 6.068}, {"percussive", 6.489}};
// Allowed drop below the pilot margin before the regression check trips.
constexpr double kRegressionSlack = 0.5;

ExperimentConfig desk_scale(const std::string& config) {
  ExperimentConfig ec;
  ec.network = resolve_config(config);
  ec.train.epochs = 10;
  ec.train.lr_switch_epoch = 8;
  ec.train.patch_frames = 64;
  ec.train.batch_size = 6;
  ec.train_scenes = 32;
  ec.test_scenes = 8;
  return ec;
}

void learning(bool run8, bool run9, bool run10) {
  const std::vector<std::string> variants = run9 ? std::vector<std::string>{"tiny-no-dilation",
                                                                            "tiny-standard-dilation", "tiny"}
                                                 : run10 ? std::vector<std::string>{"tiny-standard-dilation", "tiny"}
                                                         : std::vector<std::string>{"tiny"};
  std::vector<AblationEntry> entries;
  for (const std::string& v : variants) {
    const ExperimentConfig ec = desk_scale(v);
    std::cout << "  training " << v << " (" << to_string(ec.network.dilation) << ")" << std::endl;
    entries.push_back({v, to_string(ec.network.dilation),
                       run_experiment(ec, [](const std::string& s) { std::cout << "    " << s << std::endl; })});
  }
  const fs::path dir = out_dir();

  if (run8) {
    const AblationEntry& multi = entries.back();
    bool ok = multi.result.seconds <= 15 * 60;
    std::string detail;
    for (const SourceResult& s : multi.result.sources) {
      const double bound = kPilotMargin.at(s.source) - kRegressionSlack;
      ok = ok && s.margin() >= 3.0 && s.margin() >= bound;
      detail += s.source + " " + fmt(s.sdr, 4) + " dB vs mixture " + fmt(s.mixture_sdr, 4) + " dB (margin " +
                fmt(s.margin(), 4) + ", floor 3, regression bound " + fmt(bound, 4) + "); ";
    }
    report(8, ok, detail + "training " + fmt(multi.result.seconds, 4) + " s");
  }

  if (run9) {
    const std::string csv = ablation_csv(entries);
    std::ofstream(dir / "ablation.csv") << csv;
    std::istringstream lines(csv);
    std::string header, line;
    std::getline(lines, header);
    Index rows = 0;
    bool finite = true;
    std::cout << "  " << header << '\n';
    while (std::getline(lines, line)) {
      ++rows;
      std::cout << "  " << line << '\n';
      finite = finite && line.find("nan") == std::string::npos && line.find("inf") == std::string::npos;
    }
    const bool ok = header == "config,dilation,source,sdr,mixture_sdr,margin,seconds" && rows == 6 && finite;
    report(9, ok, "ablation report with " + std::to_string(rows) + " rows written to " + (dir / "ablation.csv").string());
  }

  if (run10) {
    bool ok = true;
    std::string detail;
    for (const AblationEntry& e : entries) {
      if (e.dilation == "none") continue;
      for (std::size_t j = 0; j < e.result.models.size(); ++j) {
        const WeightNormReport r = weight_norm_report(e.result.models[j]);
        const std::string name = "weight_norms_" + e.dilation + "_" + e.result.sources[j].source + ".csv";
        const std::string csv = r.to_csv();
        std::ofstream(dir / name) << csv;
        const std::string header =
            "skip_index,dilation,channels,l1_norm,normalized_l1,mean_abs,normalized_mean_abs";
        const bool format = csv.rfind("# layer " + r.layer, 0) == 0 && csv.find("\n" + header + "\n") != std::string::npos;
        const WeightNormRow& self = r.rows.back();
        const bool unit = self.skip_index == r.reference_skip && self.normalized_l1 == 1.0 &&
                          self.normalized_mean_abs == 1.0;
        ok = ok && format && unit && r.rows.size() >= 2;
        std::cout << "  " << name << ':';
        for (const WeightNormRow& row : r.rows) std::cout << " d" << row.dilation << "=" << fmt(row.normalized_l1, 4);
        std::cout << '\n';
        detail += (detail.empty() ? "" : ", ") + name;
      }
    }
    report(10, ok, "format and self-normalised entry 1.0 in " + detail);
  }
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> which(argv + 1, argv + argc);
  if (which.empty()) which = {"c1", "c2", "c3", "c4", "c5", "c6", "c7", "learning"};
  const std::map<std::string, std::function<void()>> quick{
      {"c1", criterion1}, {"c2", criterion2}, {"c3", criterion3}, {"c4", criterion4},
      {"c5", criterion5}, {"c6", criterion6}, {"c7", criterion7}};
  bool run8 = false, run9 = false, run10 = false;
  for (const std::string& w : which) {
    if (w == "learning") {
      run8 = run9 = run10 = true;
    } else if (w == "c8") {
      run8 = true;
    } else if (w == "c9") {
      run9 = true;
    } else if (w == "c10") {
      run10 = true;
    } else if (quick.count(w) == 0) {
      std::cerr << "unknown criterion '" << w << "'\n";
      return 64;
    }
  }
  for (const std::string& w : which) {
    if (const auto it = quick.find(w); it != quick.end()) {
      try {
        it->second();
      } catch (const std::exception& e) {
        report(std::stoi(w.substr(1)), false, std::string("exception: ") + e.what());
      }
    }
  }
  if (run8 || run9 || run10) {
    try {
      learning(run8, run9, run10);
    } catch (const std::exception& e) {
      std::cout << "FAIL learning criteria: exception: " << e.what() << '\n';
      ++failures;
    }
  }
  return std::min(failures, 63);
}
