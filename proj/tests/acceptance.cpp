// Acceptance suite: one PASS/FAIL line per criterion.
//
//   acceptance                 run all criteria
//   acceptance --criterion 7   run one (repeatable)
//
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hom/cli.hpp"
#include "hom/fit.hpp"
#include "hom/io.hpp"
#include "hom/model.hpp"
#include "hom/pipeline.hpp"
#include "hom/tcspc.hpp"

using namespace hom;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<double> log_spaced(double lo, double hi, int n) {
  std::vector<double> g;
  for (int i = 0; i < n; ++i) g.push_back(lo * std::pow(hi / lo, i / double(n - 1)));
  return g;
}

// The apparatus values shared by the Monte Carlo criteria.
constexpr double kPulseNs = 100.0;
constexpr double kVm = 0.46;
// Poisson statistics make the normalized shapes independent of the mean photon
// number; a larger mean only shortens the runs.
constexpr double kMeanPhotons = 2.0;

SimConfig pulsed_config(Polarization pol, std::optional<double> t_c, std::int64_t frames, std::uint64_t seed) {
  SimConfig c;
  c.mode = Mode::Pulsed;
  c.envelope = PulseEnvelope{EnvelopeKind::Square, kPulseNs};
  c.rep_rate_mhz = 2.0;
  c.mean_photons_per_pulse = kMeanPhotons;
  c.polarization = pol;
  c.interference_contrast = std::sqrt(2 * kVm);
  if (t_c) c.noise = NoiseModel::from_coherence_time(*t_c);
  c.num_frames = frames;
  c.seed = seed;
  return c;
}

// 1 ----------------------------------------------------------------------------
Outcome criterion_1() {
  Outcome o;
  const auto t0 = Clock::now();
  double worst = 0, worst_mu = 0, worst_vm = 0;
  for (double mu : log_spaced(0.05, 20, 200))
    for (double vm : {0.1, 0.46, 0.5}) {
      const double d = std::abs(visibility_closed(RatioMu(mu), vm) - visibility_quadrature(RatioMu(mu), vm));
      if (d > worst) {
        worst = d;
        worst_mu = mu;
        worst_vm = vm;
      }
    }
  const double elapsed = seconds_since(t0);
  o.detail << "max |closed - quadrature| = " << worst << " (mu=" << worst_mu << ", v_m=" << worst_vm
           << ") over 600 points in " << elapsed << " s";
  o.require(worst <= 1e-9, "difference <= 1e-9");
  o.require(elapsed < 5, "runtime < 5 s");
  return o;
}

// 2 ----------------------------------------------------------------------------
Outcome criterion_2() {
  Outcome o;
  for (double vm : {0.1, 0.46, 0.5}) {
    const double high = visibility_closed(RatioMu(1e3), vm);
    const double low = visibility_closed(RatioMu(1e-3), vm);
    o.detail << "v_m=" << vm << ": V(1e3)-v_m=" << high - vm << ", V(1e-3)=" << low << "; ";
    o.require(std::abs(high - vm) <= 1e-5 * vm, "|V(mu=1e3) - v_m| <= 1e-5 v_m at v_m=" + format_number(vm));
    o.require(low <= 1e-5, "V(mu=1e-3) <= 1e-5 at v_m=" + format_number(vm) +
                               " (small-mu behaviour is sqrt(pi) mu v_m = " + format_number(std::sqrt(std::numbers::pi) * 1e-3 * vm) +
                               ")");
  }
  return o;
}

// 3 ----------------------------------------------------------------------------
Outcome criterion_3() {
  Outcome o;
  struct Point {
    double quoted_ns, expected, tol;
  };
  for (const Point p : {Point{45, 0.18, 0.01}, Point{85, 0.29, 0.01}, Point{250, 0.41, 0.02}}) {
    const double t_c = tc_fwhm_convert(p.quoted_ns, WidthDirection::FromFwhm);
    const double v = visibility_closed(RatioMu::from_times(t_c, kPulseNs), kVm);
    o.detail << p.quoted_ns << " ns -> " << std::setprecision(5) << v << " (expect " << p.expected << " +/- " << p.tol
             << "); ";
    o.require(std::abs(v - p.expected) <= p.tol, format_number(p.quoted_ns) + " ns point");
  }
  return o;
}

// 4 ----------------------------------------------------------------------------
Outcome criterion_4() {
  Outcome o;
  const double db = extinction_db(0.013);
  o.detail << "extinction_db(0.013) = " << std::setprecision(8) << db;
  o.require(std::round(db * 100) / 100 == 18.86, "18.86 dB to 2 d.p.");
  return o;
}

// 5 ----------------------------------------------------------------------------
Outcome criterion_5() {
  Outcome o;
  const double ratio = tc_from_sigma(8.23) / tc_from_sigma(19.42);
  const double fitted = 121.47 / 51.49;
  o.detail << "t_c ratio = " << std::setprecision(6) << ratio << ", noise ratio = " << 19.42 / 8.23
           << ", fitted-width ratio = " << fitted;
  o.require(std::abs(ratio - 19.42 / 8.23) <= 1e-9 * ratio, "ratio equals 19.42/8.23");
  o.require(std::abs(ratio / fitted - 1) <= 0.01, "within 1% of 121.47/51.49");
  return o;
}

// 6 ----------------------------------------------------------------------------
Outcome criterion_6() {
  Outcome o;
  const auto t0 = Clock::now();
  // Keep acquiring until the coincidence total passes both the required
  // minimum and the count that makes per-bin noise small against the bound.
  const std::uint64_t target = 8'000'000;
  AcquisitionOptions opt;
  opt.bin_width_ps = 1024;
  opt.range_ps = 204800;
  Correlator acc(opt.bin_width_ps, opt.range_ps, Mode::Pulsed);
  const std::int64_t chunk = 1 << 20;
  std::int64_t frames = 0;
  SimConfig c = pulsed_config(Polarization::Orthogonal, std::nullopt, 1, 601);
  while (acc.histogram().total_pairs < target) {
    acc.add(simulate_frames(c, frames, frames + chunk));
    frames += chunk;
  }
  CoincidenceHistogram h = std::move(acc).take();
  const auto n = normalize(h, NormalizationMode::TrianglePeakFit);
  double sup = 0, at = 0;
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    const double d = std::abs(n.y[i] - triangle_corr(n.x[i], kPulseNs));
    if (d > sup) {
      sup = d;
      at = n.x[i];
    }
  }
  const double elapsed = seconds_since(t0);
  o.detail << h.total_pairs << " coincidences from " << frames << " frames (1024 ps bins); sup |normalized - triangle| = "
           << sup << " at " << at << " ns; " << elapsed << " s";
  o.require(h.total_pairs >= 1'000'000, ">= 1e6 coincidences");
  o.require(sup <= 0.02, "sup-norm <= 0.02");
  o.require(elapsed < 60, "runtime < 60 s");
  return o;
}

// 7 and 9 share one acquisition -----------------------------------------------
struct FringeData {
  CoincidenceHistogram orthogonal;
  std::map<double, CoincidenceHistogram> parallel;
};

const FringeData& fringe_data() {
  static const FringeData data = [] {
    FringeData d;
    const std::int64_t frames = 4'000'000;
    AcquisitionOptions opt;
    d.orthogonal = acquire_histogram(pulsed_config(Polarization::Orthogonal, std::nullopt, frames, 700), opt);
    std::uint64_t seed = 701;
    for (double t_c : {27.0, 51.0, 150.0})
      d.parallel[t_c] = acquire_histogram(pulsed_config(Polarization::Parallel, t_c, frames, seed++), opt);
    return d;
  }();
  return data;
}

Outcome criterion_7() {
  Outcome o;
  const auto& d = fringe_data();
  for (const auto& [t_c, h] : d.parallel) {
    const auto n = normalize(h, NormalizationMode::AgainstOrthogonal, &d.orthogonal);
    const auto r = fit_fringe(n);
    double peak = 0;
    int k = 0;
    for (Eigen::Index i = 0; i < n.size(); ++i)
      if (std::abs(n.x[i]) <= 1.0) {
        peak += n.y[i];
        ++k;
      }
    peak /= k;
    const double tc_fit = r.param("t_c"), vm_fit = r.param("v_m");
    o.detail << "t_c=" << t_c << ": fit t_c=" << std::setprecision(5) << tc_fit << "+/-" << r.error("t_c")
             << ", v_m=" << vm_fit << "+/-" << r.error("v_m") << ", peak(|t|<=1ns)=" << peak << "; ";
    const std::string tag = " (t_c=" + format_number(t_c) + ")";
    o.require(std::abs(tc_fit / t_c - 1) <= 0.05, "t_c within 5%" + tag);
    o.require(std::abs(vm_fit - kVm) <= 0.02, "v_m within 0.02" + tag);
    o.require(std::abs(peak - (1 - kVm)) <= 0.02, "peak 0.54 +/- 0.02" + tag);
  }
  return o;
}

// 8 ----------------------------------------------------------------------------
Outcome criterion_8() {
  Outcome o;
  SimConfig c;
  c.mode = Mode::Cw;
  // Pairs in one frame share a phase draw, so the level's precision scales with
  // the frame count rather than the pair count: favour many short frames.
  c.frame_length_ns = 2e5;
  c.mean_photons_per_pulse = 400;  // per frame
  c.noise = NoiseModel::none();
  c.interference_contrast = 0.959;
  c.num_frames = 50000;
  c.polarization = Polarization::Parallel;
  c.seed = 801;
  const std::int64_t bin = 8192;
  const std::int64_t range = 204800;
  AcquisitionOptions opt;
  opt.bin_width_ps = bin;
  opt.range_ps = range;
  const auto par = acquire_histogram(c, opt);
  c.polarization = Polarization::Orthogonal;
  c.seed = 802;
  const auto orth = acquire_histogram(c, opt);
  const auto n = normalize(par, NormalizationMode::AgainstOrthogonal, &orth);

  double level = 0;
  for (Eigen::Index i = 0; i < n.size(); ++i) level += n.y[i];
  level /= static_cast<double>(n.size());
  double worst = 0, worst_at = 0;
  for (Eigen::Index i = 0; i < n.size(); ++i) {
    const double z = std::abs(n.y[i] - level) / std::sqrt(n.variance[i]);
    if (z > worst) {
      worst = z;
      worst_at = n.x[i];
    }
  }
  o.detail << "v_m=" << c.v_m() << ", mean normalized level " << std::setprecision(5) << level << " over " << n.size()
           << " bins of " << bin << " ps; largest deviation " << worst << " sigma at " << worst_at << " ns";
  o.require(std::abs(level - 0.54) <= 0.02, "level 0.54 +/- 0.02");
  o.require(worst <= 3, "no bin beyond 3 sigma");
  return o;
}

// 9 ----------------------------------------------------------------------------
Outcome criterion_9() {
  Outcome o;
  const auto& d = fringe_data();
  const double t_r = 10.0;
  for (const auto& [t_c, h] : d.parallel) {
    const auto dip = reconstruct_dip(h, d.orthogonal, t_r);
    DipFitOptions opt;
    opt.fixed_n_inf = 1.0;
    const auto r = fit_dip(dip, opt);
    const double v = r.param("v");
    const double fwhm = r.derived.at("fwhm_ns");
    const double expected = tc_fwhm_convert(t_c, WidthDirection::ToFwhm);
    o.detail << "t_c=" << t_c << ": v=" << std::setprecision(5) << v << "+/-" << r.error("v") << ", FWHM=" << fwhm
             << "+/-" << r.derived.at("fwhm_err_ns") << " (expect " << expected << "); ";
    const std::string tag = " (t_c=" + format_number(t_c) + ")";
    o.require(std::abs(v - kVm) <= 0.02, "v within 0.02 of v_m" + tag);
    o.require(std::abs(fwhm / expected - 1) <= 0.05, "FWHM within 5%" + tag);
  }
  return o;
}

// 10 ---------------------------------------------------------------------------
Outcome criterion_10() {
  Outcome o;
  const auto t0 = Clock::now();
  SweepOptions s;
  s.mu = parse_grid("0.45:2.5:8");
  s.v_m = kVm;
  s.monte_carlo = true;
  s.t_p_ns = kPulseNs;
  s.mean_photons_per_pulse = kMeanPhotons;
  s.frames = 4'000'000;
  s.seed = 1001;
  const auto rows = run_sweep(s);
  double prev_mc = -1, prev_an = -1;
  bool increasing_mc = true, increasing_an = true;
  for (const auto& r : rows) {
    if (!r.error.empty()) {
      o.require(false, "point mu=" + format_number(r.mu) + " failed: " + r.error);
      continue;
    }
    const double z = (*r.v_mc - r.v_analytic) / *r.v_mc_err;
    const double z_poisson = (*r.v_mc - r.v_analytic) / *r.v_mc_poisson_err;
    o.detail << "mu=" << std::setprecision(4) << r.mu << ": " << std::setprecision(5) << *r.v_mc << "+/-"
             << std::setprecision(2) << *r.v_mc_err << " vs " << std::setprecision(5) << r.v_analytic << " ("
             << std::setprecision(2) << z << " sigma; " << z_poisson << " in Poisson-only units); ";
    o.require(std::abs(z) <= 3, "mu=" + format_number(r.mu) + " within 3 sigma");
    increasing_mc = increasing_mc && *r.v_mc > prev_mc;
    increasing_an = increasing_an && r.v_analytic > prev_an;
    prev_mc = *r.v_mc;
    prev_an = r.v_analytic;
  }
  const double elapsed = seconds_since(t0);
  o.detail << elapsed << " s";
  o.require(rows.size() == 8, "8 points");
  o.require(increasing_an, "analytic curve strictly increasing");
  o.require(increasing_mc, "Monte Carlo curve strictly increasing");
  o.require(elapsed < 600, "runtime < 10 min");
  return o;
}

// 11 ---------------------------------------------------------------------------
Series poisson_fringe(double t_c, double v_m, double t_p, double peak_counts, std::mt19937_64& rng) {
  Series s;
  const int half = 195;
  s.resize(2 * half + 1);
  for (int i = 0; i < s.size(); ++i) {
    const double x = (i - half) * 0.512;
    const double mean = peak_counts * fringe_corr(x, FringeParams{t_p, t_c, v_m});
    const double k = mean > 0 ? static_cast<double>(std::poisson_distribution<long>(mean)(rng)) : 0.0;
    s.x[i] = x;
    s.y[i] = k / peak_counts;
    s.unit[i] = 1 / peak_counts;
    s.variance[i] = std::max(k, 1.0) / (peak_counts * peak_counts);
  }
  return s;
}

Series poisson_dip(double v, double t_c, double level_counts, std::mt19937_64& rng) {
  Series s;
  const int n = 391;
  s.resize(n);
  for (int i = 0; i < n; ++i) {
    const double x = (i - 195) * 0.512;
    const double mean = level_counts * hom_dip(x, DipParams{1.0, v, t_c});
    const double k = static_cast<double>(std::poisson_distribution<long>(mean)(rng));
    s.x[i] = x;
    s.y[i] = k / level_counts;
    s.unit[i] = 1 / level_counts;
    s.variance[i] = std::max(k, 1.0) / (level_counts * level_counts);
  }
  return s;
}

// Peak counts per 512 ps bin in the criterion 7 acquisitions (4e6 frames).
constexpr double kStudyPeakCounts = 20000;

Outcome criterion_11() {
  Outcome o;
  const int seeds = 500;
  std::map<std::string, int> covered, total;
  int failures = 0;
  for (int seed = 0; seed < seeds; ++seed) {
    std::mt19937_64 rng(1100 + static_cast<std::uint64_t>(seed));
    try {
      const auto r = fit_fringe(poisson_fringe(51.0, kVm, kPulseNs, kStudyPeakCounts, rng));
      for (auto [name, truth] : {std::pair{"fringe.t_c", 51.0}, {"fringe.v_m", kVm}, {"fringe.t_p", kPulseNs}}) {
        const std::string p = std::string(name).substr(7);
        ++total[name];
        covered[name] += std::abs(r.param(p) - truth) <= 3 * r.error(p);
      }
    } catch (const NumericError&) {
      ++failures;
    }
    try {
      const auto r = fit_dip(poisson_dip(0.45, 28.0, kStudyPeakCounts, rng));
      for (auto [name, truth] : {std::pair{"dip.n_inf", 1.0}, {"dip.v", 0.45}, {"dip.t_c", 28.0}}) {
        const std::string p = std::string(name).substr(4);
        ++total[name];
        covered[name] += std::abs(r.param(p) - truth) <= 3 * r.error(p);
      }
    } catch (const NumericError&) {
      ++failures;
    }
  }
  o.detail << seeds << " seeds at " << kStudyPeakCounts << " peak counts per bin; coverage of truth within 3 SE:";
  for (const auto& [name, n] : total) {
    const double frac = static_cast<double>(covered[name]) / (n > 0 ? n : 1);
    o.detail << ' ' << name << '=' << std::setprecision(4) << frac;
    o.require(frac >= 0.99, name + " coverage >= 99%");
  }
  o.detail << "; non-converged fits: " << failures;
  o.require(failures == 0, "every fit converges");
  return o;
}

// 12 ---------------------------------------------------------------------------
Outcome criterion_12() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "hom_acceptance_12";
  fs::create_directories(dir);
  const fs::path conf = dir / "run.conf";
  write_text_atomic(conf,
                    "mode = pulsed\npulse_fwhm_ns = 100\nrep_rate_mhz = 2\nmean_photons_per_pulse = 0.1\n"
                    "polarization = parallel\ncoherence_time_ns = 51\ninterference_contrast = 0.959\n"
                    "num_frames = 200000\nseed = 1201\n");
  for (const char* format : {"text", "binary"}) {
    std::string reference;
    for (const char* workers : {"1", "2", "8", "1"}) {
      const fs::path out = dir / (std::string("stream_") + format + "_" + workers);
      std::ostringstream sink;
      const int code = cli::run({"homtpi", "simulate", conf.string(), "--seed", "1201", "--format", format,
                                 "--workers", workers, "--out", out.string()},
                                sink, sink);
      o.require(code == 0, std::string("simulate exit code (") + format + ", workers " + workers + ")");
      if (code != 0) continue;
      const std::string bytes = read_text(out);
      if (reference.empty()) {
        reference = bytes;
        o.detail << format << ": " << bytes.size() << " bytes, digest " << digest_hex(bytes) << "; ";
      } else {
        o.require(bytes == reference, std::string("identical bytes (") + format + ", workers " + workers + ")");
      }
    }
  }
  return o;
}

const std::map<int, std::pair<std::string, std::function<Outcome()>>>& criteria() {
  static const std::map<int, std::pair<std::string, std::function<Outcome()>>> all{
      {1, {"closed form equals quadrature", criterion_1}},
      {2, {"large and small mu limits", criterion_2}},
      {3, {"visibility triple 45/85/250 ns", criterion_3}},
      {4, {"extinction ratio arithmetic", criterion_4}},
      {5, {"coherence time inversely proportional to noise width", criterion_5}},
      {6, {"Monte Carlo triangle convergence", criterion_6}},
      {7, {"Monte Carlo fringe round trip", criterion_7}},
      {8, {"CW flat line", criterion_8}},
      {9, {"windowed dip reconstruction", criterion_9}},
      {10, {"visibility sweep against the closed form", criterion_10}},
      {11, {"estimator coverage", criterion_11}},
      {12, {"deterministic output across worker counts", criterion_12}},
  };
  return all;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if ((a == "--criterion" || a == "-c") && i + 1 < argc) {
      selected.push_back(std::stoi(argv[++i]));
    } else {
      std::cerr << "usage: acceptance [--criterion N]...\n";
      return 2;
    }
  }
  if (selected.empty())
    for (const auto& [n, _] : criteria()) selected.push_back(n);

  int failed = 0;
  for (int n : selected) {
    const auto it = criteria().find(n);
    if (it == criteria().end()) {
      std::cerr << "unknown criterion " << n << '\n';
      return 2;
    }
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = it->second.second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << " (" << it->second.first << "): "
              << o.detail.str() << " [" << std::fixed << std::setprecision(1) << seconds_since(t0) << " s]"
              << std::defaultfloat << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
