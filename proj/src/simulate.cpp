#include "hom/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <thread>

#include "hom/rng.hpp"

namespace hom {

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;
// FWHM = 2 sqrt(2 ln 2) sigma for a Gaussian intensity envelope.
const double kFwhmPerSigma = 2 * std::sqrt(2 * std::numbers::ln2);

void require(bool ok, const std::string& field, const std::string& what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

double interference_depth(const SimConfig& c) {
  if (c.polarization == Polarization::Orthogonal) return 0.0;
  return c.interference_contrast * std::sqrt(c.balance_factor());
}

// Centre of the pulse inside its frame, ns.
double pulse_center(const SimConfig& c) { return c.frame_span_ns() / 2; }

// Normalized single-pulse envelope density (integrates to 1 over the frame).
double envelope_density(const SimConfig& c, double t_ns) {
  const double span = c.frame_span_ns();
  if (t_ns < 0 || t_ns >= span) return 0.0;
  if (c.mode == Mode::Cw) return 1.0 / span;
  const double x = t_ns - pulse_center(c);
  const double t_p = c.envelope.t_p;
  if (c.envelope.kind == EnvelopeKind::Square) return std::abs(x) <= t_p / 2 ? 1.0 / t_p : 0.0;
  const double sd = t_p / kFwhmPerSigma;
  return std::exp(-0.5 * x * x / (sd * sd)) / (sd * std::sqrt(kTwoPi));
}

template <typename Engine>
double sample_envelope_time(const SimConfig& c, Engine& eng) {
  if (c.mode == Mode::Cw) return eng.uniform() * c.frame_span_ns();
  const double t_p = c.envelope.t_p;
  if (c.envelope.kind == EnvelopeKind::Square) return pulse_center(c) + (eng.uniform() - 0.5) * t_p;
  std::normal_distribution<double> normal(pulse_center(c), t_p / kFwhmPerSigma);
  return normal(eng);
}

template <typename Engine>
double sample_offset(const NoiseModel& noise, Engine& eng) {
  switch (noise.kind) {
    case NoiseModel::Kind::None:
      return 0.0;
    case NoiseModel::Kind::Gaussian: {
      std::normal_distribution<double> normal(0.0, noise.width_mhz);
      return normal(eng);
    }
    case NoiseModel::Kind::Uniform:
      return (2 * eng.uniform() - 1) * noise.width_mhz;
  }
  return 0.0;
}

double interference_phase(const FrameDraw& d, double t_ns) {
  // MHz * ns = 1e-3 cycles
  return d.theta_b - d.theta_a + kTwoPi * d.delta_nu_mhz * 1e-3 * t_ns;
}

}  // namespace

std::optional<double> NoiseModel::coherence_time_ns() const {
  if (kind != Kind::Gaussian) return std::nullopt;
  return tc_from_sigma(width_mhz);
}

void SimConfig::validate() const {
  require(envelope.t_p > 0, "pulse_fwhm_ns", "must be positive");
  require(mean_photons_per_pulse > 0 && std::isfinite(mean_photons_per_pulse), "mean_photons_per_pulse",
          "must be positive");
  require(interference_contrast >= 0 && interference_contrast <= 1, "interference_contrast",
          "must lie in [0, 1]");
  require(arm_imbalance > 0 && arm_imbalance <= 1, "arm_imbalance", "must lie in (0, 1]");
  require(dark_rate_khz >= 0, "dark_rate_khz", "must be non-negative");
  require(jitter_ps >= 0, "jitter_ps", "must be non-negative");
  require(num_frames > 0, "num_frames", "must be positive (an empty run has no events)");
  if (noise.kind != NoiseModel::Kind::None)
    require(noise.width_mhz > 0 && std::isfinite(noise.width_mhz),
            noise.kind == NoiseModel::Kind::Gaussian ? "noise_sigma_mhz" : "noise_half_span_mhz",
            "must be positive");
  if (mode == Mode::Pulsed) {
    require(rep_rate_mhz > 0, "rep_rate_mhz", "must be positive");
    require(1e3 / rep_rate_mhz > 2 * envelope.t_p, "rep_rate_mhz",
            "repetition period must exceed twice the pulse duration");
  } else {
    require(frame_length_ns > 0, "frame_length_ns", "must be positive");
  }
  require(frame_span_ps() >= 1, "frame", "frame span rounds to zero picoseconds");
}

double SimConfig::frame_span_ns() const {
  return mode == Mode::Pulsed ? 1e3 / rep_rate_mhz : frame_length_ns;
}

std::int64_t SimConfig::frame_span_ps() const { return std::llround(frame_span_ns() * 1e3); }

double SimConfig::balance_factor() const {
  const double r = arm_imbalance;
  return 4 * r / ((1 + r) * (1 + r));
}

double SimConfig::v_m() const { return interference_contrast * interference_contrast * balance_factor() / 2; }

double detector_intensity(const SimConfig& config, const FrameDraw& draw, Detector detector, double t_ns) {
  const double base = config.mean_photons_per_pulse / 2 * envelope_density(config, t_ns);
  const double depth = interference_depth(config);
  const double sign = detector == Detector::D1 ? 1.0 : -1.0;
  return base * (1 + sign * depth * std::cos(interference_phase(draw, t_ns)));
}

std::vector<DetectionEvent> simulate_frame(const SimConfig& config, std::int64_t frame_index) {
  FrameEngine eng(config.seed, static_cast<std::uint64_t>(frame_index));
  FrameDraw draw;
  draw.theta_a = kTwoPi * eng.uniform();
  draw.theta_b = kTwoPi * eng.uniform();
  draw.delta_nu_mhz = sample_offset(config.noise, eng);

  const double span_ns = config.frame_span_ns();
  const std::int64_t span_ps = config.frame_span_ps();
  const std::int64_t origin_ps = frame_index * span_ps;
  const double depth = interference_depth(config);
  const double per_detector = config.mean_photons_per_pulse / 2;
  const double dark_mean = config.dark_rate_khz * 1e-6 * span_ns;

  std::vector<DetectionEvent> out;
  auto emit = [&](Detector det, double t_ns) {
    if (config.jitter_ps > 0) {
      std::normal_distribution<double> smear(0.0, config.jitter_ps * 1e-3);
      t_ns += smear(eng);
    }
    const std::int64_t local = std::clamp<std::int64_t>(std::llround(t_ns * 1e3), 0, span_ps - 1);
    out.push_back({frame_index, origin_ps + local, det});
  };

  for (Detector det : {Detector::D1, Detector::D2}) {
    const double sign = det == Detector::D1 ? 1.0 : -1.0;
    // Thinning against the majorant envelope * (1 + depth).
    std::poisson_distribution<int> candidates_dist(per_detector * (1 + depth));
    const int candidates = candidates_dist(eng);
    for (int i = 0; i < candidates; ++i) {
      const double t = sample_envelope_time(config, eng);
      const double u = eng.uniform();
      if (t < 0 || t >= span_ns) continue;
      if (depth > 0) {
        const double accept = (1 + sign * depth * std::cos(interference_phase(draw, t))) / (1 + depth);
        if (u >= accept) continue;
      }
      emit(det, t);
    }
    if (dark_mean > 0) {
      std::poisson_distribution<int> dark_dist(dark_mean);
      const int darks = dark_dist(eng);
      for (int i = 0; i < darks; ++i) emit(det, eng.uniform() * span_ns);
    }
  }

  std::sort(out.begin(), out.end(), [](const DetectionEvent& a, const DetectionEvent& b) {
    return a.time_ps != b.time_ps ? a.time_ps < b.time_ps : a.detector < b.detector;
  });
  return out;
}

EventStream simulate_frames(const SimConfig& config, std::int64_t begin, std::int64_t end, int workers) {
  config.validate();
  if (end <= begin) throw ConfigError("num_frames: empty frame range");
  workers = std::max(1, workers);

  const std::int64_t total = end - begin;
  const std::int64_t blocks = std::min<std::int64_t>(workers, total);
  std::vector<std::vector<DetectionEvent>> partial(static_cast<std::size_t>(blocks));
  auto work = [&](std::int64_t block) {
    const std::int64_t lo = begin + total * block / blocks;
    const std::int64_t hi = begin + total * (block + 1) / blocks;
    auto& sink = partial[static_cast<std::size_t>(block)];
    for (std::int64_t f = lo; f < hi; ++f) {
      auto frame = simulate_frame(config, f);
      sink.insert(sink.end(), frame.begin(), frame.end());
    }
  };
  if (blocks == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(static_cast<std::size_t>(blocks));
    for (std::int64_t b = 0; b < blocks; ++b) pool.emplace_back(work, b);
  }

  EventStream stream;
  stream.config = config;
  stream.frame_begin = begin;
  stream.frame_end = end;
  std::size_t n = 0;
  for (const auto& p : partial) n += p.size();
  stream.events.reserve(n);
  for (auto& p : partial) {
    stream.events.insert(stream.events.end(), p.begin(), p.end());
    p.clear();
    p.shrink_to_fit();
  }
  for (const auto& e : stream.events) ++stream.singles[e.detector == Detector::D1 ? 0 : 1];
  return stream;
}

EventStream run_pulsed(const SimConfig& config, int workers) {
  if (config.mode != Mode::Pulsed) throw ConfigError("mode: run_pulsed requires mode = pulsed");
  return simulate_frames(config, 0, config.num_frames, workers);
}

EventStream run_cw(const SimConfig& config, int workers) {
  if (config.mode != Mode::Cw) throw ConfigError("mode: run_cw requires mode = cw");
  return simulate_frames(config, 0, config.num_frames, workers);
}

EventStream run(const SimConfig& config, int workers) {
  return config.mode == Mode::Pulsed ? run_pulsed(config, workers) : run_cw(config, workers);
}

double expected_density(const SimConfig& config, double lag_ns) {
  config.validate();
  if (config.noise.kind == NoiseModel::Kind::Uniform)
    throw DomainError("expected_density: no closed form for uniform frequency noise; use the Monte Carlo");

  const double v_m = config.polarization == Polarization::Parallel ? config.v_m() : 0.0;
  const auto t_c = config.noise.coherence_time_ns();
  auto coherence = [&](double lag) { return t_c ? std::exp(-lag * lag / (*t_c * *t_c)) : 1.0; };

  if (config.mode == Mode::Cw) {
    // Only same-frame pairs share a phase draw.
    const double same_frame = std::max(0.0, 1.0 - std::abs(lag_ns) / config.frame_length_ns);
    return 1.0 - v_m * coherence(lag_ns) * same_frame;
  }

  const double t_p = config.envelope.t_p;
  if (config.envelope.kind == EnvelopeKind::Square) {
    if (v_m == 0) return triangle_corr(lag_ns, t_p);
    if (t_c) return fringe_corr(lag_ns, FringeParams{t_p, *t_c, v_m});
    return triangle_corr(lag_ns, t_p) * (1 - v_m);
  }
  // Autocorrelation of a Gaussian envelope with intensity std sd has std sqrt(2) sd.
  const double sd = t_p / kFwhmPerSigma;
  const double shape = std::exp(-lag_ns * lag_ns / (4 * sd * sd));
  return shape * (1 - v_m * coherence(lag_ns));
}

}  // namespace hom
