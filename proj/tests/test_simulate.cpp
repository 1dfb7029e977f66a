#include <cmath>
#include <numbers>

#include "doctest.h"
#include "hom/simulate.hpp"
#include "hom/tcspc.hpp"

using namespace hom;

namespace {

SimConfig pulsed(Polarization pol, double mean = 2.0) {
  SimConfig c;
  c.mean_photons_per_pulse = mean;
  c.polarization = pol;
  c.num_frames = 20000;
  c.seed = 11;
  return c;
}

}  // namespace

TEST_CASE("config validation names the field") {
  SimConfig c;
  c.num_frames = 0;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("num_frames"), ConfigError);
  c = SimConfig{};
  c.rep_rate_mhz = 6;  // period 166 ns < 2 * 100 ns
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("rep_rate_mhz"), ConfigError);
  c = SimConfig{};
  c.interference_contrast = 1.2;
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("interference_contrast"), ConfigError);
  c = SimConfig{};
  c.noise = NoiseModel::gaussian(-1);
  CHECK_THROWS_WITH_AS(c.validate(), doctest::Contains("noise_sigma_mhz"), ConfigError);
  c = SimConfig{};
  c.mean_photons_per_pulse = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_THROWS_AS(run_cw(SimConfig{}), ConfigError);
}

TEST_CASE("visibility ceiling from contrast and arm balance") {
  SimConfig c;
  CHECK(c.v_m() == doctest::Approx(0.5));
  c.interference_contrast = 0.959;
  CHECK(c.v_m() == doctest::Approx(0.46).epsilon(1e-3));
  c.interference_contrast = 1;
  c.arm_imbalance = 0.5;
  CHECK(c.balance_factor() == doctest::Approx(8.0 / 9.0));
  CHECK(c.v_m() == doctest::Approx(4.0 / 9.0));
}

TEST_CASE("output is independent of the worker count") {
  SimConfig c = pulsed(Polarization::Parallel);
  c.noise = NoiseModel::from_coherence_time(45);
  c.num_frames = 5000;
  const auto one = simulate_frames(c, 0, c.num_frames, 1);
  for (int w : {2, 3, 8}) {
    const auto many = simulate_frames(c, 0, c.num_frames, w);
    CHECK(many.events == one.events);
    CHECK(many.singles == one.singles);
  }
  // a frame depends only on its index
  const auto f = simulate_frame(c, 1234);
  std::vector<DetectionEvent> from_stream;
  for (const auto& e : one.events)
    if (e.frame_index == 1234) from_stream.push_back(e);
  CHECK(f == from_stream);
  // and a sub-range reproduces the same frames
  const auto tail = simulate_frames(c, 4000, 5000, 2);
  CHECK(std::equal(tail.events.begin(), tail.events.end(), one.events.end() - static_cast<long>(tail.events.size())));
}

TEST_CASE("seed changes the stream") {
  SimConfig c = pulsed(Polarization::Parallel);
  c.num_frames = 100;
  auto a = run(c);
  c.seed = 12;
  auto b = run(c);
  CHECK(a.events != b.events);
}

TEST_CASE("events are ordered, inside their frame and on integer picoseconds") {
  SimConfig c = pulsed(Polarization::Parallel);
  c.jitter_ps = 300;
  c.dark_rate_khz = 50;
  c.num_frames = 3000;
  const auto s = run(c);
  const std::int64_t span = c.frame_span_ps();
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    CHECK(e.time_ps >= e.frame_index * span);
    CHECK(e.time_ps < (e.frame_index + 1) * span);
    if (i > 0) CHECK(s.events[i - 1].time_ps <= e.time_ps);
  }
}

TEST_CASE("photon counts per detector are Poisson with mean n/2") {
  SimConfig c = pulsed(Polarization::Orthogonal);
  c.num_frames = 100000;
  const auto s = run(c);
  std::vector<int> per_frame(static_cast<std::size_t>(c.num_frames), 0);
  for (const auto& e : s.events)
    if (e.detector == Detector::D1) ++per_frame[static_cast<std::size_t>(e.frame_index)];
  double mean = 0, var = 0, zeros = 0;
  for (int k : per_frame) {
    mean += k;
    zeros += k == 0;
  }
  mean /= c.num_frames;
  for (int k : per_frame) var += (k - mean) * (k - mean);
  var /= c.num_frames - 1;
  CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
  CHECK(zeros / c.num_frames == doctest::Approx(std::exp(-1.0)).epsilon(0.01));
}

TEST_CASE("parallel interference only redistributes intensity between detectors") {
  SimConfig c = pulsed(Polarization::Parallel);
  c.noise = NoiseModel::gaussian(5);
  for (double phase : {0.0, 1.0, 2.5}) {
    FrameDraw d{0.3, 0.3 + phase, 1.7};
    for (double t : {230.0, 250.0, 280.0}) {
      const double sum = detector_intensity(c, d, Detector::D1, t) + detector_intensity(c, d, Detector::D2, t);
      CHECK(sum == doctest::Approx(2.0 / 100.0));
    }
  }
  // outside the pulse nothing is emitted
  CHECK(detector_intensity(c, FrameDraw{}, Detector::D1, 10.0) == 0.0);
  CHECK(detector_intensity(c, FrameDraw{}, Detector::D1, 301.0) == 0.0);
}

TEST_CASE("orthogonal intensity ignores the phase draw") {
  SimConfig c = pulsed(Polarization::Orthogonal);
  const FrameDraw a{0.1, 2.0, 3.0}, b{1.4, 0.2, -8.0};
  for (double t : {210.0, 250.0, 295.0}) {
    CHECK(detector_intensity(c, a, Detector::D1, t) == detector_intensity(c, b, Detector::D1, t));
    CHECK(detector_intensity(c, a, Detector::D2, t) == detector_intensity(c, b, Detector::D2, t));
  }
}

TEST_CASE("square pulses occupy the centred window") {
  SimConfig c = pulsed(Polarization::Orthogonal);
  c.num_frames = 2000;
  const auto s = run(c);
  const std::int64_t span = c.frame_span_ps();
  for (const auto& e : s.events) {
    const std::int64_t local = e.time_ps - e.frame_index * span;
    CHECK(local >= 200000);
    CHECK(local <= 300000);
  }
}

TEST_CASE("gaussian envelope has the requested FWHM") {
  SimConfig c = pulsed(Polarization::Orthogonal);
  c.envelope = PulseEnvelope{EnvelopeKind::Gaussian, 60.0};
  c.num_frames = 60000;
  const auto s = run(c);
  double m2 = 0;
  const std::int64_t span = c.frame_span_ps();
  for (const auto& e : s.events) {
    const double x = (e.time_ps - e.frame_index * span) * 1e-3 - 250.0;
    m2 += x * x;
  }
  const double sd = std::sqrt(m2 / static_cast<double>(s.events.size()));
  CHECK(sd * 2 * std::sqrt(2 * std::log(2.0)) == doctest::Approx(60.0).epsilon(0.01));
}

TEST_CASE("CW without frequency noise gives a flat reduced coincidence level") {
  SimConfig c;
  c.mode = Mode::Cw;
  c.frame_length_ns = 1e5;
  c.mean_photons_per_pulse = 200;
  c.num_frames = 20000;
  c.seed = 3;
  const auto par = run(c);
  c.polarization = Polarization::Orthogonal;
  c.seed = 4;
  const auto orth = run(c);
  const auto hp = correlate(par, 8192, 204800);
  const auto ho = correlate(orth, 8192, 204800);
  double sp = 0, so = 0;
  for (std::size_t i = 0; i < hp.size(); ++i) {
    sp += static_cast<double>(hp.counts[i]);
    so += static_cast<double>(ho.counts[i]);
  }
  // Poisson error on both sums plus the per-frame phase spread: the relative
  // sd of 1 - cos^2 over a uniform phase is sqrt(1/8) / (1/2).
  const double rel_sd = std::sqrt(1 / sp + 1 / so + 0.5 / static_cast<double>(c.num_frames));
  INFO("ratio " << sp / so << " rel_sd " << rel_sd << " pairs " << sp);
  CHECK(std::abs(sp / so / 0.5 - 1) <= 4 * rel_sd);
  CHECK(rel_sd < 0.05);
  CHECK(expected_density(c, 0.0) == 1.0);
  c.polarization = Polarization::Parallel;
  CHECK(expected_density(c, 50.0) == doctest::Approx(1 - 0.5 * (1 - 50.0 / 1e5)));
}

TEST_CASE("uniform frequency noise produces a sinc fringe") {
  SimConfig c;
  c.mode = Mode::Cw;
  c.frame_length_ns = 1e5;
  c.mean_photons_per_pulse = 200;
  c.num_frames = 40000;
  c.noise = NoiseModel::uniform(10.0);  // first zero at 1 / (2 * 10 MHz) = 50 ns
  c.seed = 5;
  CHECK_THROWS_AS(expected_density(c, 0.0), DomainError);
  const auto par = correlate(run(c), 4096, 102400);
  c.polarization = Polarization::Orthogonal;
  c.seed = 6;
  const auto orth = correlate(run(c), 4096, 102400);
  double level = 0;
  for (auto k : orth.counts) level += static_cast<double>(k);
  level /= static_cast<double>(orth.size());
  for (std::size_t i = 0; i < par.size(); ++i) {
    const double lag = par.center_ns(i);
    // coherence averaged over the bin by the midpoint rule
    double coh = 0;
    const int sub = 64;
    for (int j = 0; j < sub; ++j) {
      const double t = lag + (j + 0.5) / sub * 4.096 - 2.048;
      const double x = 2 * std::numbers::pi * 10.0 * 1e-3 * t;
      coh += x == 0 ? 1.0 : std::sin(x) / x;
    }
    coh /= sub;
    const double expected = 1 - 0.5 * coh;
    const double observed = static_cast<double>(par.counts[i]) / level;
    const double sigma = std::sqrt(static_cast<double>(par.counts[i]) + 1) / level;
    CAPTURE(lag);
    CHECK(std::abs(observed - expected) < 4.5 * sigma + 0.005);
  }
}
