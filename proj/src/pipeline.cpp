#include "hom/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "hom/rng.hpp"

namespace hom {

CoincidenceHistogram acquire_histogram(const SimConfig& config, const AcquisitionOptions& options) {
  config.validate();
  if (options.chunk_frames <= 0) throw DomainError("acquire_histogram: chunk size must be positive");
  Correlator correlator(options.bin_width_ps, options.range_ps, config.mode);
  for (std::int64_t begin = 0; begin < config.num_frames; begin += options.chunk_frames) {
    const std::int64_t end = std::min(config.num_frames, begin + options.chunk_frames);
    correlator.add(simulate_frames(config, begin, end, options.workers));
  }
  return std::move(correlator).take();
}

std::vector<CoincidenceHistogram> acquire_batches(const SimConfig& config, int batches,
                                                  const AcquisitionOptions& options) {
  config.validate();
  if (batches < 1 || batches > config.num_frames)
    throw DomainError("acquire_batches: batch count must lie in [1, num_frames]");
  if (options.chunk_frames <= 0) throw DomainError("acquire_histogram: chunk size must be positive");
  std::vector<CoincidenceHistogram> out;
  out.reserve(static_cast<std::size_t>(batches));
  const std::int64_t total = config.num_frames;
  for (int b = 0; b < batches; ++b) {
    const std::int64_t lo = total * b / batches;
    const std::int64_t hi = total * (b + 1) / batches;
    Correlator correlator(options.bin_width_ps, options.range_ps, config.mode);
    for (std::int64_t begin = lo; begin < hi; begin += options.chunk_frames)
      correlator.add(simulate_frames(config, begin, std::min(hi, begin + options.chunk_frames), options.workers));
    out.push_back(std::move(correlator).take());
  }
  return out;
}

std::vector<SweepPoint> run_sweep(const SweepOptions& o) {
  if (o.mu.empty()) throw DomainError("sweep: empty mu grid");
  for (double m : o.mu)
    if (!(m >= 0.05 && m <= 50)) throw DomainError("sweep: mu values must lie in [0.05, 50]");
  if (!(o.v_m >= 0 && o.v_m <= 0.5)) throw DomainError("sweep: v_m must lie in [0, 0.5]");

  std::vector<SweepPoint> out;
  std::uint64_t seed_state = o.seed;
  for (double mu : o.mu) {
    SweepPoint p;
    p.mu = mu;
    p.v_analytic = visibility_closed(RatioMu(mu), o.v_m);
    const std::uint64_t par_seed = splitmix64(seed_state);
    const std::uint64_t orth_seed = splitmix64(seed_state);
    if (o.monte_carlo) {
      try {
        SimConfig par;
        par.mode = Mode::Pulsed;
        par.envelope = {EnvelopeKind::Square, o.t_p_ns};
        par.rep_rate_mhz = o.rep_rate_mhz;
        par.mean_photons_per_pulse = o.mean_photons_per_pulse;
        par.interference_contrast = std::sqrt(2 * o.v_m);
        par.noise = NoiseModel::from_coherence_time(mu * o.t_p_ns);
        par.num_frames = o.frames;
        par.polarization = Polarization::Parallel;
        par.seed = par_seed;
        SimConfig orth = par;
        orth.polarization = Polarization::Orthogonal;
        orth.seed = orth_seed;

        AcquisitionOptions acq;
        acq.bin_width_ps = o.bin_width_ps;
        acq.range_ps = std::max<std::int64_t>(kDefaultRangePs, std::llround(2 * o.t_p_ns * 1e3));
        acq.workers = o.workers;
        const int batches = static_cast<int>(std::min<std::int64_t>(o.batches, o.frames));
        const auto est = estimate_visibility_batched(acquire_batches(par, batches, acq),
                                                     acquire_batches(orth, batches, acq), o.t_p_ns);
        p.v_mc = est.value;
        p.v_mc_err = est.error;
        const double ratio = 1 - est.value;
        p.v_mc_poisson_err = std::abs(ratio) * std::sqrt(1 / est.parallel_sum + 1 / est.orthogonal_sum);
      } catch (const std::exception& e) {
        p.error = e.what();
      }
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<double> parse_grid(const std::string& text) {
  auto num = [&](std::string_view s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) throw DomainError("grid: cannot parse '" + std::string(s) + "'");
    return v;
  };
  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ':');) parts.push_back(part);
    if (parts.size() != 3) throw DomainError("grid: expected start:stop:count");
    const double a = num(parts[0]), b = num(parts[1]);
    const double n = num(parts[2]);
    if (!(n >= 1) || n != std::floor(n)) throw DomainError("grid: count must be a positive integer");
    const auto count = static_cast<int>(n);
    for (int i = 0; i < count; ++i) grid.push_back(count == 1 ? a : a + (b - a) * i / (count - 1));
  } else {
    std::stringstream ss(text);
    for (std::string part; std::getline(ss, part, ',');) grid.push_back(num(part));
  }
  if (grid.empty()) throw DomainError("grid: no points");
  return grid;
}

}  // namespace hom
