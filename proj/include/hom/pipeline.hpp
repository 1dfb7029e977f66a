#pragma once

// Simulation-to-histogram orchestration shared by the CLI and the test suites.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hom/fit.hpp"
#include "hom/tcspc.hpp"

namespace hom {

struct AcquisitionOptions {
  std::int64_t bin_width_ps = kDefaultBinPs;
  std::int64_t range_ps = kDefaultRangePs;
  int workers = 1;
  std::int64_t chunk_frames = 1 << 20;  ///< frames simulated per batch before correlating
};

/// Simulates config.num_frames frames in batches and correlates them without
/// holding the full event stream. Equal to correlate(run(config)).
CoincidenceHistogram acquire_histogram(const SimConfig& config, const AcquisitionOptions& options = {});

/// Like acquire_histogram but returns one histogram per contiguous block of
/// frames (`batches` near-equal blocks). Merging them gives acquire_histogram.
std::vector<CoincidenceHistogram> acquire_batches(const SimConfig& config, int batches,
                                                  const AcquisitionOptions& options = {});

struct SweepOptions {
  std::vector<double> mu;
  double v_m = 0.46;
  bool monte_carlo = false;
  double t_p_ns = 100.0;
  double rep_rate_mhz = 2.0;
  double mean_photons_per_pulse = 0.1;
  std::int64_t frames = 100000;
  std::uint64_t seed = 1;
  std::int64_t bin_width_ps = kDefaultBinPs;
  int workers = 1;
  int batches = 50;  ///< frame blocks for the Monte Carlo error estimate
};

struct SweepPoint {
  double mu = 0;
  double v_analytic = 0;
  std::optional<double> v_mc;
  std::optional<double> v_mc_err;          ///< batch-means standard error
  std::optional<double> v_mc_poisson_err;  ///< Poisson-only propagation, for comparison
  std::string error;
};

/// Visibility versus mu = t_c / t_p. The Monte Carlo column runs a parallel and
/// an orthogonal pulsed acquisition per point (Gaussian frequency noise with
/// 1/e coherence time mu * t_p, contrast sqrt(2 v_m)) and applies the
/// integrated estimator with bound t_p, with a batch-means error. A failing point records its error and
/// the sweep continues.
std::vector<SweepPoint> run_sweep(const SweepOptions& options);

/// Parses "a:b:n" (n linearly spaced points) or a comma-separated list.
std::vector<double> parse_grid(const std::string& text);

}  // namespace hom
