#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "hom/simulate.hpp"

namespace hom {

/// Acquisition context carried alongside a histogram.
struct AcquisitionInfo {
  Mode mode = Mode::Pulsed;
  Polarization polarization = Polarization::Parallel;
  std::optional<double> pulse_fwhm_ns;
  std::optional<double> coherence_time_ns;  ///< 1/e half-width implied by the noise model
  std::string source_digest;
};

/// Counts of signed detection-time differences t(D1) - t(D2).
/// Bin k is centred on k * bin_width_ps and covers [(k - 1/2) w, (k + 1/2) w).
struct CoincidenceHistogram {
  std::int64_t bin_width_ps = 512;
  std::int64_t range_ps = 0;  ///< half-range, a multiple of bin_width_ps
  bool range_rounded = false; ///< requested range was rounded up to a multiple of the bin width
  std::vector<std::uint64_t> counts;
  std::uint64_t total_pairs = 0;
  std::array<std::uint64_t, 2> singles{0, 0};
  std::int64_t frames = 0;
  AcquisitionInfo info;

  /// Largest |k|; edge bins that would cross the range are dropped.
  std::int64_t half_bins() const { return range_ps / bin_width_ps - 1; }
  std::size_t size() const { return counts.size(); }
  double center_ns(std::size_t i) const {
    return static_cast<double>((static_cast<std::int64_t>(i) - half_bins()) * bin_width_ps) * 1e-3;
  }
  Eigen::VectorXd centers_ns() const;
  bool same_binning(const CoincidenceHistogram& other) const {
    return bin_width_ps == other.bin_width_ps && range_ps == other.range_ps;
  }
  /// Adds counts, pairs, singles and frames of a compatibly binned partial histogram.
  void merge(const CoincidenceHistogram& other);
};

/// Points for curve fitting. `unit` converts one count into value units
/// (value = counts * unit); 0 means the point is not a scaled count and keeps
/// its variance through Poisson re-weighting.
struct Series {
  Eigen::VectorXd x;         ///< lag, ns
  Eigen::VectorXd y;
  Eigen::VectorXd variance;
  Eigen::VectorXd unit;
  std::vector<bool> mask;    ///< true = excluded

  Eigen::Index size() const { return x.size(); }
  Eigen::Index active() const;
  void resize(Eigen::Index n);

  /// Raw counts of a histogram (unit 1, zero-count bins get variance 1).
  static Series from_counts(const CoincidenceHistogram& h);
};

enum class NormalizationMode { AgainstOrthogonal, TrianglePeakFit, WingLevel };

struct NormalizedHistogram : Series {
  NormalizationMode mode = NormalizationMode::AgainstOrthogonal;
  double baseline_counts = 0;  ///< counts (at target acquisition length) that map to 1
  std::vector<std::string> flags;
  AcquisitionInfo info;
};

/// Conventional HOM dip rebuilt from time-resolved data.
struct DipCurve : Series {
  double t_r_ns = 0;
  std::vector<std::string> flags;
};

}  // namespace hom
