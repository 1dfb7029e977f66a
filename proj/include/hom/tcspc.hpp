#pragma once

// Time-difference histogramming of detection events, normalization of the
// resulting coincidence histograms and window-bounded dip reconstruction.

#include <cstdint>
#include <deque>
#include <optional>
#include <span>

#include "hom/fit.hpp"
#include "hom/histogram.hpp"
#include "hom/simulate.hpp"

namespace hom {

inline constexpr std::int64_t kDefaultBinPs = 512;
inline constexpr std::int64_t kDefaultRangePs = 200'000;

/// Multi-stop (all pairs) cross-correlator D1 x D2.
///
/// Pulsed: every D1/D2 pair of the same frame. CW: every pair whose lag falls
/// inside the histogram range, across frame boundaries; events must arrive in
/// global time order and state carries over between add() calls, so a long run
/// may be fed in consecutive chunks.
class Correlator {
 public:
  Correlator(std::int64_t bin_width_ps, std::int64_t range_ps, Mode mode);

  void add(const EventStream& stream);
  const CoincidenceHistogram& histogram() const { return hist_; }
  CoincidenceHistogram take() && { return std::move(hist_); }

 private:
  void count(std::int64_t lag_ps);
  void add_pulsed(std::span<const DetectionEvent> events);
  void add_cw(std::span<const DetectionEvent> events);

  CoincidenceHistogram hist_;
  Mode mode_;
  bool has_info_ = false;
  std::int64_t last_time_ = INT64_MIN;
  std::deque<std::int64_t> recent_[2];
};

/// Histogram of t(D1) - t(D2) for a whole stream. `range_ps` is rounded up to a
/// multiple of the bin width (flagged in the result).
CoincidenceHistogram correlate(const EventStream& stream, std::int64_t bin_width_ps = kDefaultBinPs,
                               std::int64_t range_ps = kDefaultRangePs);

struct NormalizeOptions {
  /// WingLevel: bins with |t| beyond this are wings; default 3 t_c from the
  /// acquisition info.
  std::optional<double> wing_threshold_ns;
};

/// Scales counts so that the non-interfering coincidence level at zero lag is 1.
///
/// AgainstOrthogonal divides by the fitted zero-lag amplitude of `reference`
/// (triangle for pulsed, flat level for CW), after scaling the target by the
/// frame-count ratio. TrianglePeakFit uses the target's own fitted triangle
/// amplitude. WingLevel (CW) divides by the mean count in the wings and falls
/// back to the global mean, flagged, when there are none.
NormalizedHistogram normalize(const CoincidenceHistogram& target, NormalizationMode mode,
                              const CoincidenceHistogram* reference = nullptr, const NormalizeOptions& options = {});

/// D(t) = scale * sum_{|u - t| <= t_r/2} par(u) / sum_{|u - t| <= t_r/2} orth(u),
/// scale = frames(orth) / frames(par). Points with an empty denominator are masked.
DipCurve reconstruct_dip(const CoincidenceHistogram& parallel, const CoincidenceHistogram& orthogonal, double t_r_ns);

}  // namespace hom
