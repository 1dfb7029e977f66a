#include "hom/tcspc.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hom {

Eigen::VectorXd CoincidenceHistogram::centers_ns() const {
  Eigen::VectorXd c(static_cast<Eigen::Index>(size()));
  for (std::size_t i = 0; i < size(); ++i) c[static_cast<Eigen::Index>(i)] = center_ns(i);
  return c;
}

void CoincidenceHistogram::merge(const CoincidenceHistogram& other) {
  if (!same_binning(other)) throw DomainError("CoincidenceHistogram::merge: different binning");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  total_pairs += other.total_pairs;
  singles[0] += other.singles[0];
  singles[1] += other.singles[1];
  frames += other.frames;
}

Eigen::Index Series::active() const {
  Eigen::Index n = 0;
  for (Eigen::Index i = 0; i < size(); ++i)
    if (mask.empty() || !mask[static_cast<std::size_t>(i)]) ++n;
  return n;
}

void Series::resize(Eigen::Index n) {
  x.setZero(n);
  y.setZero(n);
  variance.setZero(n);
  unit.setZero(n);
  mask.assign(static_cast<std::size_t>(n), false);
}

Series Series::from_counts(const CoincidenceHistogram& h) {
  Series s;
  s.resize(static_cast<Eigen::Index>(h.size()));
  for (std::size_t i = 0; i < h.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    s.x[k] = h.center_ns(i);
    s.y[k] = static_cast<double>(h.counts[i]);
    s.variance[k] = std::max(s.y[k], 1.0);
    s.unit[k] = 1.0;
  }
  return s;
}

Correlator::Correlator(std::int64_t bin_width_ps, std::int64_t range_ps, Mode mode) : mode_(mode) {
  if (bin_width_ps <= 0) throw DomainError("correlate: bin width must be positive");
  if (range_ps <= 0) throw DomainError("correlate: range must be positive");
  hist_.bin_width_ps = bin_width_ps;
  const std::int64_t bins = (range_ps + bin_width_ps - 1) / bin_width_ps;
  hist_.range_rounded = bins * bin_width_ps != range_ps;
  hist_.range_ps = bins * bin_width_ps;
  if (hist_.half_bins() < 0) throw DomainError("correlate: range must exceed one bin width");
  hist_.counts.assign(static_cast<std::size_t>(2 * hist_.half_bins() + 1), 0);
  hist_.info.mode = mode;
}

void Correlator::count(std::int64_t lag_ps) {
  const std::int64_t w = hist_.bin_width_ps;
  const std::int64_t shifted = lag_ps + w / 2;
  // floor division for negative lags
  const std::int64_t k = shifted >= 0 ? shifted / w : -((-shifted + w - 1) / w);
  const std::int64_t half = hist_.half_bins();
  if (k < -half || k > half) return;
  ++hist_.counts[static_cast<std::size_t>(k + half)];
  ++hist_.total_pairs;
}

void Correlator::add(const EventStream& stream) {
  if (stream.config.mode != mode_) throw DomainError("correlate: stream mode does not match correlator mode");
  if (!has_info_) {
    const SimConfig& c = stream.config;
    hist_.info.polarization = c.polarization;
    if (c.mode == Mode::Pulsed) hist_.info.pulse_fwhm_ns = c.envelope.t_p;
    hist_.info.coherence_time_ns = c.noise.coherence_time_ns();
    has_info_ = true;
  }
  hist_.frames += stream.frames();
  hist_.singles[0] += stream.singles[0];
  hist_.singles[1] += stream.singles[1];
  if (mode_ == Mode::Pulsed)
    add_pulsed(stream.events);
  else
    add_cw(stream.events);
}

void Correlator::add_pulsed(std::span<const DetectionEvent> events) {
  std::vector<std::int64_t> d1, d2;
  std::size_t i = 0;
  while (i < events.size()) {
    const std::int64_t frame = events[i].frame_index;
    d1.clear();
    d2.clear();
    for (; i < events.size() && events[i].frame_index == frame; ++i)
      (events[i].detector == Detector::D1 ? d1 : d2).push_back(events[i].time_ps);
    for (std::int64_t a : d1)
      for (std::int64_t b : d2) count(a - b);
  }
}

void Correlator::add_cw(std::span<const DetectionEvent> events) {
  const std::int64_t reach = hist_.range_ps;
  for (const auto& e : events) {
    if (e.time_ps < last_time_) throw DomainError("correlate: CW events are not in time order");
    last_time_ = e.time_ps;
    const int self = e.detector == Detector::D1 ? 0 : 1;
    auto& others = recent_[1 - self];
    while (!others.empty() && e.time_ps - others.front() >= reach) others.pop_front();
    for (std::int64_t t : others) count(self == 0 ? e.time_ps - t : t - e.time_ps);
    auto& mine = recent_[self];
    while (!mine.empty() && e.time_ps - mine.front() >= reach) mine.pop_front();
    mine.push_back(e.time_ps);
  }
}

CoincidenceHistogram correlate(const EventStream& stream, std::int64_t bin_width_ps, std::int64_t range_ps) {
  Correlator c(bin_width_ps, range_ps, stream.config.mode);
  c.add(stream);
  return std::move(c).take();
}

namespace {

NormalizedHistogram scaled(const CoincidenceHistogram& target, double baseline_counts, NormalizationMode mode) {
  if (!(baseline_counts > 0)) throw NumericError("normalize: baseline level is not positive");
  NormalizedHistogram out;
  static_cast<Series&>(out) = Series::from_counts(target);
  const double u = 1.0 / baseline_counts;
  out.y *= u;
  out.unit.setConstant(u);
  for (Eigen::Index i = 0; i < out.size(); ++i) out.variance[i] = std::max(out.y[i] / u, 1.0) * u * u;
  out.mode = mode;
  out.baseline_counts = baseline_counts;
  out.info = target.info;
  return out;
}

double triangle_amplitude(const CoincidenceHistogram& h) {
  try {
    return fit_triangle(Series::from_counts(h)).param("amplitude");
  } catch (const FitError& e) {
    throw NumericError(std::string("normalize: triangle fit of the baseline failed: ") + e.what());
  }
}

double mean_count(const CoincidenceHistogram& h) {
  double acc = 0;
  for (auto c : h.counts) acc += static_cast<double>(c);
  return acc / static_cast<double>(h.size());
}

}  // namespace

NormalizedHistogram normalize(const CoincidenceHistogram& target, NormalizationMode mode,
                              const CoincidenceHistogram* reference, const NormalizeOptions& options) {
  if (target.frames <= 0) throw DomainError("normalize: target has no frames");
  switch (mode) {
    case NormalizationMode::AgainstOrthogonal: {
      if (!reference) throw DomainError("normalize: AgainstOrthogonal requires a reference histogram");
      if (!target.same_binning(*reference)) throw DomainError("normalize: reference binning differs from target");
      if (reference->frames <= 0) throw DomainError("normalize: reference has no frames");
      const double level =
          reference->info.mode == Mode::Pulsed ? triangle_amplitude(*reference) : mean_count(*reference);
      // reference level expressed at the target's acquisition length
      const double frames_ratio = static_cast<double>(target.frames) / static_cast<double>(reference->frames);
      return scaled(target, level * frames_ratio, mode);
    }
    case NormalizationMode::TrianglePeakFit: {
      if (target.info.mode != Mode::Pulsed) throw DomainError("normalize: TrianglePeakFit needs pulsed data");
      return scaled(target, triangle_amplitude(target), mode);
    }
    case NormalizationMode::WingLevel: {
      if (target.info.mode != Mode::Cw) throw DomainError("normalize: WingLevel needs CW data");
      std::optional<double> threshold = options.wing_threshold_ns;
      if (!threshold && target.info.coherence_time_ns) threshold = 3 * *target.info.coherence_time_ns;
      double acc = 0;
      std::size_t n = 0;
      if (threshold) {
        for (std::size_t i = 0; i < target.size(); ++i)
          if (std::abs(target.center_ns(i)) > *threshold) {
            acc += static_cast<double>(target.counts[i]);
            ++n;
          }
      }
      if (n == 0) {
        auto out = scaled(target, mean_count(target), mode);
        out.flags.push_back("wing_level_fallback_global_mean");
        return out;
      }
      return scaled(target, acc / static_cast<double>(n), mode);
    }
  }
  throw DomainError("normalize: unknown mode");
}

DipCurve reconstruct_dip(const CoincidenceHistogram& parallel, const CoincidenceHistogram& orthogonal, double t_r_ns) {
  if (!parallel.same_binning(orthogonal)) throw DomainError("reconstruct_dip: histograms have different binning");
  if (!(t_r_ns * 1e3 >= static_cast<double>(parallel.bin_width_ps)))
    throw DomainError("reconstruct_dip: window must be at least one bin wide");
  if (parallel.frames <= 0 || orthogonal.frames <= 0) throw DomainError("reconstruct_dip: empty acquisition");

  const std::size_t n = parallel.size();
  const double w_ns = static_cast<double>(parallel.bin_width_ps) * 1e-3;
  // bins whose centres lie within t_r/2 of the current centre
  const auto reach = static_cast<std::int64_t>(std::floor(t_r_ns / 2 / w_ns + 1e-9));
  const double scale = static_cast<double>(orthogonal.frames) / static_cast<double>(parallel.frames);

  // prefix sums for O(n) windows
  std::vector<double> cp(n + 1, 0.0), co(n + 1, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    cp[i + 1] = cp[i] + static_cast<double>(parallel.counts[i]);
    co[i + 1] = co[i] + static_cast<double>(orthogonal.counts[i]);
  }

  DipCurve out;
  out.resize(static_cast<Eigen::Index>(n));
  out.t_r_ns = t_r_ns;
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    const auto lo = static_cast<std::size_t>(std::max<std::int64_t>(0, static_cast<std::int64_t>(i) - reach));
    const auto hi = static_cast<std::size_t>(std::min<std::int64_t>(static_cast<std::int64_t>(n) - 1,
                                                                    static_cast<std::int64_t>(i) + reach));
    const double sp = cp[hi + 1] - cp[lo];
    const double so = co[hi + 1] - co[lo];
    out.x[k] = parallel.center_ns(i);
    if (so <= 0) {
      out.mask[i] = true;
      out.y[k] = 0;
      continue;
    }
    const double d = scale * sp / so;
    out.y[k] = d;
    out.variance[k] = d * d * (1 / std::max(sp, 1.0) + 1 / so);
    if (sp == 0) out.variance[k] = scale * scale / (so * so);
  }
  return out;
}

}  // namespace hom
