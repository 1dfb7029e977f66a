#pragma once

// Frame-based Monte Carlo of detection events behind the polarization HOM
// interferometer. Each frame (one pulse, or one CW segment) gets independent
// uniform global phases for both arms and one frequency offset for the noisy
// arm; detector intensities follow the classical two-field interference law and
// clicks are an inhomogeneous Poisson process sampled by thinning.

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "hom/model.hpp"

namespace hom {

enum class Mode { Pulsed, Cw };
enum class Polarization { Parallel, Orthogonal };
enum class Detector : std::uint8_t { D1 = 1, D2 = 2 };

struct NoiseModel {
  enum class Kind { None, Gaussian, Uniform };
  Kind kind = Kind::None;
  double width_mhz = 0;  ///< Gaussian std or uniform half-span of the offset, MHz

  static NoiseModel none() { return {}; }
  static NoiseModel gaussian(double sigma_mhz) { return {Kind::Gaussian, sigma_mhz}; }
  static NoiseModel uniform(double half_span_mhz) { return {Kind::Uniform, half_span_mhz}; }
  /// Gaussian noise with the given 1/e coherence half-width.
  static NoiseModel from_coherence_time(double t_c_ns) { return gaussian(sigma_from_tc(t_c_ns)); }

  /// 1/e mutual coherence time; only defined for Gaussian noise.
  std::optional<double> coherence_time_ns() const;
  bool operator==(const NoiseModel&) const = default;
};

struct SimConfig {
  Mode mode = Mode::Pulsed;
  PulseEnvelope envelope{EnvelopeKind::Square, 100.0};
  double rep_rate_mhz = 2.0;           ///< Pulsed only
  double frame_length_ns = 100000.0;   ///< Cw only
  double mean_photons_per_pulse = 0.1; ///< summed over both detectors, per frame
  Polarization polarization = Polarization::Parallel;
  NoiseModel noise;
  double interference_contrast = 1.0;  ///< field overlap; v_m = contrast^2 * balance / 2
  double arm_imbalance = 1.0;          ///< power ratio weak/strong arm, (0, 1]
  double dark_rate_khz = 0.0;          ///< per detector
  double jitter_ps = 0.0;              ///< Gaussian timing smear, 0 = off
  std::int64_t num_frames = 100000;
  std::uint64_t seed = 1;

  /// Throws ConfigError naming the offending field.
  void validate() const;

  double frame_span_ns() const;
  std::int64_t frame_span_ps() const;
  /// 4 r / (1 + r)^2 for power ratio r between the arms.
  double balance_factor() const;
  /// Visibility ceiling implied by contrast and balance.
  double v_m() const;

  bool operator==(const SimConfig&) const = default;
};

struct DetectionEvent {
  std::int64_t frame_index = 0;
  std::int64_t time_ps = 0;  ///< absolute; frame f spans [f * span, (f + 1) * span)
  Detector detector = Detector::D1;

  bool operator==(const DetectionEvent&) const = default;
};

struct EventStream {
  SimConfig config;
  std::int64_t frame_begin = 0;
  std::int64_t frame_end = 0;
  std::vector<DetectionEvent> events;  ///< sorted by (frame_index, time_ps, detector)
  std::array<std::uint64_t, 2> singles{0, 0};

  std::int64_t frames() const { return frame_end - frame_begin; }
};

/// Random quantities drawn once per frame.
struct FrameDraw {
  double theta_a = 0;       ///< global phase of arm A, rad
  double theta_b = 0;       ///< global phase of arm B, rad
  double delta_nu_mhz = 0;  ///< frequency offset of arm B relative to A
};

/// Expected click rate (photons per ns) at `detector`, `t_ns` after the frame start.
double detector_intensity(const SimConfig& config, const FrameDraw& draw, Detector detector, double t_ns);

/// Events of one frame, sorted by time. Depends only on (config, frame_index).
std::vector<DetectionEvent> simulate_frame(const SimConfig& config, std::int64_t frame_index);

/// Frames [begin, end) on `workers` threads; output is independent of `workers`.
EventStream simulate_frames(const SimConfig& config, std::int64_t begin, std::int64_t end, int workers = 1);

EventStream run_pulsed(const SimConfig& config, int workers = 1);
EventStream run_cw(const SimConfig& config, int workers = 1);
/// Dispatches on config.mode.
EventStream run(const SimConfig& config, int workers = 1);

/// Expected coincidence density at `lag_ns`, normalized so that the
/// non-interfering (orthogonal) density at zero lag is 1. Dark counts and
/// jitter are not included. Throws DomainError for Uniform noise.
double expected_density(const SimConfig& config, double lag_ns);

}  // namespace hom
