#pragma once

// Closed-form coincidence models for time-resolved two-photon interference of
// phase-randomized weak coherent pulses, plus a quadrature route for the
// integrated visibility.
//
// Units: times in ns, frequencies in MHz. The mutual coherence time t_c is
// always the 1/e half-width of exp(-t^2 / t_c^2); FWHM values go through
// tc_fwhm_convert.

#include <cmath>
#include <concepts>
#include <numbers>
#include <string>
#include <vector>

#include "hom/errors.hpp"
#include "hom/quadrature.hpp"

namespace hom {

enum class EnvelopeKind { Square, Gaussian };

template <std::floating_point Scalar>
struct PulseEnvelopeT {
  EnvelopeKind kind = EnvelopeKind::Square;
  Scalar t_p = 100;  ///< FWHM of the single-pulse intensity envelope, ns

  void validate() const {
    if (!(t_p > 0)) throw DomainError("PulseEnvelope: t_p must be positive");
  }
  bool operator==(const PulseEnvelopeT&) const = default;
};

/// Model triple of the parallel-polarization fringe.
template <std::floating_point Scalar>
struct FringeParamsT {
  Scalar t_p;  ///< pulse FWHM, ns
  Scalar t_c;  ///< mutual coherence 1/e half-width, ns
  Scalar v_m;  ///< visibility ceiling for t_c >> t_p

  void validate() const {
    if (!(t_p > 0)) throw DomainError("FringeParams: t_p must be positive");
    if (!(t_c > 0)) throw DomainError("FringeParams: t_c must be positive");
    if (!(v_m >= 0 && v_m <= Scalar(0.5)))
      throw DomainError("FringeParams: v_m must lie in [0, 0.5]");
  }
};

/// Conventional HOM dip N_inf [1 - v exp(-dt^2 / t_c^2)].
template <std::floating_point Scalar>
struct DipParamsT {
  Scalar n_inf;
  Scalar v;
  Scalar t_c;

  void validate() const {
    if (!(n_inf > 0)) throw DomainError("DipParams: n_inf must be positive");
    if (!(v >= 0 && v <= 1)) throw DomainError("DipParams: v must lie in [0, 1]");
    if (!(t_c > 0)) throw DomainError("DipParams: t_c must be positive");
  }
};

/// Ratio of mutual coherence time to pulse duration.
template <std::floating_point Scalar>
struct RatioMuT {
  Scalar value;

  explicit RatioMuT(Scalar mu) : value(mu) {
    if (!(mu > 0)) throw DomainError("RatioMu: mu must be positive");
  }
  static RatioMuT from_times(Scalar t_c, Scalar t_p) {
    if (!(t_p > 0)) throw DomainError("RatioMu: t_p must be positive");
    return RatioMuT(t_c / t_p);
  }
};

using PulseEnvelope = PulseEnvelopeT<double>;
using FringeParams = FringeParamsT<double>;
using DipParams = DipParamsT<double>;
using RatioMu = RatioMuT<double>;

namespace detail {
template <std::floating_point Scalar>
void check_unit_vm(Scalar v_m, const char* where) {
  if (!(v_m >= 0 && v_m <= Scalar(0.5))) throw DomainError(std::string(where) + ": v_m must lie in [0, 0.5]");
}
}  // namespace detail

/// Convolution of two identical square pulses, peak-normalized; zero beyond |t| >= t_p.
template <std::floating_point Scalar>
Scalar triangle_corr(Scalar t, Scalar t_p) {
  if (!(t_p > 0)) throw DomainError("triangle_corr: t_p must be positive");
  const Scalar r = std::abs(t) / t_p;
  return r >= 1 ? Scalar(0) : Scalar(1) - r;
}

/// Parallel-polarization fringe: triangle times the Gaussian coherence dip.
template <std::floating_point Scalar>
Scalar fringe_corr(Scalar t, const FringeParamsT<Scalar>& p) {
  p.validate();
  const Scalar tri = triangle_corr(t, p.t_p);
  if (tri == 0) return 0;
  return tri * (Scalar(1) - p.v_m * std::exp(-(t * t) / (p.t_c * p.t_c)));
}

template <std::floating_point Scalar>
Scalar hom_dip(Scalar dt, const DipParamsT<Scalar>& p) {
  p.validate();
  return p.n_inf * (Scalar(1) - p.v * std::exp(-(dt * dt) / (p.t_c * p.t_c)));
}

/// Integrated visibility for square pulses as a function of mu = t_c / t_p:
///   V = v_m [ sqrt(pi) mu erf(1/mu) + mu^2 (exp(-1/mu^2) - 1) ].
/// The second term is evaluated with expm1; for large mu it is -1 + O(mu^-2).
template <std::floating_point Scalar>
Scalar visibility_closed(RatioMuT<Scalar> mu, Scalar v_m) {
  detail::check_unit_vm(v_m, "visibility_closed");
  const Scalar m = mu.value;
  const Scalar inv = Scalar(1) / m;
  const Scalar gaussian_part = std::sqrt(std::numbers::pi_v<Scalar>) * m * std::erf(inv);
  const Scalar linear_part = m * m * std::expm1(-inv * inv);
  return v_m * (gaussian_part + linear_part);
}

/// Independent route: both integrals of the visibility definition by adaptive
/// quadrature over [-t_p, t_p] (in units of t_p). `tol` bounds the absolute
/// error of the returned visibility.
template <std::floating_point Scalar>
Scalar visibility_quadrature(RatioMuT<Scalar> mu, Scalar v_m, Scalar tol = Scalar(1e-10)) {
  detail::check_unit_vm(v_m, "visibility_quadrature");
  if (!(tol > 0 && tol <= Scalar(1e-6)))
    throw DomainError("visibility_quadrature: tol must lie in (0, 1e-6]");
  const Scalar m = mu.value;
  auto orthogonal = [](Scalar x) { return Scalar(1) - std::abs(x); };
  auto parallel = [&](Scalar x) {
    return (Scalar(1) - std::abs(x)) * (Scalar(1) - v_m * std::exp(-(x * x) / (m * m)));
  };
  // The dip term has width mu; seed the panel list at that scale so narrow
  // dips are not missed by the first K15 pass.
  std::vector<Scalar> breaks{Scalar(0)};
  if (m < Scalar(0.5))
    for (Scalar k : {Scalar(-4), Scalar(-2), Scalar(-1), Scalar(1), Scalar(2), Scalar(4)}) breaks.push_back(k * m);
  const auto perp = integrate_adaptive<Scalar>(orthogonal, -1, 1, tol / 4, {Scalar(0)});
  const auto par = integrate_adaptive<Scalar>(parallel, -1, 1, tol / 4, breaks);
  return Scalar(1) - par.value / perp.value;
}

/// Gaussian-envelope counterpart: v_m sqrt(mu^2 / (1 + mu^2)).
template <std::floating_point Scalar>
Scalar visibility_gaussian_pulse(RatioMuT<Scalar> mu, Scalar v_m) {
  const Scalar m = mu.value;
  return v_m * m / std::sqrt(Scalar(1) + m * m);
}

/// Visibility when coincidences are integrated over a window of full width
/// t_r instead of the whole pulse: t_p is replaced by t_r / 2.
template <std::floating_point Scalar>
Scalar windowed_visibility(Scalar t_r, Scalar t_c, Scalar v_m) {
  if (!(t_r > 0)) throw DomainError("windowed_visibility: t_r must be positive");
  if (!(t_c > 0)) throw DomainError("windowed_visibility: t_c must be positive");
  return visibility_closed(RatioMuT<Scalar>(t_c / (t_r / 2)), v_m);
}

enum class WidthDirection { ToFwhm, FromFwhm };

/// 2 sqrt(ln 2): FWHM of exp(-t^2/t_c^2) in units of t_c.
template <std::floating_point Scalar>
inline constexpr Scalar kFwhmPerTc = Scalar(1.66510922231539551270632928979);

template <std::floating_point Scalar>
Scalar tc_fwhm_convert(Scalar value, WidthDirection direction) {
  if (!(value > 0)) throw DomainError("tc_fwhm_convert: width must be positive");
  return direction == WidthDirection::ToFwhm ? value * kFwhmPerTc<Scalar> : value / kFwhmPerTc<Scalar>;
}

/// Std of a Gaussian optical frequency offset (MHz) whose phase average
/// <cos(2 pi dnu t)> = exp(-2 pi^2 sigma^2 t^2) equals exp(-t^2 / t_c^2).
template <std::floating_point Scalar>
Scalar sigma_from_tc(Scalar t_c_ns) {
  if (!(t_c_ns > 0)) throw DomainError("sigma_from_tc: t_c must be positive");
  // 1 / (ns) = 1e3 MHz
  return Scalar(1e3) / (std::numbers::sqrt2_v<Scalar> * std::numbers::pi_v<Scalar> * t_c_ns);
}

template <std::floating_point Scalar>
Scalar tc_from_sigma(Scalar sigma_mhz) {
  if (!(sigma_mhz > 0)) throw DomainError("tc_from_sigma: sigma must be positive");
  return Scalar(1e3) / (std::numbers::sqrt2_v<Scalar> * std::numbers::pi_v<Scalar> * sigma_mhz);
}

/// Polarization extinction in dB from the normalized residual coincidence level.
template <std::floating_point Scalar>
Scalar extinction_db(Scalar leak) {
  if (!(leak > 0 && leak <= 1)) throw DomainError("extinction_db: leak must lie in (0, 1]");
  return -10 * std::log10(leak);
}

}  // namespace hom
