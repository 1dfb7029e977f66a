#pragma once

// Weighted nonlinear least squares for the triangle, fringe and dip models,
// and the integrated-visibility estimator.

#include <Eigen/Dense>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "hom/errors.hpp"
#include "hom/histogram.hpp"

namespace hom {

struct FitResult {
  std::string model;
  std::vector<std::string> names;
  Eigen::VectorXd params;
  Eigen::VectorXd std_errors;   ///< empty unless converged
  Eigen::MatrixXd covariance;   ///< over all parameters; fixed ones have zero rows
  double chi2 = 0;
  int dof = 0;
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> flags;
  std::map<std::string, double> derived;

  double param(std::string_view name) const;
  double error(std::string_view name) const;
  bool has_flag(std::string_view flag) const;
};

/// Fit did not converge; carries the last iterate.
class FitError : public NumericError {
 public:
  FitError(const std::string& what, FitResult last) : NumericError(what), last_(std::move(last)) {}
  const FitResult& last() const { return last_; }

 private:
  FitResult last_;
};

struct FitOptions {
  int max_iterations = 200;
  double rel_chi2_tol = 1e-10;
  double step_tol = 1e-12;
  bool poisson_reweight = true;
};

/// A model y = f(x; p) with analytic gradient, box bounds and fixed entries.
struct CurveModel {
  std::string name;
  std::vector<std::string> names;
  std::function<double(double x, const Eigen::VectorXd& p, Eigen::Ref<Eigen::VectorXd> grad)> eval;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<bool> fixed;
};

/// Levenberg-Marquardt on the unmasked points of `data`, starting at `start`.
/// Does not throw on non-convergence; check FitResult::converged.
FitResult least_squares(const CurveModel& model, const Series& data, const Eigen::VectorXd& start,
                        const FitOptions& options = {});

/// amplitude * max(0, 1 - |t| / t_p). Parameters {t_p, amplitude}.
FitResult fit_triangle(const Series& data, const FitOptions& options = {});

/// triangle(t; t_p) * [1 - v_m exp(-t^2 / t_c^2)] on normalized data.
/// Parameters {t_c, v_m, t_p}; t_p is held at `fixed_t_p` when given.
FitResult fit_fringe(const Series& data, std::optional<double> fixed_t_p = std::nullopt,
                     const FitOptions& options = {});

enum class DipWidth { OneOverE, Fwhm };

struct DipFitOptions {
  std::optional<double> fixed_n_inf;  ///< known asymptote, e.g. 1 for a frame-normalized reconstruction
  DipWidth width = DipWidth::OneOverE;
  FitOptions base;
};

/// n_inf [1 - v exp(-t^2 / t_c^2)]. Parameters {n_inf, v, t_c} (or {n_inf, v,
/// fwhm}); the other width is reported in `derived` with its error.
FitResult fit_dip(const Series& data, const DipFitOptions& options = {});

struct VisibilityEstimate {
  double value = 0;
  double error = 0;
  double parallel_sum = 0;
  double orthogonal_sum = 0;
};

/// 1 - (sum of parallel counts * frame ratio) / (sum of orthogonal counts)
/// over bins with |t| <= bound_ns; Poisson error propagation (a lower bound
/// when frames carry several photons). With
/// `subtract_wings` the mean per-bin level at |t| > bound_ns is removed from
/// each histogram first.
VisibilityEstimate estimate_visibility_integrated(const CoincidenceHistogram& parallel,
                                                  const CoincidenceHistogram& orthogonal, double bound_ns,
                                                  bool subtract_wings = false);

/// The same estimate over histograms acquired in disjoint frame batches. The
/// value equals the estimate on the merged histograms; the error comes from the
/// scatter of the per-batch sums (batch means), which captures multi-photon
/// frames and shared per-frame phases that Poisson propagation misses. Each arm
/// needs at least two batches.
VisibilityEstimate estimate_visibility_batched(const std::vector<CoincidenceHistogram>& parallel,
                                               const std::vector<CoincidenceHistogram>& orthogonal, double bound_ns);

}  // namespace hom
