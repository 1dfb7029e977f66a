#include "hom/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "hom/model.hpp"

namespace hom {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

double FitResult::param(std::string_view name) const {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return params[static_cast<Index>(i)];
  throw DomainError("FitResult: no parameter named " + std::string(name));
}

double FitResult::error(std::string_view name) const {
  if (std_errors.size() == 0) throw NumericError("FitResult: no standard errors (fit did not converge)");
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return std_errors[static_cast<Index>(i)];
  throw DomainError("FitResult: no parameter named " + std::string(name));
}

bool FitResult::has_flag(std::string_view flag) const {
  return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Problem {
  const CurveModel& model;
  std::vector<Index> points;     // active data indices
  std::vector<Index> free;       // free parameter indices
  const Series& data;
  VectorXd variance;             // per active point
};

struct Evaluation {
  VectorXd residual;  // (y - f) / sigma
  MatrixXd jacobian;  // d f / d p_free / sigma
  double chi2 = kInf;
};

Evaluation evaluate(const Problem& pb, const VectorXd& p) {
  const Index n = static_cast<Index>(pb.points.size());
  const Index k = static_cast<Index>(pb.free.size());
  Evaluation ev;
  ev.residual.resize(n);
  ev.jacobian.resize(n, k);
  VectorXd grad(p.size());
  for (Index r = 0; r < n; ++r) {
    const Index i = pb.points[static_cast<std::size_t>(r)];
    grad.setZero();
    const double f = pb.model.eval(pb.data.x[i], p, grad);
    const double inv_sigma = 1.0 / std::sqrt(pb.variance[r]);
    ev.residual[r] = (pb.data.y[i] - f) * inv_sigma;
    for (Index c = 0; c < k; ++c) ev.jacobian(r, c) = grad[pb.free[static_cast<std::size_t>(c)]] * inv_sigma;
  }
  ev.chi2 = ev.residual.squaredNorm();
  if (!std::isfinite(ev.chi2)) ev.chi2 = kInf;
  return ev;
}

bool within_bounds(const CurveModel& m, const VectorXd& p) {
  for (Index i = 0; i < p.size(); ++i) {
    if (!std::isfinite(p[i])) return false;
    if (m.lower.size() && p[i] < m.lower[i]) return false;
    if (m.upper.size() && p[i] > m.upper[i]) return false;
  }
  return true;
}

struct LmOutcome {
  int iterations = 0;
  bool converged = false;
};

LmOutcome levenberg_marquardt(const Problem& pb, VectorXd& p, const FitOptions& opt) {
  LmOutcome out;
  Evaluation ev = evaluate(pb, p);
  double lambda = 1e-3;
  const Index k = static_cast<Index>(pb.free.size());
  for (int it = 0; it < opt.max_iterations; ++it) {
    out.iterations = it + 1;
    const MatrixXd normal = ev.jacobian.transpose() * ev.jacobian;
    const VectorXd gradient = ev.jacobian.transpose() * ev.residual;
    const double diag_floor = std::max(normal.diagonal().maxCoeff(), 1e-300) * 1e-12;

    bool accepted = false;
    VectorXd step;
    Evaluation trial;
    VectorXd p_trial = p;
    while (lambda < 1e12) {
      MatrixXd damped = normal;
      for (Index c = 0; c < k; ++c) damped(c, c) += lambda * std::max(normal(c, c), diag_floor);
      step = damped.ldlt().solve(gradient);
      p_trial = p;
      for (Index c = 0; c < k; ++c) p_trial[pb.free[static_cast<std::size_t>(c)]] += step[c];
      if (step.allFinite() && within_bounds(pb.model, p_trial)) {
        trial = evaluate(pb, p_trial);
        if (trial.chi2 < ev.chi2) {
          accepted = true;
          break;
        }
      }
      lambda *= 10;
    }
    if (!accepted) {
      // No descent direction left at any damping: stationary point.
      out.converged = true;
      break;
    }
    const double rel_change = (ev.chi2 - trial.chi2) / std::max(ev.chi2, 1e-300);
    double free_norm = 0;
    for (Index idx : pb.free) free_norm += p_trial[idx] * p_trial[idx];
    p = p_trial;
    ev = std::move(trial);
    lambda = std::max(lambda / 10, 1e-12);
    if (rel_change < opt.rel_chi2_tol || step.norm() < opt.step_tol * (std::sqrt(free_norm) + opt.step_tol)) {
      out.converged = true;
      break;
    }
  }
  return out;
}

double point_variance(const Series& s, Index i) {
  const double v = s.variance.size() ? s.variance[i] : 0.0;
  if (v > 0 && std::isfinite(v)) return v;
  const double u = s.unit.size() ? s.unit[i] : 0.0;
  return u > 0 ? u * u : 1.0;
}

}  // namespace

FitResult least_squares(const CurveModel& model, const Series& data, const VectorXd& start,
                        const FitOptions& options) {
  const Index np = start.size();
  if (static_cast<Index>(model.names.size()) != np) throw DomainError("least_squares: parameter count mismatch");
  if (!within_bounds(model, start)) throw DomainError("least_squares: start point outside bounds");

  Problem pb{model, {}, {}, data, {}};
  for (Index i = 0; i < data.size(); ++i) {
    const bool masked = !data.mask.empty() && data.mask[static_cast<std::size_t>(i)];
    if (!masked && std::isfinite(data.y[i])) pb.points.push_back(i);
  }
  for (Index j = 0; j < np; ++j)
    if (model.fixed.empty() || !model.fixed[static_cast<std::size_t>(j)]) pb.free.push_back(j);

  const int n_points = static_cast<int>(pb.points.size());
  const int n_free = static_cast<int>(pb.free.size());
  if (n_points - n_free <= 0)
    throw DomainError("least_squares: need more active points than free parameters (have " +
                      std::to_string(n_points) + " points, " + std::to_string(n_free) + " parameters)");

  pb.variance.resize(n_points);
  for (int r = 0; r < n_points; ++r) pb.variance[r] = point_variance(data, pb.points[static_cast<std::size_t>(r)]);

  VectorXd p = start;
  LmOutcome lm = levenberg_marquardt(pb, p, options);

  const bool has_units = data.unit.size() && (data.unit.array() > 0).any();
  if (options.poisson_reweight && has_units) {
    // Variance = expected counts at the current optimum, floored at one count.
    VectorXd grad(np);
    for (int r = 0; r < n_points; ++r) {
      const Index i = pb.points[static_cast<std::size_t>(r)];
      const double u = data.unit[i];
      if (u <= 0) continue;
      const double expected_counts = model.eval(data.x[i], p, grad) / u;
      pb.variance[r] = std::max(expected_counts, 1.0) * u * u;
    }
    const LmOutcome second = levenberg_marquardt(pb, p, options);
    lm.iterations += second.iterations;
    lm.converged = second.converged;
  }

  FitResult res;
  res.model = model.name;
  res.names = model.names;
  res.params = p;
  res.iterations = lm.iterations;
  res.converged = lm.converged;
  res.dof = n_points - n_free;

  const Evaluation ev = evaluate(pb, p);
  res.chi2 = ev.chi2;

  for (Index j : pb.free) {
    const double span = (model.upper.size() && std::isfinite(model.upper[j]))
                            ? std::abs(model.upper[j]) : std::abs(p[j]);
    const double eps = 1e-9 * std::max(span, 1e-12);
    const bool at_lower = model.lower.size() && std::isfinite(model.lower[j]) && p[j] - model.lower[j] <= eps;
    const bool at_upper = model.upper.size() && std::isfinite(model.upper[j]) && model.upper[j] - p[j] <= eps;
    if (at_lower || at_upper) {
      res.converged = false;
      res.flags.push_back("at_bound:" + model.names[static_cast<std::size_t>(j)]);
    }
  }

  res.covariance = MatrixXd::Zero(np, np);
  if (res.converged) {
    const MatrixXd normal = ev.jacobian.transpose() * ev.jacobian;
    Eigen::SelfAdjointEigenSolver<MatrixXd> eig(normal);
    const VectorXd ev_vals = eig.eigenvalues();
    res.std_errors = VectorXd::Zero(np);
    if (ev_vals.minCoeff() <= 1e-14 * std::max(ev_vals.maxCoeff(), 1e-300)) {
      res.flags.push_back("singular_covariance");
      for (Index j : pb.free) res.std_errors[j] = kInf;
    } else {
      MatrixXd cov_free = eig.eigenvectors() * ev_vals.cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
      const double reduced = res.chi2 / res.dof;
      if (reduced > 1) cov_free *= reduced;
      for (int a = 0; a < n_free; ++a)
        for (int b = 0; b < n_free; ++b)
          res.covariance(pb.free[static_cast<std::size_t>(a)], pb.free[static_cast<std::size_t>(b)]) = cov_free(a, b);
      for (Index j : pb.free) res.std_errors[j] = std::sqrt(res.covariance(j, j));
    }
  }
  return res;
}

namespace {

// Points with a usable value, in index order.
std::vector<Index> usable(const Series& s) {
  std::vector<Index> idx;
  for (Index i = 0; i < s.size(); ++i)
    if ((s.mask.empty() || !s.mask[static_cast<std::size_t>(i)]) && std::isfinite(s.y[i])) idx.push_back(i);
  return idx;
}

double max_abs_x(const Series& s, const std::vector<Index>& idx) {
  double m = 0;
  for (Index i : idx) m = std::max(m, std::abs(s.x[i]));
  return m;
}

double typical_spacing(const Series& s, const std::vector<Index>& idx) {
  std::vector<double> xs;
  for (Index i : idx) xs.push_back(s.x[i]);
  std::sort(xs.begin(), xs.end());
  std::vector<double> gaps;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[i - 1]) gaps.push_back(xs[i] - xs[i - 1]);
  if (gaps.empty()) return 1.0;
  std::nth_element(gaps.begin(), gaps.begin() + static_cast<long>(gaps.size() / 2), gaps.end());
  return gaps[gaps.size() / 2];
}

// Second-moment estimate of a triangle's half-base: variance of the
// triangle density on [-t_p, t_p] is t_p^2 / 6.
double moment_half_base(const Series& s, const std::vector<Index>& idx) {
  double w = 0, m1 = 0;
  for (Index i : idx) {
    const double y = std::max(s.y[i], 0.0);
    w += y;
    m1 += y * s.x[i];
  }
  if (!(w > 0)) throw DomainError("fit: histogram has no positive counts");
  const double mean = m1 / w;
  double m2 = 0;
  for (Index i : idx) m2 += std::max(s.y[i], 0.0) * (s.x[i] - mean) * (s.x[i] - mean);
  return 2 * std::sqrt(m2 / w) * std::sqrt(1.5);
}

// Mean y over the few points closest to zero lag.
double value_near_zero(const Series& s, std::vector<Index> idx, const std::function<double(double)>& divide_by) {
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return std::abs(s.x[a]) < std::abs(s.x[b]); });
  const std::size_t n = std::min<std::size_t>(3, idx.size());
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += s.y[idx[i]] / divide_by(s.x[idx[i]]);
  return acc / static_cast<double>(n);
}

double triangle_part(double x, double t_p) {
  const double r = std::abs(x) / t_p;
  return r >= 1 ? 0.0 : 1.0 - r;
}

void throw_if_not_converged(const FitResult& r) {
  if (r.converged) return;
  std::ostringstream msg;
  msg << "fit_" << r.model << ": no convergence after " << r.iterations << " iterations; last iterate";
  for (std::size_t i = 0; i < r.names.size(); ++i) msg << ' ' << r.names[i] << '=' << r.params[static_cast<Index>(i)];
  for (const auto& f : r.flags) msg << " [" << f << ']';
  throw FitError(msg.str(), r);
}

// Smallest |x| at which the dip factor g(x) has recovered to `level`, or a
// Gaussian extrapolation from the outermost usable point when it never does.
double recovery_width(const Series& s, std::vector<Index> idx, const std::function<double(Index)>& factor,
                      const std::function<bool(double)>& usable_at, double depth, double fallback) {
  std::sort(idx.begin(), idx.end(), [&](Index a, Index b) { return std::abs(s.x[a]) < std::abs(s.x[b]); });
  const double level = 1 - depth / std::numbers::e;
  Index outer = -1;
  for (Index i : idx) {
    if (!usable_at(s.x[i])) continue;
    if (std::abs(s.x[i]) > 0 && factor(i) >= level) return std::abs(s.x[i]);
    outer = i;
  }
  if (outer >= 0 && depth > 0) {
    const double ratio = (1 - factor(outer)) / depth;
    if (ratio > 0 && ratio < 1) return std::abs(s.x[outer]) / std::sqrt(-std::log(ratio));
  }
  return fallback;
}

}  // namespace

FitResult fit_triangle(const Series& data, const FitOptions& options) {
  const auto idx = usable(data);
  if (idx.size() < 10) throw DomainError("fit_triangle: need at least 10 unmasked points");
  const double reach = max_abs_x(data, idx);
  const double spacing = typical_spacing(data, idx);

  const double t_p0 = std::min(moment_half_base(data, idx), 3.9 * reach);
  double area = 0;
  for (Index i : idx) area += std::max(data.y[i], 0.0) * spacing;
  const double amp0 = std::max(area / t_p0, 1e-12);

  CurveModel m;
  m.name = "triangle";
  m.names = {"t_p", "amplitude"};
  m.lower = VectorXd::Constant(2, 0.0);
  m.lower << spacing * 1e-3, -kInf;
  m.upper.resize(2);
  m.upper << 4 * reach, kInf;
  m.eval = [](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
    const double t_p = p[0], a = p[1];
    const double tri = triangle_part(x, t_p);
    g[0] = tri > 0 ? a * std::abs(x) / (t_p * t_p) : 0.0;
    g[1] = tri;
    return a * tri;
  };
  VectorXd start(2);
  start << t_p0, amp0;
  FitResult r = least_squares(m, data, start, options);
  throw_if_not_converged(r);
  return r;
}

FitResult fit_fringe(const Series& data, std::optional<double> fixed_t_p, const FitOptions& options) {
  const auto idx = usable(data);
  if (idx.size() < 10) throw DomainError("fit_fringe: need at least 10 unmasked points");
  if (fixed_t_p && !(*fixed_t_p > 0)) throw DomainError("fit_fringe: fixed t_p must be positive");
  const double reach = max_abs_x(data, idx);
  const double spacing = typical_spacing(data, idx);

  const double t_p0 = fixed_t_p ? *fixed_t_p : std::min(moment_half_base(data, idx), 3.9 * reach);
  std::vector<std::string> flags;

  auto tri0 = [&](double x) { return std::max(triangle_part(x, t_p0), 1e-3); };
  double v0 = 1 - value_near_zero(data, idx, tri0);
  if (v0 < 0 || v0 > 0.6) {
    flags.push_back("v_m_init_clamped");
  }
  v0 = std::clamp(v0, 1e-3, 0.6);
  const double t_c0 = recovery_width(
      data, idx, [&](Index i) { return data.y[i] / tri0(data.x[i]); },
      [&](double x) { return triangle_part(x, t_p0) >= 0.2; }, v0, 2 * t_p0);

  CurveModel m;
  m.name = "fringe";
  m.names = {"t_c", "v_m", "t_p"};
  m.lower.resize(3);
  m.lower << spacing * 1e-2, -1.0, spacing * 1e-3;
  m.upper.resize(3);
  m.upper << 1e3 * std::max(reach, t_p0), 1.0, 4 * std::max(reach, t_p0);
  m.fixed = {false, false, fixed_t_p.has_value()};
  m.eval = [](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
    const double t_c = p[0], v = p[1], t_p = p[2];
    const double tri = triangle_part(x, t_p);
    if (tri == 0) {
      g.setZero();
      return 0.0;
    }
    const double e = std::exp(-x * x / (t_c * t_c));
    g[0] = -tri * v * e * 2 * x * x / (t_c * t_c * t_c);
    g[1] = -tri * e;
    g[2] = std::abs(x) / (t_p * t_p) * (1 - v * e);
    return tri * (1 - v * e);
  };
  VectorXd start(3);
  start << std::clamp(t_c0, m.lower[0] * 10, m.upper[0] / 10), v0, t_p0;
  FitResult r = least_squares(m, data, start, options);
  r.flags.insert(r.flags.begin(), flags.begin(), flags.end());

  // With no dip the width is not identifiable; report instead of failing.
  const double v_fit = r.params[1];
  const bool v_defined = r.std_errors.size() && std::isfinite(r.std_errors[1]);
  if ((v_defined && std::abs(v_fit) <= 2 * r.std_errors[1]) || (!r.converged && std::abs(v_fit) < 1e-2)) {
    r.flags.push_back("t_c_unidentifiable");
    return r;
  }
  throw_if_not_converged(r);
  r.derived["fwhm_ns"] = tc_fwhm_convert(r.params[0], WidthDirection::ToFwhm);
  return r;
}

FitResult fit_dip(const Series& data, const DipFitOptions& options) {
  const auto idx = usable(data);
  if (idx.size() < 5) throw DomainError("fit_dip: need at least 5 unmasked points");
  const double reach = max_abs_x(data, idx);
  const double spacing = typical_spacing(data, idx);

  double n0 = 0;
  if (options.fixed_n_inf) {
    if (!(*options.fixed_n_inf > 0)) throw DomainError("fit_dip: fixed n_inf must be positive");
    n0 = *options.fixed_n_inf;
  } else {
    std::vector<Index> outer;
    for (Index i : idx)
      if (std::abs(data.x[i]) >= 0.8 * reach) outer.push_back(i);
    double acc = 0;
    for (Index i : outer) acc += data.y[i];
    n0 = acc / static_cast<double>(outer.size());
    if (!(n0 > 0)) throw DomainError("fit_dip: non-positive wing level");
  }
  const double v0 = std::clamp(1 - value_near_zero(data, idx, [&](double) { return n0; }), 1e-3, 1.0);
  const double t_c0 = recovery_width(
      data, idx, [&](Index i) { return data.y[i] / n0; }, [](double) { return true; }, v0, reach);
  if (!options.fixed_n_inf && reach < 2 * t_c0) {
    std::ostringstream msg;
    msg << "fit_dip: curve has no wings (max |t| = " << reach << " ns, initial t_c = " << t_c0
        << " ns); acquire a larger range or fix n_inf";
    throw DomainError(msg.str());
  }

  const bool fwhm = options.width == DipWidth::Fwhm;
  const double k = kFwhmPerTc<double>;
  CurveModel m;
  m.name = "dip";
  m.names = {"n_inf", "v", fwhm ? "fwhm" : "t_c"};
  m.lower.resize(3);
  m.lower << 0.0, -1.0, spacing * 1e-2 * (fwhm ? k : 1.0);
  m.upper.resize(3);
  m.upper << kInf, 1.5, 1e3 * reach * (fwhm ? k : 1.0);
  m.fixed = {options.fixed_n_inf.has_value(), false, false};
  // width w relates to t_c by w = scale * t_c
  const double scale = fwhm ? k : 1.0;
  m.eval = [scale](double x, const VectorXd& p, Eigen::Ref<VectorXd> g) {
    const double n = p[0], v = p[1], w = p[2];
    const double a = scale * x / w;
    const double e = std::exp(-a * a);
    g[0] = 1 - v * e;
    g[1] = -n * e;
    g[2] = -n * v * e * 2 * a * a / w;
    return n * (1 - v * e);
  };
  VectorXd start(3);
  start << n0, v0, std::clamp(t_c0 * scale, m.lower[2] * 10, m.upper[2] / 10);
  FitResult r = least_squares(m, data, start, options.base);
  throw_if_not_converged(r);

  const double w = r.params[2];
  const double w_err = r.std_errors[2];
  if (fwhm) {
    r.derived["t_c_ns"] = w / k;
    r.derived["t_c_err_ns"] = w_err / k;
  } else {
    r.derived["fwhm_ns"] = w * k;
    r.derived["fwhm_err_ns"] = w_err * k;
  }
  return r;
}

VisibilityEstimate estimate_visibility_integrated(const CoincidenceHistogram& parallel,
                                                  const CoincidenceHistogram& orthogonal, double bound_ns,
                                                  bool subtract_wings) {
  if (!parallel.same_binning(orthogonal))
    throw DomainError("estimate_visibility_integrated: histograms have different binning");
  if (!(bound_ns > 0) || bound_ns * 1e3 > static_cast<double>(parallel.range_ps))
    throw DomainError("estimate_visibility_integrated: bound must lie in (0, range]");
  if (parallel.frames <= 0 || orthogonal.frames <= 0)
    throw DomainError("estimate_visibility_integrated: frame counts must be positive");

  auto sums = [&](const CoincidenceHistogram& h) {
    double inside = 0, wings = 0;
    std::size_t n_in = 0, n_wing = 0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      const double c = static_cast<double>(h.counts[i]);
      if (std::abs(h.center_ns(i)) <= bound_ns) {
        inside += c;
        ++n_in;
      } else {
        wings += c;
        ++n_wing;
      }
    }
    if (subtract_wings) {
      if (n_wing == 0) throw DomainError("estimate_visibility_integrated: no bins beyond the bound for wing subtraction");
      inside -= wings / static_cast<double>(n_wing) * static_cast<double>(n_in);
    }
    return inside;
  };

  VisibilityEstimate est;
  est.parallel_sum = sums(parallel);
  est.orthogonal_sum = sums(orthogonal);
  if (!(est.orthogonal_sum > 0)) throw DomainError("estimate_visibility_integrated: orthogonal sum is zero");
  const double scale = static_cast<double>(orthogonal.frames) / static_cast<double>(parallel.frames);
  const double ratio = est.parallel_sum * scale / est.orthogonal_sum;
  est.value = 1 - ratio;
  const double rel_p = est.parallel_sum > 0 ? 1 / est.parallel_sum : 0.0;
  est.error = std::abs(ratio) * std::sqrt(rel_p + 1 / est.orthogonal_sum);
  return est;
}

VisibilityEstimate estimate_visibility_batched(const std::vector<CoincidenceHistogram>& parallel,
                                               const std::vector<CoincidenceHistogram>& orthogonal, double bound_ns) {
  if (parallel.size() < 2 || orthogonal.size() < 2)
    throw DomainError("estimate_visibility_batched: each arm needs at least two batches");
  auto merged = [](const std::vector<CoincidenceHistogram>& batches) {
    CoincidenceHistogram all = batches.front();
    for (std::size_t b = 1; b < batches.size(); ++b) all.merge(batches[b]);
    return all;
  };
  const auto all_p = merged(parallel);
  const auto all_o = merged(orthogonal);
  VisibilityEstimate est = estimate_visibility_integrated(all_p, all_o, bound_ns);

  // Variance of an arm's total from the spread of batch sums around their
  // frame-weighted share of the total.
  auto relative_variance = [&](const std::vector<CoincidenceHistogram>& batches, const CoincidenceHistogram& all,
                               double total) {
    double ss = 0;
    for (const auto& h : batches) {
      double inside = 0;
      for (std::size_t i = 0; i < h.size(); ++i)
        if (std::abs(h.center_ns(i)) <= bound_ns) inside += static_cast<double>(h.counts[i]);
      const double share = total * static_cast<double>(h.frames) / static_cast<double>(all.frames);
      ss += (inside - share) * (inside - share);
    }
    const double n = static_cast<double>(batches.size());
    return total > 0 ? ss * n / (n - 1) / (total * total) : 0.0;
  };
  const double ratio = 1 - est.value;
  est.error = std::abs(ratio) * std::sqrt(relative_variance(parallel, all_p, est.parallel_sum) +
                                          relative_variance(orthogonal, all_o, est.orthogonal_sum));
  return est;
}

}  // namespace hom
