#pragma once

// Fisher scoring for the maximum likelihood estimate, the bias-corrected
// estimate theta_mle - bias(theta_mle), and Firth's bias-reduced estimate
// (root of U*(theta) = U(theta) - K(theta) bias(theta)).

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "ellbias/bias.hpp"
#include "ellbias/errors.hpp"
#include "ellbias/model.hpp"

namespace ellbias {

enum class Estimator { MLE, BC, BR };

inline const char* estimator_name(Estimator e) {
  switch (e) {
    case Estimator::MLE: return "MLE";
    case Estimator::BC: return "BC";
    case Estimator::BR: return "BR";
  }
  return "?";
}

struct EstimatorSet {
  bool mle = true;
  bool bc = true;
  bool br = true;

  static EstimatorSet all() { return {}; }
  static EstimatorSet only(Estimator e) {
    return {e == Estimator::MLE, e == Estimator::BC, e == Estimator::BR};
  }
  bool contains(Estimator e) const {
    return e == Estimator::MLE ? mle : e == Estimator::BC ? bc : br;
  }
};

struct FitOptions {
  int max_iter = 200;
  double tol = 1e-8;
  int step_halving_max = 30;
  std::optional<VectorXd> start;
  EstimatorSet estimators;
  /// Unset: use the block-orthogonal bias path whenever the model declares a split.
  std::optional<bool> use_orthogonal_path;
  /// Rethrow estimation errors instead of recording them in the result.
  bool throw_on_failure = false;

  void validate() const {
    if (!(tol > 0.0)) throw ConfigError("tol must be positive");
    if (max_iter < 1) throw ConfigError("max_iter must be at least 1");
    if (step_halving_max < 0) throw ConfigError("step_halving_max must be non-negative");
  }
};

struct IterationRecord {
  int iteration = 0;
  double loglik = 0.0;
  double step = 0.0;        // max_r |delta_r| / (1 + |theta_r|) of the accepted step
  double score = 0.0;       // max_r |U_r| / sqrt(K_rr) (modified score for BR)
  int halvings = 0;
};

struct Estimate {
  VectorXd theta;
  MatrixXd cov;     // K(theta)^-1, empty when K could not be inverted there
  VectorXd se;
  double loglik = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
  std::string message;
  std::vector<IterationRecord> trace;
};

struct FitResult {
  int n = 0;
  int p = 0;
  std::optional<Estimate> mle;
  std::optional<Estimate> bc;
  std::optional<Estimate> br;
  VectorXd bias;  // second-order bias evaluated at theta_mle
  double loglik = std::numeric_limits<double>::quiet_NaN();
  double aic = std::numeric_limits<double>::quiet_NaN();
  double bic = std::numeric_limits<double>::quiet_NaN();
  double aicc = std::numeric_limits<double>::quiet_NaN();

  const std::optional<Estimate>& get(Estimator e) const {
    return e == Estimator::MLE ? mle : e == Estimator::BC ? bc : br;
  }

  /// True when every estimator that was attempted converged.
  bool converged() const {
    for (const auto* e : {&mle, &bc, &br})
      if (e->has_value() && !(*e)->converged) return false;
    return true;
  }
};

struct InformationCriteria {
  double aic = 0.0;
  double bic = 0.0;
  double aicc = 0.0;
};

inline InformationCriteria information_criteria(double loglik, int n, int p) {
  if (!std::isfinite(loglik)) throw DomainError("log-likelihood is not finite");
  if (n <= p + 1)
    throw DomainError("AICc needs n > p + 1 (n = " + std::to_string(n) + ", p = " +
                      std::to_string(p) + ")");
  InformationCriteria ic;
  ic.aic = -2.0 * loglik + 2.0 * p;
  ic.bic = -2.0 * loglik + p * std::log(static_cast<double>(n));
  ic.aicc = ic.aic + 2.0 * p * (p + 1.0) / (n - p - 1.0);
  return ic;
}

namespace detail {

inline bool orthogonal_path(const ModelSpec& model, const FitOptions& opts) {
  const bool requested = opts.use_orthogonal_path.value_or(true);
  if (opts.use_orthogonal_path.value_or(false) && !model.orthogonal_split())
    throw ConfigError("orthogonal bias path requested but the model declares no split");
  return requested && model.orthogonal_split().has_value();
}

inline VectorXd bias_at(const ModelSpec& model, const VectorXd& theta, bool orthogonal) {
  return orthogonal ? bias_vector_orthogonal(model, theta).bias : bias_vector(model, theta).bias;
}

inline double relative_step(const VectorXd& delta, const VectorXd& theta) {
  double m = 0.0;
  for (int r = 0; r < delta.size(); ++r) m = std::max(m, std::abs(delta(r)) / (1.0 + std::abs(theta(r))));
  return m;
}

inline double scaled_norm(const VectorXd& u, const MatrixXd& k) {
  double m = 0.0;
  for (int r = 0; r < u.size(); ++r) m = std::max(m, std::abs(u(r)) / std::sqrt(k(r, r)));
  return m;
}

inline VectorXd resolve_start(const ModelSpec& model, const FitOptions& opts) {
  VectorXd start = opts.start ? *opts.start : model.initial_guess();
  model.check_theta(start);
  return start;
}

inline void check_finite_differences(const ModelSpec& model, const VectorXd& theta) {
  if (!model.uses_finite_differences()) return;
  const double d = model.finite_difference_self_check(theta);
  if (d > 1e-4)
    throw DomainError("finite-difference derivatives are not self-consistent (relative gap " +
                      std::to_string(d) + "); supply analytic derivatives");
}

/// Fills cov, se and loglik at est.theta; failures leave them empty.
inline void attach_covariance(const ModelSpec& model, Estimate& est) {
  try {
    const BlockMatrices bm = assemble_blocks(model, est.theta, 1);
    est.loglik = bm.log_likelihood();
    const SpdFactor kf = factor_information(bm.information());
    est.cov = kf.inverse();
    est.se = est.cov.diagonal().cwiseSqrt();
  } catch (const Error& e) {
    est.cov.resize(0, 0);
    est.se.resize(0);
    if (est.message.empty()) est.message = std::string("covariance unavailable: ") + e.what();
  }
}

}  // namespace detail

/// Fisher scoring: theta <- theta + K^-1 U, with step halving on infeasible
/// or likelihood-decreasing steps.
inline Estimate fit_mle_estimate(const ModelSpec& model, const FitOptions& opts) {
  opts.validate();
  Estimate est;
  VectorXd theta = detail::resolve_start(model, opts);
  try {
    detail::check_finite_differences(model, theta);
    BlockMatrices bm = assemble_blocks(model, theta, 1);
    double ll = bm.log_likelihood();
    for (int it = 0; it < opts.max_iter; ++it) {
      const VectorXd u = bm.score();
      const MatrixXd k = bm.information();
      const SpdFactor kf = detail::factor_information(k);
      const VectorXd delta = kf.solve(u);
      const double step = detail::relative_step(delta, theta);
      const double sc = detail::scaled_norm(u, k);

      double alpha = 1.0;
      int halvings = 0;
      bool accepted = false;
      VectorXd cand;
      BlockMatrices cand_bm;
      double cand_ll = ll;
      for (; halvings <= opts.step_halving_max; ++halvings, alpha *= 0.5) {
        cand = theta + alpha * delta;
        try {
          cand_bm = assemble_blocks(model, cand, 1);
        } catch (const LinAlgError&) {
          continue;
        } catch (const DomainError&) {
          continue;
        }
        cand_ll = cand_bm.log_likelihood();
        if (cand_ll >= ll - 1e-12 * (1.0 + std::abs(ll))) {
          accepted = true;
          break;
        }
      }
      const bool small = step < opts.tol && sc < std::sqrt(opts.tol);
      if (!accepted) {
        if (small) {
          est.converged = true;
          est.iterations = it;
          break;
        }
        est.message = "step halving exhausted without an acceptable step";
        est.iterations = it;
        break;
      }
      theta = cand;
      bm = std::move(cand_bm);
      ll = cand_ll;
      est.trace.push_back({it + 1, ll, detail::relative_step(alpha * delta, theta), sc, halvings});
      if (small) {
        est.converged = true;
        est.iterations = it;
        break;
      }
      est.iterations = it + 1;
    }
    if (!est.converged && est.message.empty())
      est.message = "no convergence within " + std::to_string(opts.max_iter) + " iterations";
    if (!bm.full_rank()) est.message += (est.message.empty() ? "" : "; ") + std::string("F is rank deficient");
  } catch (const Error& e) {
    if (opts.throw_on_failure) throw;
    est.converged = false;
    est.message = e.what();
  }
  est.theta = theta;
  if (opts.throw_on_failure && !est.converged) throw NonConvergence("MLE: " + est.message);
  detail::attach_covariance(model, est);
  return est;
}

/// U*(theta) = U(theta) - K(theta) bias(theta).
inline VectorXd modified_score(const ModelSpec& model, const VectorXd& theta,
                               std::optional<bool> orthogonal = std::nullopt) {
  const bool orth = orthogonal.value_or(true) && model.orthogonal_split().has_value();
  const BlockMatrices bm = assemble_blocks(model, theta, 1);
  return bm.score() - bm.information() * detail::bias_at(model, theta, orth);
}

/// Modified Fisher scoring: theta <- theta + K^-1 U - bias(theta). Steps are
/// halved when infeasible or when the merit U*' K^-1 U* grows.
inline Estimate fit_br_estimate(const ModelSpec& model, const FitOptions& opts,
                                const VectorXd& start) {
  opts.validate();
  Estimate est;
  VectorXd theta = start;
  model.check_theta(theta);
  try {
    const bool orth = detail::orthogonal_path(model, opts);
    detail::check_finite_differences(model, theta);
    auto evaluate = [&](const VectorXd& th, VectorXd& delta, MatrixXd& k, VectorXd& ustar,
                        double& ll) {
      const BlockMatrices bm = assemble_blocks(model, th, 1);
      ll = bm.log_likelihood();
      k = bm.information();
      const SpdFactor kf = detail::factor_information(k);
      const VectorXd b = detail::bias_at(model, th, orth);
      delta = kf.solve(bm.score()) - b;
      ustar = k * delta;
      return delta.dot(ustar);
    };
    VectorXd delta, ustar;
    MatrixXd k;
    double ll = 0.0;
    double merit = evaluate(theta, delta, k, ustar, ll);
    for (int it = 0; it < opts.max_iter; ++it) {
      const double step = detail::relative_step(delta, theta);
      const double sc = detail::scaled_norm(ustar, k);
      const bool small = step < opts.tol && sc < std::sqrt(opts.tol);

      double alpha = 1.0;
      int halvings = 0;
      bool accepted = false;
      VectorXd cand, cdelta, custar;
      MatrixXd ck;
      double cmerit = merit, cll = ll;
      for (; halvings <= opts.step_halving_max; ++halvings, alpha *= 0.5) {
        cand = theta + alpha * delta;
        try {
          cmerit = evaluate(cand, cdelta, ck, custar, cll);
        } catch (const LinAlgError&) {
          continue;
        } catch (const DomainError&) {
          continue;
        } catch (const SingularInformation&) {
          continue;
        }
        if (cmerit <= merit * (1.0 + 1e-10) + 1e-300 || small) {
          accepted = true;
          break;
        }
      }
      if (!accepted) {
        if (small) {
          est.converged = true;
          est.iterations = it;
          break;
        }
        est.message = "step halving exhausted without an acceptable step";
        est.iterations = it;
        break;
      }
      theta = cand;
      delta = cdelta;
      ustar = custar;
      k = ck;
      merit = cmerit;
      ll = cll;
      est.trace.push_back({it + 1, ll, alpha * step, sc, halvings});
      if (small) {
        est.converged = true;
        est.iterations = it;
        break;
      }
      est.iterations = it + 1;
    }
    if (!est.converged && est.message.empty())
      est.message = "no convergence within " + std::to_string(opts.max_iter) + " iterations";
  } catch (const Error& e) {
    if (opts.throw_on_failure) throw;
    est.converged = false;
    est.message = e.what();
  }
  est.theta = theta;
  if (opts.throw_on_failure && !est.converged) throw NonConvergence("BR: " + est.message);
  detail::attach_covariance(model, est);
  return est;
}

/// Runs the requested estimators. BC needs the MLE; BR starts from the MLE
/// when it converged, otherwise from the starting value.
inline FitResult fit(const ModelSpec& model, const FitOptions& opts = {}) {
  opts.validate();
  FitResult res;
  res.n = model.n();
  res.p = model.p();
  const EstimatorSet& want = opts.estimators;
  const bool need_mle = want.mle || want.bc || want.br;
  if (need_mle) {
    Estimate mle = fit_mle_estimate(model, opts);
    if (mle.converged) {
      res.loglik = mle.loglik;
      if (res.n > res.p + 1) {
        const InformationCriteria ic = information_criteria(mle.loglik, res.n, res.p);
        res.aic = ic.aic;
        res.bic = ic.bic;
        res.aicc = ic.aicc;
      } else if (std::isfinite(mle.loglik)) {
        res.aic = -2.0 * mle.loglik + 2.0 * res.p;
        res.bic = -2.0 * mle.loglik + res.p * std::log(static_cast<double>(res.n));
      }
    }
    if (want.bc) {
      Estimate bc;
      if (!mle.converged) {
        bc.message = "MLE did not converge";
      } else {
        try {
          res.bias = detail::bias_at(model, mle.theta, detail::orthogonal_path(model, opts));
          bc.theta = mle.theta - res.bias;
          bc.converged = true;
          bc.iterations = 0;
          detail::attach_covariance(model, bc);
        } catch (const Error& e) {
          if (opts.throw_on_failure) throw;
          bc.message = e.what();
        }
      }
      res.bc = std::move(bc);
    }
    if (want.br) {
      const VectorXd start = mle.converged ? mle.theta : detail::resolve_start(model, opts);
      res.br = fit_br_estimate(model, opts, start);
    }
    if (want.mle || want.bc) res.mle = std::move(mle);
  }
  return res;
}

inline FitResult fit_mle(const ModelSpec& model, FitOptions opts = {}) {
  opts.estimators = EstimatorSet::only(Estimator::MLE);
  return fit(model, opts);
}

inline FitResult fit_bc(const ModelSpec& model, FitOptions opts = {}) {
  opts.estimators = {true, true, false};
  return fit(model, opts);
}

inline FitResult fit_br(const ModelSpec& model, FitOptions opts = {}) {
  opts.estimators = {false, false, true};
  return fit(model, opts);
}

}  // namespace ellbias
