#pragma once

// Monte Carlo runner: bias and root mean squared error of the MLE, BC and BR
// estimators over simulated replications, plus the leave-one-out D-hat
// statistic.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ellbias/errors.hpp"
#include "ellbias/fit.hpp"
#include "ellbias/model.hpp"
#include "ellbias/report.hpp"
#include "ellbias/sampling.hpp"
#include "ellbias/zoo.hpp"

namespace ellbias {

/// Builds the model (covariates, placeholder responses) for sample size n
/// from a design seed.
using DesignFactory = std::function<ModelSpec(int n, std::uint64_t design_seed)>;

struct SimConfig {
  std::string name = "simulation";
  DesignFactory design;
  VectorXd theta;
  std::vector<int> n_values;
  int replications = 1000;
  EstimatorSet estimators;
  std::uint64_t seed = 20240601;
  /// 0: ELLBIAS_THREADS or the hardware concurrency.
  int threads = 0;
  /// Draw covariates once per n (default) or anew in each replication.
  bool redraw_covariates = false;
  /// Start each fit at the true theta (otherwise at the model heuristic).
  bool start_at_truth = true;
  FitOptions fit;

  void validate() const {
    if (!design) throw ConfigError("simulation needs a design");
    if (replications < 1) throw ConfigError("replications must be at least 1");
    if (n_values.empty()) throw ConfigError("simulation needs at least one sample size");
    if (theta.size() == 0) throw ConfigError("simulation needs the true theta");
    fit.validate();
  }
};

struct EstimatorSummary {
  Estimator estimator = Estimator::MLE;
  VectorXd bias;      // mean(theta_hat) - theta
  VectorXd rmse;      // sqrt(mean((theta_hat - theta)^2))
  VectorXd se_bias;   // Monte Carlo standard error of bias
  int used = 0;       // converged replications
  int failed = 0;     // excluded replications
};

struct SimCell {
  int n = 0;
  std::vector<EstimatorSummary> estimators;

  const EstimatorSummary* find(Estimator e) const {
    for (const auto& s : estimators)
      if (s.estimator == e) return &s;
    return nullptr;
  }
};

struct SimReport {
  std::string name;
  std::string family;
  int replications = 0;
  std::uint64_t seed = 0;
  VectorXd theta;
  std::vector<std::string> parameter_names;
  std::vector<SimCell> cells;

  const SimCell* cell(int n) const {
    for (const auto& c : cells)
      if (c.n == n) return &c;
    return nullptr;
  }
};

inline int default_thread_count() {
  if (const char* env = std::getenv("ELLBIAS_THREADS")) {
    const int t = std::atoi(env);
    if (t > 0) return t;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(k) for k in [0, count) on `threads` workers.
inline void parallel_for(int count, int threads, const std::function<void(int)>& body) {
  threads = std::max(1, std::min(threads, count));
  if (threads == 1) {
    for (int k = 0; k < count; ++k) body(k);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int k = next++; k < count && !failed; k = next++) {
        try {
          body(k);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

/// Responses drawn from the model at theta.
inline ModelSpec simulate_responses(const ModelSpec& model, const VectorXd& theta, Rng& rng) {
  std::vector<VectorXd> ys(model.n());
  for (int i = 0; i < model.n(); ++i) {
    const VectorXd mu = model.mean(theta, i);
    const MatrixXd sigma = model.scale(theta, i);
    ys[i] = sample(model.family(), mu, sigma, rng);
  }
  return model.with_responses(ys);
}

namespace detail {

struct Replicate {
  VectorXd theta[3];
  bool ok[3] = {false, false, false};
};

inline std::uint64_t cell_key(std::uint64_t n, std::uint64_t r) { return (n << 32) ^ r; }

inline int estimator_index(Estimator e) { return static_cast<int>(e); }

}  // namespace detail

inline SimReport run_simulation(const SimConfig& cfg) {
  cfg.validate();
  const int threads = cfg.threads > 0 ? cfg.threads : default_thread_count();
  SimReport rep;
  rep.name = cfg.name;
  rep.replications = cfg.replications;
  rep.seed = cfg.seed;
  rep.theta = cfg.theta;
  const int p = static_cast<int>(cfg.theta.size());
  const Estimator all[3] = {Estimator::MLE, Estimator::BC, Estimator::BR};

  for (int n : cfg.n_values) {
    const std::uint64_t design_seed = splitmix64(cfg.seed ^ (0xd1b54a32d192ed03ULL * (n + 1)));
    const ModelSpec base = cfg.design(n, design_seed);
    if (base.p() != p) throw ConfigError("design has a different parameter count than theta");
    if (rep.parameter_names.empty()) {
      for (int r = 0; r < p; ++r) rep.parameter_names.push_back(base.parameter_name(r));
      rep.family = base.family().name();
    }
    FitOptions fo = cfg.fit;
    fo.estimators = cfg.estimators;
    fo.throw_on_failure = false;
    if (cfg.start_at_truth) fo.start = cfg.theta;

    std::vector<detail::Replicate> out(cfg.replications);
    parallel_for(cfg.replications, threads, [&](int r) {
      Rng rng = substream(cfg.seed, detail::cell_key(n, r));
      const ModelSpec design =
          cfg.redraw_covariates ? cfg.design(n, splitmix64(design_seed + 1 + r)) : base;
      detail::Replicate& rec = out[r];
      try {
        const ModelSpec m = simulate_responses(design, cfg.theta, rng);
        const FitResult res = fit(m, fo);
        for (Estimator e : all) {
          const auto& est = res.get(e);
          if (cfg.estimators.contains(e) && est && est->converged && est->theta.allFinite()) {
            rec.theta[detail::estimator_index(e)] = est->theta;
            rec.ok[detail::estimator_index(e)] = true;
          }
        }
      } catch (const Error&) {
        // counted as a failure for every estimator
      }
    });

    SimCell cell;
    cell.n = n;
    for (Estimator e : all) {
      if (!cfg.estimators.contains(e)) continue;
      const int k = detail::estimator_index(e);
      EstimatorSummary s;
      s.estimator = e;
      VectorXd sum = VectorXd::Zero(p), sum2 = VectorXd::Zero(p);
      for (const auto& rec : out) {
        if (!rec.ok[k]) {
          ++s.failed;
          continue;
        }
        const VectorXd d = rec.theta[k] - cfg.theta;
        sum += d;
        sum2 += d.cwiseProduct(d);
        ++s.used;
      }
      if (s.used > 0) {
        s.bias = sum / s.used;
        s.rmse = (sum2 / s.used).cwiseSqrt();
        const VectorXd var = (sum2 / s.used - s.bias.cwiseProduct(s.bias)).cwiseMax(0.0);
        s.se_bias = s.used > 1 ? VectorXd((var * s.used / (s.used - 1.0) / s.used).cwiseSqrt())
                               : VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
      } else {
        s.bias = s.rmse = s.se_bias = VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
      }
      cell.estimators.push_back(std::move(s));
    }
    rep.cells.push_back(std::move(cell));
  }
  return rep;
}

/// Long-format CSV: n,parameter,estimator,bias,rmse,se_bias,used,failed.
inline void write_report_csv(const SimReport& rep, std::ostream& os) {
  os << "n,parameter,estimator,bias,rmse,se_bias,used,failed\n";
  os << std::setprecision(17);
  for (const auto& c : rep.cells)
    for (const auto& s : c.estimators)
      for (Eigen::Index r = 0; r < rep.theta.size(); ++r)
        os << c.n << ',' << detail::csv_field(rep.parameter_names[r]) << ',' << estimator_name(s.estimator) << ','
           << s.bias(r) << ',' << s.rmse(r) << ',' << s.se_bias(r) << ',' << s.used << ','
           << s.failed << '\n';
}

/// Aligned table: one row per (n, parameter), Bias and sqrt(MSE) per estimator.
inline void write_report_text(const SimReport& rep, std::ostream& os) {
  os << rep.name << " (" << rep.family << "), " << rep.replications << " replications, seed "
     << rep.seed << "\n";
  if (rep.cells.empty()) return;
  auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(6) << v;
    return s.str();
  };
  std::ostringstream head;
  head << std::left << std::setw(6) << "n" << std::setw(14) << "theta";
  for (const auto& s : rep.cells.front().estimators)
    head << std::right << std::setw(14) << (std::string(estimator_name(s.estimator)) + " bias")
         << std::setw(14) << "sqrt(MSE)";
  os << head.str() << "\n";
  for (const auto& c : rep.cells) {
    for (Eigen::Index r = 0; r < rep.theta.size(); ++r) {
      os << std::left << std::setw(6) << (r == 0 ? std::to_string(c.n) : "") << std::setw(14)
         << rep.parameter_names[r];
      for (const auto& s : c.estimators)
        os << std::right << std::setw(14) << num(s.bias(r)) << std::setw(14) << num(s.rmse(r));
      os << "\n";
    }
    os << std::left << std::setw(20) << "  used/failed";
    for (const auto& s : c.estimators)
      os << std::right << std::setw(28) << (std::to_string(s.used) + "/" + std::to_string(s.failed));
    os << "\n";
  }
}

// ---------------------------------------------------------------------------
// Experiment designs

/// Sigmoid mean with constant scale; x_i ~ U(0, x_max) drawn from the design seed.
inline DesignFactory sigmoid_design(DensityFamily family, double x_max = 10.0) {
  if (!(x_max > 0.0)) throw ConfigError("x_max must be positive");
  return [family, x_max](int n, std::uint64_t seed) {
    Rng rng = substream(seed, 0);
    std::uniform_real_distribution<double> unif(0.0, x_max);
    VectorXd x(n);
    for (int i = 0; i < n; ++i) {
      do x(i) = unif(rng);
      while (x(i) <= 0.0);
    }
    return zoo::build_sigmoid(x, VectorXd::Zero(n), family);
  };
}

inline VectorXd sigmoid_true_theta() {
  VectorXd th(5);
  th << 50.0, 500.0, 0.5, 2.0, 200.0;
  return th;
}

/// Errors-in-variables design with diagonal known error scales whose entries
/// are drawn from U(tau_lo, tau_hi) once per design.
inline DesignFactory eiv_design(DensityFamily family, int v = 1, int m = 1, double tau_lo = 1.0,
                                double tau_hi = 5.0) {
  if (!(tau_lo >= 0.0) || !(tau_hi >= tau_lo)) throw ConfigError("need 0 <= tau_lo <= tau_hi");
  return [=](int n, std::uint64_t seed) {
    Rng rng = substream(seed, 0);
    std::uniform_real_distribution<double> unif(tau_lo, tau_hi);
    zoo::ErrorsInVariablesSpec spec;
    spec.v = v;
    spec.m = m;
    spec.family = family;
    for (int i = 0; i < n; ++i) {
      spec.X1.push_back(VectorXd::Zero(v));
      spec.X2.push_back(VectorXd::Zero(m));
      MatrixXd t1 = MatrixXd::Zero(v, v), t2 = MatrixXd::Zero(m, m);
      for (int a = 0; a < v; ++a) t1(a, a) = unif(rng);
      for (int b = 0; b < m; ++b) t2(b, b) = unif(rng);
      spec.tau1.push_back(t1);
      spec.tau2.push_back(t2);
    }
    return zoo::build_eiv(spec);
  };
}

inline VectorXd eiv_true_theta(int v = 1, int m = 1) {
  return zoo::eiv_theta(VectorXd::Constant(v, 0.7), MatrixXd::Constant(v, m, 0.4),
                        VectorXd::Constant(m, 70.0), 250.0 * MatrixXd::Identity(m, m),
                        40.0 * MatrixXd::Identity(v, v));
}

// ---------------------------------------------------------------------------
// Leave-one-out prediction influence

struct DHatResult {
  double value = 0.0;
  int failed = 0;  // leave-one-out refits that did not converge (skipped)
  bool complete() const { return failed == 0; }
};

/// D = sum_j sum_i ||mu_i(theta) - mu_i(theta_(j))||^2 with theta_(j) refitted
/// by the same estimator without observation j.
inline DHatResult d_hat(const ModelSpec& model, const VectorXd& theta_est,
                        Estimator estimator = Estimator::MLE, FitOptions opts = {}) {
  model.check_theta(theta_est);
  opts.estimators = EstimatorSet::only(estimator);
  if (estimator == Estimator::BC) opts.estimators.mle = true;
  opts.start = theta_est;
  opts.throw_on_failure = false;
  std::vector<VectorXd> full(model.n());
  for (int i = 0; i < model.n(); ++i) full[i] = model.mean(theta_est, i);
  DHatResult out;
  for (int j = 0; j < model.n(); ++j) {
    const ModelSpec sub = model.without_block(j);
    const FitResult res = fit(sub, opts);
    const auto& est = res.get(estimator);
    if (!est || !est->converged) {
      ++out.failed;
      continue;
    }
    for (int i = 0; i < model.n(); ++i)
      out.value += (full[i] - model.mean(est->theta, i)).squaredNorm();
  }
  return out;
}

}  // namespace ellbias
