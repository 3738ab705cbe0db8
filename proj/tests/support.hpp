#pragma once

// Shared fixtures: small instances of every zoo model, random draws of
// feasible parameters, a five-point finite-difference score and the
// Monte Carlo moment identities of the radial weights.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "ellbias/bias.hpp"
#include "ellbias/family.hpp"
#include "ellbias/harness.hpp"
#include "ellbias/linalg.hpp"
#include "ellbias/model.hpp"
#include "ellbias/sampling.hpp"
#include "ellbias/zoo.hpp"
#include "oracles.hpp"

namespace support {

using namespace ellbias;

struct Case {
  std::string name;
  ModelSpec model;
  VectorXd theta;
};

inline MatrixXd random_spd(int q, Rng& rng) {
  std::normal_distribution<double> nd;
  MatrixXd a(q, q);
  for (int i = 0; i < q; ++i)
    for (int j = 0; j < q; ++j) a(i, j) = nd(rng);
  return a * a.transpose() + q * MatrixXd::Identity(q, q);
}

/// Sigmoid mean, log-variance linear in (1, x / 10).
inline Case hetero_case(const DensityFamily& fam, int n, std::uint64_t seed) {
  Rng rng = substream(seed, 0);
  std::uniform_real_distribution<double> ux(0.5, 10.0);
  zoo::HeteroNonlinearSpec s;
  s.mean = zoo::sigmoid_mean();
  s.variance_names = {"gamma1", "gamma2"};
  s.family = fam;
  s.y = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    const double x = ux(rng);
    s.x.push_back(VectorXd::Constant(1, x));
    VectorXd w(2);
    w << 1.0, x / 10.0;
    s.omega.push_back(w);
  }
  VectorXd th(6);
  th << 50.0, 500.0, 0.5, 2.0, std::log(200.0), 0.5;
  ModelSpec m = zoo::build_hetero_nonlinear(s);
  return {"hetero-nonlinear", simulate_responses(m, th, rng), th};
}

/// Linear mean with random intercept and slope, three visits per subject.
inline Case mixed_case(const DensityFamily& fam, int n, std::uint64_t seed) {
  Rng rng = substream(seed, 0);
  std::uniform_real_distribution<double> ut(0.0, 2.0);
  zoo::MixedEffectsSpec s;
  s.mean = zoo::linear_vector_mean(2);
  s.random = zoo::CovarianceStructure::unstructured(2);
  s.residual = zoo::CovarianceStructure::scaled_identity();
  s.family = fam;
  const int q = 3;
  for (int i = 0; i < n; ++i) {
    MatrixXd x(q, 2);
    for (int k = 0; k < q; ++k) x.row(k) << 1.0, k + ut(rng);
    s.x.push_back(vec(x));
    s.Z.push_back(x);
    s.y.push_back(VectorXd::Zero(q));
  }
  VectorXd th(6);
  th << 10.0, 2.0, 4.0, 0.5, 1.0, 1.5;
  ModelSpec m = zoo::build_mixed_effects(s);
  return {"mixed-effects", simulate_responses(m, th, rng), th};
}

/// Errors-in-variables with two responses and one covariate.
inline Case eiv_case(const DensityFamily& fam, int n, std::uint64_t seed) {
  const ModelSpec d = eiv_design(fam, 2, 1)(n, seed);
  VectorXd th = zoo::eiv_theta((VectorXd(2) << 0.7, -1.0).finished(),
                               (MatrixXd(2, 1) << 0.4, 0.8).finished(), VectorXd::Constant(1, 70.0),
                               MatrixXd::Constant(1, 1, 250.0),
                               (MatrixXd(2, 2) << 40.0, 6.0, 6.0, 30.0).finished());
  Rng rng = substream(seed, 1);
  return {"errors-in-variables", simulate_responses(d, th, rng), th};
}

/// Log-symmetric with median exp(a1 + a2 x) and log-dispersion linear in (1, x).
inline Case log_symmetric_case(const DensityFamily& fam, int n, std::uint64_t seed) {
  Rng rng = substream(seed, 0);
  std::uniform_real_distribution<double> ux(0.0, 2.0);
  zoo::LogSymmetricSpec s;
  s.median = zoo::exponential_median(2);
  s.family = fam;
  s.t = VectorXd::Ones(n);
  for (int i = 0; i < n; ++i) {
    const double x = ux(rng);
    s.x.push_back((VectorXd(2) << 1.0, x).finished());
    s.omega.push_back((VectorXd(2) << 1.0, x).finished());
  }
  VectorXd th(4);
  th << 1.0, 0.5, -1.0, 0.4;
  const ModelSpec m = zoo::build_log_symmetric(s);
  return {"log-symmetric", simulate_responses(m, th, rng), th};
}

inline std::vector<Case> zoo_cases(const DensityFamily& fam, std::uint64_t seed = 11) {
  return {hetero_case(fam, 25, seed), mixed_case(fam, 15, seed), eiv_case(fam, 20, seed),
          log_symmetric_case(fam, 25, seed)};
}

/// theta scaled coordinatewise by 1 + U(-spread, spread); variance-type
/// coordinates stay positive because every base value is.
inline VectorXd perturb(const VectorXd& theta, double spread, Rng& rng) {
  std::uniform_real_distribution<double> u(-spread, spread);
  VectorXd out = theta;
  for (Eigen::Index r = 0; r < out.size(); ++r) out(r) *= 1.0 + u(rng);
  return out;
}

inline VectorXd fd_score(const ModelSpec& model, const VectorXd& theta, double rel = 1e-5) {
  VectorXd g(theta.size());
  for (Eigen::Index r = 0; r < theta.size(); ++r) {
    const double h = rel * (1.0 + std::abs(theta(r)));
    auto f = [&](double step) {
      VectorXd t = theta;
      t(r) += step;
      return log_likelihood(model, t);
    };
    g(r) = (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h);
  }
  return g;
}

inline double relative_gap(const VectorXd& a, const VectorXd& b) {
  double m = 0.0;
  for (Eigen::Index r = 0; r < a.size(); ++r)
    m = std::max(m, std::abs(a(r) - b(r)) / std::max({std::abs(a(r)), std::abs(b(r)), 1.0}));
  return m;
}

/// Largest |mean - target| / (MC standard error) for the moment identities
/// E(v z) = 0, E(v^2 z z') = (4 psi21 / q) Sigma, E(v^2 vec(zz') z') = 0,
/// E(v^2 vec(zz') vec(zz')') = c (vec S vec S' + 2 S (x) S) and
/// E(v^3 vec(zz') vec(zz')') = -c* (vec S vec S' + 2 S (x) S), the last two on
/// the symmetric subspace (projected with the duplication matrix).
/// The sixth entry is the v^3 triple-trace identity with -8 omega~.
struct MomentCheck {
  double z[6] = {0, 0, 0, 0, 0, 0};
  double worst() const { return *std::max_element(z, z + 5); }
};

class Accumulator {
 public:
  explicit Accumulator(Eigen::Index dim) : sum_(VectorXd::Zero(dim)), sum2_(VectorXd::Zero(dim)) {}
  void add(const VectorXd& x) {
    sum_ += x;
    sum2_ += x.cwiseProduct(x);
    ++n_;
  }
  double max_z(const VectorXd& target) const {
    const VectorXd mean = sum_ / n_;
    const VectorXd var = (sum2_ / n_ - mean.cwiseProduct(mean)).cwiseMax(0.0) * (n_ / (n_ - 1.0));
    double worst = 0.0;
    for (Eigen::Index k = 0; k < mean.size(); ++k) {
      const double se = std::sqrt(var(k) / n_);
      const double gap = std::abs(mean(k) - target(k));
      const double floor = 1e-12 * (1.0 + std::abs(target(k)));
      worst = std::max(worst, gap <= floor ? 0.0 : gap / se);
    }
    return worst;
  }

 private:
  VectorXd sum_, sum2_;
  long n_ = 0;
};

inline MomentCheck radial_moment_identities(const DensityFamily& fam, int q, long draws, std::uint64_t seed) {
  Rng rng = substream(seed, static_cast<std::uint64_t>(q));
  const MatrixXd sigma = random_spd(q, rng);
  const MatrixXd sigma_inv = sigma.inverse();
  const MatrixXd dup = duplication_matrix(q);
  const PsiMoments k = fam.derived_constants(q);
  MatrixXd a[3];
  for (auto& m : a) {
    m = random_spd(q, rng) - q * MatrixXd::Identity(q, q);
  }
  const int q2 = q * q, h = static_cast<int>(vech_size(q));
  Accumulator i1(q), i2(q2), i3(q2 * q), i4(h * h), i5(h * h), i6(1);
  const VectorXd zero = VectorXd::Zero(q);
  for (long d = 0; d < draws; ++d) {
    const VectorXd z = sample(fam, zero, sigma, rng);
    const double u = z.dot(sigma_inv * z);
    const double v = -2.0 * oracle::w_g(fam, u, q);
    const MatrixXd zz = z * z.transpose();
    const VectorXd vz = vec(zz);
    const VectorXd pz = dup.transpose() * vz;
    i1.add(v * z);
    i2.add(v * v * vz);
    i3.add(v * v * vec(vz * z.transpose()));
    i4.add(v * v * vec(pz * pz.transpose()));
    i5.add(v * v * v * vec(pz * pz.transpose()));
    i6.add(VectorXd::Constant(1, v * v * v * z.dot(a[0] * z) * z.dot(a[1] * z) * z.dot(a[2] * z)));
  }
  const VectorXd vs = vec(sigma);
  const MatrixXd base = dup.transpose() * (vs * vs.transpose() + 2.0 * kron(sigma, sigma)) * dup;
  MomentCheck out;
  out.z[0] = i1.max_z(zero);
  out.z[1] = i2.max_z(vec(k.location_weight() * sigma));
  out.z[2] = i3.max_z(VectorXd::Zero(q2 * q));
  out.z[3] = i4.max_z(vec(k.c * base));
  out.z[4] = i5.max_z(vec(-k.c_star * base));
  const MatrixXd as0 = a[0] * sigma, as1 = a[1] * sigma, as2 = a[2] * sigma;
  const double t0 = as0.trace(), t1 = as1.trace(), t2 = as2.trace();
  const double six = -8.0 * k.omega_tilde *
                     (t0 * t1 * t2 + 2.0 * t0 * (as1 * as2).trace() + 2.0 * t1 * (as0 * as2).trace() +
                      2.0 * t2 * (as0 * as1).trace() + 8.0 * (as0 * as1 * as2).trace());
  out.z[5] = i6.max_z(VectorXd::Constant(1, six));
  return out;
}

}  // namespace support
