#pragma once

// Elliptical density generating functions g, their log-derivatives W_g, and
// the radial moments psi_(l,k) = E(W_g(R)^l R^k), R = ||L||^2 with L spherical.

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>

#include "ellbias/errors.hpp"
#include "ellbias/quadrature.hpp"

namespace ellbias {

enum class FamilyKind { Normal, Cauchy, StudentT, PowerExponential, Custom };

/// Constants of one block dimension q derived from the psi moments.
struct PsiMoments {
  int q = 0;
  double psi21 = 0.0;
  double psi22 = 0.0;
  double psi32 = 0.0;
  double psi33 = 0.0;
  double c = 0.0;            // 4 psi22 / (q (q + 2))
  double c_star = 0.0;       // 8 psi32 / (q (q + 2))
  double omega_tilde = 0.0;  // psi33 / (q (q + 2) (q + 4))
  double eta1 = 0.0;         // c_star + 4 psi21 / q
  double eta2 = 0.0;         // c_star - 4 psi21 / q

  /// Weight of the location block of M_i, 4 psi21 / q.
  double location_weight() const { return 4.0 * psi21 / q; }
};

/// User-provided generating function. log_g must include the normalising
/// constant for dimension q. W_g and the psi moments are optional: when
/// absent W_g is a central difference of log g and psi comes from quadrature.
struct CustomGenerator {
  std::string name = "custom";
  std::function<double(double u, int q)> log_g;
  std::function<double(double u, int q)> w_g;
  std::function<double(int q, int l, int k)> psi;
  /// Draws the squared radius R = ||L||^2 of a spherical vector; needed only
  /// for simulation.
  std::function<double(int q, std::function<double()> uniform01)> radial_sq_sampler;
};

class DensityFamily {
 public:
  static DensityFamily normal() { return DensityFamily(FamilyKind::Normal, 0.0); }

  static DensityFamily cauchy() { return DensityFamily(FamilyKind::Cauchy, 1.0); }

  static DensityFamily student_t(double nu) {
    if (!(nu > 0.0) || !std::isfinite(nu))
      throw DomainError("Student t requires nu > 0 (got " + std::to_string(nu) + ")");
    return DensityFamily(FamilyKind::StudentT, nu);
  }

  static DensityFamily power_exponential(double lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw DomainError("power exponential requires lambda > 0 (got " +
                        std::to_string(lambda) + ")");
    return DensityFamily(FamilyKind::PowerExponential, lambda);
  }

  static DensityFamily custom(CustomGenerator gen) {
    if (!gen.log_g) throw DomainError("custom family needs log_g");
    DensityFamily f(FamilyKind::Custom, 0.0);
    f.custom_ = std::make_shared<const CustomGenerator>(std::move(gen));
    return f;
  }

  FamilyKind kind() const { return kind_; }
  bool is_normal() const { return kind_ == FamilyKind::Normal; }

  /// Degrees of freedom (StudentT, Cauchy) or shape (PowerExponential).
  double shape() const { return shape_; }
  double nu() const { return shape_; }
  double lambda() const { return shape_; }

  const CustomGenerator* custom_generator() const { return custom_.get(); }

  std::string name() const {
    std::ostringstream os;
    switch (kind_) {
      case FamilyKind::Normal: return "normal";
      case FamilyKind::Cauchy: return "cauchy";
      case FamilyKind::StudentT: os << "student-t(nu=" << shape_ << ")"; return os.str();
      case FamilyKind::PowerExponential:
        os << "power-exponential(lambda=" << shape_ << ")";
        return os.str();
      case FamilyKind::Custom: return custom_->name;
    }
    return "unknown";
  }

  /// log g(u) for a q-dimensional block, normalising constant included.
  double log_g(double u, int q) const {
    check_u(u);
    const double qd = q;
    const double log_pi = std::log(std::numbers::pi);
    switch (kind_) {
      case FamilyKind::Normal:
        return -0.5 * qd * std::log(2.0 * std::numbers::pi) - 0.5 * u;
      case FamilyKind::Cauchy:
      case FamilyKind::StudentT: {
        const double nu = shape_;
        return std::lgamma(0.5 * (nu + qd)) - std::lgamma(0.5 * nu) - 0.5 * qd * log_pi -
               0.5 * qd * std::log(nu) - 0.5 * (nu + qd) * std::log1p(u / nu);
      }
      case FamilyKind::PowerExponential: {
        const double lam = shape_;
        return std::log(lam) + std::lgamma(0.5 * qd) - std::lgamma(qd / (2.0 * lam)) -
               qd / (2.0 * lam) * std::log(2.0) - 0.5 * qd * log_pi - 0.5 * std::pow(u, lam);
      }
      case FamilyKind::Custom:
        return custom_->log_g(u, q);
    }
    return 0.0;
  }

  /// W_g(u) = d log g(u) / du.
  double w_g(double u, int q) const {
    check_u(u);
    switch (kind_) {
      case FamilyKind::Normal:
        return -0.5;
      case FamilyKind::Cauchy:
      case FamilyKind::StudentT:
        return -(shape_ + q) / (2.0 * (shape_ + u));
      case FamilyKind::PowerExponential: {
        const double lam = shape_;
        if (u == 0.0) {
          if (lam < 1.0) throw DomainError("power exponential W_g is singular at u = 0 for lambda < 1");
          return lam == 1.0 ? -0.5 : 0.0;
        }
        return -0.5 * lam * std::pow(u, lam - 1.0);
      }
      case FamilyKind::Custom: {
        if (custom_->w_g) return custom_->w_g(u, q);
        const double h = std::max(1e-6, 1e-6 * u);
        if (u < h) return (log_g(u + h, q) - log_g(u, q)) / h;
        return (log_g(u + h, q) - log_g(u - h, q)) / (2.0 * h);
      }
    }
    return 0.0;
  }

  /// psi_(l,k) for block dimension q; (l,k) in {(2,1),(2,2),(3,2),(3,3)}.
  double psi_moment(int q, int l, int k) const {
    check_lk(q, l, k);
    const double qd = q;
    switch (kind_) {
      case FamilyKind::Normal:
        if (l == 2 && k == 1) return qd / 4.0;
        if (l == 2 && k == 2) return qd * (qd + 2.0) / 4.0;
        if (l == 3 && k == 2) return -qd * (qd + 2.0) / 8.0;
        return -qd * (qd + 2.0) * (qd + 4.0) / 8.0;
      case FamilyKind::Cauchy:
      case FamilyKind::StudentT: {
        const double nu = shape_;
        if (l == 2 && k == 1) return qd * (qd + nu) / (4.0 * (qd + nu + 2.0));
        if (l == 2 && k == 2) return qd * (qd + 2.0) * (qd + nu) / (4.0 * (qd + nu + 2.0));
        const double base = (qd + nu) * (qd + nu) / (8.0 * (qd + 2.0 + nu) * (qd + 4.0 + nu));
        if (l == 3 && k == 2) return -qd * (qd + 2.0) * base;
        return -qd * (qd + 2.0) * (qd + 4.0) * base;
      }
      case FamilyKind::PowerExponential: {
        const double lam = shape_;
        if (q == 1 && !(lam > 0.25))
          throw DomainError("power exponential psi moments with q = 1 require lambda > 1/4");
        // Gamma((q-2)/(2 lambda) + j) / (2^(1/lambda) Gamma(q/(2 lambda)))
        auto ratio = [&](double j) {
          return std::exp(std::lgamma((qd - 2.0) / (2.0 * lam) + j) - std::log(2.0) / lam -
                          std::lgamma(qd / (2.0 * lam)));
        };
        if (l == 2 && k == 1) return lam * lam * ratio(2.0);
        if (l == 2 && k == 2) return qd * (2.0 * lam + qd) / 4.0;
        if (l == 3 && k == 2) return -lam * lam * lam * ratio(3.0);
        return -qd * (2.0 * lam + qd) * (4.0 * lam + qd) / 8.0;
      }
      case FamilyKind::Custom:
        if (custom_->psi) return custom_->psi(q, l, k);
        return psi_moment_quadrature(q, l, k);
    }
    return 0.0;
  }

  /// psi_(l,k) by adaptive quadrature of
  ///   int_0^inf W_g(s^2)^l g(s^2) s^(q + 2k - 1) c_q ds,  c_q = 2 pi^(q/2) / Gamma(q/2).
  double psi_moment_quadrature(int q, int l, int k,
                               const quadrature::Options& opts = {}) const {
    check_lk(q, l, k);
    const double log_cq =
        std::log(2.0) + 0.5 * q * std::log(std::numbers::pi) - std::lgamma(0.5 * q);
    auto integrand = [&](double s) {
      if (s <= 0.0) return 0.0;
      const double u = s * s;
      const double w = w_g(u, q);
      const double log_rest = log_g(u, q) + (q + 2.0 * k - 1.0) * std::log(s) + log_cq;
      return std::pow(w, l) * std::exp(log_rest);
    };
    return quadrature::integrate_half_line(integrand, opts).value;
  }

  PsiMoments derived_constants(int q) const {
    PsiMoments m;
    m.q = q;
    m.psi21 = psi_moment(q, 2, 1);
    m.psi22 = psi_moment(q, 2, 2);
    m.psi32 = psi_moment(q, 3, 2);
    m.psi33 = psi_moment(q, 3, 3);
    const double qd = q;
    if (is_normal()) {
      // exact reductions; the closed forms give the same numbers up to rounding
      m.c = 1.0;
      m.c_star = -1.0;
      m.omega_tilde = -0.125;
      m.eta1 = 0.0;
      m.eta2 = -2.0;
      return m;
    }
    m.c = 4.0 * m.psi22 / (qd * (qd + 2.0));
    m.c_star = 8.0 * m.psi32 / (qd * (qd + 2.0));
    m.omega_tilde = m.psi33 / (qd * (qd + 2.0) * (qd + 4.0));
    m.eta1 = m.c_star + 4.0 * m.psi21 / qd;
    m.eta2 = m.c_star - 4.0 * m.psi21 / qd;
    return m;
  }

  /// xi with Var(Y) = xi * Sigma; infinite when the variance does not exist.
  double variance_scale(int q) const {
    const double qd = q;
    switch (kind_) {
      case FamilyKind::Normal: return 1.0;
      case FamilyKind::Cauchy: return std::numeric_limits<double>::infinity();
      case FamilyKind::StudentT:
        return shape_ > 2.0 ? shape_ / (shape_ - 2.0) : std::numeric_limits<double>::infinity();
      case FamilyKind::PowerExponential: {
        const double lam = shape_;
        return std::exp(std::log(2.0) / lam + std::lgamma((qd + 2.0) / (2.0 * lam)) -
                        std::lgamma(qd / (2.0 * lam))) /
               qd;
      }
      case FamilyKind::Custom: {
        // E(R)/q with R the squared radius
        const double log_cq =
            std::log(2.0) + 0.5 * q * std::log(std::numbers::pi) - std::lgamma(0.5 * q);
        auto integrand = [&](double s) {
          if (s <= 0.0) return 0.0;
          return std::exp(log_g(s * s, q) + (q + 1.0) * std::log(s) + log_cq);
        };
        return quadrature::integrate_half_line(integrand).value / qd;
      }
    }
    return 1.0;
  }

 private:
  DensityFamily(FamilyKind kind, double shape) : kind_(kind), shape_(shape) {}

  static void check_u(double u) {
    if (!(u >= 0.0)) throw DomainError("u must be non-negative (got " + std::to_string(u) + ")");
  }

  static void check_lk(int q, int l, int k) {
    if (q < 1) throw DomainError("block dimension q must be >= 1");
    const bool ok = (l == 2 && (k == 1 || k == 2)) || (l == 3 && (k == 2 || k == 3));
    if (!ok) throw DomainError("psi moment (l,k) must be one of (2,1),(2,2),(3,2),(3,3)");
  }

  FamilyKind kind_;
  double shape_;
  std::shared_ptr<const CustomGenerator> custom_;
};

inline double w_g(const DensityFamily& family, double u, int q) { return family.w_g(u, q); }

inline double psi_moment(const DensityFamily& family, int q, int l, int k) {
  return family.psi_moment(q, l, k);
}

inline PsiMoments derived_constants(const DensityFamily& family, int q) {
  return family.derived_constants(q);
}

}  // namespace ellbias
