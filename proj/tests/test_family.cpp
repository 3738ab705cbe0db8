#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "ellbias/family.hpp"
#include "ellbias/quadrature.hpp"
#include "ellbias/sampling.hpp"
#include "support.hpp"

using namespace ellbias;

namespace {

std::vector<DensityFamily> builtins() {
  return {DensityFamily::normal(), DensityFamily::cauchy(), DensityFamily::student_t(4.0),
          DensityFamily::student_t(2.5), DensityFamily::power_exponential(0.8),
          DensityFamily::power_exponential(0.7), DensityFamily::power_exponential(2.0)};
}

const int kLk[4][2] = {{2, 1}, {2, 2}, {3, 2}, {3, 3}};

}  // namespace

TEST(Family, NormalPsiAtQ1) {
  const auto f = DensityFamily::normal();
  EXPECT_DOUBLE_EQ(f.psi_moment(1, 2, 1), 0.25);
  EXPECT_DOUBLE_EQ(f.psi_moment(1, 2, 2), 0.75);
  EXPECT_DOUBLE_EQ(f.psi_moment(1, 3, 2), -0.375);
  EXPECT_DOUBLE_EQ(f.psi_moment(1, 3, 3), -1.875);
}

TEST(Family, StudentPsi21AtQ1) {
  EXPECT_NEAR(DensityFamily::student_t(4.0).psi_moment(1, 2, 1), 5.0 / 28.0, 1e-15);
}

TEST(Family, PowerExponentialNeedsLambdaAboveQuarterAtQ1) {
  const auto f = DensityFamily::power_exponential(0.2);
  EXPECT_THROW(f.psi_moment(1, 2, 1), DomainError);
  EXPECT_THROW(f.derived_constants(1), DomainError);
  EXPECT_NO_THROW(f.derived_constants(2));
}

TEST(Family, InvalidShapesRejected) {
  EXPECT_THROW(DensityFamily::student_t(0.0), DomainError);
  EXPECT_THROW(DensityFamily::student_t(-3.0), DomainError);
  EXPECT_THROW(DensityFamily::power_exponential(0.0), DomainError);
  EXPECT_THROW(DensityFamily::power_exponential(std::nan("")), DomainError);
}

TEST(Family, NormalDerivedConstants) {
  for (int q = 1; q <= 6; ++q) {
    const PsiMoments k = DensityFamily::normal().derived_constants(q);
    EXPECT_DOUBLE_EQ(k.c, 1.0);
    EXPECT_DOUBLE_EQ(k.c_star, -1.0);
    EXPECT_DOUBLE_EQ(8.0 * k.omega_tilde, -1.0);
    EXPECT_DOUBLE_EQ(k.eta1, 0.0);
    EXPECT_DOUBLE_EQ(k.eta2, -2.0);
    EXPECT_DOUBLE_EQ(k.location_weight(), 1.0);
  }
}

TEST(Family, DerivedConstantsFollowDefinitions) {
  for (const auto& f : builtins()) {
    for (int q = 1; q <= 4; ++q) {
      const PsiMoments k = f.derived_constants(q);
      const double qq = q * (q + 2.0);
      EXPECT_NEAR(k.c, 4.0 * f.psi_moment(q, 2, 2) / qq, 1e-14) << f.name();
      EXPECT_NEAR(k.c_star, 8.0 * f.psi_moment(q, 3, 2) / qq, 1e-14) << f.name();
      EXPECT_NEAR(k.omega_tilde, f.psi_moment(q, 3, 3) / (qq * (q + 4.0)), 1e-14) << f.name();
      EXPECT_NEAR(k.eta1, k.c_star + 4.0 * k.psi21 / q, 1e-14);
      EXPECT_NEAR(k.eta2, k.c_star - 4.0 * k.psi21 / q, 1e-14);
    }
  }
}

TEST(Family, ClosedFormsMatchQuadrature) {
  for (const auto& f : builtins()) {
    for (int q = 1; q <= 6; ++q) {
      for (const auto& lk : kLk) {
        const double closed = f.psi_moment(q, lk[0], lk[1]);
        const double quad = f.psi_moment_quadrature(q, lk[0], lk[1]);
        EXPECT_LT(std::abs(closed - quad) / std::abs(closed), 1e-8)
            << f.name() << " q=" << q << " (" << lk[0] << "," << lk[1] << ")";
      }
    }
  }
}

TEST(Family, DensityIntegratesToOne) {
  for (const auto& f : builtins()) {
    for (int q = 1; q <= 3; ++q) {
      const double log_cq = std::log(2.0) + 0.5 * q * std::log(std::numbers::pi) - std::lgamma(0.5 * q);
      const auto r = quadrature::integrate_half_line([&](double s) {
        return s > 0 ? std::exp(f.log_g(s * s, q) + (q - 1.0) * std::log(s) + log_cq) : 0.0;
      });
      EXPECT_NEAR(r.value, 1.0, 1e-9) << f.name() << " q=" << q;
    }
  }
}

TEST(Family, WgIsDerivativeOfLogG) {
  for (const auto& f : builtins()) {
    for (double u : {0.05, 0.7, 3.0, 40.0}) {
      const double h = 1e-5 * u;
      const double fd = (f.log_g(u + h, 2) - f.log_g(u - h, 2)) / (2 * h);
      EXPECT_NEAR(f.w_g(u, 2), fd, 1e-7 * (1 + std::abs(fd))) << f.name() << " u=" << u;
    }
  }
}

TEST(Family, NormalWgConstantAndOthersContinuous) {
  for (double u : {1e-9, 0.5, 1e3}) EXPECT_DOUBLE_EQ(DensityFamily::normal().w_g(u, 3), -0.5);
  for (const auto& f : builtins())
    for (double u : {0.1, 1.0, 10.0})
      EXPECT_NEAR(f.w_g(u * (1 + 1e-10), 1), f.w_g(u, 1), 1e-8 * std::abs(f.w_g(u, 1)) + 1e-15);
}

TEST(Family, PowerExponentialSingularAtZero) {
  EXPECT_THROW(DensityFamily::power_exponential(0.7).w_g(0.0, 1), DomainError);
  EXPECT_DOUBLE_EQ(DensityFamily::power_exponential(2.0).w_g(0.0, 1), 0.0);
  EXPECT_DOUBLE_EQ(DensityFamily::power_exponential(1.0).w_g(0.0, 1), -0.5);
}

TEST(Family, CauchyIsStudentOne) {
  const auto c = DensityFamily::cauchy(), t = DensityFamily::student_t(1.0);
  for (int q = 1; q <= 3; ++q) {
    EXPECT_NEAR(c.log_g(2.0, q), t.log_g(2.0, q), 1e-14);
    for (const auto& lk : kLk) EXPECT_NEAR(c.psi_moment(q, lk[0], lk[1]), t.psi_moment(q, lk[0], lk[1]), 1e-14);
  }
}

TEST(Family, CustomGeneratorWithFiniteDifferenceWg) {
  CustomGenerator g;
  g.name = "custom-normal";
  g.log_g = [](double u, int q) { return -0.5 * q * std::log(2 * std::numbers::pi) - 0.5 * u; };
  const auto f = DensityFamily::custom(g);
  EXPECT_EQ(f.kind(), FamilyKind::Custom);
  EXPECT_NEAR(f.w_g(2.0, 1), -0.5, 1e-8);
  EXPECT_NEAR(f.w_g(0.0, 1), -0.5, 1e-6);
  for (const auto& lk : kLk)
    EXPECT_NEAR(f.psi_moment(2, lk[0], lk[1]), DensityFamily::normal().psi_moment(2, lk[0], lk[1]), 1e-6);
  EXPECT_NEAR(f.variance_scale(2), 1.0, 1e-8);
  EXPECT_THROW(DensityFamily::custom(CustomGenerator{}), DomainError);
}

TEST(Family, VarianceScale) {
  EXPECT_DOUBLE_EQ(DensityFamily::student_t(4.0).variance_scale(1), 2.0);
  EXPECT_TRUE(std::isinf(DensityFamily::cauchy().variance_scale(1)));
  EXPECT_NEAR(DensityFamily::power_exponential(1.0).variance_scale(1), 1.0, 1e-12);
}

// ---------------------------------------------------------------------------
// Sampling

TEST(Sampling, NormalMean) {
  Rng rng = substream(1, 0);
  const VectorXd mu = VectorXd::Zero(2);
  VectorXd sum = VectorXd::Zero(2);
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += sample(DensityFamily::normal(), mu, MatrixXd::Identity(2, 2), rng);
  EXPECT_LT((sum / n).cwiseAbs().maxCoeff(), 0.02);
}

TEST(Sampling, StudentVariance) {
  Rng rng = substream(2, 0);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int i = 0; i < n; ++i) {
    const double y = sample(DensityFamily::student_t(4.0), VectorXd::Zero(1), MatrixXd::Identity(1, 1), rng)(0);
    s += y;
    s2 += y * y;
  }
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 2.0, 0.1);
}

TEST(Sampling, CauchyMedian) {
  Rng rng = substream(3, 0);
  std::vector<double> y(100000);
  for (auto& v : y) v = sample(DensityFamily::cauchy(), VectorXd::Constant(1, 5.0), MatrixXd::Identity(1, 1), rng)(0);
  std::nth_element(y.begin(), y.begin() + y.size() / 2, y.end());
  EXPECT_NEAR(y[y.size() / 2], 5.0, 0.05);
}

TEST(Sampling, PowerExponentialSecondMoment) {
  for (double lam : {0.7, 2.0}) {
    const auto f = DensityFamily::power_exponential(lam);
    Rng rng = substream(4, 0);
    MatrixXd s(2, 2);
    s << 2.0, 0.5, 0.5, 1.0;
    const int n = 200000;
    MatrixXd acc = MatrixXd::Zero(2, 2);
    for (int i = 0; i < n; ++i) {
      const VectorXd y = sample(f, VectorXd::Zero(2), s, rng);
      acc += y * y.transpose();
    }
    EXPECT_TRUE(((acc / n) - f.variance_scale(2) * s).cwiseAbs().maxCoeff() < 0.05 * f.variance_scale(2) * 2.0)
        << f.name();
  }
}

TEST(Sampling, RejectsNonPositiveDefiniteScale) {
  Rng rng(1);
  MatrixXd s(2, 2);
  s << 1, 2, 2, 1;
  EXPECT_THROW(sample(DensityFamily::normal(), VectorXd::Zero(2), s, rng), LinAlgError);
}

TEST(Sampling, SubstreamsAreReproducibleAndDistinct) {
  Rng a = substream(42, 7), b = substream(42, 7), c = substream(42, 8);
  const auto x = a(), y = b(), z = c();
  EXPECT_EQ(x, y);
  EXPECT_NE(x, z);
}

TEST(Sampling, RadialMomentIdentitiesSmallSample) {
  for (const auto& f : {DensityFamily::normal(), DensityFamily::student_t(4.0), DensityFamily::power_exponential(0.8)}) {
    for (int q = 1; q <= 2; ++q) {
      const support::MomentCheck m = support::radial_moment_identities(f, q, 50000, 99);
      for (int k = 0; k < 6; ++k) EXPECT_LT(m.z[k], 4.0) << f.name() << " q=" << q << " identity " << k + 1;
    }
  }
}
