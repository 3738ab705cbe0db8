// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

#include "ellbias/bias.hpp"
#include "ellbias/fit.hpp"
#include "ellbias/harness.hpp"
#include "ellbias/zoo.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ellbias;

namespace {

struct Verdict {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [" << what << "]";
    }
  }
};

int failures = 0;

void criterion(int id, const std::string& title, const std::function<void(Verdict&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.detail << " [exception: " << e.what() << "]";
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!v.pass) ++failures;
  std::printf("%s %2d %s (%.1fs)%s\n", v.pass ? "PASS" : "FAIL", id, title.c_str(), secs, v.detail.str().c_str());
  std::fflush(stdout);
}

std::string num(double v) {
  std::ostringstream s;
  s.precision(4);
  s << v;
  return s.str();
}

std::vector<DensityFamily> families() {
  return {DensityFamily::normal(), DensityFamily::cauchy(), DensityFamily::student_t(4.0),
          DensityFamily::student_t(10.0), DensityFamily::power_exponential(0.8),
          DensityFamily::power_exponential(1.5)};
}

ModelSpec linear_normal(int n, int p1, std::uint64_t seed) {
  Rng rng = substream(seed, 0);
  std::normal_distribution<double> nd;
  zoo::HeteroNonlinearSpec s;
  s.mean = zoo::linear_mean(p1);
  s.link = zoo::VarianceLink::Identity;
  s.y = VectorXd(n);
  for (int i = 0; i < n; ++i) {
    VectorXd x(p1);
    x(0) = 1.0;
    for (int j = 1; j < p1; ++j) x(j) = nd(rng);
    s.x.push_back(x);
    s.y(i) = nd(rng);
  }
  return zoo::build_hetero_nonlinear(s);
}

/// Monte Carlo bias for sigma2 (index r) with the given design and checks.
struct TableTarget {
  double mle, bc, br;
  bool check_br;
};

SimReport table_run(const DensityFamily& fam, const DesignFactory& design, const VectorXd& theta, int n,
                    int reps) {
  SimConfig c;
  c.name = fam.name();
  c.design = design;
  c.theta = theta;
  c.n_values = {n};
  c.replications = reps;
  c.seed = 20240601;
  return run_simulation(c);
}

void check_table(Verdict& v, const SimReport& rep, int r, const TableTarget& t) {
  const SimCell& cell = rep.cells.at(0);
  const EstimatorSummary *m = cell.find(Estimator::MLE), *bc = cell.find(Estimator::BC),
                         *br = cell.find(Estimator::BR);
  v.detail << " MLE " << num(m->bias(r)) << "+-" << num(m->se_bias(r)) << ", BC " << num(bc->bias(r)) << "+-"
           << num(bc->se_bias(r)) << ", BR " << num(br->bias(r)) << "+-" << num(br->se_bias(r)) << ", used "
           << m->used << "/" << bc->used << "/" << br->used;
  v.require(std::abs(m->bias(r) - t.mle) <= 3.0 * m->se_bias(r), "MLE off target " + num(t.mle));
  v.require(std::abs(bc->bias(r) - t.bc) <= 3.0 * bc->se_bias(r), "BC off target " + num(t.bc));
  if (t.check_br) v.require(std::abs(br->bias(r) - t.br) <= 3.0 * br->se_bias(r), "BR off target " + num(t.br));
  v.require(m->bias(r) < 0.0, "MLE bias not negative");
  v.require(std::abs(br->bias(r)) < std::abs(bc->bias(r)) && std::abs(bc->bias(r)) < std::abs(m->bias(r)),
            "ordering |BR| < |BC| < |MLE|");
}

}  // namespace

int main() {
  criterion(1, "psi moments match radial quadrature, q = 1..6", [](Verdict& v) {
    double worst = 0.0;
    for (const auto& fam : families())
      for (int q = 1; q <= 6; ++q) {
        if (fam.kind() == FamilyKind::PowerExponential && q == 1 && fam.lambda() <= 0.25) continue;
        for (auto [l, k] : {std::pair{2, 1}, std::pair{2, 2}, std::pair{3, 2}, std::pair{3, 3}}) {
          const double ref = oracle::psi_radial(fam, q, l, k);
          const double got = fam.psi_moment(q, l, k);
          const double rel = std::abs(got - ref) / std::abs(ref);
          worst = std::max(worst, rel);
          v.require(rel < 1e-8, fam.name() + " q=" + std::to_string(q) + " (" + std::to_string(l) + "," +
                                    std::to_string(k) + ") rel " + num(rel));
        }
      }
    v.detail << " max rel err " << num(worst);
  });

  criterion(2, "analytic score vs finite differences, 4 models x 20 parameter points", [](Verdict& v) {
    double worst = 0.0;
    Rng rng = substream(2, 0);
    for (const auto& fam : {DensityFamily::normal(), DensityFamily::student_t(4.0), DensityFamily::power_exponential(0.8)})
      for (const auto& c : support::zoo_cases(fam, 12)) {
        for (int k = 0; k < 20; ++k) {
          const VectorXd th = support::perturb(c.theta, 0.2, rng);
          const double gap = support::relative_gap(score(c.model, th), support::fd_score(c.model, th));
          worst = std::max(worst, gap);
          v.require(gap < 1e-5, c.name + " " + fam.name() + " gap " + num(gap));
        }
      }
    v.detail << " max rel gap " << num(worst);
  });

  criterion(3, "E[U U'] = K over 1e5 simulated sigmoid datasets (normal, t4)", [](Verdict& v) {
    for (const auto& fam : {DensityFamily::normal(), DensityFamily::student_t(4.0)}) {
      const ModelSpec d = sigmoid_design(fam)(20, 3);
      const VectorXd th = sigmoid_true_theta();
      const MatrixXd k = fisher_information(d, th);
      const int p = d.p();
      support::Accumulator acc(p * p);
      Rng rng = substream(3, 1);
      for (int r = 0; r < 100000; ++r) {
        const VectorXd u = score(simulate_responses(d, th, rng), th);
        acc.add(vec(u * u.transpose()));
      }
      const double z = acc.max_z(vec(k));
      v.detail << " " << fam.name() << " max z " << num(z);
      v.require(z < 4.0, fam.name());
    }
  });

  criterion(4, "closed-form bias for iid normal and linear regression, n = 5, 20, 50", [](Verdict& v) {
    double worst = 0.0;
    for (int n : {5, 20, 50})
      for (int p1 : {1, 3}) {
        if (n <= p1 + 1) continue;
        const ModelSpec m = linear_normal(n, p1, 40 + n);
        VectorXd th = VectorXd::Constant(p1 + 1, 0.7);
        th(p1) = 2.3;
        const VectorXd b = bias_vector(m, th).bias;
        VectorXd expect = VectorXd::Zero(p1 + 1);
        expect(p1) = -p1 * 2.3 / n;
        worst = std::max(worst, (b - expect).cwiseAbs().maxCoeff());
      }
    v.detail << " max abs err " << num(worst);
    v.require(worst < 1e-10, "tolerance 1e-10");
  });

  criterion(5, "bias formula vs Monte Carlo Cox-Snell cumulants (exp-mean normal model)", [](Verdict& v) {
    const VectorXd x = VectorXd::LinSpaced(8, 0.1, 1.5);
    const double beta = 0.8, s = 0.3;
    const VectorXd th = (VectorXd(2) << beta, s).finished();
    const MatrixXd k = oracle::tiny_information(x, beta, s);
    const MatrixXd ki = k.inverse();
    const ModelSpec m = oracle::tiny_model(x, VectorXd::Zero(x.size()));
    const VectorXd b = bias_vector(m, th).bias;
    support::Accumulator acc(2);
    Rng rng = substream(5, 0);
    std::normal_distribution<double> nd;
    VectorXd y(x.size());
    for (long d = 0; d < 1000000; ++d) {
      for (Eigen::Index i = 0; i < x.size(); ++i) y(i) = std::exp(beta * x(i)) + std::sqrt(s) * nd(rng);
      const oracle::TinyDerivatives t = oracle::tiny_derivatives(x, y, beta, s);
      VectorXd inner = VectorXd::Zero(2);
      for (int r = 0; r < 2; ++r)
        for (int a = 0; a < 2; ++a)
          for (int c = 0; c < 2; ++c) inner(r) += ki(a, c) * (0.5 * t.d3[r][a][c] + t.d2(r, a) * t.d1(c));
      acc.add(ki * inner);
    }
    const double z = acc.max_z(b);
    v.detail << " bias (" << num(b(0)) << ", " << num(b(1)) << "), max z " << num(z);
    v.require(z < 4.0, "4 se");
  });

  criterion(6, "orthogonal path within 1e-8 and normal reduced form within 1e-10 of general path", [](Verdict& v) {
    double orth = 0.0, jform = 0.0;
    for (const auto& fam : {DensityFamily::normal(), DensityFamily::student_t(4.0), DensityFamily::power_exponential(0.8)})
      for (const auto& c : support::zoo_cases(fam, 6)) {
        const VectorXd g = bias_vector(c.model, c.theta).bias;
        const double scale = g.cwiseAbs().maxCoeff();
        if (c.model.orthogonal_split())
          orth = std::max(orth, (bias_vector_orthogonal(c.model, c.theta).bias - g).cwiseAbs().maxCoeff() / scale);
        if (fam.is_normal())
          jform = std::max(jform, (bias_vector_normal_reduced(c.model, c.theta).bias - g).cwiseAbs().maxCoeff() / scale);
      }
    v.detail << " orthogonal rel gap " << num(orth) << ", reduced rel gap " << num(jform);
    v.require(orth < 1e-8, "orthogonal");
    v.require(jform < 1e-10, "reduced");
  });

  criterion(7, "sigmoid normal n = 20, R = 2000: sigma2 bias", [](Verdict& v) {
    const auto fam = DensityFamily::normal();
    const SimReport rep = table_run(fam, sigmoid_design(fam), sigmoid_true_theta(), 20, 2000);
    check_table(v, rep, 4, {-40.07, -8.09, 0.0, false});
  });

  criterion(8, "sigmoid t4 n = 20, R = 2000: sigma2 bias", [](Verdict& v) {
    const auto fam = DensityFamily::student_t(4.0);
    const SimReport rep = table_run(fam, sigmoid_design(fam), sigmoid_true_theta(), 20, 2000);
    check_table(v, rep, 4, {-41.24, -12.30, -4.55, true});
  });

  criterion(9, "errors-in-variables n = 25, R = 1000: Sigma_q bias (t4, PE 0.7)", [](Verdict& v) {
    const std::pair<DensityFamily, double> runs[] = {{DensityFamily::student_t(4.0), -2.31},
                                                     {DensityFamily::power_exponential(0.7), -3.04}};
    for (const auto& [fam, target] : runs) {
      const SimReport rep = table_run(fam, eiv_design(fam), eiv_true_theta(), 25, 1000);
      const SimCell& cell = rep.cells.at(0);
      const int r = 4;
      const EstimatorSummary *m = cell.find(Estimator::MLE), *bc = cell.find(Estimator::BC),
                             *br = cell.find(Estimator::BR);
      v.detail << " " << fam.name() << ": MLE " << num(m->bias(r)) << "+-" << num(m->se_bias(r)) << ", BC "
               << num(bc->bias(r)) << ", BR " << num(br->bias(r));
      v.require(m->bias(r) < 0.0 && std::abs(m->bias(r) - target) <= 3.0 * m->se_bias(r),
                fam.name() + " MLE off target " + num(target));
      v.require(std::abs(m->bias(r)) > std::abs(bc->bias(r)) && std::abs(bc->bias(r)) >= std::abs(br->bias(r)),
                fam.name() + " ordering |MLE| > |BC| >= |BR|");
    }
  });

  criterion(10, "radial moment identities, 1e6 draws, normal / t4 / PE 0.8, q = 1..3", [](Verdict& v) {
    double worst = 0.0;
    for (const auto& fam : {DensityFamily::normal(), DensityFamily::student_t(4.0), DensityFamily::power_exponential(0.8)})
      for (int q = 1; q <= 3; ++q) {
        const support::MomentCheck mc = support::radial_moment_identities(fam, q, 1000000, 10);
        worst = std::max(worst, mc.worst());
        v.require(mc.worst() < 4.0, fam.name() + " q=" + std::to_string(q) + " z " + num(mc.worst()));
      }
    v.detail << " max z " << num(worst);
  });

  std::printf("%s: %d criteria failed\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
