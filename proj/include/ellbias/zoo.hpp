#pragma once

// Ready-made models with analytic first and second derivatives:
// heteroscedastic nonlinear regression, nonlinear mixed effects (marginal),
// errors-in-variables, and log-symmetric regression.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "ellbias/errors.hpp"
#include "ellbias/family.hpp"
#include "ellbias/linalg.hpp"
#include "ellbias/model.hpp"

namespace ellbias::zoo {

/// f(x, alpha) with gradient and Hessian in alpha. `start`, when set, maps
/// (covariates, responses) to a rough alpha.
struct ScalarMean {
  int p = 0;
  std::vector<std::string> names;
  std::function<double(const VectorXd& x, const VectorXd& a)> value;
  std::function<VectorXd(const VectorXd& x, const VectorXd& a)> gradient;
  std::function<MatrixXd(const VectorXd& x, const VectorXd& a)> hessian;
  std::function<VectorXd(const std::vector<VectorXd>& x, const VectorXd& y)> start;
};

enum class VarianceLink { Exp, Identity };

namespace detail {

inline VectorXd least_squares(const MatrixXd& x, const VectorXd& y) {
  if (x.rows() < x.cols()) throw ConfigError("too few observations for a least squares start");
  return x.colPivHouseholderQr().solve(y);
}

inline MatrixXd design(const std::vector<VectorXd>& x) {
  if (x.empty()) throw ConfigError("empty design");
  MatrixXd m(x.size(), x[0].size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i].size() != m.cols()) throw DimensionError("ragged covariate rows");
    m.row(i) = x[i].transpose();
  }
  return m;
}

/// Variance of the family relative to its scale, or 1 when infinite.
inline double finite_variance_scale(const DensityFamily& fam, int q) {
  const double xi = fam.variance_scale(q);
  return std::isfinite(xi) ? xi : 1.0;
}

inline std::vector<std::string> numbered(const std::string& prefix, int count) {
  std::vector<std::string> out;
  for (int k = 0; k < count; ++k) out.push_back(prefix + std::to_string(k + 1));
  return out;
}

inline void append(std::vector<std::string>& a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
}

inline void init_terms(LocalTerms& t, int q, int p, int order) {
  t.dmu = MatrixXd::Zero(q, p);
  t.dsigma.assign(p, MatrixXd::Zero(q, q));
  if (order >= 2) {
    t.d2mu.assign(p, MatrixXd::Zero(q, p));
    t.d2sigma.assign(p * p, MatrixXd::Zero(q, q));
  }
}

}  // namespace detail

/// mu = x' alpha.
inline ScalarMean linear_mean(int p, std::vector<std::string> names = {}) {
  ScalarMean f;
  f.p = p;
  f.names = names.empty() ? detail::numbered("beta", p) : std::move(names);
  f.value = [](const VectorXd& x, const VectorXd& a) { return x.dot(a); };
  f.gradient = [](const VectorXd& x, const VectorXd&) { return x; };
  f.hessian = [p](const VectorXd&, const VectorXd&) { return MatrixXd::Zero(p, p); };
  f.start = [](const std::vector<VectorXd>& x, const VectorXd& y) {
    return detail::least_squares(detail::design(x), y);
  };
  return f;
}

/// mu = a1 + a2 / (1 + a3 x^a4), x > 0 the first covariate.
inline ScalarMean sigmoid_mean() {
  ScalarMean f;
  f.p = 4;
  f.names = {"alpha1", "alpha2", "alpha3", "alpha4"};
  f.value = [](const VectorXd& x, const VectorXd& a) {
    return a(0) + a(1) / (1.0 + a(2) * std::pow(x(0), a(3)));
  };
  f.gradient = [](const VectorXd& x, const VectorXd& a) {
    const double pw = std::pow(x(0), a(3)), lx = std::log(x(0));
    const double d = 1.0 + a(2) * pw;
    VectorXd g(4);
    g << 1.0, 1.0 / d, -a(1) * pw / (d * d), -a(1) * a(2) * pw * lx / (d * d);
    return g;
  };
  f.hessian = [](const VectorXd& x, const VectorXd& a) {
    const double pw = std::pow(x(0), a(3)), lx = std::log(x(0));
    const double d = 1.0 + a(2) * pw, d2 = d * d, d3 = d2 * d;
    MatrixXd h = MatrixXd::Zero(4, 4);
    h(1, 2) = h(2, 1) = -pw / d2;
    h(1, 3) = h(3, 1) = -a(2) * pw * lx / d2;
    h(2, 2) = 2.0 * a(1) * pw * pw / d3;
    h(2, 3) = h(3, 2) = -a(1) * pw * lx * (d - 2.0 * a(2) * pw) / d3;
    h(3, 3) = -a(1) * a(2) * lx * lx * pw * (d - 2.0 * a(2) * pw) / d3;
    return h;
  };
  // grid over (a3, a4) with (a1, a2) profiled out by least squares
  f.start = [](const std::vector<VectorXd>& x, const VectorXd& y) {
    const int n = static_cast<int>(y.size());
    if (n < 4) throw ConfigError("sigmoid model needs at least 4 observations");
    double best = std::numeric_limits<double>::infinity();
    VectorXd out(4);
    MatrixXd m(n, 2);
    for (int j4 = 1; j4 <= 24; ++j4) {
      const double a4 = 0.25 * j4;
      for (int j3 = -40; j3 <= 12; ++j3) {
        const double a3 = std::pow(10.0, 0.25 * j3);
        for (int i = 0; i < n; ++i) m.row(i) << 1.0, 1.0 / (1.0 + a3 * std::pow(x[i](0), a4));
        const VectorXd c = m.colPivHouseholderQr().solve(y);
        const double rss = (y - m * c).squaredNorm();
        if (rss < best) {
          best = rss;
          out << c(0), c(1), a3, a4;
        }
      }
    }
    return out;
  };
  return f;
}

struct HeteroNonlinearSpec {
  ScalarMean mean;
  VarianceLink link = VarianceLink::Exp;
  std::vector<std::string> variance_names;
  VectorXd y;
  std::vector<VectorXd> x;
  /// Scale covariates; empty means a single constant column.
  std::vector<VectorXd> omega;
  DensityFamily family = DensityFamily::normal();
};

namespace detail {

inline double link_value(VarianceLink link, double eta) {
  return link == VarianceLink::Exp ? std::exp(eta) : eta;
}

/// Shared plumbing of the univariate models: mean f(x, alpha) with
/// derivatives, variance h(omega' gamma).
inline ModelSpec univariate_model(const ScalarMean& f, VarianceLink link,
                                  std::vector<std::string> variance_names, const VectorXd& y,
                                  const std::vector<VectorXd>& x, std::vector<VectorXd> omega,
                                  const DensityFamily& family) {
  const int n = static_cast<int>(y.size());
  if (static_cast<int>(x.size()) != n) throw DimensionError("x and y have different lengths");
  if (omega.empty()) omega.assign(n, VectorXd::Ones(1));
  if (static_cast<int>(omega.size()) != n) throw DimensionError("omega and y have different lengths");
  if (!f.value || !f.gradient || !f.hessian) throw ConfigError("mean function needs value, gradient and hessian");
  const int p1 = f.p;
  const int p2 = static_cast<int>(omega[0].size());
  const int p = p1 + p2;

  std::vector<ObservationBlock> blocks(n);
  for (int i = 0; i < n; ++i) {
    if (omega[i].size() != p2) throw DimensionError("ragged omega rows");
    blocks[i].y = VectorXd::Constant(1, y(i));
    blocks[i].x = x[i];
    blocks[i].w = omega[i];
    blocks[i].id = std::to_string(i + 1);
  }

  ModelFunctions fns;
  fns.mean = [f, p1](const VectorXd& th, const ObservationBlock& o) {
    return VectorXd::Constant(1, f.value(o.x, th.head(p1)));
  };
  fns.scale = [link, p1, p2](const VectorXd& th, const ObservationBlock& o) {
    const double s2 = link_value(link, o.w.dot(th.segment(p1, p2)));
    if (!(s2 > 0.0) || !std::isfinite(s2))
      throw DomainError("variance function is not positive for observation " + o.id);
    return MatrixXd::Constant(1, 1, s2);
  };
  fns.analytic_order = 2;
  fns.derivatives = [f, link, p1, p2, p](const VectorXd& th, const ObservationBlock& o, int order,
                                         LocalTerms& t) {
    init_terms(t, 1, p, order);
    const VectorXd a = th.head(p1);
    const double s2 = t.sigma(0, 0);
    t.dmu.block(0, 0, 1, p1) = f.gradient(o.x, a).transpose();
    for (int r = 0; r < p2; ++r)
      t.dsigma[p1 + r](0, 0) = link == VarianceLink::Exp ? s2 * o.w(r) : o.w(r);
    if (order < 2) return;
    const MatrixXd h = f.hessian(o.x, a);
    for (int r = 0; r < p1; ++r) t.d2mu[r].block(0, 0, 1, p1) = h.row(r);
    if (link == VarianceLink::Exp)
      for (int r = 0; r < p2; ++r)
        for (int s = 0; s < p2; ++s) t.d2sigma[(p1 + r) * p + p1 + s](0, 0) = s2 * o.w(r) * o.w(s);
  };

  ModelSpec model(p, std::move(blocks), family, std::move(fns));
  model.set_orthogonal_split({p1, p2});
  std::vector<std::string> names = f.names.size() == static_cast<std::size_t>(p1)
                                       ? f.names
                                       : numbered("alpha", p1);
  if (variance_names.size() != static_cast<std::size_t>(p2))
    variance_names = p2 == 1 && link == VarianceLink::Identity ? std::vector<std::string>{"sigma2"}
                                                               : numbered("gamma", p2);
  append(names, variance_names);
  model.set_parameter_names(std::move(names));

  if (f.start) {
    model.set_start_heuristic([f, link, p1, p2, p](const ModelSpec& m) {
      const int n = m.n();
      std::vector<VectorXd> xs(n);
      VectorXd ys(n);
      MatrixXd w(n, p2);
      for (int i = 0; i < n; ++i) {
        xs[i] = m.block(i).x;
        ys(i) = m.block(i).y(0);
        w.row(i) = m.block(i).w.transpose();
      }
      VectorXd th(p);
      th.head(p1) = f.start(xs, ys);
      const double xi = finite_variance_scale(m.family(), 1);
      VectorXd r2(n);
      for (int i = 0; i < n; ++i) {
        const double r = ys(i) - f.value(xs[i], th.head(p1));
        r2(i) = r * r / xi;
      }
      const double floor = std::max(1e-8, 1e-3 * r2.mean());
      if (link == VarianceLink::Exp) {
        th.tail(p2) = least_squares(w, r2.cwiseMax(floor).array().log().matrix());
      } else {
        VectorXd g = least_squares(w, r2);
        if (((w * g).array() <= 0.0).any()) {
          // fall back to a constant variance expressed through omega
          g = least_squares(w, VectorXd::Constant(n, r2.mean()));
          if (((w * g).array() <= 0.0).any())
            throw ConfigError("could not find a feasible variance start; supply --start");
        }
        th.tail(p2) = g;
      }
      return th;
    });
  }
  return model;
}

}  // namespace detail

inline ModelSpec build_hetero_nonlinear(const HeteroNonlinearSpec& spec) {
  return detail::univariate_model(spec.mean, spec.link, spec.variance_names, spec.y, spec.x,
                                  spec.omega, spec.family);
}

/// Y_i ~ El(a1 + a2 / (1 + a3 x_i^a4), sigma2) with constant scale sigma2.
inline ModelSpec build_sigmoid(const VectorXd& x, const VectorXd& y,
                               const DensityFamily& family = DensityFamily::normal()) {
  HeteroNonlinearSpec spec;
  spec.mean = sigmoid_mean();
  spec.link = VarianceLink::Identity;
  spec.variance_names = {"sigma2"};
  spec.y = y;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    if (!(x(i) > 0.0)) throw DomainError("sigmoid covariate must be positive");
    spec.x.push_back(VectorXd::Constant(1, x(i)));
  }
  spec.family = family;
  return build_hetero_nonlinear(spec);
}

// ---------------------------------------------------------------------------
// Mixed effects: Sigma_i = Z_i Sigma_b(gamma_1) Z_i' + R_i(gamma_2)

/// mu_i(x_i, alpha), a q_i-vector, with Jacobian and second derivatives.
struct VectorMean {
  int p = 0;
  std::vector<std::string> names;
  std::function<VectorXd(const VectorXd& x, const VectorXd& a, int q)> value;
  std::function<MatrixXd(const VectorXd& x, const VectorXd& a, int q)> jacobian;
  /// column s of the result is d2 mu / d a_r d a_s
  std::function<MatrixXd(const VectorXd& x, const VectorXd& a, int q, int r)> hessian;
  std::function<VectorXd(const std::vector<ObservationBlock>& blocks)> start;
};

/// mu_i = X_i alpha with x_i = vec(X_i), X_i of size q_i x p.
inline VectorMean linear_vector_mean(int p, std::vector<std::string> names = {}) {
  VectorMean f;
  f.p = p;
  f.names = names.empty() ? detail::numbered("beta", p) : std::move(names);
  auto design = [p](const VectorXd& x, int q) {
    if (x.size() != q * p) throw DimensionError("covariates must hold vec(X_i) with X_i q x p");
    return unvec(x, q, p);
  };
  f.value = [design](const VectorXd& x, const VectorXd& a, int q) { return VectorXd(design(x, q) * a); };
  f.jacobian = [design](const VectorXd& x, const VectorXd&, int q) { return design(x, q); };
  f.hessian = [p](const VectorXd&, const VectorXd&, int q, int) { return MatrixXd::Zero(q, p); };
  f.start = [design, p](const std::vector<ObservationBlock>& blocks) {
    int rows = 0;
    for (const auto& b : blocks) rows += b.q();
    MatrixXd xs(rows, p);
    VectorXd ys(rows);
    int at = 0;
    for (const auto& b : blocks) {
      xs.middleRows(at, b.q()) = design(b.x, b.q());
      ys.segment(at, b.q()) = b.y;
      at += b.q();
    }
    return detail::least_squares(xs, ys);
  };
  return f;
}

/// Linear parameterisation of a covariance matrix.
struct CovarianceStructure {
  enum class Kind { Unstructured, ScaledIdentity, Diagonal };
  Kind kind = Kind::ScaledIdentity;
  int dim = 1;  // 0 allowed for an absent random effect; ignored by ScaledIdentity residuals

  static CovarianceStructure unstructured(int d) { return {Kind::Unstructured, d}; }
  static CovarianceStructure scaled_identity(int d = 1) { return {Kind::ScaledIdentity, d}; }
  static CovarianceStructure diagonal(int d) { return {Kind::Diagonal, d}; }

  int count() const {
    if (dim == 0) return 0;
    switch (kind) {
      case Kind::Unstructured: return static_cast<int>(vech_size(dim));
      case Kind::ScaledIdentity: return 1;
      case Kind::Diagonal: return dim;
    }
    return 0;
  }

  /// d Matrix / d parameter_k at dimension d.
  MatrixXd basis(int k, int d) const {
    switch (kind) {
      case Kind::Unstructured: return vech_basis(d, k);
      case Kind::ScaledIdentity: return MatrixXd::Identity(d, d);
      case Kind::Diagonal: {
        MatrixXd e = MatrixXd::Zero(d, d);
        e(k, k) = 1.0;
        return e;
      }
    }
    return MatrixXd();
  }

  MatrixXd value(const VectorXd& par, int d) const {
    MatrixXd m = MatrixXd::Zero(d, d);
    for (int k = 0; k < count(); ++k) m += par(k) * basis(k, d);
    return m;
  }

  VectorXd start_for(double variance) const {
    VectorXd v = VectorXd::Zero(count());
    if (kind == Kind::Unstructured) {
      for (int j = 0; j < dim; ++j) v(vech_index(j, j)) = variance;
    } else {
      v.setConstant(variance);
    }
    return v;
  }

  std::vector<std::string> names(const std::string& prefix) const {
    std::vector<std::string> out;
    if (kind == Kind::Unstructured) {
      for (int j = 0; j < dim; ++j)
        for (int i = 0; i <= j; ++i)
          out.push_back(prefix + "[" + std::to_string(i + 1) + "," + std::to_string(j + 1) + "]");
    } else if (kind == Kind::ScaledIdentity) {
      out.push_back(prefix);
    } else {
      for (int j = 0; j < dim; ++j) out.push_back(prefix + "[" + std::to_string(j + 1) + "]");
    }
    return out;
  }
};

struct MixedEffectsSpec {
  VectorMean mean;
  std::vector<VectorXd> y;
  std::vector<VectorXd> x;
  /// Random-effect design matrices, q_i x b; b may be 0.
  std::vector<MatrixXd> Z;
  CovarianceStructure random = CovarianceStructure::unstructured(1);
  CovarianceStructure residual = CovarianceStructure::scaled_identity();
  DensityFamily family = DensityFamily::normal();
};

inline ModelSpec build_mixed_effects(const MixedEffectsSpec& spec) {
  const int n = static_cast<int>(spec.y.size());
  if (static_cast<int>(spec.x.size()) != n || static_cast<int>(spec.Z.size()) != n)
    throw DimensionError("y, x and Z must have one entry per subject");
  if (!spec.mean.value || !spec.mean.jacobian || !spec.mean.hessian)
    throw ConfigError("mean function needs value, jacobian and hessian");
  const int b = n > 0 ? static_cast<int>(spec.Z[0].cols()) : 0;
  CovarianceStructure random = spec.random;
  if (b == 0) random.dim = 0;
  if (random.dim != b) throw DimensionError("random-effect structure dimension must equal the columns of Z");
  const CovarianceStructure residual = spec.residual;
  const int p1 = spec.mean.p, p2 = random.count(), p3 = residual.count();
  const int p = p1 + p2 + p3;

  std::vector<ObservationBlock> blocks(n);
  for (int i = 0; i < n; ++i) {
    const int q = static_cast<int>(spec.y[i].size());
    if (spec.Z[i].rows() != q || spec.Z[i].cols() != b) throw DimensionError("Z_i must be q_i x b");
    if (residual.kind != CovarianceStructure::Kind::ScaledIdentity && residual.dim != q)
      throw DimensionError("residual structure dimension must equal q_i");
    blocks[i].y = spec.y[i];
    blocks[i].x = spec.x[i];
    blocks[i].w = vec(spec.Z[i]);
    blocks[i].id = std::to_string(i + 1);
  }

  const VectorMean f = spec.mean;
  auto zmat = [b](const ObservationBlock& o) { return unvec(o.w, o.q(), b); };
  ModelFunctions fns;
  fns.mean = [f, p1](const VectorXd& th, const ObservationBlock& o) {
    return f.value(o.x, th.head(p1), o.q());
  };
  fns.scale = [=](const VectorXd& th, const ObservationBlock& o) {
    const int q = o.q();
    MatrixXd s = residual.value(th.segment(p1 + p2, p3), q);
    if (b > 0) {
      const MatrixXd z = zmat(o);
      s += z * random.value(th.segment(p1, p2), b) * z.transpose();
    }
    return s;
  };
  fns.analytic_order = 2;
  fns.derivatives = [=](const VectorXd& th, const ObservationBlock& o, int order, LocalTerms& t) {
    const int q = o.q();
    detail::init_terms(t, q, p, order);
    const VectorXd a = th.head(p1);
    t.dmu.leftCols(p1) = f.jacobian(o.x, a, q);
    if (b > 0) {
      const MatrixXd z = zmat(o);
      for (int k = 0; k < p2; ++k) t.dsigma[p1 + k] = z * random.basis(k, b) * z.transpose();
    }
    for (int k = 0; k < p3; ++k) t.dsigma[p1 + p2 + k] = residual.basis(k, q);
    if (order < 2) return;
    for (int r = 0; r < p1; ++r) t.d2mu[r].leftCols(p1) = f.hessian(o.x, a, q, r);
  };

  ModelSpec model(p, std::move(blocks), spec.family, std::move(fns));
  model.set_orthogonal_split({p1, p2 + p3});
  std::vector<std::string> names =
      f.names.size() == static_cast<std::size_t>(p1) ? f.names : detail::numbered("alpha", p1);
  if (p2 > 0) detail::append(names, random.names("Sigma_b"));
  detail::append(names, residual.names("R"));
  model.set_parameter_names(std::move(names));

  if (f.start) {
    model.set_start_heuristic([=](const ModelSpec& m) {
      VectorXd th(p);
      th.head(p1) = f.start(m.blocks());
      double ss = 0.0;
      int cnt = 0;
      for (const auto& o : m.blocks()) {
        ss += (o.y - f.value(o.x, th.head(p1), o.q())).squaredNorm();
        cnt += o.q();
      }
      const double v = ss / cnt / detail::finite_variance_scale(m.family(), 1);
      if (p2 > 0) th.segment(p1, p2) = random.start_for(0.25 * v);
      th.tail(p3) = residual.start_for(0.75 * v);
      return th;
    });
  }
  return model;
}

// ---------------------------------------------------------------------------
// Errors-in-variables: Y_i = (X_1i', X_2i')' with
//   mu = (beta0 + beta1 mu_x; mu_x),
//   Sigma_i = [beta1 Sx beta1' + Sq + tau1_i, beta1 Sx; Sx beta1', Sx + tau2_i],
//   theta = (beta0, vec beta1, mu_x, vech Sx, vech Sq).

struct EivLayout {
  int v = 1;
  int m = 1;

  int beta0() const { return 0; }
  int beta1() const { return v; }
  int mu_x() const { return v + v * m; }
  int sigma_x() const { return v + v * m + m; }
  int sigma_q() const { return sigma_x() + static_cast<int>(vech_size(m)); }
  int p() const { return sigma_q() + static_cast<int>(vech_size(v)); }

  MatrixXd b1(const VectorXd& th) const { return unvec(th.segment(beta1(), v * m), v, m); }
  MatrixXd sx(const VectorXd& th) const { return unvech(th.segment(sigma_x(), vech_size(m)), m); }
  MatrixXd sq(const VectorXd& th) const { return unvech(th.segment(sigma_q(), vech_size(v)), v); }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    auto idx = [](int i) { return std::to_string(i + 1); };
    for (int a = 0; a < v; ++a) out.push_back(v == 1 ? "beta0" : "beta0[" + idx(a) + "]");
    for (int b = 0; b < m; ++b)
      for (int a = 0; a < v; ++a)
        out.push_back(v * m == 1 ? "beta1" : "beta1[" + idx(a) + "," + idx(b) + "]");
    for (int b = 0; b < m; ++b) out.push_back(m == 1 ? "mu_x2" : "mu_x2[" + idx(b) + "]");
    for (int j = 0; j < m; ++j)
      for (int i = 0; i <= j; ++i)
        out.push_back(m == 1 ? "Sigma_x2" : "Sigma_x2[" + idx(i) + "," + idx(j) + "]");
    for (int j = 0; j < v; ++j)
      for (int i = 0; i <= j; ++i)
        out.push_back(v == 1 ? "Sigma_q" : "Sigma_q[" + idx(i) + "," + idx(j) + "]");
    return out;
  }
};

struct ErrorsInVariablesSpec {
  int v = 1;
  int m = 1;
  std::vector<VectorXd> X1;      // observed responses, length v
  std::vector<VectorXd> X2;      // observed covariates, length m
  std::vector<MatrixXd> tau1;    // known v x v error scales
  std::vector<MatrixXd> tau2;    // known m x m error scales
  DensityFamily family = DensityFamily::normal();
};

inline ModelSpec build_eiv(const ErrorsInVariablesSpec& spec) {
  const EivLayout lay{spec.v, spec.m};
  const int v = spec.v, m = spec.m, q = v + m, p = lay.p();
  if (v < 1 || m < 1) throw DimensionError("EIV needs v >= 1 and m >= 1");
  const std::size_t n = spec.X1.size();
  if (spec.X2.size() != n || spec.tau1.size() != n || spec.tau2.size() != n)
    throw DimensionError("X1, X2, tau1 and tau2 need one entry per observation");
  std::vector<ObservationBlock> blocks(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (spec.X1[i].size() != v || spec.X2[i].size() != m)
      throw DimensionError("observation " + std::to_string(i + 1) + ": X1 must have length v and X2 length m");
    if (spec.tau1[i].rows() != v || spec.tau1[i].cols() != v || spec.tau2[i].rows() != m ||
        spec.tau2[i].cols() != m)
      throw DimensionError("observation " + std::to_string(i + 1) + ": tau1 must be v x v and tau2 m x m");
    blocks[i].y.resize(q);
    blocks[i].y << spec.X1[i], spec.X2[i];
    blocks[i].w.resize(v * v + m * m);
    blocks[i].w << vec(spec.tau1[i]), vec(spec.tau2[i]);
    blocks[i].id = std::to_string(i + 1);
  }

  auto taus = [v, m](const ObservationBlock& o) {
    return std::pair<MatrixXd, MatrixXd>(unvec(o.w.head(v * v), v, v), unvec(o.w.tail(m * m), m, m));
  };
  ModelFunctions fns;
  fns.mean = [lay, v, m](const VectorXd& th, const ObservationBlock&) {
    VectorXd mu(v + m);
    const VectorXd mx = th.segment(lay.mu_x(), m);
    mu << th.segment(lay.beta0(), v) + lay.b1(th) * mx, mx;
    return mu;
  };
  fns.scale = [lay, v, m, taus](const VectorXd& th, const ObservationBlock& o) {
    const MatrixXd b1 = lay.b1(th), sx = lay.sx(th), sq = lay.sq(th);
    const auto [t1, t2] = taus(o);
    MatrixXd s(v + m, v + m);
    s.topLeftCorner(v, v) = b1 * sx * b1.transpose() + sq + t1;
    s.topRightCorner(v, m) = b1 * sx;
    s.bottomLeftCorner(m, v) = sx * b1.transpose();
    s.bottomRightCorner(m, m) = sx + t2;
    return s;
  };
  fns.analytic_order = 2;
  fns.derivatives = [lay, v, m, q, p](const VectorXd& th, const ObservationBlock&, int order,
                                      LocalTerms& t) {
    detail::init_terms(t, q, p, order);
    const MatrixXd b1 = lay.b1(th), sx = lay.sx(th);
    const VectorXd mx = th.segment(lay.mu_x(), m);
    auto unit = [v, m](int k) {
      MatrixXd e = MatrixXd::Zero(v, m);
      e(k % v, k / v) = 1.0;
      return e;
    };
    for (int a = 0; a < v; ++a) t.dmu(a, lay.beta0() + a) = 1.0;
    for (int k = 0; k < v * m; ++k) {
      const MatrixXd e = unit(k);
      const int r = lay.beta1() + k;
      t.dmu.col(r).head(v) = e * mx;
      MatrixXd c = MatrixXd::Zero(q, q);
      c.topLeftCorner(v, v) = e * sx * b1.transpose() + b1 * sx * e.transpose();
      c.topRightCorner(v, m) = e * sx;
      c.bottomLeftCorner(m, v) = sx * e.transpose();
      t.dsigma[r] = c;
    }
    for (int j = 0; j < m; ++j) {
      const int r = lay.mu_x() + j;
      t.dmu.col(r).head(v) = b1.col(j);
      t.dmu(v + j, r) = 1.0;
    }
    const int nx = static_cast<int>(vech_size(m)), nq = static_cast<int>(vech_size(v));
    for (int k = 0; k < nx; ++k) {
      const MatrixXd g = vech_basis(m, k);
      MatrixXd c(q, q);
      c.topLeftCorner(v, v) = b1 * g * b1.transpose();
      c.topRightCorner(v, m) = b1 * g;
      c.bottomLeftCorner(m, v) = g * b1.transpose();
      c.bottomRightCorner(m, m) = g;
      t.dsigma[lay.sigma_x() + k] = c;
    }
    for (int k = 0; k < nq; ++k) {
      MatrixXd c = MatrixXd::Zero(q, q);
      c.topLeftCorner(v, v) = vech_basis(v, k);
      t.dsigma[lay.sigma_q() + k] = c;
    }
    if (order < 2) return;
    for (int k = 0; k < v * m; ++k) {
      const MatrixXd e = unit(k);
      const int r = lay.beta1() + k;
      // beta1 x mu_x
      for (int j = 0; j < m; ++j) {
        const int s = lay.mu_x() + j;
        const VectorXd col = e.col(j);
        t.d2mu[r].col(s).head(v) = col;
        t.d2mu[s].col(r).head(v) = col;
      }
      // beta1 x beta1
      for (int l = 0; l < v * m; ++l) {
        const MatrixXd e2 = unit(l);
        MatrixXd c = MatrixXd::Zero(q, q);
        c.topLeftCorner(v, v) = e * sx * e2.transpose() + e2 * sx * e.transpose();
        t.d2sigma[r * p + lay.beta1() + l] = c;
      }
      // beta1 x Sigma_x2
      for (int kk = 0; kk < nx; ++kk) {
        const MatrixXd g = vech_basis(m, kk);
        MatrixXd c = MatrixXd::Zero(q, q);
        c.topLeftCorner(v, v) = e * g * b1.transpose() + b1 * g * e.transpose();
        c.topRightCorner(v, m) = e * g;
        c.bottomLeftCorner(m, v) = g * e.transpose();
        const int s = lay.sigma_x() + kk;
        t.d2sigma[r * p + s] = c;
        t.d2sigma[s * p + r] = c;
      }
    }
  };

  ModelSpec model(p, std::move(blocks), spec.family, std::move(fns));
  model.set_parameter_names(lay.names());
  // method of moments, covariances deflated by the family's variance scale
  model.set_start_heuristic([lay, v, m, q, p](const ModelSpec& mod) {
    const int n = mod.n();
    if (n < q + 1) throw ConfigError("too few observations for the EIV moment start");
    VectorXd mean = VectorXd::Zero(q);
    for (const auto& o : mod.blocks()) mean += o.y;
    mean /= n;
    MatrixXd cov = MatrixXd::Zero(q, q), tau1 = MatrixXd::Zero(v, v), tau2 = MatrixXd::Zero(m, m);
    for (const auto& o : mod.blocks()) {
      const VectorXd d = o.y - mean;
      cov += d * d.transpose();
      tau1 += unvec(o.w.head(v * v), v, v);
      tau2 += unvec(o.w.tail(m * m), m, m);
    }
    cov /= (n - 1);
    tau1 /= n;
    tau2 /= n;
    cov /= detail::finite_variance_scale(mod.family(), q);
    auto floor_pd = [](MatrixXd s, const MatrixXd& ref) {
      Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (s + s.transpose()));
      const double lo = 0.05 * std::max(ref.diagonal().maxCoeff(), 1e-8);
      VectorXd ev = es.eigenvalues().cwiseMax(lo);
      return MatrixXd(es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose());
    };
    const MatrixXd c22 = cov.bottomRightCorner(m, m), c12 = cov.topRightCorner(v, m);
    const MatrixXd sx = floor_pd(c22 - tau2, c22);
    const MatrixXd b1 = c12 * sx.inverse();
    const VectorXd mx = mean.tail(m);
    const MatrixXd c11 = cov.topLeftCorner(v, v);
    const MatrixXd sq = floor_pd(c11 - b1 * sx * b1.transpose() - tau1, c11);
    VectorXd th(p);
    th.segment(lay.beta0(), v) = mean.head(v) - b1 * mx;
    th.segment(lay.beta1(), v * m) = vec(b1);
    th.segment(lay.mu_x(), m) = mx;
    th.segment(lay.sigma_x(), vech_size(m)) = vech(sx);
    th.segment(lay.sigma_q(), vech_size(v)) = vech(sq);
    return th;
  });
  return model;
}

/// theta for given EIV blocks.
inline VectorXd eiv_theta(const VectorXd& beta0, const MatrixXd& beta1, const VectorXd& mu_x,
                          const MatrixXd& sigma_x, const MatrixXd& sigma_q) {
  const EivLayout lay{static_cast<int>(beta0.size()), static_cast<int>(mu_x.size())};
  VectorXd th(lay.p());
  th << beta0, vec(beta1), mu_x, vech(sigma_x), vech(sigma_q);
  return th;
}

// ---------------------------------------------------------------------------
// Log-symmetric: T_i > 0, log T_i ~ El(log eta(x_i, alpha), phi(omega_i' gamma)).

struct LogSymmetricSpec {
  /// Median function eta > 0. Its `start`, if set, receives log T.
  ScalarMean median;
  VarianceLink link = VarianceLink::Exp;
  std::vector<std::string> dispersion_names;
  VectorXd t;
  std::vector<VectorXd> x;
  std::vector<VectorXd> omega;
  DensityFamily family = DensityFamily::normal();
};

/// eta = exp(x' alpha); its start is least squares of log T on x.
inline ScalarMean exponential_median(int p, std::vector<std::string> names = {}) {
  ScalarMean f;
  f.p = p;
  f.names = names.empty() ? detail::numbered("alpha", p) : std::move(names);
  f.value = [](const VectorXd& x, const VectorXd& a) { return std::exp(x.dot(a)); };
  f.gradient = [](const VectorXd& x, const VectorXd& a) { return VectorXd(std::exp(x.dot(a)) * x); };
  f.hessian = [](const VectorXd& x, const VectorXd& a) {
    return MatrixXd(std::exp(x.dot(a)) * x * x.transpose());
  };
  f.start = [](const std::vector<VectorXd>& x, const VectorXd& logt) {
    return detail::least_squares(detail::design(x), logt);
  };
  return f;
}

/// log eta as a location function: d log eta = d eta / eta,
/// d2 log eta = d2 eta / eta - d eta d eta' / eta^2.
inline ScalarMean log_of(const ScalarMean& eta) {
  ScalarMean f;
  f.p = eta.p;
  f.names = eta.names;
  auto positive = [eta](const VectorXd& x, const VectorXd& a) {
    const double e = eta.value(x, a);
    if (!(e > 0.0)) throw DomainError("median function must be positive");
    return e;
  };
  f.value = [positive](const VectorXd& x, const VectorXd& a) { return std::log(positive(x, a)); };
  f.gradient = [eta, positive](const VectorXd& x, const VectorXd& a) {
    return VectorXd(eta.gradient(x, a) / positive(x, a));
  };
  f.hessian = [eta, positive](const VectorXd& x, const VectorXd& a) {
    const double e = positive(x, a);
    const VectorXd g = eta.gradient(x, a);
    return MatrixXd(eta.hessian(x, a) / e - g * g.transpose() / (e * e));
  };
  f.start = eta.start;
  return f;
}

inline ModelSpec build_log_symmetric(const LogSymmetricSpec& spec) {
  VectorXd y(spec.t.size());
  for (Eigen::Index i = 0; i < spec.t.size(); ++i) {
    if (!(spec.t(i) > 0.0))
      throw DomainError("log-symmetric response must be positive (row " + std::to_string(i + 1) + ")");
    y(i) = std::log(spec.t(i));
  }
  std::vector<std::string> disp = spec.dispersion_names;
  if (disp.empty()) {
    const std::size_t p2 = spec.omega.empty() ? 1 : spec.omega[0].size();
    disp = p2 == 1 && spec.link == VarianceLink::Identity ? std::vector<std::string>{"phi"}
                                                            : detail::numbered("gamma", static_cast<int>(p2));
  }
  return detail::univariate_model(log_of(spec.median), spec.link, disp, y, spec.x, spec.omega,
                                  spec.family);
}

}  // namespace ellbias::zoo
