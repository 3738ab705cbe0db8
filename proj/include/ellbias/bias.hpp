#pragma once

// Second-order (Cox-Snell) bias of the maximum likelihood estimator, written
// as a weighted least squares regression:
//   bias = (F' Ht F)^-1 F' Ht xi,  xi = (Phi_1, ..., Phi_p) vec(K^-1).

#include <cmath>
#include <string>
#include <vector>

#include "ellbias/errors.hpp"
#include "ellbias/linalg.hpp"
#include "ellbias/model.hpp"

namespace ellbias {

struct BiasComponents {
  VectorXd bias;
  MatrixXd information;                    // K = F' Ht F
  MatrixXd information_inverse;
  std::vector<VectorXd> xi;                // per observation, length q + q^2
  // Filled only when requested (keep_matrices): indexed [i][r].
  std::vector<std::vector<MatrixXd>> phi;
  std::vector<std::vector<MatrixXd>> B;
  std::vector<std::vector<MatrixXd>> S1;
  std::vector<std::vector<MatrixXd>> S2;
  std::vector<std::vector<MatrixXd>> dF;

  /// Stacked xi over observations.
  VectorXd stacked_xi() const {
    Eigen::Index n = 0;
    for (const auto& x : xi) n += x.size();
    VectorXd out(n);
    Eigen::Index at = 0;
    for (const auto& x : xi) {
      out.segment(at, x.size()) = x;
      at += x.size();
    }
    return out;
  }
};

struct BiasOptions {
  bool keep_matrices = false;
  /// Relative tolerance of the a_(rs) = a_(sr), C_(rs) = C_(sr) check.
  double symmetry_tol = 1e-6;
};

namespace detail {

inline SpdFactor factor_information(const MatrixXd& k) {
  try {
    SpdFactor f(k, "Fisher information");
    // conditioning judged on the unit-diagonal rescaling of K
    const VectorXd scale = k.diagonal().cwiseSqrt().cwiseInverse();
    const SpdFactor fs(scale.asDiagonal() * k * scale.asDiagonal(), "Fisher information");
    const VectorXd d = fs.lower().diagonal();
    if (d.minCoeff() / d.maxCoeff() < 1e-8)
      throw SingularInformation("Fisher information is numerically singular");
    return f;
  } catch (const LinAlgError&) {
    throw SingularInformation("Fisher information is not positive definite");
  }
}

inline void check_second_derivative_symmetry(const ObservationMatrices& o, int p, double tol) {
  const LocalTerms& t = o.terms;
  for (int r = 0; r < p; ++r)
    for (int s = r + 1; s < p; ++s) {
      const double scale_mu =
          std::max({1.0, t.d2mu[r].col(s).cwiseAbs().maxCoeff(), t.d2mu[s].col(r).cwiseAbs().maxCoeff()});
      const double scale_sig = std::max({1.0, t.d2sigma[r * p + s].cwiseAbs().maxCoeff()});
      if ((t.d2mu[r].col(s) - t.d2mu[s].col(r)).cwiseAbs().maxCoeff() > tol * scale_mu ||
          (t.d2sigma[r * p + s] - t.d2sigma[s * p + r]).cwiseAbs().maxCoeff() > tol * scale_sig)
        throw DomainError("second derivatives of mu/Sigma are not symmetric in (r, s)");
    }
}

/// dF_i / d theta_r: column s is (a_(rs); vec C_(rs)).
inline MatrixXd derivative_of_F(const ObservationMatrices& o, int r, int p) {
  const int q = o.q;
  MatrixXd out(q + q * q, p);
  out.topRows(q) = o.terms.d2mu[r];
  for (int s = 0; s < p; ++s) out.block(q, s, q * q, 1) = vec(o.terms.d2sigma[r * p + s]);
  return out;
}

inline MatrixXd s1_matrix(const VectorXd& vs, const VectorXd& vc, double tr) {
  return vs * vc.transpose() + 0.5 * tr * vs * vs.transpose();
}

inline MatrixXd s2_matrix(const MatrixXd& sigma, const MatrixXd& c_r, const VectorXd& vs,
                          const VectorXd& vc, double tr) {
  return vc * vs.transpose() + vs * vc.transpose() + 4.0 * kron(sigma, c_r) +
         (kron(sigma, sigma) + 0.5 * vs * vs.transpose()) * tr;
}

}  // namespace detail

/// General path: Phi_(r) = -1/2 (H^-1 M^-1 B_(r) H F + dF/dtheta_r).
inline BiasComponents bias_vector(const ModelSpec& model, const VectorXd& theta,
                                  const BiasOptions& opts = {}) {
  const BlockMatrices bm = assemble_blocks(model, theta, 2);
  const int p = model.p();
  BiasComponents out;
  out.information = bm.information();
  const SpdFactor kf = detail::factor_information(out.information);
  out.information_inverse = kf.inverse();
  const MatrixXd& kinv = out.information_inverse;

  const std::size_t n = bm.obs.size();
  out.xi.resize(n);
  if (opts.keep_matrices) {
    out.phi.assign(n, {});
    out.B.assign(n, {});
    out.S1.assign(n, {});
    out.S2.assign(n, {});
    out.dF.assign(n, {});
  }
  VectorXd rhs = VectorXd::Zero(p);
  for (std::size_t i = 0; i < n; ++i) {
    const ObservationMatrices& o = bm.obs[i];
    detail::check_second_derivative_symmetry(o, p, opts.symmetry_tol);
    const int q = o.q, q2 = q * q;
    const MatrixXd& sigma = o.terms.sigma;
    const PsiMoments& k = o.psi;
    const VectorXd vs = vec(sigma);
    // (M H)^-1 = H^-1 M^-1
    const Eigen::PartialPivLU<MatrixXd> mh(o.M * o.H);
    const MatrixXd hf = o.H * o.F;

    VectorXd xi = VectorXd::Zero(q + q2);
    for (int r = 0; r < p; ++r) {
      const VectorXd a_r = o.D.col(r);
      const MatrixXd& c_r = o.terms.dsigma[r];
      const VectorXd vc = vec(c_r);
      const double tr = (c_r * o.sigma_inv).trace();
      const MatrixXd s1 = detail::s1_matrix(vs, vc, tr);
      const MatrixXd s2 = detail::s2_matrix(sigma, c_r, vs, vc, tr);

      MatrixXd b1(q + q2, q + q2), b2(q + q2, q + q2);
      b1.topLeftCorner(q, q) = k.eta1 * c_r;
      b1.topRightCorner(q, q2) = 2.0 * k.eta1 * kron(sigma, a_r.transpose());
      b1.bottomLeftCorner(q2, q) = 2.0 * k.eta2 * kron(sigma, a_r);
      b1.bottomRightCorner(q2, q2) = 2.0 * (k.c - 1.0) * s1;
      b2.topLeftCorner(q, q) = k.eta1 * tr * sigma;
      b2.topRightCorner(q, q2) = 2.0 * k.eta1 * a_r * vs.transpose();
      b2.bottomLeftCorner(q2, q) = 2.0 * k.eta1 * vs * a_r.transpose();
      b2.bottomRightCorner(q2, q2) = 2.0 * (k.c + 8.0 * k.omega_tilde) * s2;
      const MatrixXd b = -0.5 * b1 - 0.25 * b2;

      const MatrixXd df = detail::derivative_of_F(o, r, p);
      const MatrixXd phi = -0.5 * (mh.solve(b * hf) + df);
      xi.noalias() += phi * kinv.col(r);
      if (opts.keep_matrices) {
        out.phi[i].push_back(phi);
        out.B[i].push_back(b);
        out.S1[i].push_back(s1);
        out.S2[i].push_back(s2);
        out.dF[i].push_back(df);
      }
    }
    rhs.noalias() += o.F.transpose() * (o.Htilde * xi);
    out.xi[i] = std::move(xi);
  }
  out.bias = kf.solve(rhs);
  return out;
}

/// Normal family only: Phi_(r) = -1/2 (J_(r) + dF/dtheta_r) with
/// J_(r) = (0; 2 (I (x) a_(r)) D).
inline BiasComponents bias_vector_normal_reduced(const ModelSpec& model, const VectorXd& theta) {
  if (!model.family().is_normal())
    throw DomainError("the reduced bias path applies to the normal family only");
  const BlockMatrices bm = assemble_blocks(model, theta, 2);
  const int p = model.p();
  BiasComponents out;
  out.information = bm.information();
  const SpdFactor kf = detail::factor_information(out.information);
  out.information_inverse = kf.inverse();
  const MatrixXd& kinv = out.information_inverse;
  out.xi.resize(bm.obs.size());
  VectorXd rhs = VectorXd::Zero(p);
  for (std::size_t i = 0; i < bm.obs.size(); ++i) {
    const ObservationMatrices& o = bm.obs[i];
    const int q = o.q, q2 = q * q;
    const MatrixXd eye = MatrixXd::Identity(q, q);
    VectorXd xi = VectorXd::Zero(q + q2);
    for (int r = 0; r < p; ++r) {
      MatrixXd j = MatrixXd::Zero(q + q2, p);
      j.bottomRows(q2) = 2.0 * kron(eye, o.D.col(r)) * o.D;
      const MatrixXd phi = -0.5 * (j + detail::derivative_of_F(o, r, p));
      xi.noalias() += phi * kinv.col(r);
    }
    rhs.noalias() += o.F.transpose() * (o.Htilde * xi);
    out.xi[i] = std::move(xi);
  }
  out.bias = kf.solve(rhs);
  return out;
}

/// Checks that mu does not move with theta_2 and Sigma does not move with
/// theta_1 at theta.
inline void check_orthogonal_split(const ModelSpec& model, const BlockMatrices& bm,
                                   const OrthogonalSplit& split, double tol = 1e-8) {
  const int p1 = split.p1, p2 = split.p2;
  for (std::size_t i = 0; i < bm.obs.size(); ++i) {
    const ObservationMatrices& o = bm.obs[i];
    const double smu = std::max(1.0, o.D.cwiseAbs().maxCoeff());
    const double ssig = std::max(1.0, o.V.cwiseAbs().maxCoeff());
    if (o.D.rightCols(p2).cwiseAbs().maxCoeff() > tol * smu ||
        o.V.leftCols(p1).cwiseAbs().maxCoeff() > tol * ssig)
      throw SplitError("declared orthogonal split is violated at observation " +
                       model.label(static_cast<int>(i)));
  }
}

/// Block-orthogonal path for theta = (theta_1, theta_2) with mu(theta_1) and
/// Sigma(theta_2). Returns the same bias as bias_vector.
inline BiasComponents bias_vector_orthogonal(const ModelSpec& model, const VectorXd& theta) {
  if (!model.orthogonal_split()) throw SplitError("model declares no orthogonal split");
  const OrthogonalSplit split = *model.orthogonal_split();
  const int p1 = split.p1, p2 = split.p2, p = model.p();
  const BlockMatrices bm = assemble_blocks(model, theta, 2);
  check_orthogonal_split(model, bm, split);

  const std::size_t n = bm.obs.size();
  std::vector<MatrixXd> ht1(n), ht2(n), f2(n);
  MatrixXd k1 = MatrixXd::Zero(p1, p1), k2 = MatrixXd::Zero(p2, p2);
  for (std::size_t i = 0; i < n; ++i) {
    const ObservationMatrices& o = bm.obs[i];
    const PsiMoments& k = o.psi;
    const VectorXd vsi = vec(o.sigma_inv);
    ht1[i] = k.location_weight() * o.sigma_inv;
    ht2[i] = 0.5 * k.c * kron(o.sigma_inv, o.sigma_inv) + 0.25 * (k.c - 1.0) * vsi * vsi.transpose();
    f2[i] = o.V.rightCols(p2);
    const MatrixXd d1 = o.D.leftCols(p1);
    k1.noalias() += d1.transpose() * ht1[i] * d1;
    k2.noalias() += f2[i].transpose() * ht2[i] * f2[i];
  }
  k1 = 0.5 * (k1 + k1.transpose()).eval();
  k2 = 0.5 * (k2 + k2.transpose()).eval();
  const SpdFactor k1f = detail::factor_information(k1);
  const SpdFactor k2f = detail::factor_information(k2);
  const VectorXd vk1 = vec(k1f.inverse());
  const VectorXd vk2 = vec(k2f.inverse());

  BiasComponents out;
  out.information = MatrixXd::Zero(p, p);
  out.information.topLeftCorner(p1, p1) = k1;
  out.information.bottomRightCorner(p2, p2) = k2;
  out.information_inverse = MatrixXd::Zero(p, p);
  out.information_inverse.topLeftCorner(p1, p1) = k1f.inverse();
  out.information_inverse.bottomRightCorner(p2, p2) = k2f.inverse();
  out.xi.resize(n);

  VectorXd rhs1 = VectorXd::Zero(p1), rhs2 = VectorXd::Zero(p2);
  for (std::size_t i = 0; i < n; ++i) {
    const ObservationMatrices& o = bm.obs[i];
    const PsiMoments& k = o.psi;
    const int q = o.q, q2 = q * q;
    const MatrixXd& sigma = o.terms.sigma;
    const VectorXd vs = vec(sigma);
    const VectorXd vsi = vec(o.sigma_inv);
    const MatrixXd d1 = o.D.leftCols(p1);

    // dF_theta1 / dtheta_1 and dF_theta2 / dtheta_2, side by side
    MatrixXd fd1(q, p1 * p1), fd2(q2, p2 * p2);
    for (int r = 0; r < p1; ++r) fd1.middleCols(r * p1, p1) = o.terms.d2mu[r].leftCols(p1);
    for (int s = 0; s < p2; ++s)
      for (int t = 0; t < p2; ++t) fd2.col(s * p2 + t) = vec(o.terms.d2sigma[(p1 + s) * p + p1 + t]);
    const VectorXd xi1 = -0.5 * fd1 * vk1;

    const MatrixXd g = (MatrixXd::Identity(q2, q2) -
                        (k.c - 1.0) / (2.0 * k.c + (k.c - 1.0) * q) * vs * vsi.transpose()) /
                       k.c;
    MatrixXd pstar(q2, p1 * p1);
    for (int r = 0; r < p1; ++r) {
      const VectorXd a_r = o.D.col(r);
      pstar.middleCols(r * p1, p1) =
          (2.0 * k.eta2 * kron(MatrixXd::Identity(q, q), a_r) +
           k.eta1 * vs * (a_r.transpose() * o.sigma_inv)) *
          d1;
    }
    const MatrixXd kii_f2 = kron(o.sigma_inv, o.sigma_inv) * f2[i];
    MatrixXd qstar(q2, p2 * p2);
    for (int s = 0; s < p2; ++s) {
      const MatrixXd& c_s = o.terms.dsigma[p1 + s];
      const VectorXd vc = vec(c_s);
      const double tr = (c_s * o.sigma_inv).trace();
      qstar.middleCols(s * p2, p2) = ((k.c - 1.0) * detail::s1_matrix(vs, vc, tr) +
                                      0.5 * (k.c + 8.0 * k.omega_tilde) *
                                          detail::s2_matrix(sigma, c_s, vs, vc, tr)) *
                                     kii_f2;
    }
    const VectorXd xi2 = 0.25 * g * pstar * vk1 + 0.125 * (2.0 * g * qstar - 4.0 * fd2) * vk2;

    rhs1.noalias() += d1.transpose() * (ht1[i] * xi1);
    rhs2.noalias() += f2[i].transpose() * (ht2[i] * xi2);
    VectorXd xi(q + q2);
    xi << xi1, xi2;
    out.xi[i] = std::move(xi);
  }
  out.bias.resize(p);
  out.bias << k1f.solve(rhs1), k2f.solve(rhs2);
  return out;
}

/// Bias at theta by the orthogonal path when the model declares a split and
/// `prefer_orthogonal` is set, otherwise by the general path.
inline VectorXd second_order_bias(const ModelSpec& model, const VectorXd& theta,
                                  bool prefer_orthogonal = true) {
  if (prefer_orthogonal && model.orthogonal_split())
    return bias_vector_orthogonal(model, theta).bias;
  return bias_vector(model, theta).bias;
}

}  // namespace ellbias
