#pragma once

// General elliptical regression model: Y_i ~ El_{q_i}(mu_i(theta), Sigma_i(theta), g),
// and the per-observation matrices behind its score and Fisher information.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ellbias/errors.hpp"
#include "ellbias/family.hpp"
#include "ellbias/linalg.hpp"

namespace ellbias {

struct ObservationBlock {
  VectorXd y;  // response, length q_i
  VectorXd x;  // covariates of the location
  VectorXd w;  // covariates of the scale
  std::string id;

  int q() const { return static_cast<int>(y.size()); }
};

/// mu_i, Sigma_i and their derivatives at one theta.
struct LocalTerms {
  VectorXd mu;
  MatrixXd sigma;
  MatrixXd dmu;                    // q x p, column r = a_(r)
  std::vector<MatrixXd> dsigma;    // C_(r), r = 0..p-1
  std::vector<MatrixXd> d2mu;      // d2mu[r].col(s) = a_(rs)
  std::vector<MatrixXd> d2sigma;   // C_(rs) stored at r * p + s

  const MatrixXd& d2sigma_at(int r, int s, int p) const { return d2sigma[r * p + s]; }
};

/// User callbacks. `derivatives`, when set, fills dmu/dsigma (order >= 1)
/// and d2mu/d2sigma (order 2) of `terms`, whose mu and sigma are already
/// filled; `analytic_order` says how far it goes. Missing orders are
/// obtained by central finite differences.
struct ModelFunctions {
  std::function<VectorXd(const VectorXd& theta, const ObservationBlock& obs)> mean;
  std::function<MatrixXd(const VectorXd& theta, const ObservationBlock& obs)> scale;
  std::function<void(const VectorXd& theta, const ObservationBlock& obs, int order,
                     LocalTerms& terms)>
      derivatives;
  int analytic_order = 0;
};

/// theta = (theta_1', theta_2')' with mu depending on theta_1 only and Sigma
/// on theta_2 only.
struct OrthogonalSplit {
  int p1 = 0;
  int p2 = 0;
};

class ModelSpec {
 public:
  using StartHeuristic = std::function<VectorXd(const ModelSpec&)>;

  ModelSpec(int p, std::vector<ObservationBlock> blocks, DensityFamily family, ModelFunctions fns)
      : p_(p), blocks_(std::move(blocks)), family_(std::move(family)), fns_(std::move(fns)) {
    if (p_ < 1) throw DimensionError("model needs at least one parameter");
    if (!fns_.mean || !fns_.scale) throw ConfigError("model needs mean and scale functions");
    if (fns_.analytic_order > 0 && !fns_.derivatives)
      throw ConfigError("analytic_order > 0 but no derivative callback");
    refresh_psi();
  }

  int p() const { return p_; }
  int n() const { return static_cast<int>(blocks_.size()); }
  const std::vector<ObservationBlock>& blocks() const { return blocks_; }
  const ObservationBlock& block(int i) const { return blocks_[i]; }
  const DensityFamily& family() const { return family_; }
  const ModelFunctions& functions() const { return fns_; }
  bool uses_finite_differences() const { return fns_.analytic_order < 2; }

  const std::optional<OrthogonalSplit>& orthogonal_split() const { return split_; }
  ModelSpec& set_orthogonal_split(OrthogonalSplit split) {
    if (split.p1 < 1 || split.p2 < 1 || split.p1 + split.p2 != p_)
      throw DimensionError("orthogonal split must satisfy p1 + p2 = p with both >= 1");
    split_ = split;
    return *this;
  }

  const std::vector<std::string>& parameter_names() const { return names_; }
  ModelSpec& set_parameter_names(std::vector<std::string> names) {
    if (static_cast<int>(names.size()) != p_) throw DimensionError("expected one name per parameter");
    names_ = std::move(names);
    return *this;
  }
  std::string parameter_name(int r) const {
    return names_.empty() ? "theta" + std::to_string(r + 1) : names_[r];
  }

  ModelSpec& set_start_heuristic(StartHeuristic h) {
    start_ = std::move(h);
    return *this;
  }
  bool has_start_heuristic() const { return static_cast<bool>(start_); }
  VectorXd initial_guess() const {
    if (!start_) throw ConfigError("no starting value given and the model has no start heuristic");
    return start_(*this);
  }

  /// Total number of scalar responses, sum of q_i.
  int total_dim() const {
    int t = 0;
    for (const auto& b : blocks_) t += b.q();
    return t;
  }

  const PsiMoments& psi(int q) const {
    auto it = psi_.find(q);
    if (it == psi_.end()) throw DimensionError("no psi constants for q = " + std::to_string(q));
    return it->second;
  }

  ModelSpec with_blocks(std::vector<ObservationBlock> blocks) const {
    ModelSpec m = *this;
    m.blocks_ = std::move(blocks);
    m.refresh_psi();
    return m;
  }

  ModelSpec with_responses(const std::vector<VectorXd>& ys) const {
    if (static_cast<int>(ys.size()) != n()) throw DimensionError("response count mismatch");
    ModelSpec m = *this;
    for (int i = 0; i < n(); ++i) {
      if (ys[i].size() != m.blocks_[i].y.size()) throw DimensionError("response dimension mismatch");
      m.blocks_[i].y = ys[i];
    }
    return m;
  }

  ModelSpec with_family(DensityFamily family) const {
    ModelSpec m = *this;
    m.family_ = std::move(family);
    m.refresh_psi();
    return m;
  }

  ModelSpec without_block(int i) const {
    std::vector<ObservationBlock> b = blocks_;
    b.erase(b.begin() + i);
    return with_blocks(std::move(b));
  }

  VectorXd mean(const VectorXd& theta, int i) const { return fns_.mean(theta, blocks_[i]); }
  MatrixXd scale(const VectorXd& theta, int i) const { return fns_.scale(theta, blocks_[i]); }

  /// mu_i, Sigma_i and derivatives up to `order` (0, 1 or 2).
  LocalTerms local(const VectorXd& theta, int i, int order) const {
    check_theta(theta);
    const ObservationBlock& obs = blocks_[i];
    LocalTerms t;
    t.mu = fns_.mean(theta, obs);
    t.sigma = fns_.scale(theta, obs);
    if (t.mu.size() != obs.q() || t.sigma.rows() != obs.q() || t.sigma.cols() != obs.q())
      throw DimensionError("mean/scale dimension does not match the response of observation " +
                           label(i));
    if (order <= 0) return t;
    if (fns_.analytic_order >= 1) {
      fns_.derivatives(theta, obs, std::min(order, fns_.analytic_order), t);
    } else {
      fd_first(theta, obs, 1e-6, t);
    }
    if (order >= 2 && fns_.analytic_order < 2) {
      if (fns_.analytic_order == 1)
        fd_second_from_first(theta, obs, 1e-4, t);
      else
        fd_second_from_values(theta, obs, 1e-4, t);
    }
    return t;
  }

  /// For finite-difference derivatives: largest relative disagreement between
  /// the default stencil and one with a ten times smaller step.
  double finite_difference_self_check(const VectorXd& theta) const {
    if (!uses_finite_differences()) return 0.0;
    double worst = 0.0;
    for (int i = 0; i < n(); ++i) {
      const ObservationBlock& obs = blocks_[i];
      LocalTerms coarse = local(theta, i, 2);
      LocalTerms fine;
      fine.mu = coarse.mu;
      fine.sigma = coarse.sigma;
      if (fns_.analytic_order >= 1) {
        fine.dmu = coarse.dmu;
        fine.dsigma = coarse.dsigma;
      } else {
        fd_first(theta, obs, 1e-7, fine);
        for (int r = 0; r < p_; ++r) {
          worst = std::max(worst, rel_diff(coarse.dmu.col(r), fine.dmu.col(r)));
          worst = std::max(worst, rel_diff(coarse.dsigma[r], fine.dsigma[r]));
        }
      }
      if (fns_.analytic_order == 1)
        fd_second_from_first(theta, obs, 2e-5, fine);
      else
        fd_second_from_values(theta, obs, 5e-5, fine);
      for (int r = 0; r < p_; ++r) {
        worst = std::max(worst, rel_diff(coarse.d2mu[r], fine.d2mu[r]));
        for (int s = 0; s < p_; ++s)
          worst = std::max(worst, rel_diff(coarse.d2sigma_at(r, s, p_), fine.d2sigma_at(r, s, p_)));
      }
    }
    return worst;
  }

  void check_theta(const VectorXd& theta) const {
    if (theta.size() != p_)
      throw DimensionError("theta has length " + std::to_string(theta.size()) + ", expected " +
                           std::to_string(p_));
    if (!theta.allFinite()) throw DomainError("theta has non-finite entries");
  }

  std::string label(int i) const {
    return blocks_[i].id.empty() ? std::to_string(i + 1) : blocks_[i].id;
  }

 private:
  void refresh_psi() {
    psi_.clear();
    for (const auto& b : blocks_) {
      if (b.q() < 1) throw DimensionError("observation with empty response");
      if (b.q() > kMaxBlockDim)
        throw DimensionError("block dimension " + std::to_string(b.q()) + " exceeds the supported " +
                             std::to_string(kMaxBlockDim));
      if (!b.y.allFinite()) throw DomainError("non-finite response in observation " + b.id);
      if (!psi_.count(b.q())) psi_.emplace(b.q(), family_.derived_constants(b.q()));
    }
  }

  static double step(double h, double t) { return h * (1.0 + std::abs(t)); }

  template <class A, class B>
  static double rel_diff(const A& a, const B& b) {
    const double scale = std::max({1e-8, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff()});
    return (a - b).cwiseAbs().maxCoeff() / scale;
  }

  void fd_first(const VectorXd& theta, const ObservationBlock& obs, double h0, LocalTerms& t) const {
    const int q = obs.q();
    t.dmu.resize(q, p_);
    t.dsigma.assign(p_, MatrixXd());
    for (int r = 0; r < p_; ++r) {
      const double h = step(h0, theta(r));
      VectorXd tp = theta, tm = theta;
      tp(r) += h;
      tm(r) -= h;
      t.dmu.col(r) = (fns_.mean(tp, obs) - fns_.mean(tm, obs)) / (2.0 * h);
      t.dsigma[r] = (fns_.scale(tp, obs) - fns_.scale(tm, obs)) / (2.0 * h);
    }
  }

  void fd_second_from_first(const VectorXd& theta, const ObservationBlock& obs, double h0,
                            LocalTerms& t) const {
    const int q = obs.q();
    t.d2mu.assign(p_, MatrixXd::Zero(q, p_));
    t.d2sigma.assign(p_ * p_, MatrixXd::Zero(q, q));
    for (int s = 0; s < p_; ++s) {
      const double h = step(h0, theta(s));
      VectorXd tp = theta, tm = theta;
      tp(s) += h;
      tm(s) -= h;
      LocalTerms up, dn;
      up.mu = fns_.mean(tp, obs);
      up.sigma = fns_.scale(tp, obs);
      dn.mu = fns_.mean(tm, obs);
      dn.sigma = fns_.scale(tm, obs);
      fns_.derivatives(tp, obs, 1, up);
      fns_.derivatives(tm, obs, 1, dn);
      for (int r = 0; r < p_; ++r) {
        t.d2mu[r].col(s) += 0.5 * (up.dmu.col(r) - dn.dmu.col(r)) / (2.0 * h);
        t.d2mu[s].col(r) += 0.5 * (up.dmu.col(r) - dn.dmu.col(r)) / (2.0 * h);
        const MatrixXd dc = (up.dsigma[r] - dn.dsigma[r]) / (2.0 * h);
        t.d2sigma[r * p_ + s] += 0.5 * dc;
        t.d2sigma[s * p_ + r] += 0.5 * dc;
      }
    }
  }

  void fd_second_from_values(const VectorXd& theta, const ObservationBlock& obs, double h0,
                             LocalTerms& t) const {
    const int q = obs.q();
    t.d2mu.assign(p_, MatrixXd::Zero(q, p_));
    t.d2sigma.assign(p_ * p_, MatrixXd::Zero(q, q));
    const VectorXd m0 = fns_.mean(theta, obs);
    const MatrixXd s0 = fns_.scale(theta, obs);
    for (int r = 0; r < p_; ++r) {
      const double hr = step(h0, theta(r));
      for (int s = r; s < p_; ++s) {
        const double hs = step(h0, theta(s));
        VectorXd dmu;
        MatrixXd dsig;
        if (r == s) {
          VectorXd tp = theta, tm = theta;
          tp(r) += hr;
          tm(r) -= hr;
          dmu = (fns_.mean(tp, obs) - 2.0 * m0 + fns_.mean(tm, obs)) / (hr * hr);
          dsig = (fns_.scale(tp, obs) - 2.0 * s0 + fns_.scale(tm, obs)) / (hr * hr);
        } else {
          auto at = [&](double a, double b) {
            VectorXd tt = theta;
            tt(r) += a * hr;
            tt(s) += b * hs;
            return tt;
          };
          const VectorXd pp = at(1, 1), pm = at(1, -1), mp = at(-1, 1), mm = at(-1, -1);
          dmu = (fns_.mean(pp, obs) - fns_.mean(pm, obs) - fns_.mean(mp, obs) + fns_.mean(mm, obs)) /
                (4.0 * hr * hs);
          dsig = (fns_.scale(pp, obs) - fns_.scale(pm, obs) - fns_.scale(mp, obs) +
                  fns_.scale(mm, obs)) /
                 (4.0 * hr * hs);
        }
        t.d2mu[r].col(s) = dmu;
        t.d2mu[s].col(r) = dmu;
        t.d2sigma[r * p_ + s] = dsig;
        t.d2sigma[s * p_ + r] = dsig;
      }
    }
  }

  int p_;
  std::vector<ObservationBlock> blocks_;
  DensityFamily family_;
  ModelFunctions fns_;
  std::optional<OrthogonalSplit> split_;
  std::vector<std::string> names_;
  StartHeuristic start_;
  std::map<int, PsiMoments> psi_;
};

/// Per-observation quantities at one theta.
struct ObservationMatrices {
  int q = 0;
  LocalTerms terms;
  PsiMoments psi;
  VectorXd z;          // y - mu
  double u = 0.0;      // z' Sigma^-1 z
  double v = 0.0;      // -2 W_g(u)
  MatrixXd sigma_inv;
  double log_det = 0.0;
  MatrixXd D;          // q x p
  MatrixXd V;          // q^2 x p
  MatrixXd F;          // (q + q^2) x p
  MatrixXd H;
  MatrixXd M;
  MatrixXd Htilde;     // H M H
  VectorXd s;
  double loglik = 0.0;
};

struct BlockMatrices {
  int p = 0;
  std::vector<ObservationMatrices> obs;
  int rank = 0;

  bool full_rank() const { return rank == p; }

  double log_likelihood() const {
    double l = 0.0;
    for (const auto& o : obs) l += o.loglik;
    return l;
  }

  VectorXd score() const {
    VectorXd u = VectorXd::Zero(p);
    for (const auto& o : obs) u.noalias() += o.F.transpose() * (o.H * o.s);
    return u;
  }

  MatrixXd information() const {
    MatrixXd k = MatrixXd::Zero(p, p);
    for (const auto& o : obs) k.noalias() += o.F.transpose() * o.Htilde * o.F;
    return 0.5 * (k + k.transpose());
  }

  Eigen::Index stacked_rows() const {
    Eigen::Index r = 0;
    for (const auto& o : obs) r += o.F.rows();
    return r;
  }

  MatrixXd stacked_F() const {
    MatrixXd f(stacked_rows(), p);
    Eigen::Index at = 0;
    for (const auto& o : obs) {
      f.middleRows(at, o.F.rows()) = o.F;
      at += o.F.rows();
    }
    return f;
  }

  VectorXd stacked_s() const {
    VectorXd s(stacked_rows());
    Eigen::Index at = 0;
    for (const auto& o : obs) {
      s.segment(at, o.s.size()) = o.s;
      at += o.s.size();
    }
    return s;
  }

  MatrixXd block_diagonal(MatrixXd ObservationMatrices::*member) const {
    const Eigen::Index n = stacked_rows();
    MatrixXd out = MatrixXd::Zero(n, n);
    Eigen::Index at = 0;
    for (const auto& o : obs) {
      const MatrixXd& b = o.*member;
      out.block(at, at, b.rows(), b.cols()) = b;
      at += b.rows();
    }
    return out;
  }

  MatrixXd stacked_H() const { return block_diagonal(&ObservationMatrices::H); }
  MatrixXd stacked_M() const { return block_diagonal(&ObservationMatrices::M); }
  MatrixXd stacked_Htilde() const { return block_diagonal(&ObservationMatrices::Htilde); }
};

namespace detail {

/// Lower bound on u used for the weights, so W_g stays finite for the power
/// exponential with lambda < 1.
inline constexpr double kMinU = 1e-12;

inline void fill_observation(const ModelSpec& model, const VectorXd& theta, int i, int order,
                             ObservationMatrices& o) {
  const DensityFamily& fam = model.family();
  const int p = model.p();
  o.terms = model.local(theta, i, order);
  const LocalTerms& t = o.terms;
  const int q = model.block(i).q();
  o.q = q;
  o.psi = model.psi(q);
  if (!is_symmetric(t.sigma, 1e-10))
    throw DomainError("scale matrix of observation " + model.label(i) + " is not symmetric");
  const SpdFactor chol(t.sigma, "scale matrix");
  o.sigma_inv = chol.inverse();
  o.log_det = chol.log_determinant();
  o.z = model.block(i).y - t.mu;
  o.u = std::max(0.0, o.z.dot(chol.solve(o.z)));
  o.loglik = -0.5 * o.log_det + fam.log_g(o.u, q);
  if (!std::isfinite(o.loglik))
    throw DomainError("log-likelihood of observation " + model.label(i) + " is not finite");
  o.v = -2.0 * fam.w_g(std::max(o.u, kMinU), q);
  if (order < 1) return;

  const int q2 = q * q;
  o.D = t.dmu;
  o.V.resize(q2, p);
  for (int r = 0; r < p; ++r) o.V.col(r) = vec(t.dsigma[r]);
  o.F.resize(q + q2, p);
  o.F.topRows(q) = o.D;
  o.F.bottomRows(q2) = o.V;

  const MatrixXd kss = kron(t.sigma, t.sigma);
  const MatrixXd kii = kron(o.sigma_inv, o.sigma_inv);
  o.H = MatrixXd::Zero(q + q2, q + q2);
  o.H.topLeftCorner(q, q) = o.sigma_inv;
  o.H.bottomRightCorner(q2, q2) = 0.5 * kii;

  const PsiMoments& k = o.psi;
  const VectorXd vs = vec(t.sigma);
  o.M = MatrixXd::Zero(q + q2, q + q2);
  o.M.topLeftCorner(q, q) = k.location_weight() * t.sigma;
  o.M.bottomRightCorner(q2, q2) = 2.0 * k.c * kss + (k.c - 1.0) * vs * vs.transpose();
  if (fam.is_normal()) {
    o.Htilde = o.H;
  } else {
    o.Htilde = o.H * o.M * o.H;
    o.Htilde = 0.5 * (o.Htilde + o.Htilde.transpose()).eval();
  }

  o.s.resize(q + q2);
  o.s.head(q) = o.v * o.z;
  o.s.tail(q2) = -vec(t.sigma - o.v * o.z * o.z.transpose());
}

}  // namespace detail

/// Assembles every per-observation matrix at theta. order 2 also keeps the
/// second derivatives of mu_i and Sigma_i, needed by the bias.
inline BlockMatrices assemble_blocks(const ModelSpec& model, const VectorXd& theta, int order = 1) {
  BlockMatrices bm;
  bm.p = model.p();
  bm.obs.resize(model.n());
  for (int i = 0; i < model.n(); ++i) detail::fill_observation(model, theta, i, order, bm.obs[i]);
  if (order >= 1) {
    Eigen::ColPivHouseholderQR<MatrixXd> qr(bm.stacked_F());
    bm.rank = static_cast<int>(qr.rank());
  }
  return bm;
}

inline double log_likelihood(const ModelSpec& model, const VectorXd& theta) {
  return assemble_blocks(model, theta, 0).log_likelihood();
}

inline VectorXd score(const ModelSpec& model, const VectorXd& theta) {
  return assemble_blocks(model, theta, 1).score();
}

inline MatrixXd fisher_information(const ModelSpec& model, const VectorXd& theta) {
  return assemble_blocks(model, theta, 1).information();
}

/// Throws RankError when the stacked F of an assembly is rank deficient.
inline void require_full_rank(const BlockMatrices& bm) {
  if (!bm.full_rank())
    throw RankError("stacked derivative matrix F has rank " + std::to_string(bm.rank) +
                    " < p = " + std::to_string(bm.p));
}

/// Central differences of the log-likelihood with step h0 (1 + |theta_r|).
inline VectorXd numerical_score(const ModelSpec& model, const VectorXd& theta, double h0 = 1e-6) {
  VectorXd g(model.p());
  for (int r = 0; r < model.p(); ++r) {
    const double h = h0 * (1.0 + std::abs(theta(r)));
    VectorXd tp = theta, tm = theta;
    tp(r) += h;
    tm(r) -= h;
    g(r) = (log_likelihood(model, tp) - log_likelihood(model, tm)) / (2.0 * h);
  }
  return g;
}

/// max_r |U_r - U^fd_r| / max(|U_r|, |U^fd_r|, 1).
inline double score_discrepancy(const ModelSpec& model, const VectorXd& theta) {
  const VectorXd a = score(model, theta);
  const VectorXd b = numerical_score(model, theta);
  double worst = 0.0;
  for (int r = 0; r < a.size(); ++r)
    worst = std::max(worst, std::abs(a(r) - b(r)) / std::max({std::abs(a(r)), std::abs(b(r)), 1.0}));
  return worst;
}

}  // namespace ellbias
