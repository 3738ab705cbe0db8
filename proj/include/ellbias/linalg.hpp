#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <utility>

#include "ellbias/errors.hpp"

namespace ellbias {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Largest block dimension for which Kronecker products are materialised.
inline constexpr int kMaxBlockDim = 8;

/// Column-major vectorisation.
inline VectorXd vec(const MatrixXd& a) {
  return Eigen::Map<const VectorXd>(a.data(), a.size());
}

inline MatrixXd unvec(const VectorXd& v, Eigen::Index rows, Eigen::Index cols) {
  if (v.size() != rows * cols) throw DimensionError("unvec: size mismatch");
  return Eigen::Map<const MatrixXd>(v.data(), rows, cols);
}

inline Eigen::Index vech_size(Eigen::Index q) { return q * (q + 1) / 2; }

/// Half-vectorisation: for each column j, the entries (0..j, j), i.e. the
/// diagonal and the elements above it, stacked column by column.
inline VectorXd vech(const MatrixXd& s) {
  if (s.rows() != s.cols()) throw DimensionError("vech: matrix must be square");
  const Eigen::Index q = s.rows();
  VectorXd out(vech_size(q));
  Eigen::Index k = 0;
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i <= j; ++i) out(k++) = s(i, j);
  return out;
}

/// Position of the (row, col) element of a symmetric q x q matrix in vech.
inline Eigen::Index vech_index(Eigen::Index row, Eigen::Index col) {
  if (row > col) std::swap(row, col);
  return col * (col + 1) / 2 + row;
}

inline MatrixXd unvech(const VectorXd& v, Eigen::Index q) {
  if (v.size() != vech_size(q)) throw DimensionError("unvech: size mismatch");
  MatrixXd s(q, q);
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i <= j; ++i) s(i, j) = s(j, i) = v(vech_index(i, j));
  return s;
}

/// Symmetric basis matrix E with dS/d vech(S)_k = E for the k-th vech entry.
inline MatrixXd vech_basis(Eigen::Index q, Eigen::Index k) {
  MatrixXd e = MatrixXd::Zero(q, q);
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i <= j; ++i)
      if (vech_index(i, j) == k) {
        e(i, j) = 1.0;
        e(j, i) = 1.0;
        return e;
      }
  throw DimensionError("vech_basis: index out of range");
}

/// Duplication matrix: vec(S) = D vech(S) for symmetric S.
inline MatrixXd duplication_matrix(Eigen::Index q) {
  MatrixXd d = MatrixXd::Zero(q * q, vech_size(q));
  for (Eigen::Index j = 0; j < q; ++j)
    for (Eigen::Index i = 0; i < q; ++i) d(j * q + i, vech_index(i, j)) = 1.0;
  return d;
}

inline MatrixXd kron(const MatrixXd& a, const MatrixXd& b) {
  MatrixXd out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

/// Cholesky factorisation of a symmetric positive definite matrix.
class SpdFactor {
 public:
  SpdFactor() = default;

  explicit SpdFactor(const MatrixXd& a, const char* what = "matrix") {
    if (a.rows() != a.cols()) throw DimensionError(std::string(what) + " is not square");
    if (!a.allFinite()) throw LinAlgError(std::string(what) + " has non-finite entries");
    llt_.compute(a);
    if (llt_.info() != Eigen::Success)
      throw LinAlgError(std::string(what) + " is not positive definite");
    const VectorXd diag = llt_.matrixL().toDenseMatrix().diagonal();
    if ((diag.array() <= 0.0).any() || !diag.allFinite())
      throw LinAlgError(std::string(what) + " is not positive definite");
    logdet_ = 2.0 * diag.array().log().sum();
  }

  Eigen::Index dim() const { return llt_.rows(); }
  double log_determinant() const { return logdet_; }
  MatrixXd lower() const { return llt_.matrixL(); }

  template <typename Rhs>
  auto solve(const Eigen::MatrixBase<Rhs>& b) const {
    return llt_.solve(b);
  }

  MatrixXd inverse() const {
    MatrixXd inv = llt_.solve(MatrixXd::Identity(dim(), dim()));
    return 0.5 * (inv + inv.transpose());
  }

 private:
  Eigen::LLT<MatrixXd> llt_;
  double logdet_ = 0.0;
};

inline bool is_symmetric(const MatrixXd& a, double rel_tol = 1e-10) {
  if (a.rows() != a.cols()) return false;
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

}  // namespace ellbias
