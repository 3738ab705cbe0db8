#pragma once

#include <stdexcept>
#include <string>

namespace ellbias {

/// Base class for every error raised by the library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of a function (negative u, a side
/// condition of a density family, an undefined criterion).
struct DomainError : Error {
  using Error::Error;
};

struct QuadratureError : Error {
  using Error::Error;
};

/// Cholesky / inversion failures.
struct LinAlgError : Error {
  using Error::Error;
};

struct RankError : Error {
  using Error::Error;
};

struct SingularInformation : Error {
  using Error::Error;
};

struct NonConvergence : Error {
  using Error::Error;
};

/// A declared orthogonal split of theta is contradicted by the derivatives.
struct SplitError : Error {
  using Error::Error;
};

struct DimensionError : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

}  // namespace ellbias
