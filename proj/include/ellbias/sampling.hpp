#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "ellbias/family.hpp"
#include "ellbias/linalg.hpp"

namespace ellbias {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; used to derive independent substream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Generator for substream `index` of `master_seed`; independent of how many
/// other substreams exist or which thread consumes them.
inline Rng substream(std::uint64_t master_seed, std::uint64_t index) {
  const std::uint64_t s = splitmix64(splitmix64(master_seed) ^ splitmix64(index + 0x632be59bd9b4e019ULL));
  std::seed_seq seq{static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

/// Squared radius R = ||L||^2 of a spherical El_q(0, I, g) vector.
inline double sample_radius_sq(const DensityFamily& family, int q, Rng& rng) {
  switch (family.kind()) {
    case FamilyKind::Normal: {
      std::chi_squared_distribution<double> chi(q);
      return chi(rng);
    }
    case FamilyKind::Cauchy:
    case FamilyKind::StudentT: {
      // ||N||^2 * nu / W,  W ~ chi^2_nu
      std::chi_squared_distribution<double> chi_q(q);
      std::chi_squared_distribution<double> chi_nu(family.nu());
      return chi_q(rng) * family.nu() / chi_nu(rng);
    }
    case FamilyKind::PowerExponential: {
      // R^lambda / 2 ~ Gamma(q / (2 lambda), 1)
      const double lam = family.lambda();
      std::gamma_distribution<double> gam(q / (2.0 * lam), 1.0);
      return std::pow(2.0 * gam(rng), 1.0 / lam);
    }
    case FamilyKind::Custom: {
      const auto* gen = family.custom_generator();
      if (!gen->radial_sq_sampler)
        throw DomainError("custom family '" + gen->name + "' has no radial sampler");
      std::uniform_real_distribution<double> unif(0.0, 1.0);
      return gen->radial_sq_sampler(q, [&] { return unif(rng); });
    }
  }
  return 0.0;
}

/// Uniform direction on the unit sphere in R^q.
inline VectorXd sample_direction(int q, Rng& rng) {
  std::normal_distribution<double> norm(0.0, 1.0);
  VectorXd s(q);
  double len = 0.0;
  do {
    for (int j = 0; j < q; ++j) s(j) = norm(rng);
    len = s.norm();
  } while (len == 0.0);
  return s / len;
}

/// Draws Y = mu + sqrt(R) A s with A A' = sigma.
inline VectorXd sample(const DensityFamily& family, const VectorXd& mu, const MatrixXd& sigma,
                       Rng& rng) {
  const int q = static_cast<int>(mu.size());
  if (sigma.rows() != q || sigma.cols() != q) throw DimensionError("sample: sigma/mu size mismatch");
  const SpdFactor chol(sigma, "sigma");
  const double r = std::sqrt(sample_radius_sq(family, q, rng));
  return mu + r * (chol.lower() * sample_direction(q, rng));
}

/// Same as sample() with a precomputed Cholesky factor.
inline VectorXd sample_with_factor(const DensityFamily& family, const VectorXd& mu,
                                   const MatrixXd& lower, Rng& rng) {
  const int q = static_cast<int>(mu.size());
  const double r = std::sqrt(sample_radius_sq(family, q, rng));
  return mu + r * (lower * sample_direction(q, rng));
}

}  // namespace ellbias
