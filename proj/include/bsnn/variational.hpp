#pragma once

#include <cstddef>
#include <random>
#include <variant>
#include <vector>

#include "bsnn/linalg.hpp"
#include "bsnn/rotations.hpp"
#include "bsnn/sheaf.hpp"

namespace bsnn::nn {
class Model;
}

namespace bsnn::variational {

using linalg::Matrix;
using linalg::Vector;
using rotations::CayleyParams;
using rotations::Rotation;
using sheaf::MapKind;
using sheaf::RestrictionMap;

// Gaussian factor N(mu, diag(sigma^2)); sigma is the standard deviation.
struct GaussianIncidence {
  Vector mu;
  Vector sigma;
};

// Factorized posterior, one factor per incidence u <| e, ordered 2e (u side), 2e + 1 (v side).
struct PosteriorParams {
  MapKind kind = MapKind::diagonal;
  std::size_t d = 1;
  std::vector<GaussianIncidence> gaussian;  // diagonal / general families
  std::vector<CayleyParams> rotation;       // special_orthogonal family

  std::size_t size() const { return kind == MapKind::special_orthogonal ? rotation.size() : gaussian.size(); }
  // Throws ContractViolation if sigma <= 0, kappa outside [0, kappa_max] or shapes disagree.
  void validate(double kappa_max = 0.98) const;
};

// diag(mu + sigma * eps).
RestrictionMap reparam_diagonal(const GaussianIncidence& params, const Vector& eps);
// mu + sigma * eps (length d^2) reshaped row-major into d x d.
RestrictionMap reparam_general(const GaussianIncidence& params, const Vector& eps);
// C(shrink(kappa) * C^{-1}(noise)) M for a uniform noise rotation.
RestrictionMap reparam_special_orthogonal(const CayleyParams& params, const Rotation& noise);
// SO(3) route through the angular central Gaussian: g is a standard normal 4-vector.
RestrictionMap reparam_special_orthogonal_acg(const CayleyParams& params, const Eigen::Vector4d& g);

// KL(N(mu, diag(sigma^2)) || N(0, I)).
double kl_gaussian_standard(const Vector& mu, const Vector& sigma);

// Returned by kl_total when the family has no closed form (SO(d), d >= 4).
struct McEstimateRequired {};
using KlValue = std::variant<double, McEstimateRequired>;

// Sum of per-incidence KL terms against the standard normal / uniform SO(d) prior.
KlValue kl_total(const PosteriorParams& posterior);

// log q(sample) - log p(sample) for a single incidence.
double log_ratio_gaussian(const GaussianIncidence& params, const Vector& sample);
// Uniform prior has log-density 0 w.r.t. normalized Haar measure.
double log_ratio_cayley(const CayleyParams& params, const Rotation& sample);

enum class KlMode {
  automatic,    // closed form when the family has one, Monte Carlo otherwise
  monte_carlo,  // always log q - log p on the sampled sheaves
};

struct ElboBreakdown {
  double nll = 0;     // -(1/K) sum_k sum_{observed} log p(y | F^(k))
  double kl = 0;
  double lambda = 0;
  double total = 0;   // nll + lambda * kl, the quantity minimized
};

struct AnnealSchedule {
  std::size_t cycle_length = 100;
  double ramp_fraction = 0.5;
};

// min(1, frac / ramp_fraction), frac = (epoch mod cycle_length) / cycle_length.
double kl_anneal_weight(std::size_t epoch, const AnnealSchedule& schedule);

// K full stochastic forward passes of a frozen model (no dropout).
ElboBreakdown elbo_estimate(const nn::Model& model, const sheaf::Graph& graph,
                            const std::vector<std::size_t>& observed, std::size_t samples,
                            double lambda, std::mt19937_64& rng, KlMode mode = KlMode::automatic);

}  // namespace bsnn::variational
