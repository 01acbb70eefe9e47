#include "bsnn/variational.hpp"

#include <cmath>
#include <string>

#include "bsnn/autodiff.hpp"
#include "bsnn/errors.hpp"
#include "bsnn/nn.hpp"

namespace bsnn::variational {

namespace {

void check_gaussian(const GaussianIncidence& p, Eigen::Index len, const char* who) {
  if (p.mu.size() != p.sigma.size()) throw ContractViolation(std::string(who) + ": mu and sigma differ in length");
  if (len >= 0 && p.mu.size() != len) throw ContractViolation(std::string(who) + ": noise length mismatch");
  for (Eigen::Index i = 0; i < p.sigma.size(); ++i) {
    if (!(p.sigma(i) > 0.0)) throw ContractViolation(std::string(who) + ": sigma must be positive");
  }
}

}  // namespace

void PosteriorParams::validate(double kappa_max) const {
  if (kind == MapKind::special_orthogonal) {
    if (!gaussian.empty()) throw ContractViolation("posterior: SO(d) family carries Gaussian factors");
    for (const auto& r : rotation) {
      if (r.n() != d) throw ContractViolation("posterior: mean rotation has the wrong dimension");
      if (!(r.kappa >= 0.0 && r.kappa <= kappa_max)) {
        throw ContractViolation("posterior: kappa outside [0, " + std::to_string(kappa_max) + "]");
      }
    }
    return;
  }
  if (!rotation.empty()) throw ContractViolation("posterior: Gaussian family carries rotation factors");
  const auto len = static_cast<Eigen::Index>(kind == MapKind::diagonal ? d : d * d);
  for (const auto& g : gaussian) check_gaussian(g, len, "posterior");
}

RestrictionMap reparam_diagonal(const GaussianIncidence& params, const Vector& eps) {
  check_gaussian(params, eps.size(), "reparam_diagonal");
  return RestrictionMap::diagonal(params.mu + params.sigma.cwiseProduct(eps));
}

RestrictionMap reparam_general(const GaussianIncidence& params, const Vector& eps) {
  check_gaussian(params, eps.size(), "reparam_general");
  const auto d = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(eps.size()))));
  if (d * d != eps.size()) throw ContractViolation("reparam_general: length is not a perfect square");
  const Vector z = params.mu + params.sigma.cwiseProduct(eps);
  return RestrictionMap::general(Eigen::Map<const Matrix>(z.data(), d, d));
}

RestrictionMap reparam_special_orthogonal(const CayleyParams& params, const Rotation& noise) {
  if (noise.n() != params.n()) throw ContractViolation("reparam_special_orthogonal: dimension mismatch");
  const Matrix a = rotations::shrink_factor(params.kappa) * rotations::cayley_inverse(noise);
  return RestrictionMap::rotation(Rotation(rotations::cayley(a).matrix() * params.mean.matrix()));
}

RestrictionMap reparam_special_orthogonal_acg(const CayleyParams& params, const Eigen::Vector4d& g) {
  if (params.n() != 3) throw ContractViolation("reparam_special_orthogonal_acg: requires SO(3)");
  const double gamma = (1.0 + params.kappa) / (1.0 - params.kappa);
  const Matrix q = rotations::quaternion_right_multiplication(
      rotations::rotation_to_quaternion(Rotation(params.mean.matrix().transpose())));
  Eigen::Vector4d scaled = g;
  scaled(0) *= gamma;
  const Eigen::Vector4d z = q.transpose() * scaled;
  const double norm = z.norm();
  if (!(norm > 0.0)) throw ContractViolation("reparam_special_orthogonal_acg: zero noise vector");
  const Eigen::Vector4d x = z / norm;
  return RestrictionMap::rotation(rotations::quaternion_to_rotation({x(0), x(1), x(2), x(3)}));
}

double kl_gaussian_standard(const Vector& mu, const Vector& sigma) {
  check_gaussian({mu, sigma}, -1, "kl_gaussian_standard");
  double kl = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double s2 = sigma(i) * sigma(i);
    kl += -0.5 * (1.0 + std::log(s2) - mu(i) * mu(i) - s2);
  }
  return kl;
}

KlValue kl_total(const PosteriorParams& posterior) {
  double total = 0.0;
  if (posterior.kind == MapKind::special_orthogonal) {
    if (posterior.d == 1) return 0.0;
    if (posterior.d > 3) return McEstimateRequired{};
    for (const auto& r : posterior.rotation) total += rotations::kl_cayley_uniform(r.kappa, posterior.d);
    return total;
  }
  for (const auto& g : posterior.gaussian) total += kl_gaussian_standard(g.mu, g.sigma);
  return total;
}

double log_ratio_gaussian(const GaussianIncidence& params, const Vector& sample) {
  check_gaussian(params, sample.size(), "log_ratio_gaussian");
  double r = 0.0;
  for (Eigen::Index i = 0; i < sample.size(); ++i) {
    const double e = (sample(i) - params.mu(i)) / params.sigma(i);
    r += -std::log(params.sigma(i)) - 0.5 * e * e + 0.5 * sample(i) * sample(i);
  }
  return r;
}

double log_ratio_cayley(const CayleyParams& params, const Rotation& sample) {
  if (sample.n() != params.n()) throw ContractViolation("log_ratio_cayley: dimension mismatch");
  return rotations::cayley_log_density(sample.matrix(), params.mean.matrix(), params.kappa);
}

double kl_anneal_weight(std::size_t epoch, const AnnealSchedule& schedule) {
  if (schedule.cycle_length == 0 || !(schedule.ramp_fraction > 0.0 && schedule.ramp_fraction <= 1.0)) {
    throw ConfigError("kl anneal: cycle length must be positive and ramp fraction in (0, 1]");
  }
  const double frac = static_cast<double>(epoch % schedule.cycle_length) /
                      static_cast<double>(schedule.cycle_length);
  return std::min(1.0, frac / schedule.ramp_fraction);
}

ElboBreakdown elbo_estimate(const nn::Model& model, const sheaf::Graph& graph,
                            const std::vector<std::size_t>& observed, std::size_t samples,
                            double lambda, std::mt19937_64& rng, KlMode mode) {
  if (samples == 0) throw ContractViolation("elbo_estimate: need at least one sample");
  ElboBreakdown out;
  out.lambda = lambda;
  for (std::size_t k = 0; k < samples; ++k) {
    ad::Tape tape;
    nn::BoundParameters bound(model.params(), tape);
    nn::ForwardOptions options;
    options.kl_mode = mode;
    const nn::ForwardPass pass = model.forward(tape, bound, graph, rng, options);
    out.nll += ad::softmax_nll(pass.logits, graph.labels(), observed).scalar();
    out.kl += pass.kl.scalar();
  }
  out.nll /= static_cast<double>(samples);
  out.kl /= static_cast<double>(samples);
  out.total = out.nll + lambda * out.kl;
  return out;
}

}  // namespace bsnn::variational
