#include "bsnn/uq.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "bsnn/errors.hpp"
#include "bsnn/nn.hpp"

namespace bsnn::uq {

namespace {

double entropy(const linalg::Vector& p) {
  double h = 0.0;
  for (Eigen::Index c = 0; c < p.size(); ++c) {
    if (p(c) > 0.0) h -= p(c) * std::log(p(c));
  }
  return h;
}

void check_stack(const Matrix& stack, const char* who) {
  if (stack.rows() < 1 || stack.cols() < 1) {
    throw ContractViolation(std::string(who) + ": need at least one pass and one class");
  }
}

}  // namespace

Matrix EnsemblePrediction::node_stack(std::size_t node) const {
  if (probs.empty()) throw ContractViolation("EnsemblePrediction: no passes");
  if (node >= static_cast<std::size_t>(mean_probs.rows())) {
    throw ContractViolation("EnsemblePrediction: node index out of range");
  }
  Matrix stack(static_cast<Eigen::Index>(probs.size()), mean_probs.cols());
  for (std::size_t t = 0; t < probs.size(); ++t) {
    stack.row(static_cast<Eigen::Index>(t)) = probs[t].row(static_cast<Eigen::Index>(node));
  }
  return stack;
}

int argmax(const linalg::Vector& p) {
  int best = 0;
  for (Eigen::Index c = 1; c < p.size(); ++c) {
    if (p(c) > p(best)) best = static_cast<int>(c);
  }
  return best;
}

EnsemblePrediction aggregate(std::vector<Matrix> probs) {
  if (probs.empty()) throw ContractViolation("aggregate: need T >= 1 passes");
  const Eigen::Index n = probs.front().rows();
  const Eigen::Index C = probs.front().cols();
  EnsemblePrediction out;
  out.mean_probs = Matrix::Zero(n, C);
  for (const auto& p : probs) {
    if (p.rows() != n || p.cols() != C) throw ContractViolation("aggregate: passes differ in shape");
    for (Eigen::Index i = 0; i < n; ++i) {
      if (std::abs(p.row(i).sum() - 1.0) > 1e-9 || (p.row(i).array() < 0.0).any()) {
        throw ContractViolation("aggregate: row " + std::to_string(i) + " is not a probability vector");
      }
    }
    out.mean_probs += p;
  }
  out.mean_probs /= static_cast<double>(probs.size());
  out.predicted.resize(static_cast<std::size_t>(n));
  out.confidence.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const linalg::Vector row = out.mean_probs.row(i).transpose();
    const int c = argmax(row);
    out.predicted[static_cast<std::size_t>(i)] = c;
    out.confidence[static_cast<std::size_t>(i)] = row(c);
  }
  out.probs = std::move(probs);
  return out;
}

EnsemblePrediction ensemble_predict(const nn::Model& model, const sheaf::Graph& graph, std::size_t T,
                                    std::mt19937_64& rng) {
  if (T < 1) throw ContractViolation("ensemble_predict: T must be >= 1");
  std::vector<Matrix> probs;
  probs.reserve(T);
  for (std::size_t t = 0; t < T; ++t) probs.push_back(model.predict_proba(graph, rng));
  return aggregate(std::move(probs));
}

double predictive_entropy(const linalg::Vector& mean_probs) { return entropy(mean_probs); }

static bool all_rows_equal(const Matrix& stack) {
  for (Eigen::Index t = 1; t < stack.rows(); ++t) {
    if (stack.row(t) != stack.row(0)) return false;
  }
  return true;
}

double epistemic_variance(const Matrix& stack) {
  check_stack(stack, "epistemic_variance");
  if (all_rows_equal(stack)) return 0.0;
  const double T = static_cast<double>(stack.rows());
  double total = 0.0;
  for (Eigen::Index c = 0; c < stack.cols(); ++c) {
    const double mean = stack.col(c).sum() / T;
    total += (stack.col(c).array() - mean).square().sum() / T;
  }
  return total / static_cast<double>(stack.cols());
}

double mutual_information(const Matrix& stack) {
  check_stack(stack, "mutual_information");
  if (all_rows_equal(stack)) return 0.0;
  const linalg::Vector mean = stack.colwise().mean().transpose();
  double member = 0.0;
  for (Eigen::Index t = 0; t < stack.rows(); ++t) member += entropy(stack.row(t).transpose());
  member /= static_cast<double>(stack.rows());
  return std::max(0.0, entropy(mean) - member);
}

CalibrationResult expected_calibration_error(const std::vector<double>& confidence,
                                             const std::vector<int>& predicted,
                                             const std::vector<int>& labels, std::size_t M) {
  if (M < 1) throw ContractViolation("expected_calibration_error: need M >= 1 bins");
  if (confidence.size() != predicted.size() || confidence.size() != labels.size()) {
    throw ContractViolation("expected_calibration_error: inputs differ in length");
  }
  CalibrationResult out;
  out.bins.M = M;
  out.bins.bins.assign(M, {});
  std::vector<double> correct(M, 0.0), conf_sum(M, 0.0);
  for (std::size_t i = 0; i < confidence.size(); ++i) {
    const double p = confidence[i];
    if (!(p >= 0.0 && p <= 1.0)) throw ContractViolation("expected_calibration_error: confidence outside [0, 1]");
    auto m = static_cast<std::size_t>(std::ceil(p * static_cast<double>(M) - 1e-12));
    m = m == 0 ? 0 : std::min(m - 1, M - 1);
    ++out.bins.bins[m].count;
    conf_sum[m] += p;
    if (predicted[i] == labels[i]) correct[m] += 1.0;
  }
  const double N = static_cast<double>(confidence.size());
  for (std::size_t m = 0; m < M; ++m) {
    auto& bin = out.bins.bins[m];
    if (bin.count == 0) continue;
    bin.accuracy = correct[m] / static_cast<double>(bin.count);
    bin.mean_confidence = conf_sum[m] / static_cast<double>(bin.count);
    out.ece += static_cast<double>(bin.count) / N * std::abs(bin.accuracy - bin.mean_confidence);
  }
  return out;
}

}  // namespace bsnn::uq
