#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "bsnn/linalg.hpp"
#include "bsnn/sheaf.hpp"

namespace bsnn::nn {
class Model;
}

namespace bsnn::uq {

using linalg::Matrix;

struct EnsemblePrediction {
  std::vector<Matrix> probs;  // T entries, each n x C
  Matrix mean_probs;          // n x C
  std::vector<int> predicted;
  std::vector<double> confidence;

  std::size_t passes() const { return probs.size(); }
  // Stack of pass probabilities for one node: T x C.
  Matrix node_stack(std::size_t node) const;
};

// Aggregates precomputed pass probabilities. Rows must sum to 1 within 1e-9.
EnsemblePrediction aggregate(std::vector<Matrix> probs);

// T stochastic eval-mode passes, each with freshly sampled sheaves.
EnsemblePrediction ensemble_predict(const nn::Model& model, const sheaf::Graph& graph, std::size_t T,
                                    std::mt19937_64& rng);

// Index of the largest entry; ties go to the lowest index.
int argmax(const linalg::Vector& p);

double predictive_entropy(const linalg::Vector& mean_probs);
// stack: T x C.
double epistemic_variance(const Matrix& stack);
double mutual_information(const Matrix& stack);

struct CalibrationBin {
  std::size_t count = 0;
  double accuracy = 0;
  double mean_confidence = 0;
};

struct CalibrationBins {
  std::size_t M = 10;
  std::vector<CalibrationBin> bins;
};

struct CalibrationResult {
  double ece = 0;
  CalibrationBins bins;
};

// Bins partition (0, 1] as ((m-1)/M, m/M]; a confidence of exactly 0 lands in the first bin.
CalibrationResult expected_calibration_error(const std::vector<double>& confidence,
                                             const std::vector<int>& predicted,
                                             const std::vector<int>& labels, std::size_t M = 10);

}  // namespace bsnn::uq
