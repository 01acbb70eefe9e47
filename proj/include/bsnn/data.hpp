#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bsnn/sheaf.hpp"

namespace bsnn::data {

struct SplitSpec {
  std::vector<std::size_t> train, valid, test;

  // Throws if the sets overlap, reference nodes >= n, or train/test are empty.
  void validate(std::size_t n) const;
};

struct Dataset {
  std::shared_ptr<const sheaf::Graph> graph;
  SplitSpec splits;
};

using SplitRatios = std::array<double, 3>;
inline constexpr SplitRatios kDefaultRatios{0.48, 0.32, 0.20};

struct SBMConfig {
  std::size_t n = 200;
  int C = 2;
  double mean_degree = 6.0;
  double homophily = 0.1;
  std::size_t feature_dim = 8;
  double feature_noise = 0.5;
  std::uint64_t seed = 0;
  SplitRatios ratios = kDefaultRatios;

  void validate() const;
};

// Seeded shuffle of [0, n), sliced by ratio with largest-remainder rounding.
SplitSpec make_splits(std::size_t n, const SplitRatios& ratios, std::uint64_t seed);

Dataset generate_sbm(const SBMConfig& cfg);

// Edges are canonicalized (u < v) and sorted. Without a "splits" object the
// default 48/32/20 split is drawn with seed 0.
Dataset parse_graph_dataset(const std::string& text, const std::string& source = "<memory>");
Dataset load_graph_dataset(const std::string& path);

std::string serialize_graph_dataset(const Dataset& dataset);
void save_graph_dataset(const Dataset& dataset, const std::string& path);

}  // namespace bsnn::data
