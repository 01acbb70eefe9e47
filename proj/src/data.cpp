#include "bsnn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bsnn/errors.hpp"

namespace bsnn::data {

namespace {

using nlohmann::json;
using linalg::Matrix;

std::string at(const std::string& source, const std::string& field) { return source + ": " + field; }

const json& require(const json& obj, const char* key, const std::string& source) {
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(at(source, std::string("missing required field \"") + key + "\""));
  return *it;
}

long long as_int(const json& v, const std::string& source, const std::string& field) {
  if (!v.is_number_integer()) throw ParseError(at(source, field + " must be an integer"));
  return v.get<long long>();
}

std::size_t as_index(const json& v, const std::string& source, const std::string& field) {
  const long long x = as_int(v, source, field);
  if (x < 0) throw ParseError(at(source, field + " must be non-negative"));
  return static_cast<std::size_t>(x);
}

std::vector<std::size_t> index_array(const json& v, const std::string& source, const std::string& field) {
  if (!v.is_array()) throw ParseError(at(source, field + " must be an array"));
  std::vector<std::size_t> out;
  out.reserve(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    out.push_back(as_index(v[i], source, field + "[" + std::to_string(i) + "]"));
  }
  return out;
}

}  // namespace

void SplitSpec::validate(std::size_t n) const {
  if (train.empty()) throw ContractViolation("splits: train split is empty");
  if (test.empty()) throw ContractViolation("splits: test split is empty");
  std::vector<int> owner(n, -1);
  const std::vector<std::size_t>* sets[] = {&train, &valid, &test};
  const char* names[] = {"train", "valid", "test"};
  for (int s = 0; s < 3; ++s) {
    for (std::size_t i : *sets[s]) {
      if (i >= n) {
        throw ContractViolation(std::string("splits: ") + names[s] + " index " + std::to_string(i) +
                                " outside [0, " + std::to_string(n) + ")");
      }
      if (owner[i] != -1) {
        throw ContractViolation("splits: node " + std::to_string(i) + " appears in both " +
                                names[owner[i]] + " and " + names[s]);
      }
      owner[i] = s;
    }
  }
}

SplitSpec make_splits(std::size_t n, const SplitRatios& ratios, std::uint64_t seed) {
  double total = 0.0;
  for (double r : ratios) {
    if (!(r > 0.0)) throw ConfigError("make_splits: ratios must be positive");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("make_splits: ratios must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> remainder{};
  std::size_t assigned = 0;
  for (int s = 0; s < 3; ++s) {
    const double exact = ratios[s] * static_cast<double>(n);
    // Round away float noise such as 0.48 * 100 = 47.99999999999999.
    const double floored = std::floor(exact + 1e-9);
    sizes[s] = static_cast<std::size_t>(floored);
    remainder[s] = std::max(0.0, exact - floored);
    assigned += sizes[s];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++sizes[order[k % 3]];
  for (int s = 0; s < 3; ++s) {
    if (sizes[s] == 0) throw ConfigError("make_splits: a split is empty after rounding (n too small)");
  }

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(perm[i - 1], perm[pick(rng)]);
  }
  SplitSpec out;
  auto first = perm.begin();
  out.train.assign(first, first + static_cast<std::ptrdiff_t>(sizes[0]));
  first += static_cast<std::ptrdiff_t>(sizes[0]);
  out.valid.assign(first, first + static_cast<std::ptrdiff_t>(sizes[1]));
  first += static_cast<std::ptrdiff_t>(sizes[1]);
  out.test.assign(first, perm.end());
  return out;
}

void SBMConfig::validate() const {
  if (C < 2) throw ConfigError("sbm: need at least two classes");
  if (n < static_cast<std::size_t>(C)) throw ConfigError("sbm: need n >= C");
  if (!(homophily >= 0.0 && homophily <= 1.0)) throw ConfigError("sbm: homophily must lie in [0, 1]");
  if (!(mean_degree >= 0.0)) throw ConfigError("sbm: mean degree must be non-negative");
  if (feature_dim < 1) throw ConfigError("sbm: feature_dim must be >= 1");
  if (!(feature_noise >= 0.0)) throw ConfigError("sbm: feature noise must be non-negative");
}

Dataset generate_sbm(const SBMConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  const auto n = cfg.n;
  const auto C = static_cast<std::size_t>(cfg.C);

  std::vector<int> labels(n);
  std::vector<std::size_t> counts(C);
  std::uniform_int_distribution<int> cls(0, cfg.C - 1);
  // Redraw until every class is present so both edge probabilities are defined.
  for (int attempt = 0;; ++attempt) {
    std::fill(counts.begin(), counts.end(), 0);
    for (auto& y : labels) ++counts[static_cast<std::size_t>(y = cls(rng))];
    if (std::all_of(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; })) break;
    if (attempt == 64) throw ConfigError("sbm: could not populate every class; increase n");
  }

  double same_pairs = 0.0;
  for (std::size_t c : counts) same_pairs += 0.5 * static_cast<double>(c) * static_cast<double>(c - 1);
  const double all_pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  const double cross_pairs = all_pairs - same_pairs;
  const double expected_edges = 0.5 * static_cast<double>(n) * cfg.mean_degree;
  const double want_same = cfg.homophily * expected_edges;
  const double want_cross = (1.0 - cfg.homophily) * expected_edges;
  if ((want_same > 0.0 && same_pairs == 0.0) || (want_cross > 0.0 && cross_pairs == 0.0)) {
    throw ConfigError("sbm: homophily and mean degree are infeasible for these class sizes");
  }
  const double p_in = want_same > 0.0 ? want_same / same_pairs : 0.0;
  const double p_out = want_cross > 0.0 ? want_cross / cross_pairs : 0.0;
  if (p_in > 1.0 || p_out > 1.0) {
    std::ostringstream msg;
    msg << "sbm: (homophily " << cfg.homophily << ", mean degree " << cfg.mean_degree
        << ") needs edge probability " << std::max(p_in, p_out) << " > 1";
    throw ConfigError(msg.str());
  }

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<sheaf::Edge> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      const double p = labels[u] == labels[v] ? p_in : p_out;
      if (unit(rng) < p) edges.emplace_back(u, v);
    }
  }

  const auto m = static_cast<Eigen::Index>(cfg.feature_dim);
  Matrix embed = Matrix::Zero(static_cast<Eigen::Index>(C), m);
  std::normal_distribution<double> normal(0.0, 1.0);
  if (cfg.feature_dim >= C) {
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(C); ++c) embed(c, c) = 1.0;
  } else {
    for (Eigen::Index c = 0; c < embed.rows(); ++c) {
      for (Eigen::Index j = 0; j < m; ++j) embed(c, j) = normal(rng);
      embed.row(c).normalize();
    }
  }
  Matrix features(static_cast<Eigen::Index>(n), m);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    features.row(r) = embed.row(labels[i]);
    for (Eigen::Index j = 0; j < m; ++j) features(r, j) += cfg.feature_noise * normal(rng);
  }

  Dataset out;
  out.graph = std::make_shared<const sheaf::Graph>(n, std::move(edges), std::move(features),
                                                   std::move(labels), cfg.C);
  out.splits = make_splits(n, cfg.ratios, cfg.seed);
  return out;
}

Dataset parse_graph_dataset(const std::string& text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(at(source, std::string("malformed JSON: ") + e.what()));
  }
  if (!doc.is_object()) throw ParseError(at(source, "top level must be an object"));
  static const std::set<std::string> known{"num_nodes", "num_classes", "features", "labels", "edges", "splits"};
  for (const auto& [key, _] : doc.items()) {
    if (!known.count(key)) throw ParseError(at(source, "unknown field \"" + key + "\""));
  }

  const std::size_t n = as_index(require(doc, "num_nodes", source), source, "num_nodes");
  const long long C = as_int(require(doc, "num_classes", source), source, "num_classes");
  if (C < 1) throw ParseError(at(source, "num_classes must be >= 1"));

  const json& feats = require(doc, "features", source);
  if (!feats.is_array() || feats.size() != n) {
    throw ParseError(at(source, "features must be an array of num_nodes rows"));
  }
  const std::size_t m = n == 0 ? 0 : (feats[0].is_array() ? feats[0].size() : 0);
  if (n > 0 && m == 0) throw ParseError(at(source, "features[0] must be a non-empty array"));
  Matrix features(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < n; ++i) {
    const std::string field = "features[" + std::to_string(i) + "]";
    if (!feats[i].is_array() || feats[i].size() != m) {
      throw ParseError(at(source, field + " must have " + std::to_string(m) + " entries"));
    }
    for (std::size_t j = 0; j < m; ++j) {
      const json& x = feats[i][j];
      if (!x.is_number()) throw ParseError(at(source, field + "[" + std::to_string(j) + "] must be a number"));
      features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = x.get<double>();
    }
  }

  const json& labs = require(doc, "labels", source);
  if (!labs.is_array() || labs.size() != n) throw ParseError(at(source, "labels must have num_nodes entries"));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::string field = "labels[" + std::to_string(i) + "]";
    const long long y = as_int(labs[i], source, field);
    if (y < 0 || y >= C) {
      throw ParseError(at(source, field + " = " + std::to_string(y) + " outside [0, " + std::to_string(C) + ")"));
    }
    labels[i] = static_cast<int>(y);
  }

  const json& es = require(doc, "edges", source);
  if (!es.is_array()) throw ParseError(at(source, "edges must be an array"));
  std::vector<sheaf::Edge> edges;
  std::set<sheaf::Edge> seen;
  for (std::size_t e = 0; e < es.size(); ++e) {
    const std::string field = "edges[" + std::to_string(e) + "]";
    if (!es[e].is_array() || es[e].size() != 2) throw ParseError(at(source, field + " must be a [u, v] pair"));
    std::size_t u = as_index(es[e][0], source, field + "[0]");
    std::size_t v = as_index(es[e][1], source, field + "[1]");
    if (u == v) throw ParseError(at(source, field + " is a self-loop at node " + std::to_string(u)));
    if (u >= n || v >= n) throw ParseError(at(source, field + " references a node outside [0, num_nodes)"));
    if (u > v) std::swap(u, v);
    if (!seen.insert({u, v}).second) throw ParseError(at(source, field + " duplicates an earlier edge"));
    edges.emplace_back(u, v);
  }
  std::sort(edges.begin(), edges.end());

  Dataset out;
  try {
    out.graph = std::make_shared<const sheaf::Graph>(n, std::move(edges), std::move(features),
                                                     std::move(labels), static_cast<int>(C));
  } catch (const ContractViolation& e) {
    throw ParseError(at(source, e.what()));
  }

  if (auto it = doc.find("splits"); it != doc.end()) {
    if (!it->is_object()) throw ParseError(at(source, "splits must be an object"));
    for (const auto& [key, _] : it->items()) {
      if (key != "train" && key != "valid" && key != "test") {
        throw ParseError(at(source, "unknown field \"splits." + key + "\""));
      }
    }
    out.splits.train = index_array(require(*it, "train", source), source, "splits.train");
    if (it->contains("valid")) out.splits.valid = index_array((*it)["valid"], source, "splits.valid");
    out.splits.test = index_array(require(*it, "test", source), source, "splits.test");
    try {
      out.splits.validate(n);
    } catch (const ContractViolation& e) {
      throw ParseError(at(source, e.what()));
    }
  } else {
    try {
      out.splits = make_splits(n, kDefaultRatios, 0);
    } catch (const ConfigError& e) {
      throw ParseError(at(source, std::string("no splits given and default split failed: ") + e.what()));
    }
  }
  return out;
}

Dataset load_graph_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_graph_dataset(buf.str(), path);
}

std::string serialize_graph_dataset(const Dataset& dataset) {
  const sheaf::Graph& g = *dataset.graph;
  json doc;
  doc["num_nodes"] = g.num_nodes();
  doc["num_classes"] = g.num_classes();
  json feats = json::array();
  for (Eigen::Index i = 0; i < g.features().rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < g.features().cols(); ++j) row.push_back(g.features()(i, j));
    feats.push_back(std::move(row));
  }
  doc["features"] = std::move(feats);
  doc["labels"] = g.labels();
  json edges = json::array();
  for (const auto& [u, v] : g.edges()) edges.push_back({u, v});
  doc["edges"] = std::move(edges);
  doc["splits"] = {{"train", dataset.splits.train}, {"valid", dataset.splits.valid}, {"test", dataset.splits.test}};
  return doc.dump() + "\n";
}

void save_graph_dataset(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ContractViolation(path + ": cannot open for writing");
  out << serialize_graph_dataset(dataset);
  if (!out) throw ContractViolation(path + ": write failed");
}

}  // namespace bsnn::data
