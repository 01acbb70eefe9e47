#include <doctest.h>

#include <cmath>
#include <set>

#include "bsnn/data.hpp"
#include "bsnn/errors.hpp"

using namespace bsnn;
using namespace bsnn::data;

namespace {

const char* kMinimal = R"({"num_nodes": 2, "num_classes": 2, "features": [[0.5], [1.5]],
  "labels": [0, 1], "edges": [[0, 1]], "splits": {"train": [0], "valid": [], "test": [1]}})";

std::string with(const std::string& from, const std::string& to) {
  std::string s = kMinimal;
  const auto pos = s.find(from);
  REQUIRE(pos != std::string::npos);
  return s.replace(pos, from.size(), to);
}

double same_class_fraction(const Dataset& ds) {
  const auto& g = *ds.graph;
  if (g.num_edges() == 0) return 0.0;
  std::size_t same = 0;
  for (const auto& [u, v] : g.edges()) same += g.labels()[u] == g.labels()[v];
  return static_cast<double>(same) / static_cast<double>(g.num_edges());
}

}  // namespace

TEST_CASE("loader accepts a minimal file") {
  const Dataset ds = parse_graph_dataset(kMinimal);
  CHECK(ds.graph->num_nodes() == 2);
  CHECK(ds.graph->num_edges() == 1);
  CHECK(ds.graph->features()(1, 0) == 1.5);
  CHECK(ds.splits.test == std::vector<std::size_t>{1});
}

TEST_CASE("loader rejections") {
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with("[[0, 1]]", "[[1, 1]]")), doctest::Contains("self-loop"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with(R"("test": [1])", R"("test": [0])")), doctest::Contains("train"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with("[[0, 1]]", "[[0, 1], [1, 0]]")), doctest::Contains("edges[1]"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with("[0, 1]", "[0, 2]")), doctest::Contains("labels[1]"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with(R"("num_nodes")", R"("extra": 1, "num_nodes")")),
                       doctest::Contains("unknown field"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset(with("[[0.5], [1.5]]", "[[0.5], [1.5, 2]]")),
                       doctest::Contains("features[1]"), ParseError);
  CHECK_THROWS_WITH_AS(parse_graph_dataset("{\"num_nodes\": 2,\n oops}"), doctest::Contains("line 2"), ParseError);
  CHECK_THROWS_AS(parse_graph_dataset(with(R"("num_classes": 2, )", "")), ParseError);
  CHECK_THROWS_AS(load_graph_dataset("/nonexistent/file.json"), ParseError);
}

TEST_CASE("loader canonicalizes edges and fills default splits") {
  const std::string text = R"({"num_nodes": 10, "num_classes": 2, "features": [[0],[1],[2],[3],[4],[5],[6],[7],[8],[9]],
    "labels": [0,1,0,1,0,1,0,1,0,1], "edges": [[5, 2], [0, 9], [1, 3]]})";
  const Dataset ds = parse_graph_dataset(text);
  CHECK(ds.graph->edges() == std::vector<sheaf::Edge>{{0, 9}, {1, 3}, {2, 5}});
  CHECK(ds.splits.train.size() + ds.splits.valid.size() + ds.splits.test.size() == 10);
  CHECK_NOTHROW(ds.splits.validate(10));
}

TEST_CASE("round trip") {
  SBMConfig cfg;
  cfg.n = 40;
  cfg.seed = 5;
  const Dataset a = generate_sbm(cfg);
  const Dataset b = parse_graph_dataset(serialize_graph_dataset(a));
  CHECK(b.graph->edges() == a.graph->edges());
  CHECK(b.graph->labels() == a.graph->labels());
  CHECK((b.graph->features().array() == a.graph->features().array()).all());
  CHECK(b.splits.train == a.splits.train);
  CHECK(b.splits.valid == a.splits.valid);
  CHECK(b.splits.test == a.splits.test);
  CHECK(serialize_graph_dataset(b) == serialize_graph_dataset(a));
}

TEST_CASE("make_splits") {
  const auto s = make_splits(100, {0.48, 0.32, 0.20}, 1);
  CHECK(s.train.size() == 48);
  CHECK(s.valid.size() == 32);
  CHECK(s.test.size() == 20);
  const auto t = make_splits(100, {0.32, 0.20, 0.48}, 1);
  CHECK(t.train.size() == 32);
  CHECK(t.valid.size() == 20);
  CHECK(t.test.size() == 48);
  const auto again = make_splits(100, {0.48, 0.32, 0.20}, 1);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  std::set<std::size_t> all(s.train.begin(), s.train.end());
  all.insert(s.valid.begin(), s.valid.end());
  all.insert(s.test.begin(), s.test.end());
  CHECK(all.size() == 100);

  // Largest remainder: 7 * (0.5, 0.3, 0.2) = (3.5, 2.1, 1.4) floors to (3, 2, 1), the spare goes to train.
  const auto r = make_splits(7, {0.5, 0.3, 0.2}, 2);
  CHECK(r.train.size() == 4);
  CHECK(r.valid.size() == 2);
  CHECK(r.test.size() == 1);
  CHECK_THROWS_AS(make_splits(2, {0.48, 0.32, 0.20}, 0), ConfigError);
  CHECK_THROWS_AS(make_splits(10, {0.5, 0.5, 0.5}, 0), ConfigError);
  CHECK_THROWS_AS(make_splits(10, {1.0, 0.0, 0.0}, 0), ConfigError);
}

TEST_CASE("SBM homophily extremes and determinism") {
  SBMConfig cfg;
  cfg.n = 120;
  cfg.C = 3;
  cfg.homophily = 1.0;
  const Dataset in = generate_sbm(cfg);
  CHECK(in.graph->num_edges() > 0);
  CHECK(same_class_fraction(in) == 1.0);
  cfg.homophily = 0.0;
  const Dataset out = generate_sbm(cfg);
  CHECK(out.graph->num_edges() > 0);
  CHECK(same_class_fraction(out) == 0.0);
  CHECK(serialize_graph_dataset(generate_sbm(cfg)) == serialize_graph_dataset(out));
  cfg.seed = 1;
  CHECK(serialize_graph_dataset(generate_sbm(cfg)) != serialize_graph_dataset(out));
  CHECK(out.graph->features().cols() == 8);
}

TEST_CASE("SBM hits the requested homophily on average") {
  double total = 0.0, degree = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    SBMConfig cfg;
    cfg.n = 200;
    cfg.C = 2;
    cfg.homophily = 0.1;
    cfg.mean_degree = 6;
    cfg.seed = seed;
    const Dataset ds = generate_sbm(cfg);
    total += same_class_fraction(ds);
    degree += 2.0 * static_cast<double>(ds.graph->num_edges()) / 200.0;
  }
  CHECK(std::abs(total / 20 - 0.1) <= 0.05);
  CHECK(std::abs(degree / 20 - 6.0) <= 0.5);
}

TEST_CASE("SBM validation") {
  SBMConfig cfg;
  cfg.n = 10;
  cfg.mean_degree = 9;
  cfg.homophily = 1.0;  // same-class pairs alone cannot carry degree 9
  CHECK_THROWS_AS(generate_sbm(cfg), ConfigError);
  cfg = SBMConfig{};
  cfg.C = 1;
  CHECK_THROWS_AS(generate_sbm(cfg), ConfigError);
  cfg = SBMConfig{};
  cfg.homophily = 1.5;
  CHECK_THROWS_AS(generate_sbm(cfg), ConfigError);
  cfg = SBMConfig{};
  cfg.feature_dim = 1;  // fewer dimensions than classes: random class embedding
  CHECK(generate_sbm(cfg).graph->features().cols() == 1);
}
