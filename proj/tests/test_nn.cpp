#include <doctest.h>

#include <cmath>
#include <random>

#include "bsnn/diffusion.hpp"
#include "bsnn/errors.hpp"
#include "bsnn/nn.hpp"
#include "support.hpp"

using namespace bsnn;
using namespace bsnn::nn;

namespace {

std::shared_ptr<const sheaf::Graph> edge_graph() {
  return std::make_shared<const sheaf::Graph>(2, std::vector<sheaf::Edge>{{0, 1}}, Matrix::Zero(2, 1),
                                              std::vector<int>{0, 1}, 2);
}

Matrix col(double a, double b) {
  Matrix x(2, 1);
  x << a, b;
  return x;
}

Matrix one(double v) { return Matrix::Constant(1, 1, v); }

std::shared_ptr<const sheaf::Graph> labelled_graph(std::size_t n, std::size_t m, int C, std::mt19937_64& rng) {
  auto base = testing::random_graph(n, 0.5, rng, m);
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % static_cast<std::size_t>(C));
  return std::make_shared<const sheaf::Graph>(n, base->edges(), base->features(), labels, C);
}

}  // namespace

TEST_CASE("elu examples") {
  CHECK(nn::elu(0.0) == 0.0);
  CHECK(nn::elu(1.0) == 1.0);
  CHECK(nn::elu(-1.0) == doctest::Approx(std::exp(-1.0) - 1.0).epsilon(1e-15));
  CHECK(nn::elu(-1.0) == doctest::Approx(-0.632121).epsilon(1e-6));
  CHECK(nn::elu(-1e6) == -1.0);
}

TEST_CASE("mlp_forward examples") {
  ParameterStore store;
  store.add("a.W", Matrix::Zero(3, 2));
  store.add("a.b", Matrix::Zero(1, 2));
  store.add("id.W", Matrix::Identity(3, 3));
  store.add("id.b", Matrix::Zero(1, 3));
  store.add("s.W", one(2.0));
  store.add("s.b", one(1.0));
  Tape tape;
  BoundParameters p(store, tape);
  const Matrix x = Matrix::Constant(4, 3, 0.7);
  CHECK(linalg::max_abs(mlp_forward(p, {"a"}, tape.constant(x)).value()) == 0.0);
  CHECK(linalg::max_abs(mlp_forward(p, {"id"}, tape.constant(x)).value() - x) == 0.0);
  CHECK(mlp_forward(p, {"s"}, tape.constant(one(0.5))).scalar() == doctest::Approx(2.0));
  CHECK(nn::elu(2.0 * 0.5 + 1.0) == 2.0);
  CHECK_THROWS_AS(mlp_forward(p, {"s"}, tape.constant(x)), ContractViolation);
  CHECK_THROWS_AS(p["missing"], ContractViolation);
}

TEST_CASE("sheaf_conv_layer examples") {
  const auto g = edge_graph();
  const sheaf::BlockOperator delta = sheaf::normalized_sheaf_laplacian(sheaf::identity_sheaf(g, 1));
  Tape tape;
  Var x = tape.constant(col(1, 0));
  Var w = tape.constant(one(1.0));
  // Identity activation hook reduces to the Euler step with alpha = 1.
  const Matrix step = diffusion::diffusion_step(diffusion::FeatureMatrix(2, 1, col(1, 0)), delta, 1.0).values;
  CHECK(linalg::max_abs(sheaf_conv_layer(x, delta, w, w, Activation::identity).value() - step) <= 1e-12);
  // Delta = 0 leaves X unchanged.
  CHECK(linalg::max_abs(sheaf_conv_layer(x, sheaf::BlockOperator(2, 1), w, w).value() - col(1, 0)) == 0.0);
  // X - elu((1, -1)^T) = (0, 1 - e^{-1}).
  const Matrix want = col(1 - nn::elu(1.0), 0 - nn::elu(-1.0));
  CHECK(linalg::max_abs(sheaf_conv_layer(x, delta, w, w).value() - want) < 1e-15);
  CHECK(want(1, 0) == doctest::Approx(0.632121).epsilon(1e-6));

  // The tape operator built from restriction maps agrees with the block operator.
  Var maps = tape.constant(Matrix::Ones(2, 1));
  const SheafOperator op = build_sheaf_operator(maps, *g, 1, 1e-8);
  CHECK(linalg::max_abs(sheaf_conv_layer(x, op, w, w).value() - want) < 1e-12);
  CHECK_THROWS_AS(sheaf_conv_layer(x, delta, tape.constant(Matrix::Identity(2, 2)), w), ContractViolation);
}

TEST_CASE("tape sheaf operator matches the normalized sheaf laplacian") {
  std::mt19937_64 rng(50);
  for (auto kind : {sheaf::MapKind::diagonal, sheaf::MapKind::special_orthogonal, sheaf::MapKind::general}) {
    const auto g = testing::random_graph(7, 0.5, rng);
    const auto sh = testing::random_sheaf(g, kind, 3, rng);
    Matrix rows(static_cast<Eigen::Index>(2 * g->num_edges()), 9);
    for (std::size_t e = 0; e < g->num_edges(); ++e) {
      const Matrix& fu = sh.maps()[e].first.matrix();
      const Matrix& fv = sh.maps()[e].second.matrix();
      rows.row(static_cast<Eigen::Index>(2 * e)) = Eigen::Map<const Eigen::RowVectorXd>(fu.data(), 9);
      rows.row(static_cast<Eigen::Index>(2 * e + 1)) = Eigen::Map<const Eigen::RowVectorXd>(fv.data(), 9);
    }
    Tape tape;
    const Matrix x = linalg::random_normal(21, 2, rng);
    const SheafOperator op = build_sheaf_operator(tape.constant(rows), *g, 3, 1e-8);
    const Matrix got = apply_sheaf_operator(op, tape.constant(x)).value();
    CHECK(linalg::max_abs(got - sheaf::normalized_sheaf_laplacian(sh).apply(x)) < 1e-9);
  }
}

TEST_CASE("sheaf_learner with zero weights") {
  const auto g = edge_graph();
  for (auto kind : {sheaf::MapKind::diagonal, sheaf::MapKind::special_orthogonal, sheaf::MapKind::general}) {
    const std::size_t d = 3;
    ParameterStore store;
    store.add("learner.0.W", Matrix::Zero(4, 5));
    store.add("learner.0.b", Matrix::Zero(1, 5));
    store.add("learner.1.W", Matrix::Zero(5, static_cast<Eigen::Index>(learner_output_width(kind, d))));
    store.add("learner.1.b", Matrix::Zero(1, static_cast<Eigen::Index>(learner_output_width(kind, d))));
    Tape tape;
    BoundParameters p(store, tape);
    const PosteriorVars post = sheaf_learner(p, *g, tape.constant(Matrix::Ones(2, 2)), kind, d);
    const auto values = post.values();
    CHECK(values.size() == 2);
    if (kind == sheaf::MapKind::special_orthogonal) {
      for (const auto& r : values.rotation) {
        CHECK(linalg::max_abs(r.mean.matrix() - Matrix::Identity(3, 3)) < 1e-15);
        CHECK(r.kappa == doctest::Approx(0.49).epsilon(1e-15));
      }
    } else {
      for (const auto& gi : values.gaussian) {
        CHECK(gi.mu.size() == static_cast<Eigen::Index>(kind == sheaf::MapKind::diagonal ? d : d * d));
        CHECK(gi.mu.cwiseAbs().maxCoeff() == 0.0);
        CHECK((gi.sigma.array() - std::log(2.0)).abs().maxCoeff() < 1e-15);
      }
    }
  }
  CHECK(incidence_nodes(*g) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("forward shape contract over a grid, all families") {
  std::mt19937_64 rng(51);
  for (std::size_t n : {3u, 6u}) {
    const auto g = labelled_graph(n, 4, 3, rng);
    for (auto kind : {"diagonal", "special_orthogonal", "general", "identity"}) {
      for (std::size_t d : {1u, 2u, 3u, 4u}) {
        for (std::size_t L : {1u, 3u}) {
          ModelConfig c;
          c.learn_sheaf = std::string(kind) != "identity";
          if (c.learn_sheaf) c.kind = sheaf::map_kind_from_string(kind);
          c.d = d;
          c.channels = 2;
          c.layers = L;
          c.in_features = 4;
          c.num_classes = 3;
          const Model model(c, 3);
          Tape tape;
          BoundParameters p(model.params(), tape);
          std::mt19937_64 sample_rng(9);
          const ForwardPass pass = model.forward(tape, p, *g, sample_rng);
          CHECK(pass.logits.rows() == static_cast<Eigen::Index>(n));
          CHECK(pass.logits.cols() == 3);
          CHECK(pass.logits.value().allFinite());
          CHECK(pass.layer_maps.size() == L);
          CHECK(std::isfinite(pass.kl.scalar()));
          CHECK(pass.kl_closed_form == !(c.learn_sheaf && c.kind == sheaf::MapKind::special_orthogonal && d >= 4));
        }
      }
    }
  }
}

TEST_CASE("forward determinism and model/graph checks") {
  std::mt19937_64 rng(52);
  const auto g = labelled_graph(6, 3, 2, rng);
  ModelConfig c;
  c.in_features = 3;
  c.num_classes = 2;
  c.input_dropout = 0.3;
  c.layer_dropout = 0.2;
  const Model a(c, 17), b(c, 17);
  auto run = [&](const Model& m) {
    Tape tape;
    BoundParameters p(m.params(), tape);
    std::mt19937_64 s(5);
    ForwardOptions opts;
    opts.training = true;
    return m.forward(tape, p, *g, s, opts).logits.value();
  };
  CHECK((run(a).array() == run(b).array()).all());

  ModelConfig wrong = c;
  wrong.in_features = 4;
  const Model w(wrong, 1);
  Tape tape;
  BoundParameters p(w.params(), tape);
  std::mt19937_64 s(1);
  CHECK_THROWS_AS(w.forward(tape, p, *g, s), ContractViolation);
  ModelConfig bad = c;
  bad.kappa_max = 1.0;
  CHECK_THROWS_AS(Model(bad, 1), ConfigError);
}

TEST_CASE("learned sheaf parameters receive gradient") {
  std::mt19937_64 rng(53);
  const auto g = labelled_graph(6, 3, 2, rng);
  for (auto kind : {sheaf::MapKind::diagonal, sheaf::MapKind::special_orthogonal, sheaf::MapKind::general}) {
    ModelConfig c;
    c.kind = kind;
    c.in_features = 3;
    c.num_classes = 2;
    Model model(c, 4);
    model.params().get("learner.1.W") = linalg::random_normal(model.params().get("learner.1.W").rows(),
                                                              model.params().get("learner.1.W").cols(), rng);
    Tape tape;
    BoundParameters p(model.params(), tape);
    std::mt19937_64 s(2);
    const ForwardPass pass = model.forward(tape, p, *g, s);
    Var loss = ad::add(ad::softmax_nll(pass.logits, g->labels(), {0, 1, 2, 3}), pass.kl);
    const GradientMap grads = compute_gradients(tape, loss, p);
    CHECK(grads.at("learner.1.W").cwiseAbs().maxCoeff() > 0.0);
    CHECK(grads.at("learner.0.W").cwiseAbs().maxCoeff() > 0.0);
    CHECK(grads.at("layer0.W1").cwiseAbs().maxCoeff() > 0.0);
  }
}

TEST_CASE("adam minimizes a quadratic and weight decay follows the group") {
  ParameterStore store;
  store.add("x", Matrix::Constant(1, 2, 3.0), ParamGroup::regular);
  store.add("y", Matrix::Constant(1, 1, 1.0), ParamGroup::sheaf);
  Adam::Options o;
  o.lr = 0.1;
  Adam adam(o);
  for (int t = 0; t < 500; ++t) {
    GradientMap g;
    g["x"] = 2.0 * (store.get("x").array() - 1.0).matrix();
    g["y"] = Matrix::Zero(1, 1);
    adam.step(store, g);
  }
  CHECK(linalg::max_abs(store.get("x") - Matrix::Ones(1, 2)) < 1e-3);
  CHECK(store.get("y")(0, 0) == 1.0);

  Adam::Options decay;
  decay.weight_decay_sheaf = 1.0;
  Adam shrink(decay);
  GradientMap zero{{"x", Matrix::Zero(1, 2)}, {"y", Matrix::Zero(1, 1)}};
  const Matrix x_before = store.get("x");
  shrink.step(store, zero);
  CHECK(store.get("y")(0, 0) < 1.0);
  CHECK(linalg::max_abs(store.get("x") - x_before) == 0.0);
}
