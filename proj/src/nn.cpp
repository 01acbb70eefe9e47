#include "bsnn/nn.hpp"

#include <cmath>
#include <string>

#include "bsnn/errors.hpp"
#include "bsnn/rotations.hpp"

namespace bsnn::nn {

namespace {

using Eigen::Index;

Matrix uniform_init(Index rows, Index cols, std::size_t fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Matrix m(rows, cols);
  for (Index i = 0; i < rows; ++i)
    for (Index j = 0; j < cols; ++j) m(i, j) = dist(rng);
  return m;
}

void add_dense(ParameterStore& store, const std::string& prefix, std::size_t in, std::size_t out,
               ParamGroup group, std::mt19937_64& rng, bool zero = false) {
  const auto i = static_cast<Index>(in);
  const auto o = static_cast<Index>(out);
  store.add(prefix + ".W", zero ? Matrix(Matrix::Zero(i, o)) : uniform_init(i, o, in, rng), group);
  store.add(prefix + ".b", zero ? Matrix(Matrix::Zero(1, o)) : uniform_init(1, o, in, rng), group);
}

Var dropout(Var x, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(x.rows(), x.cols());
  for (Index i = 0; i < mask.rows(); ++i)
    for (Index j = 0; j < mask.cols(); ++j) mask(i, j) = keep(rng) ? 1.0 / (1.0 - p) : 0.0;
  return ad::mul(x, x.tape()->constant(std::move(mask)));
}

Matrix identity_rows(Index rows, Index d) {
  Matrix m = Matrix::Zero(rows, d * d);
  for (Index i = 0; i < d; ++i) m.col(i * d + i).setOnes();
  return m;
}

struct SampledMaps {
  Var maps;
  Var log_ratio;  // 1 x 1: log q(F) - log p(F) summed over incidences
};

SampledMaps sample_maps(const PosteriorVars& post, std::mt19937_64& rng, bool need_log_ratio) {
  Tape& tape = post.kind == MapKind::special_orthogonal ? *post.kappa.tape() : *post.mu.tape();
  const auto d = static_cast<Index>(post.d);
  std::normal_distribution<double> normal(0.0, 1.0);
  SampledMaps out;
  if (post.kind != MapKind::special_orthogonal) {
    Matrix eps(post.mu.rows(), post.mu.cols());
    for (Index i = 0; i < eps.rows(); ++i)
      for (Index j = 0; j < eps.cols(); ++j) eps(i, j) = normal(rng);
    const double eps_sq = eps.squaredNorm();
    Var z = ad::add(post.mu, ad::mul(post.sigma, tape.constant(std::move(eps))));
    out.maps = post.kind == MapKind::diagonal ? ad::diag_embed(z) : z;
    if (need_log_ratio) {
      // log N(z; mu, sigma) - log N(z; 0, 1) with (z - mu) / sigma = eps.
      Var terms = ad::sub(ad::scale(ad::square(z), 0.5), ad::log(post.sigma));
      out.log_ratio = ad::add_scalar(ad::sum(terms), -0.5 * eps_sq);
    }
    return out;
  }
  const Index rows = post.kappa.rows();
  Matrix skew0(rows, d * d);
  for (Index r = 0; r < rows; ++r) {
    const auto x = rotations::sample_uniform_in_chart(post.d, rng);
    const Matrix a0 = rotations::cayley_inverse(x);
    Eigen::Map<Matrix>(skew0.data() + r * d * d, d, d) = a0;
  }
  Var s = ad::map(
      post.kappa, [](double k) { return (1.0 - k) / (1.0 + k); },
      [](double k) { return -2.0 / ((1.0 + k) * (1.0 + k)); });
  Var shrunk = ad::scaled_cayley_rows(skew0, s, post.d);
  out.maps = ad::batch_matmul(shrunk, post.mean, post.d);
  if (need_log_ratio) {
    const double dd = static_cast<double>(d);
    Var rel = ad::batch_matmul(out.maps, post.mean, post.d, false, true);
    Matrix eye_row = identity_rows(1, d);
    Var shifted = ad::sub(rel, ad::matmul(post.kappa, tape.constant(std::move(eye_row))));
    Var log_norm = ad::map(
        post.kappa, [](double k) { return std::log1p(-k * k); },
        [](double k) { return -2.0 * k / (1.0 - k * k); });
    out.log_ratio = ad::add(ad::scale(ad::sum(log_norm), 0.5 * dd * (dd - 1.0)),
                            ad::scale(ad::sum(ad::logdet_rows(shifted, post.d)), 1.0 - dd));
  }
  return out;
}

// Closed-form KL summed over incidences, or nullopt when the family has none.
std::optional<Var> kl_closed(const PosteriorVars& post) {
  if (post.kind != MapKind::special_orthogonal) {
    // sum 0.5 (mu^2 + sigma^2 - 1) - log sigma
    Var terms = ad::sub(ad::scale(ad::add(ad::square(post.mu), ad::square(post.sigma)), 0.5),
                        ad::log(post.sigma));
    return ad::add_scalar(ad::sum(terms), -0.5 * static_cast<double>(post.mu.rows() * post.mu.cols()));
  }
  Tape& tape = *post.kappa.tape();
  if (post.d == 1) return tape.constant(Matrix::Zero(1, 1));
  if (post.d == 2) {
    return ad::sum(ad::map(
        post.kappa, [](double k) { return -std::log1p(-k * k); },
        [](double k) { return 2.0 * k / (1.0 - k * k); }));
  }
  if (post.d == 3) {
    return ad::sum(ad::map(
        post.kappa,
        [](double k) { return -std::log1p(-k * k) - 2.0 * std::log1p(-k) - 2.0 * k; },
        [](double k) { return 2.0 * k / (1.0 - k * k) + 2.0 / (1.0 - k) - 2.0; }));
  }
  return std::nullopt;
}

}  // namespace

void ParameterStore::add(std::string name, Matrix value, ParamGroup group) {
  if (contains(name)) throw ContractViolation("ParameterStore: duplicate parameter '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(value), group});
}

Matrix& ParameterStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParameterStore: unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

const Matrix& ParameterStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ContractViolation("ParameterStore: unknown parameter '" + name + "'");
  return entries_[it->second].value;
}

std::size_t ParameterStore::coordinate_count() const {
  std::size_t total = 0;
  for (const auto& e : entries_) total += static_cast<std::size_t>(e.value.size());
  return total;
}

BoundParameters::BoundParameters(const ParameterStore& store, Tape& tape) {
  for (const auto& e : store.entries()) vars_.emplace(e.name, tape.variable(e.value));
}

Var BoundParameters::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractViolation("BoundParameters: unknown parameter '" + name + "'");
  return it->second;
}

GradientMap compute_gradients(Tape& tape, const Var& loss, const BoundParameters& params) {
  tape.backward(loss);
  GradientMap grads;
  for (const auto& [name, var] : params.vars()) grads.emplace(name, tape.grad(var));
  return grads;
}

double elu(double x) { return x >= 0.0 ? x : std::expm1(x); }

Var mlp_forward(const BoundParameters& params, const std::vector<std::string>& layers, Var x,
                bool activate_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Var w = params[layers[i] + ".W"];
    const Var b = params[layers[i] + ".b"];
    if (x.cols() != w.rows()) {
      throw ContractViolation("mlp_forward: layer '" + layers[i] + "' expects " +
                              std::to_string(w.rows()) + " inputs, got " + std::to_string(x.cols()));
    }
    x = ad::add_row(ad::matmul(x, w), b);
    if (activate_last || i + 1 < layers.size()) x = ad::elu(x);
  }
  return x;
}

SheafOperator build_sheaf_operator(Var maps, const sheaf::Graph& graph, std::size_t d, double eps) {
  const std::vector<std::size_t> owner = incidence_nodes(graph);
  Var gram = ad::batch_matmul(maps, maps, d, /*transpose_a=*/true);
  Var degrees = ad::segment_sum_rows(gram, owner, graph.num_nodes());
  SheafOperator op;
  op.maps = maps;
  op.inv_sqrt_degrees = ad::inverse_sqrt_rows(degrees, d, eps);
  op.edges = &graph.edges();
  op.d = d;
  return op;
}

Var apply_sheaf_operator(const SheafOperator& op, Var x) {
  Var y = ad::block_mul_rows(op.inv_sqrt_degrees, x, op.d);
  y = ad::sheaf_laplacian_apply(op.maps, y, *op.edges, op.d);
  return ad::block_mul_rows(op.inv_sqrt_degrees, y, op.d);
}

Var apply_block_operator(const sheaf::BlockOperator& op, Var x) {
  Tape* t = x.tape();
  auto dense = std::make_shared<const Matrix>(op.dense());
  if (dense->cols() != x.rows()) throw ContractViolation("apply_block_operator: shape mismatch");
  return t->record((*dense) * x.value(), {x},
                   [t, x, dense](const Matrix& g) { t->accumulate(x, dense->transpose() * g); });
}

namespace {

Var conv_tail(Var x, Var diffused, Activation act) {
  return ad::sub(x, act == Activation::elu ? ad::elu(diffused) : diffused);
}

void check_conv_shapes(Var x, Var w1, Var w2) {
  if (w1.rows() != w1.cols() || w2.rows() != w2.cols() || x.cols() != w2.rows() ||
      w1.rows() == 0 || x.rows() % w1.rows() != 0) {
    throw ContractViolation("sheaf_conv_layer: expected (n d) x f features, d x d W1, f x f W2");
  }
}

}  // namespace

Var sheaf_conv_layer(Var x, const SheafOperator& delta, Var w1, Var w2, Activation act) {
  check_conv_shapes(x, w1, w2);
  if (static_cast<std::size_t>(w1.rows()) != delta.d) {
    throw ContractViolation("sheaf_conv_layer: W1 does not match the stalk dimension");
  }
  Var z = ad::matmul(ad::shared_block_mul(w1, x), w2);
  return conv_tail(x, apply_sheaf_operator(delta, z), act);
}

Var sheaf_conv_layer(Var x, const sheaf::BlockOperator& delta, Var w1, Var w2, Activation act) {
  check_conv_shapes(x, w1, w2);
  if (static_cast<std::size_t>(w1.rows()) != delta.block_dim()) {
    throw ContractViolation("sheaf_conv_layer: W1 does not match the stalk dimension");
  }
  Var z = ad::matmul(ad::shared_block_mul(w1, x), w2);
  return conv_tail(x, apply_block_operator(delta, z), act);
}

std::vector<std::size_t> incidence_nodes(const sheaf::Graph& graph) {
  std::vector<std::size_t> owner;
  owner.reserve(2 * graph.num_edges());
  for (const auto& [u, v] : graph.edges()) {
    owner.push_back(u);
    owner.push_back(v);
  }
  return owner;
}

std::size_t learner_output_width(MapKind kind, std::size_t d) {
  switch (kind) {
    case MapKind::diagonal:
      return 2 * d;
    case MapKind::general:
      return 2 * d * d;
    case MapKind::special_orthogonal:
      return d * (d - 1) / 2 + 1;
  }
  return 0;
}

PosteriorVars sheaf_learner(const BoundParameters& params, const sheaf::Graph& graph, Var x,
                            MapKind kind, std::size_t d, double kappa_max) {
  std::vector<std::size_t> self, other;
  for (const auto& [u, v] : graph.edges()) {
    self.push_back(u);
    other.push_back(v);
    self.push_back(v);
    other.push_back(u);
  }
  Var pairs = ad::concat_cols(ad::gather_rows(x, self), ad::gather_rows(x, other));
  Var raw = mlp_forward(params, {"learner.0", "learner.1"}, pairs, /*activate_last=*/false);
  const auto width = static_cast<Index>(learner_output_width(kind, d));
  if (raw.cols() != width) throw ContractViolation("sheaf_learner: learner output width mismatch");

  PosteriorVars post;
  post.kind = kind;
  post.d = d;
  if (kind == MapKind::special_orthogonal) {
    const Index q = width - 1;
    post.skew = ad::slice_cols(raw, 0, q);
    post.mean = ad::cayley_rows(post.skew, d);
    post.kappa = ad::scale(ad::sigmoid(ad::slice_cols(raw, q, 1)), kappa_max);
  } else {
    const Index half = width / 2;
    post.mu = ad::slice_cols(raw, 0, half);
    post.sigma = ad::softplus(ad::slice_cols(raw, half, half));
  }
  return post;
}

variational::PosteriorParams PosteriorVars::values() const {
  variational::PosteriorParams p;
  p.kind = kind;
  p.d = d;
  const auto dd = static_cast<Index>(d);
  if (kind == MapKind::special_orthogonal) {
    const Matrix& m = mean.value();
    for (Index r = 0; r < m.rows(); ++r) {
      Matrix block = Eigen::Map<const Matrix>(m.data() + r * dd * dd, dd, dd);
      p.rotation.emplace_back(rotations::Rotation(std::move(block)), kappa.value()(r, 0));
    }
  } else {
    for (Index r = 0; r < mu.rows(); ++r) {
      p.gaussian.push_back({mu.value().row(r).transpose(), sigma.value().row(r).transpose()});
    }
  }
  return p;
}

void ModelConfig::validate() const {
  if (d < 1 || channels < 1 || layers < 1) {
    throw ConfigError("model: d, channels and layers must all be >= 1");
  }
  if (in_features < 1) throw ConfigError("model: input feature dimension must be >= 1");
  if (num_classes < 2) throw ConfigError("model: need at least two classes");
  if (!(input_dropout >= 0.0 && input_dropout < 1.0) || !(layer_dropout >= 0.0 && layer_dropout < 1.0)) {
    throw ConfigError("model: dropout rates must lie in [0, 1)");
  }
  if (!(kappa_max > 0.0 && kappa_max < 1.0)) throw ConfigError("model: kappa_max must lie in (0, 1)");
  if (!(degree_eps >= 0.0)) throw ConfigError("model: degree eps must be non-negative");
}

Model::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const std::size_t k = config_.hidden_width();
  const std::size_t hidden = config_.learner_hidden == 0 ? 2 * k : config_.learner_hidden;
  add_dense(params_, "resize", config_.in_features, k, ParamGroup::regular, rng);
  if (config_.learn_sheaf) {
    add_dense(params_, "learner.0", 2 * k, hidden, ParamGroup::sheaf, rng);
    // Zero output layer: training starts at mu = 0 (near-identity / uniform sheaf).
    add_dense(params_, "learner.1", hidden, learner_output_width(config_.kind, config_.d),
              ParamGroup::sheaf, rng, /*zero=*/true);
  }
  add_dense(params_, "encoder.0", k, k, ParamGroup::regular, rng);
  for (std::size_t t = 0; t < config_.layers; ++t) {
    const auto d = static_cast<Index>(config_.d);
    const auto f = static_cast<Index>(config_.channels);
    params_.add("layer" + std::to_string(t) + ".W1", uniform_init(d, d, config_.d, rng));
    params_.add("layer" + std::to_string(t) + ".W2", uniform_init(f, f, config_.channels, rng));
  }
  add_dense(params_, "classifier", k, static_cast<std::size_t>(config_.num_classes),
            ParamGroup::regular, rng);
}

Model::Model(ModelConfig config, ParameterStore params) : config_(config), params_(std::move(params)) {
  config_.validate();
}

ForwardPass Model::forward(Tape& tape, const BoundParameters& bound, const sheaf::Graph& graph,
                           std::mt19937_64& rng, const ForwardOptions& options) const {
  const ModelConfig& c = config_;
  if (static_cast<std::size_t>(graph.features().cols()) != c.in_features) {
    throw ContractViolation("Model::forward: model expects " + std::to_string(c.in_features) +
                            " input features, graph has " + std::to_string(graph.features().cols()));
  }
  if (graph.num_classes() != c.num_classes) {
    throw ContractViolation("Model::forward: model has " + std::to_string(c.num_classes) +
                            " classes, graph has " + std::to_string(graph.num_classes()));
  }
  const auto n = static_cast<Index>(graph.num_nodes());
  const auto d = static_cast<Index>(c.d);
  const auto f = static_cast<Index>(c.channels);

  ForwardPass pass;
  Var x = tape.constant(graph.features());
  if (options.training) x = dropout(x, c.input_dropout, rng);
  x = ad::add_row(ad::matmul(x, bound["resize.W"]), bound["resize.b"]);

  const bool mc_kl = c.learn_sheaf && (options.kl_mode == variational::KlMode::monte_carlo ||
                                       (c.kind == MapKind::special_orthogonal && c.d >= 4));
  std::optional<SheafOperator> frozen;
  if (c.learn_sheaf) {
    pass.posterior = sheaf_learner(bound, graph, x, c.kind, c.d, c.kappa_max);
  } else {
    Var eye = tape.constant(identity_rows(static_cast<Index>(2 * graph.num_edges()), d));
    frozen = build_sheaf_operator(eye, graph, c.d, c.degree_eps);
  }

  Var h = mlp_forward(bound, {"encoder.0"}, x);
  h = ad::reshape(h, n * d, f);  // node-major, stalk-minor rows

  std::vector<Var> log_ratios;
  for (std::size_t t = 0; t < c.layers; ++t) {
    SheafOperator op;
    if (c.learn_sheaf) {
      SampledMaps sampled = sample_maps(pass.posterior, rng, mc_kl);
      pass.layer_maps.push_back(sampled.maps);
      if (mc_kl) log_ratios.push_back(sampled.log_ratio);
      op = build_sheaf_operator(sampled.maps, graph, c.d, c.degree_eps);
    } else {
      op = *frozen;
      pass.layer_maps.push_back(op.maps);
    }
    if (options.training) h = dropout(h, c.layer_dropout, rng);
    const std::string prefix = "layer" + std::to_string(t);
    h = sheaf_conv_layer(h, op, bound[prefix + ".W1"], bound[prefix + ".W2"]);
  }
  h = ad::reshape(h, n, d * f);
  pass.logits = ad::add_row(ad::matmul(h, bound["classifier.W"]), bound["classifier.b"]);

  if (!c.learn_sheaf) {
    pass.kl = tape.constant(Matrix::Zero(1, 1));
  } else if (mc_kl) {
    // Average of the per-layer single-sample estimates.
    Var acc = log_ratios.front();
    for (std::size_t i = 1; i < log_ratios.size(); ++i) acc = ad::add(acc, log_ratios[i]);
    pass.kl = ad::scale(acc, 1.0 / static_cast<double>(log_ratios.size()));
    pass.kl_closed_form = false;
  } else {
    pass.kl = *kl_closed(pass.posterior);
  }
  return pass;
}

Matrix Model::predict_proba(const sheaf::Graph& graph, std::mt19937_64& rng) const {
  Tape tape;
  BoundParameters bound(params_, tape);
  const ForwardPass pass = forward(tape, bound, graph, rng);
  return ad::softmax_rows(pass.logits.value());
}

void Adam::step(ParameterStore& params, const GradientMap& grads) {
  ++t_;
  const double c1 = 1.0 - std::pow(options_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(options_.beta2, static_cast<double>(t_));
  for (auto& entry : params.entries()) {
    auto it = grads.find(entry.name);
    if (it == grads.end()) continue;
    const double decay = entry.group == ParamGroup::sheaf ? options_.weight_decay_sheaf
                                                          : options_.weight_decay_regular;
    const Matrix g = it->second + decay * entry.value;
    auto [mi, fresh_m] = m_.try_emplace(entry.name, Matrix::Zero(g.rows(), g.cols()));
    auto [vi, fresh_v] = v_.try_emplace(entry.name, Matrix::Zero(g.rows(), g.cols()));
    Matrix& m = mi->second;
    Matrix& v = vi->second;
    m = options_.beta1 * m + (1.0 - options_.beta1) * g;
    v = options_.beta2 * v + (1.0 - options_.beta2) * g.cwiseProduct(g);
    entry.value.array() -= options_.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + options_.eps);
  }
}

}  // namespace bsnn::nn
