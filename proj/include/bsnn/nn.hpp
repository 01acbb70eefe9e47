#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "bsnn/autodiff.hpp"
#include "bsnn/sheaf.hpp"
#include "bsnn/variational.hpp"

namespace bsnn::nn {

using ad::Tape;
using ad::Var;
using linalg::Matrix;
using sheaf::MapKind;

enum class ParamGroup { regular, sheaf };

// Named parameter tensors in insertion order.
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    Matrix value;
    ParamGroup group;
  };

  void add(std::string name, Matrix value, ParamGroup group = ParamGroup::regular);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Matrix& get(const std::string& name);
  const Matrix& get(const std::string& name) const;
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t coordinate_count() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

using GradientMap = std::map<std::string, Matrix>;

// Parameters placed on a tape as differentiable leaves.
class BoundParameters {
 public:
  BoundParameters(const ParameterStore& store, Tape& tape);
  Var operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  const std::unordered_map<std::string, Var>& vars() const { return vars_; }

 private:
  std::unordered_map<std::string, Var> vars_;
};

// Runs the reverse pass from `loss`; parameters not reached get zero gradients.
GradientMap compute_gradients(Tape& tape, const Var& loss, const BoundParameters& params);

double elu(double x);

enum class Activation { elu, identity };

// Affine layers x -> act(x W + b) for each prefix ("<prefix>.W", "<prefix>.b").
// The last layer skips the activation when activate_last is false.
Var mlp_forward(const BoundParameters& params, const std::vector<std::string>& layers, Var x,
                bool activate_last = true);

// Normalized sheaf Laplacian held on a tape: D^{-1/2} L_F D^{-1/2} applied via
// the restriction maps without forming the nd x nd matrix.
struct SheafOperator {
  Var maps;               // 2|E| x d^2
  Var inv_sqrt_degrees;   // n x d^2
  const std::vector<sheaf::Edge>* edges = nullptr;
  std::size_t d = 1;
};

SheafOperator build_sheaf_operator(Var maps, const sheaf::Graph& graph, std::size_t d, double eps);
Var apply_sheaf_operator(const SheafOperator& op, Var x);
// Constant block operator times x.
Var apply_block_operator(const sheaf::BlockOperator& op, Var x);

// X - act(Delta (I_n (x) W1) X W2).
Var sheaf_conv_layer(Var x, const SheafOperator& delta, Var w1, Var w2,
                     Activation act = Activation::elu);
Var sheaf_conv_layer(Var x, const sheaf::BlockOperator& delta, Var w1, Var w2,
                     Activation act = Activation::elu);

// Variational parameters emitted by the learner, as tape values. Row r is incidence r.
struct PosteriorVars {
  MapKind kind = MapKind::diagonal;
  std::size_t d = 1;
  Var mu;      // Gaussian families: 2|E| x (d or d^2)
  Var sigma;   // Gaussian families, softplus-positive
  Var skew;    // SO(d): raw Cayley coordinates of the mean, 2|E| x d(d-1)/2
  Var mean;    // SO(d): C(skew), 2|E| x d^2
  Var kappa;   // SO(d): kappa_max * logistic(raw), 2|E| x 1

  variational::PosteriorParams values() const;
};

inline constexpr double kKappaMax = 0.98;

// Incidence order used everywhere: row 2e is u <| e, row 2e + 1 is v <| e for e = (u, v).
std::vector<std::size_t> incidence_nodes(const sheaf::Graph& graph);

// MLP_phi([x_u || x_u']) -> family-specific (mu, sigma) or (M, kappa).
PosteriorVars sheaf_learner(const BoundParameters& params, const sheaf::Graph& graph, Var x,
                            MapKind kind, std::size_t d, double kappa_max = kKappaMax);

// Number of raw learner outputs per incidence for a family.
std::size_t learner_output_width(MapKind kind, std::size_t d);

struct ModelConfig {
  MapKind kind = MapKind::special_orthogonal;
  std::size_t d = 2;
  std::size_t channels = 8;   // f
  std::size_t layers = 2;     // L
  std::size_t learner_hidden = 0;  // 0 means 2 d f
  std::size_t in_features = 1;
  int num_classes = 2;
  bool learn_sheaf = true;    // false freezes every restriction map at the identity
  double input_dropout = 0.0;
  double layer_dropout = 0.0;
  double kappa_max = kKappaMax;
  double degree_eps = sheaf::kDefaultDegreeFloor;

  std::size_t hidden_width() const { return d * channels; }
  void validate() const;
};

struct ForwardPass {
  Var logits;                 // n x C
  PosteriorVars posterior;    // empty Vars when the sheaf is frozen
  std::vector<Var> layer_maps;  // sampled restriction maps per layer, 2|E| x d^2
  Var kl;                     // 1 x 1 KL term actually used (closed form or MC)
  bool kl_closed_form = true;
};

struct ForwardOptions {
  bool training = false;      // enables dropout
  variational::KlMode kl_mode = variational::KlMode::automatic;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ParameterStore params);

  const ModelConfig& config() const { return config_; }
  const ParameterStore& params() const { return params_; }
  ParameterStore& params() { return params_; }

  // One stochastic pass: fresh i.i.d. sheaf samples for every layer.
  ForwardPass forward(Tape& tape, const BoundParameters& bound, const sheaf::Graph& graph,
                      std::mt19937_64& rng, const ForwardOptions& options = {}) const;

  // Class probabilities of one eval-mode pass.
  Matrix predict_proba(const sheaf::Graph& graph, std::mt19937_64& rng) const;

 private:
  ModelConfig config_;
  ParameterStore params_;
};

// Adam with per-group L2 weight decay added to the gradient.
class Adam {
 public:
  struct Options {
    double lr = 0.02;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay_regular = 0.0;
    double weight_decay_sheaf = 0.0;
  };

  explicit Adam(Options options) : options_(options) {}
  void step(ParameterStore& params, const GradientMap& grads);

 private:
  Options options_;
  std::size_t t_ = 0;
  std::map<std::string, Matrix> m_, v_;
};

}  // namespace bsnn::nn
