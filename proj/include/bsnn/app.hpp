#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bsnn/data.hpp"
#include "bsnn/nn.hpp"
#include "bsnn/sheaf.hpp"
#include "bsnn/variational.hpp"

namespace bsnn::app {

struct RunConfig {
  std::string dataset;          // JSON dataset path; empty means generate from `sbm`
  data::SBMConfig sbm;
  std::string kind = "special_orthogonal";  // or diagonal, general, identity (frozen sheaf)
  std::size_t d = 2;
  std::size_t channels = 8;
  std::size_t layers = 2;
  std::size_t learner_hidden = 0;
  double lr = 0.02;
  double weight_decay_regular = 1e-8;
  double weight_decay_sheaf = 1e-9;
  double input_dropout = 0.0;
  double layer_dropout = 0.0;
  std::size_t epochs = 1000;
  std::size_t patience = 200;
  std::uint64_t seed = 0;
  std::size_t seeds = 1;        // eval / uq: number of ensemble seeds, seed .. seed + seeds - 1
  std::size_t T = 3;            // ensemble passes
  std::size_t K = 1;            // ELBO samples per training step
  double kl_weight = 1.0;       // lambda before annealing
  bool anneal = true;
  variational::AnnealSchedule schedule;
  std::string kl_mode = "auto"; // or "mc"
  double kappa_max = nn::kKappaMax;
  double eps = sheaf::kDefaultDegreeFloor;
  std::size_t bins = 10;
  std::string out = ".";

  void validate() const;
  nn::ModelConfig model_config(std::size_t in_features, int num_classes) const;
};

// Unknown keys are rejected. Nested "sbm" mirrors SBMConfig.
RunConfig parse_run_config(const std::string& json_text, const std::string& source = "<config>");
RunConfig load_run_config(const std::string& path);

data::Dataset load_dataset(const RunConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double nll = 0, kl = 0, lambda = 0;
  double train_acc = 0, valid_acc = 0;
};

struct TrainResult {
  nn::Model model;              // best-validation parameters
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;
  double best_valid_acc = 0;
};

// Throws NumericalFailure on a non-finite loss.
TrainResult train(const RunConfig& cfg, const data::Dataset& dataset);

double accuracy(const linalg::Matrix& probs, const std::vector<int>& labels,
                const std::vector<std::size_t>& nodes);

// Ensemble test accuracy for each seed in [cfg.seed, cfg.seed + cfg.seeds).
std::vector<double> evaluate_seeds(const nn::Model& model, const data::Dataset& dataset,
                                   const RunConfig& cfg);

struct NodeUncertainty {
  std::size_t node = 0;
  double entropy = 0, epistemic_var = 0, mutual_info = 0;
};

struct UqReport {
  std::vector<NodeUncertainty> nodes;  // test nodes, averaged over seeds
  double mean_entropy = 0, mean_epistemic_var = 0, mean_mutual_info = 0;
  double ece = 0;                      // mean over seeds
};

UqReport uncertainty_report(const nn::Model& model, const data::Dataset& dataset, const RunConfig& cfg);

std::string model_to_json(const nn::Model& model);
nn::Model model_from_json(const std::string& text, const std::string& source = "<model>");
void save_model(const nn::Model& model, const std::string& path);
nn::Model load_model(const std::string& path);

// Hand-written sheaf for diffusion experiments, maps aligned with the dataset's edge order.
sheaf::CellularSheaf parse_sheaf_spec(const std::string& json_text,
                                      const std::shared_ptr<const sheaf::Graph>& graph,
                                      const std::string& source = "<sheaf>");
sheaf::CellularSheaf load_sheaf_spec(const std::string& path,
                                     const std::shared_ptr<const sheaf::Graph>& graph);

// CSV writers. Numbers are printed with %.10g.
std::string format_number(double x);
std::string train_log_csv(const std::vector<EpochLog>& log);
std::string eval_csv(const std::vector<double>& accs, std::uint64_t first_seed, std::size_t T);
std::string uq_csv(const UqReport& report, const RunConfig& cfg);

struct DiffuseOptions {
  std::size_t steps = 100;
  double alpha = 0.5;
  std::string init = "features";  // or "random"
  std::size_t channels = 1;       // used by random init
  std::uint64_t seed = 0;
};

struct DiffuseReport {
  std::vector<double> update_norms;   // entry 0 is the initial state (0)
  std::vector<double> energies;
  std::vector<bool> separable;        // per class, evaluated on the diffusion limit
};

DiffuseReport run_diffusion(const sheaf::CellularSheaf& sheaf, const DiffuseOptions& options);
std::string diffuse_csv(const DiffuseReport& report);

// Exit codes shared by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitNumerical = 3;

}  // namespace bsnn::app
