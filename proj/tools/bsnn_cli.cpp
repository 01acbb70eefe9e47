#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "bsnn/app.hpp"
#include "bsnn/errors.hpp"

namespace {

using bsnn::app::RunConfig;

struct Overrides {
  std::optional<std::string> config, out, dataset, kind, kl_mode;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> d, channels, layers, learner_hidden, epochs, patience, seeds, T, K, bins;
  std::optional<double> lr, wd_regular, wd_sheaf, input_dropout, layer_dropout, kl_weight, anneal_ramp,
      kappa_max, eps;
  std::optional<std::size_t> anneal_cycle;
  bool no_anneal = false;
  // SBM fields
  std::optional<std::size_t> n, feature_dim;
  std::optional<int> C;
  std::optional<double> mean_degree, homophily, feature_noise;
  std::optional<std::uint64_t> data_seed;
};

void add_shared(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "JSON run config; flags override its fields");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, "Output directory");
}

void add_dataset(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--dataset", o.dataset, "Dataset JSON (default: generate an SBM graph)");
  cmd->add_option("--sbm-n", o.n, "SBM node count");
  cmd->add_option("--sbm-C", o.C, "SBM class count");
  cmd->add_option("--sbm-mean-degree", o.mean_degree, "SBM mean degree");
  cmd->add_option("--sbm-homophily", o.homophily, "SBM expected same-class edge fraction");
  cmd->add_option("--sbm-feature-dim", o.feature_dim, "SBM feature dimension");
  cmd->add_option("--sbm-feature-noise", o.feature_noise, "SBM feature noise scale");
  cmd->add_option("--sbm-seed", o.data_seed, "SBM generator seed");
}

void add_ensemble(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--T", o.T, "Stochastic passes per ensemble");
  cmd->add_option("--seeds", o.seeds, "Number of ensemble seeds, starting at --seed");
}

RunConfig resolve(const Overrides& o) {
  RunConfig cfg = o.config ? bsnn::app::load_run_config(*o.config) : RunConfig{};
  auto set = [](auto& dst, const auto& src) {
    if (src) dst = *src;
  };
  set(cfg.out, o.out);
  set(cfg.seed, o.seed);
  set(cfg.dataset, o.dataset);
  set(cfg.kind, o.kind);
  set(cfg.kl_mode, o.kl_mode);
  set(cfg.d, o.d);
  set(cfg.channels, o.channels);
  set(cfg.layers, o.layers);
  set(cfg.learner_hidden, o.learner_hidden);
  set(cfg.epochs, o.epochs);
  set(cfg.patience, o.patience);
  set(cfg.seeds, o.seeds);
  set(cfg.T, o.T);
  set(cfg.K, o.K);
  set(cfg.bins, o.bins);
  set(cfg.lr, o.lr);
  set(cfg.weight_decay_regular, o.wd_regular);
  set(cfg.weight_decay_sheaf, o.wd_sheaf);
  set(cfg.input_dropout, o.input_dropout);
  set(cfg.layer_dropout, o.layer_dropout);
  set(cfg.kl_weight, o.kl_weight);
  set(cfg.schedule.cycle_length, o.anneal_cycle);
  set(cfg.schedule.ramp_fraction, o.anneal_ramp);
  set(cfg.kappa_max, o.kappa_max);
  set(cfg.eps, o.eps);
  if (o.no_anneal) cfg.anneal = false;
  set(cfg.sbm.n, o.n);
  set(cfg.sbm.C, o.C);
  set(cfg.sbm.mean_degree, o.mean_degree);
  set(cfg.sbm.homophily, o.homophily);
  set(cfg.sbm.feature_dim, o.feature_dim);
  set(cfg.sbm.feature_noise, o.feature_noise);
  set(cfg.sbm.seed, o.data_seed);
  cfg.validate();
  return cfg;
}

std::string output_path(const RunConfig& cfg, const std::string& name) {
  std::filesystem::create_directories(cfg.out);
  return (std::filesystem::path(cfg.out) / name).string();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw bsnn::ConfigError(path + ": cannot open for writing");
  out << text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian sheaf neural networks: training, evaluation, uncertainty and diffusion tools"};
  app.require_subcommand(1);
  Overrides o;
  std::string model_path, sheaf_path;
  bsnn::app::DiffuseOptions diff;

  auto* train = app.add_subcommand("train", "Train a model; writes model.json and train_log.csv");
  add_shared(train, o);
  add_dataset(train, o);
  train->add_option("--kind", o.kind, "special_orthogonal | diagonal | general | identity");
  train->add_option("--d", o.d, "Stalk dimension");
  train->add_option("--channels", o.channels, "Hidden channels f");
  train->add_option("--layers", o.layers, "Sheaf layers L");
  train->add_option("--learner-hidden", o.learner_hidden, "Sheaf learner hidden width (0: 2df)");
  train->add_option("--lr", o.lr, "Adam learning rate");
  train->add_option("--wd-regular", o.wd_regular, "Weight decay on non-sheaf parameters");
  train->add_option("--wd-sheaf", o.wd_sheaf, "Weight decay on sheaf learner parameters");
  train->add_option("--input-dropout", o.input_dropout, "Input dropout rate");
  train->add_option("--layer-dropout", o.layer_dropout, "Layer dropout rate");
  train->add_option("--epochs", o.epochs, "Maximum epochs");
  train->add_option("--patience", o.patience, "Early stopping patience (epochs)");
  train->add_option("--K", o.K, "ELBO samples per step");
  train->add_option("--kl-weight", o.kl_weight, "KL weight before annealing");
  train->add_flag("--no-anneal", o.no_anneal, "Disable cyclic KL annealing");
  train->add_option("--anneal-cycle", o.anneal_cycle, "Annealing cycle length (epochs)");
  train->add_option("--anneal-ramp", o.anneal_ramp, "Fraction of each cycle spent ramping");
  train->add_option("--kl-mode", o.kl_mode, "auto | mc");
  train->add_option("--kappa-max", o.kappa_max, "Upper bound on the Cayley concentration");
  train->add_option("--eps", o.eps, "Degree eigenvalue floor");

  auto* eval = app.add_subcommand("eval", "Ensemble test accuracy per seed; writes eval.csv");
  add_shared(eval, o);
  add_dataset(eval, o);
  add_ensemble(eval, o);
  eval->add_option("--model", model_path, "Model file from train")->required();

  auto* uq = app.add_subcommand("uq", "Per-node uncertainty report; writes uq.csv");
  add_shared(uq, o);
  add_dataset(uq, o);
  add_ensemble(uq, o);
  uq->add_option("--model", model_path, "Model file from train")->required();
  uq->add_option("--bins", o.bins, "Calibration bins");

  auto* diffuse = app.add_subcommand("diffuse", "Sheaf diffusion trajectory; writes diffuse.csv");
  add_shared(diffuse, o);
  add_dataset(diffuse, o);
  diffuse->add_option("--sheaf", sheaf_path, "Sheaf spec JSON")->required();
  diffuse->add_option("--steps", diff.steps, "Euler steps");
  diffuse->add_option("--alpha", diff.alpha, "Step size in (0, 1]");
  diffuse->add_option("--init", diff.init, "features | random");
  diffuse->add_option("--channels", diff.channels, "Channels for random init");

  auto* synth = app.add_subcommand("synth", "Generate an SBM dataset; writes dataset.json");
  add_shared(synth, o);
  synth->add_option("--n", o.n, "Node count");
  synth->add_option("--C", o.C, "Class count");
  synth->add_option("--mean-degree", o.mean_degree, "Mean degree");
  synth->add_option("--homophily", o.homophily, "Expected same-class edge fraction");
  synth->add_option("--feature-dim", o.feature_dim, "Feature dimension");
  synth->add_option("--feature-noise", o.feature_noise, "Feature noise scale");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bsnn::app::kExitUsage;
  }

  try {
    if (synth->parsed()) {
      // synth flags are the SBM fields; --seed seeds the generator.
      if (o.seed) o.data_seed = o.seed;
      const RunConfig cfg = resolve(o);
      const auto ds = bsnn::data::generate_sbm(cfg.sbm);
      const std::string path = output_path(cfg, "dataset.json");
      bsnn::data::save_graph_dataset(ds, path);
      std::cout << "wrote " << path << " (" << ds.graph->num_nodes() << " nodes, " << ds.graph->num_edges()
                << " edges)\n";
      return bsnn::app::kExitOk;
    }
    const RunConfig cfg = resolve(o);
    const auto ds = bsnn::app::load_dataset(cfg);
    if (train->parsed()) {
      const auto result = bsnn::app::train(cfg, ds);
      const std::string model_file = output_path(cfg, "model.json");
      bsnn::app::save_model(result.model, model_file);
      write(output_path(cfg, "train_log.csv"), bsnn::app::train_log_csv(result.log));
      std::cout << "trained " << result.log.size() << " epochs; best valid acc "
                << bsnn::app::format_number(result.best_valid_acc) << " at epoch " << result.best_epoch
                << "; wrote " << model_file << "\n";
    } else if (eval->parsed()) {
      const auto model = bsnn::app::load_model(model_path);
      const auto accs = bsnn::app::evaluate_seeds(model, ds, cfg);
      const std::string path = output_path(cfg, "eval.csv");
      write(path, bsnn::app::eval_csv(accs, cfg.seed, cfg.T));
      std::cout << "wrote " << path << "\n";
    } else if (uq->parsed()) {
      const auto model = bsnn::app::load_model(model_path);
      const auto report = bsnn::app::uncertainty_report(model, ds, cfg);
      const std::string path = output_path(cfg, "uq.csv");
      write(path, bsnn::app::uq_csv(report, cfg));
      std::cout << "wrote " << path << " (ECE " << bsnn::app::format_number(report.ece) << ")\n";
    } else if (diffuse->parsed()) {
      diff.seed = cfg.seed;
      const auto sh = bsnn::app::load_sheaf_spec(sheaf_path, ds.graph);
      const auto report = bsnn::app::run_diffusion(sh, diff);
      const std::string path = output_path(cfg, "diffuse.csv");
      write(path, bsnn::app::diffuse_csv(report));
      std::cout << "wrote " << path << "; separable:";
      for (bool b : report.separable) std::cout << ' ' << (b ? "true" : "false");
      std::cout << "\n";
    }
  } catch (const bsnn::NumericalFailure& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return bsnn::app::kExitNumerical;
  } catch (const bsnn::SingularityError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return bsnn::app::kExitNumerical;
  } catch (const bsnn::DomainError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return bsnn::app::kExitNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bsnn::app::kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return bsnn::app::kExitUsage;
  }
  return bsnn::app::kExitOk;
}
