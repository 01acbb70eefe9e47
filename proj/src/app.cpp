#include "bsnn/app.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "bsnn/diffusion.hpp"
#include "bsnn/errors.hpp"
#include "bsnn/uq.hpp"

namespace bsnn::app {

namespace {

using nlohmann::json;
using linalg::Matrix;
using sheaf::MapKind;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ConfigError(path + ": cannot open for writing");
  out << text;
  if (!out) throw ConfigError(path + ": write failed");
}

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return std::mt19937_64(seq);
}

template <class T>
void read_field(const json& obj, const char* key, T& dst, const std::string& source) {
  auto it = obj.find(key);
  if (it == obj.end()) return;
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!it->is_boolean()) throw ConfigError("expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!it->is_number_integer()) throw ConfigError("expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (it->get<long long>() < 0) throw ConfigError("expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!it->is_number()) throw ConfigError("expected a number");
    } else {
      if (!it->is_string()) throw ConfigError("expected a string");
    }
    dst = it->get<T>();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": field \"" + key + "\": " + e.what());
  }
}

void reject_unknown(const json& obj, const std::set<std::string>& known, const std::string& source,
                    const std::string& prefix = "") {
  for (const auto& [key, _] : obj.items()) {
    if (!known.count(key)) throw ConfigError(source + ": unknown field \"" + prefix + key + "\"");
  }
}

variational::KlMode kl_mode_of(const std::string& s) {
  if (s == "auto") return variational::KlMode::automatic;
  if (s == "mc") return variational::KlMode::monte_carlo;
  throw ConfigError("kl_mode must be \"auto\" or \"mc\", got \"" + s + "\"");
}

std::string param_group_name(nn::ParamGroup g) { return g == nn::ParamGroup::sheaf ? "sheaf" : "regular"; }

}  // namespace

void RunConfig::validate() const {
  if (kind != "identity") sheaf::map_kind_from_string(kind);
  if (d < 1 || channels < 1 || layers < 1) throw ConfigError("d, channels and layers must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (!(weight_decay_regular >= 0.0) || !(weight_decay_sheaf >= 0.0)) {
    throw ConfigError("weight decay must be non-negative");
  }
  if (!(input_dropout >= 0.0 && input_dropout < 1.0) || !(layer_dropout >= 0.0 && layer_dropout < 1.0)) {
    throw ConfigError("dropout rates must lie in [0, 1)");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (seeds < 1 || T < 1 || K < 1) throw ConfigError("seeds, T and K must be >= 1");
  if (!(kl_weight >= 0.0)) throw ConfigError("kl_weight must be non-negative");
  if (schedule.cycle_length < 1 || !(schedule.ramp_fraction > 0.0 && schedule.ramp_fraction <= 1.0)) {
    throw ConfigError("anneal cycle must be >= 1 and ramp fraction in (0, 1]");
  }
  kl_mode_of(kl_mode);
  if (!(kappa_max > 0.0 && kappa_max < 1.0)) throw ConfigError("kappa_max must lie in (0, 1)");
  if (!(eps >= 0.0)) throw ConfigError("eps must be non-negative");
  if (bins < 1) throw ConfigError("bins must be >= 1");
  if (dataset.empty()) sbm.validate();
}

nn::ModelConfig RunConfig::model_config(std::size_t in_features, int num_classes) const {
  nn::ModelConfig mc;
  mc.learn_sheaf = kind != "identity";
  mc.kind = mc.learn_sheaf ? sheaf::map_kind_from_string(kind) : MapKind::special_orthogonal;
  mc.d = d;
  mc.channels = channels;
  mc.layers = layers;
  mc.learner_hidden = learner_hidden;
  mc.in_features = in_features;
  mc.num_classes = num_classes;
  mc.input_dropout = input_dropout;
  mc.layer_dropout = layer_dropout;
  mc.kappa_max = kappa_max;
  mc.degree_eps = eps;
  return mc;
}

RunConfig parse_run_config(const std::string& json_text, const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(source + ": malformed JSON: " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(source + ": top level must be an object");
  reject_unknown(doc,
                 {"dataset", "sbm", "kind", "d", "channels", "layers", "learner_hidden", "lr",
                  "weight_decay_regular", "weight_decay_sheaf", "input_dropout", "layer_dropout",
                  "epochs", "patience", "seed", "seeds", "T", "K", "kl_weight", "anneal",
                  "anneal_cycle", "anneal_ramp", "kl_mode", "kappa_max", "eps", "bins", "out"},
                 source);
  RunConfig cfg;
  read_field(doc, "dataset", cfg.dataset, source);
  if (auto it = doc.find("sbm"); it != doc.end()) {
    if (!it->is_object()) throw ConfigError(source + ": field \"sbm\" must be an object");
    reject_unknown(*it, {"n", "C", "mean_degree", "homophily", "feature_dim", "feature_noise", "seed"},
                   source, "sbm.");
    read_field(*it, "n", cfg.sbm.n, source);
    read_field(*it, "C", cfg.sbm.C, source);
    read_field(*it, "mean_degree", cfg.sbm.mean_degree, source);
    read_field(*it, "homophily", cfg.sbm.homophily, source);
    read_field(*it, "feature_dim", cfg.sbm.feature_dim, source);
    read_field(*it, "feature_noise", cfg.sbm.feature_noise, source);
    read_field(*it, "seed", cfg.sbm.seed, source);
  }
  read_field(doc, "kind", cfg.kind, source);
  read_field(doc, "d", cfg.d, source);
  read_field(doc, "channels", cfg.channels, source);
  read_field(doc, "layers", cfg.layers, source);
  read_field(doc, "learner_hidden", cfg.learner_hidden, source);
  read_field(doc, "lr", cfg.lr, source);
  read_field(doc, "weight_decay_regular", cfg.weight_decay_regular, source);
  read_field(doc, "weight_decay_sheaf", cfg.weight_decay_sheaf, source);
  read_field(doc, "input_dropout", cfg.input_dropout, source);
  read_field(doc, "layer_dropout", cfg.layer_dropout, source);
  read_field(doc, "epochs", cfg.epochs, source);
  read_field(doc, "patience", cfg.patience, source);
  read_field(doc, "seed", cfg.seed, source);
  read_field(doc, "seeds", cfg.seeds, source);
  read_field(doc, "T", cfg.T, source);
  read_field(doc, "K", cfg.K, source);
  read_field(doc, "kl_weight", cfg.kl_weight, source);
  read_field(doc, "anneal", cfg.anneal, source);
  read_field(doc, "anneal_cycle", cfg.schedule.cycle_length, source);
  read_field(doc, "anneal_ramp", cfg.schedule.ramp_fraction, source);
  read_field(doc, "kl_mode", cfg.kl_mode, source);
  read_field(doc, "kappa_max", cfg.kappa_max, source);
  read_field(doc, "eps", cfg.eps, source);
  read_field(doc, "bins", cfg.bins, source);
  read_field(doc, "out", cfg.out, source);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path);
}

data::Dataset load_dataset(const RunConfig& cfg) {
  if (!cfg.dataset.empty()) return data::load_graph_dataset(cfg.dataset);
  return data::generate_sbm(cfg.sbm);
}

double accuracy(const Matrix& probs, const std::vector<int>& labels, const std::vector<std::size_t>& nodes) {
  if (nodes.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i : nodes) {
    const linalg::Vector row = probs.row(static_cast<Eigen::Index>(i)).transpose();
    if (uq::argmax(row) == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(nodes.size());
}

TrainResult train(const RunConfig& cfg, const data::Dataset& dataset) {
  cfg.validate();
  const sheaf::Graph& graph = *dataset.graph;
  const auto mc = cfg.model_config(static_cast<std::size_t>(graph.features().cols()), graph.num_classes());
  nn::Model model(mc, cfg.seed);

  nn::Adam::Options adam_opts;
  adam_opts.lr = cfg.lr;
  adam_opts.weight_decay_regular = cfg.weight_decay_regular;
  adam_opts.weight_decay_sheaf = cfg.weight_decay_sheaf;
  nn::Adam adam(adam_opts);

  std::mt19937_64 train_rng = stream(cfg.seed, 1);
  std::mt19937_64 eval_rng = stream(cfg.seed, 2);
  nn::ForwardOptions fwd;
  fwd.training = true;
  fwd.kl_mode = kl_mode_of(cfg.kl_mode);
  const auto& selection = dataset.splits.valid.empty() ? dataset.splits.train : dataset.splits.valid;

  TrainResult result{model, {}, 0, -1.0};
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double anneal = cfg.anneal ? variational::kl_anneal_weight(epoch, cfg.schedule) : 1.0;
    const double lambda = cfg.kl_weight * anneal;

    ad::Tape tape;
    nn::BoundParameters bound(model.params(), tape);
    double nll = 0.0, kl = 0.0;
    ad::Var loss;
    for (std::size_t k = 0; k < cfg.K; ++k) {
      const nn::ForwardPass pass = model.forward(tape, bound, graph, train_rng, fwd);
      ad::Var nll_k = ad::softmax_nll(pass.logits, graph.labels(), dataset.splits.train);
      nll += nll_k.scalar();
      kl += pass.kl.scalar();
      // lambda = 0 must leave the objective equal to the NLL exactly.
      ad::Var term = lambda == 0.0 ? nll_k : ad::add(nll_k, ad::scale(pass.kl, lambda));
      loss = k == 0 ? term : ad::add(loss, term);
    }
    const double inv_k = 1.0 / static_cast<double>(cfg.K);
    if (cfg.K > 1) loss = ad::scale(loss, inv_k);
    if (!std::isfinite(loss.scalar())) {
      throw NumericalFailure("training: non-finite loss at epoch " + std::to_string(epoch) +
                             " (nll " + format_number(nll * inv_k) + ", kl " + format_number(kl * inv_k) + ")");
    }
    adam.step(model.params(), nn::compute_gradients(tape, loss, bound));

    const Matrix probs = model.predict_proba(graph, eval_rng);
    EpochLog row;
    row.epoch = epoch;
    row.nll = nll * inv_k;
    row.kl = kl * inv_k;
    row.lambda = lambda;
    row.train_acc = accuracy(probs, graph.labels(), dataset.splits.train);
    row.valid_acc = accuracy(probs, graph.labels(), dataset.splits.valid);
    result.log.push_back(row);

    const double score = accuracy(probs, graph.labels(), selection);
    if (score > result.best_valid_acc) {
      result.best_valid_acc = score;
      result.best_epoch = epoch;
      result.model = model;
    } else if (epoch - result.best_epoch >= cfg.patience) {
      break;
    }
  }
  return result;
}

std::vector<double> evaluate_seeds(const nn::Model& model, const data::Dataset& dataset, const RunConfig& cfg) {
  std::vector<double> accs;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    std::mt19937_64 rng = stream(cfg.seed + s, 3);
    const auto ens = uq::ensemble_predict(model, *dataset.graph, cfg.T, rng);
    accs.push_back(accuracy(ens.mean_probs, dataset.graph->labels(), dataset.splits.test));
  }
  return accs;
}

UqReport uncertainty_report(const nn::Model& model, const data::Dataset& dataset, const RunConfig& cfg) {
  const auto& test = dataset.splits.test;
  UqReport report;
  report.nodes.resize(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) report.nodes[i].node = test[i];
  std::vector<int> test_labels;
  for (std::size_t v : test) test_labels.push_back(dataset.graph->labels()[v]);

  const double inv_s = 1.0 / static_cast<double>(cfg.seeds);
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    std::mt19937_64 rng = stream(cfg.seed + s, 3);
    const auto ens = uq::ensemble_predict(model, *dataset.graph, cfg.T, rng);
    std::vector<double> conf;
    std::vector<int> pred;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const std::size_t v = test[i];
      const Matrix stack = ens.node_stack(v);
      auto& row = report.nodes[i];
      row.entropy += inv_s * uq::predictive_entropy(ens.mean_probs.row(static_cast<Eigen::Index>(v)).transpose());
      row.epistemic_var += inv_s * uq::epistemic_variance(stack);
      row.mutual_info += inv_s * uq::mutual_information(stack);
      conf.push_back(ens.confidence[v]);
      pred.push_back(ens.predicted[v]);
    }
    report.ece += inv_s * uq::expected_calibration_error(conf, pred, test_labels, cfg.bins).ece;
  }
  for (const auto& row : report.nodes) {
    report.mean_entropy += row.entropy;
    report.mean_epistemic_var += row.epistemic_var;
    report.mean_mutual_info += row.mutual_info;
  }
  if (!test.empty()) {
    const double inv_n = 1.0 / static_cast<double>(test.size());
    report.mean_entropy *= inv_n;
    report.mean_epistemic_var *= inv_n;
    report.mean_mutual_info *= inv_n;
  }
  return report;
}

std::string model_to_json(const nn::Model& model) {
  const nn::ModelConfig& c = model.config();
  json doc;
  doc["format"] = "bsnn-model";
  doc["version"] = 1;
  doc["config"] = {{"kind", c.learn_sheaf ? sheaf::to_string(c.kind) : "identity"},
                   {"d", c.d},
                   {"channels", c.channels},
                   {"layers", c.layers},
                   {"learner_hidden", c.learner_hidden},
                   {"in_features", c.in_features},
                   {"num_classes", c.num_classes},
                   {"input_dropout", c.input_dropout},
                   {"layer_dropout", c.layer_dropout},
                   {"kappa_max", c.kappa_max},
                   {"degree_eps", c.degree_eps}};
  json params = json::array();
  for (const auto& e : model.params().entries()) {
    std::vector<double> values(e.value.data(), e.value.data() + e.value.size());
    params.push_back({{"name", e.name},
                      {"group", param_group_name(e.group)},
                      {"rows", e.value.rows()},
                      {"cols", e.value.cols()},
                      {"values", values}});
  }
  doc["params"] = std::move(params);
  return doc.dump() + "\n";
}

nn::Model model_from_json(const std::string& text, const std::string& source) {
  try {
    const json doc = json::parse(text);
    if (doc.value("format", "") != "bsnn-model") throw ParseError(source + ": not a model file");
    if (doc.value("version", 0) != 1) throw ParseError(source + ": unsupported model version");
    const json& c = doc.at("config");
    nn::ModelConfig mc;
    const std::string kind = c.at("kind").get<std::string>();
    mc.learn_sheaf = kind != "identity";
    mc.kind = mc.learn_sheaf ? sheaf::map_kind_from_string(kind) : MapKind::special_orthogonal;
    mc.d = c.at("d").get<std::size_t>();
    mc.channels = c.at("channels").get<std::size_t>();
    mc.layers = c.at("layers").get<std::size_t>();
    mc.learner_hidden = c.at("learner_hidden").get<std::size_t>();
    mc.in_features = c.at("in_features").get<std::size_t>();
    mc.num_classes = c.at("num_classes").get<int>();
    mc.input_dropout = c.at("input_dropout").get<double>();
    mc.layer_dropout = c.at("layer_dropout").get<double>();
    mc.kappa_max = c.at("kappa_max").get<double>();
    mc.degree_eps = c.at("degree_eps").get<double>();
    nn::ParameterStore store;
    for (const auto& p : doc.at("params")) {
      const auto rows = p.at("rows").get<Eigen::Index>();
      const auto cols = p.at("cols").get<Eigen::Index>();
      const auto values = p.at("values").get<std::vector<double>>();
      if (static_cast<Eigen::Index>(values.size()) != rows * cols) {
        throw ParseError(source + ": parameter " + p.at("name").get<std::string>() + " has the wrong size");
      }
      Matrix m = Eigen::Map<const Matrix>(values.data(), rows, cols);
      store.add(p.at("name").get<std::string>(), std::move(m),
                p.at("group").get<std::string>() == "sheaf" ? nn::ParamGroup::sheaf : nn::ParamGroup::regular);
    }
    return nn::Model(mc, std::move(store));
  } catch (const json::exception& e) {
    throw ParseError(source + ": malformed model file: " + e.what());
  }
}

void save_model(const nn::Model& model, const std::string& path) { write_file(path, model_to_json(model)); }

nn::Model load_model(const std::string& path) { return model_from_json(read_file(path), path); }

sheaf::CellularSheaf parse_sheaf_spec(const std::string& json_text,
                                      const std::shared_ptr<const sheaf::Graph>& graph,
                                      const std::string& source) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ParseError(source + ": malformed JSON: " + e.what());
  }
  auto fail = [&](const std::string& msg) { return ParseError(source + ": " + msg); };
  if (!doc.is_object()) throw fail("top level must be an object");
  for (const auto& [key, _] : doc.items()) {
    if (key != "kind" && key != "d" && key != "maps") throw fail("unknown field \"" + key + "\"");
  }
  if (!doc.contains("kind") || !doc["kind"].is_string()) throw fail("missing string field \"kind\"");
  if (!doc.contains("d") || !doc["d"].is_number_integer() || doc["d"].get<long long>() < 1) {
    throw fail("field \"d\" must be a positive integer");
  }
  const std::string kind_name = doc["kind"].get<std::string>();
  const auto d = doc["d"].get<std::size_t>();
  if (kind_name == "identity") return sheaf::identity_sheaf(graph, d);

  MapKind kind;
  try {
    kind = sheaf::map_kind_from_string(kind_name);
  } catch (const ConfigError& e) {
    throw fail(e.what());
  }
  if (!doc.contains("maps") || !doc["maps"].is_array()) throw fail("missing array field \"maps\"");
  const json& maps = doc["maps"];
  if (maps.size() != graph->num_edges()) {
    throw fail("\"maps\" has " + std::to_string(maps.size()) + " entries for " +
               std::to_string(graph->num_edges()) + " edges");
  }
  const auto dd = static_cast<Eigen::Index>(d);

  auto read_map = [&](const json& v, const std::string& field) -> sheaf::RestrictionMap {
    try {
      if (kind == MapKind::special_orthogonal && d == 2 && v.is_number()) {
        const double a = v.get<double>();
        Matrix r(2, 2);
        r << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
        return sheaf::RestrictionMap::rotation(rotations::Rotation(r));
      }
      if (!v.is_array()) throw fail(field + " must be an array");
      if (kind == MapKind::diagonal) {
        if (v.size() != d) throw fail(field + " must list " + std::to_string(d) + " diagonal entries");
        linalg::Vector diag(dd);
        for (Eigen::Index i = 0; i < dd; ++i) diag(i) = v[static_cast<std::size_t>(i)].get<double>();
        return sheaf::RestrictionMap::diagonal(diag);
      }
      if (v.size() != d) throw fail(field + " must be a " + std::to_string(d) + "x" + std::to_string(d) + " matrix");
      Matrix m(dd, dd);
      for (Eigen::Index i = 0; i < dd; ++i) {
        const json& row = v[static_cast<std::size_t>(i)];
        if (!row.is_array() || row.size() != d) throw fail(field + " row " + std::to_string(i) + " has the wrong length");
        for (Eigen::Index j = 0; j < dd; ++j) m(i, j) = row[static_cast<std::size_t>(j)].get<double>();
      }
      if (kind == MapKind::general) return sheaf::RestrictionMap::general(std::move(m));
      return sheaf::RestrictionMap::rotation(rotations::Rotation(std::move(m)));
    } catch (const json::exception& e) {
      throw fail(field + ": " + e.what());
    } catch (const ContractViolation& e) {
      throw fail(field + ": " + e.what());
    }
  };

  std::vector<sheaf::CellularSheaf::MapPair> pairs;
  for (std::size_t e = 0; e < maps.size(); ++e) {
    const std::string field = "maps[" + std::to_string(e) + "]";
    const json& entry = maps[e];
    if (!entry.is_object() || !entry.contains("u") || !entry.contains("v")) {
      throw fail(field + " must be an object with \"u\" and \"v\" maps");
    }
    for (const auto& [key, _] : entry.items()) {
      if (key != "u" && key != "v" && key != "edge") throw fail(field + ": unknown field \"" + key + "\"");
    }
    if (entry.contains("edge")) {
      const auto& [u, v] = graph->edges()[e];
      const json& ed = entry["edge"];
      if (!ed.is_array() || ed.size() != 2 || ed[0] != u || ed[1] != v) {
        throw fail(field + ".edge does not match dataset edge (" + std::to_string(u) + "," + std::to_string(v) + ")");
      }
    }
    pairs.emplace_back(read_map(entry["u"], field + ".u"), read_map(entry["v"], field + ".v"));
  }
  try {
    return sheaf::CellularSheaf(graph, std::move(pairs), d);
  } catch (const ContractViolation& e) {
    throw fail(e.what());
  }
}

sheaf::CellularSheaf load_sheaf_spec(const std::string& path, const std::shared_ptr<const sheaf::Graph>& graph) {
  return parse_sheaf_spec(read_file(path), graph, path);
}

std::string format_number(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

std::string train_log_csv(const std::vector<EpochLog>& log) {
  std::ostringstream out;
  out << "epoch,nll,kl,lambda,train_acc,valid_acc\n";
  for (const auto& r : log) {
    out << r.epoch << ',' << format_number(r.nll) << ',' << format_number(r.kl) << ','
        << format_number(r.lambda) << ',' << format_number(r.train_acc) << ',' << format_number(r.valid_acc)
        << '\n';
  }
  return out.str();
}

std::string eval_csv(const std::vector<double>& accs, std::uint64_t first_seed, std::size_t T) {
  std::ostringstream out;
  out << "seed,test_acc\n";
  double mean = 0.0;
  for (std::size_t s = 0; s < accs.size(); ++s) {
    out << first_seed + s << ',' << format_number(accs[s]) << '\n';
    mean += accs[s];
  }
  mean /= static_cast<double>(accs.size());
  double var = 0.0;
  for (double a : accs) var += (a - mean) * (a - mean);
  var /= static_cast<double>(accs.size());
  out << "#summary\n";
  out << "mean_test_acc,std_pop,T,seeds\n";
  out << format_number(mean) << ',' << format_number(std::sqrt(var)) << ',' << T << ',' << accs.size() << '\n';
  return out.str();
}

std::string uq_csv(const UqReport& report, const RunConfig& cfg) {
  std::ostringstream out;
  out << "node_id,entropy,epistemic_var,mutual_info\n";
  for (const auto& r : report.nodes) {
    out << r.node << ',' << format_number(r.entropy) << ',' << format_number(r.epistemic_var) << ','
        << format_number(r.mutual_info) << '\n';
  }
  out << "#summary\n";
  out << "mean_entropy,mean_epistemic_var,mean_mutual_info,ece,bins,T,seeds\n";
  out << format_number(report.mean_entropy) << ',' << format_number(report.mean_epistemic_var) << ','
      << format_number(report.mean_mutual_info) << ',' << format_number(report.ece) << ',' << cfg.bins << ','
      << cfg.T << ',' << cfg.seeds << '\n';
  return out.str();
}

DiffuseReport run_diffusion(const sheaf::CellularSheaf& sh, const DiffuseOptions& options) {
  if (!(options.alpha > 0.0 && options.alpha <= 1.0)) throw ConfigError("diffuse: alpha must lie in (0, 1]");
  const sheaf::Graph& graph = sh.graph();
  const std::size_t n = graph.num_nodes();
  const std::size_t d = sh.stalk_dim();
  const auto dd = static_cast<Eigen::Index>(d);

  Matrix x0;
  if (options.init == "features") {
    const Eigen::Index m = graph.features().cols();
    if (m % dd != 0) {
      throw ConfigError("diffuse: feature dimension " + std::to_string(m) + " is not a multiple of d = " +
                        std::to_string(d) + "; use random init");
    }
    const Eigen::Index f = m / dd;
    x0.resize(static_cast<Eigen::Index>(n) * dd, f);
    for (Eigen::Index u = 0; u < static_cast<Eigen::Index>(n); ++u) {
      x0.block(u * dd, 0, dd, f) = Eigen::Map<const Matrix>(graph.features().row(u).data(), dd, f);
    }
  } else if (options.init == "random") {
    if (options.channels < 1) throw ConfigError("diffuse: channels must be >= 1");
    std::mt19937_64 rng(options.seed);
    x0 = linalg::random_normal(static_cast<Eigen::Index>(n) * dd, static_cast<Eigen::Index>(options.channels), rng);
  } else {
    throw ConfigError("diffuse: init must be \"features\" or \"random\"");
  }

  const sheaf::BlockOperator delta = sheaf::normalized_sheaf_laplacian(sh);
  diffusion::FeatureMatrix x(n, d, x0);
  DiffuseReport report;
  report.update_norms.push_back(0.0);
  report.energies.push_back(diffusion::dirichlet_energy(x, delta));
  for (std::size_t t = 0; t < options.steps; ++t) {
    diffusion::FeatureMatrix next = diffusion::diffusion_step(x, delta, options.alpha);
    const double norm = (next.values - x.values).cwiseAbs().maxCoeff();
    if (!std::isfinite(norm)) throw NumericalFailure("diffuse: non-finite update at step " + std::to_string(t + 1));
    x = std::move(next);
    report.update_norms.push_back(norm);
    report.energies.push_back(diffusion::dirichlet_energy(x, delta));
  }
  const auto limit = diffusion::kernel_projection_limit(diffusion::FeatureMatrix(n, d, x0), delta);
  report.separable = diffusion::linear_separation_check(limit.node_rows(), graph.labels());
  return report;
}

std::string diffuse_csv(const DiffuseReport& report) {
  std::ostringstream out;
  out << "step,update_norm,dirichlet_energy\n";
  for (std::size_t t = 0; t < report.update_norms.size(); ++t) {
    out << t << ',' << format_number(report.update_norms[t]) << ',' << format_number(report.energies[t]) << '\n';
  }
  out << "#separation\n";
  out << "class,separable\n";
  for (std::size_t c = 0; c < report.separable.size(); ++c) {
    out << c << ',' << (report.separable[c] ? "true" : "false") << '\n';
  }
  return out.str();
}

}  // namespace bsnn::app
