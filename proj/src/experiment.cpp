#include "fbl/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;

namespace fbl {

namespace {

const std::vector<std::string>& valid_keys() {
  static const std::vector<std::string> keys = {
      "aggregate_all_clients", "alpha", "augment_sigma", "batch", "class_sep", "classes",
      "clients", "dataset", "dim", "domain_shift", "drop_count", "dump_data", "gamma",
      "hidden", "incapable_frac", "lambda", "local_epochs", "local_iters", "lr", "method",
      "momentum", "mu_prox", "no_alignment", "no_drop", "out", "per_class", "random_sampling",
      "regenerate_fill_every_m", "replay_period", "rerank_every_round",
      "reset_embeddings_each_round", "rounds", "seed", "seeds", "selection_fraction",
      "threads", "weight_by_samples", "weight_decay"};
  return keys;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::domain_error(key + ": '" + value + "' is not a number");
  }
}

std::size_t parse_size(const std::string& key, const std::string& value) {
  const double v = parse_double(key, value);
  if (v < 0.0 || v != std::floor(v)) {
    throw std::domain_error(key + ": '" + value + "' is not a nonnegative integer");
  }
  return static_cast<std::size_t>(v);
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw std::domain_error(key + ": '" + value + "' is not a boolean");
}

std::vector<std::string> split_commas(const std::string& value) {
  std::vector<std::string> parts;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(item);
  return parts;
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
}

nlohmann::json config_json(const FederationConfig& c) {
  nlohmann::json j;
  j["clients"] = c.clients;
  j["rounds"] = c.rounds;
  j["local_iters"] = c.local_iters;
  j["local_epochs"] = c.local_epochs;
  j["selection_fraction"] = c.selection_fraction;
  j["lr"] = c.lr;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["batch"] = c.batch_size;
  j["drop_count"] = c.drop_count;
  j["replay_period"] = c.replay_period;
  j["gamma"] = c.replay_retain;
  j["alpha"] = c.dirichlet_alpha;
  j["lambda"] = c.lambda;
  j["incapable_frac"] = c.incapable_fraction;
  j["method"] = to_string(c.method);
  j["mu_prox"] = c.mu_prox;
  j["seed"] = c.seed;
  j["hidden"] = c.hidden_dims;
  j["threads"] = c.threads;
  j["augment_sigma"] = c.augment_sigma;
  j["domain_shift"] = c.domain_shift;
  j["no_alignment"] = c.no_alignment;
  j["no_drop"] = c.no_drop;
  j["random_sampling"] = c.random_sampling;
  j["weight_by_samples"] = c.weight_by_samples;
  j["aggregate_all_clients"] = c.aggregate_all_clients;
  j["rerank_every_round"] = c.rerank_every_round;
  j["regenerate_fill_every_m"] = c.regenerate_fill_every_m;
  j["reset_embeddings_each_round"] = c.reset_embeddings_each_round;
  return j;
}

nlohmann::json dataset_json(const DatasetSpec& d) {
  nlohmann::json j;
  j["kind"] = d.kind == DatasetSpec::Kind::Synthetic ? "synthetic" : "csv";
  if (d.kind == DatasetSpec::Kind::Synthetic) {
    j["classes"] = d.classes;
    j["per_class"] = d.per_class;
    j["dim"] = d.dim;
    j["class_sep"] = d.class_separation;
  } else {
    j["path"] = d.csv_path;
  }
  return j;
}

}  // namespace

std::vector<std::uint64_t> RunSpec::seeds() const {
  std::vector<std::uint64_t> out;
  for (std::size_t i = 0; i < num_seeds; ++i) out.push_back(seed_base + i);
  return out;
}

void RunSpec::validate() const {
  if (num_seeds == 0) throw std::domain_error("seeds must be >= 1");
  if (methods.empty()) throw std::domain_error("method list must be nonempty");
  if (lambdas.empty()) throw std::domain_error("lambda list must be nonempty");
  if (out_dir.empty()) throw std::domain_error("out must be a directory path");
  if (dataset.kind == DatasetSpec::Kind::Synthetic) {
    if (dataset.classes < 2) throw std::domain_error("classes must be >= 2");
    if (dataset.dim < 2) throw std::domain_error("dim must be >= 2");
    if (dataset.per_class == 0) throw std::domain_error("per_class must be >= 1");
    if (dataset.class_separation <= 0.0) throw std::domain_error("class_sep must be positive");
  } else if (dataset.csv_path.empty()) {
    throw std::domain_error("dataset csv path must be nonempty");
  }
  FederationConfig probe = fed;
  for (double lam : lambdas) {
    probe.lambda = lam;
    for (Method m : methods) {
      probe.method = m;
      probe.validate();
    }
  }
}

void apply_key(RunSpec& spec, const std::string& key, const std::string& value) {
  if (key == "method") {
    spec.methods.clear();
    for (const std::string& part : split_commas(value)) {
      spec.methods.push_back(method_from_string(trim(part)));
    }
  } else if (key == "lambda") {
    spec.lambdas.clear();
    for (const std::string& part : split_commas(value)) {
      spec.lambdas.push_back(parse_double(key, trim(part)));
    }
  } else if (key == "clients") {
    spec.fed.clients = parse_size(key, value);
  } else if (key == "rounds") {
    spec.fed.rounds = parse_size(key, value);
  } else if (key == "local_iters") {
    spec.fed.local_iters = parse_size(key, value);
  } else if (key == "local_epochs") {
    spec.fed.local_epochs = parse_size(key, value);
  } else if (key == "selection_fraction") {
    spec.fed.selection_fraction = parse_double(key, value);
  } else if (key == "lr") {
    spec.fed.lr = parse_double(key, value);
  } else if (key == "momentum") {
    spec.fed.momentum = parse_double(key, value);
  } else if (key == "weight_decay") {
    spec.fed.weight_decay = parse_double(key, value);
  } else if (key == "batch") {
    spec.fed.batch_size = parse_size(key, value);
  } else if (key == "drop_count") {
    spec.fed.drop_count = parse_size(key, value);
  } else if (key == "replay_period") {
    spec.fed.replay_period = parse_size(key, value);
  } else if (key == "gamma") {
    spec.fed.replay_retain = parse_double(key, value);
  } else if (key == "alpha") {
    spec.fed.dirichlet_alpha = parse_double(key, value);
  } else if (key == "incapable_frac") {
    spec.fed.incapable_fraction = parse_double(key, value);
  } else if (key == "mu_prox") {
    spec.fed.mu_prox = parse_double(key, value);
  } else if (key == "seed") {
    spec.seed_base = static_cast<std::uint64_t>(parse_size(key, value));
  } else if (key == "seeds") {
    spec.num_seeds = parse_size(key, value);
  } else if (key == "hidden") {
    spec.fed.hidden_dims.clear();
    for (const std::string& part : split_commas(value)) {
      spec.fed.hidden_dims.push_back(parse_size(key, trim(part)));
    }
  } else if (key == "threads") {
    spec.fed.threads = parse_size(key, value);
  } else if (key == "augment_sigma") {
    spec.fed.augment_sigma = parse_double(key, value);
  } else if (key == "domain_shift") {
    spec.fed.domain_shift = parse_double(key, value);
  } else if (key == "out") {
    spec.out_dir = value;
  } else if (key == "dataset") {
    if (value == "synthetic") {
      spec.dataset.kind = DatasetSpec::Kind::Synthetic;
    } else if (value.rfind("csv:", 0) == 0) {
      spec.dataset.kind = DatasetSpec::Kind::Csv;
      spec.dataset.csv_path = value.substr(4);
    } else {
      throw std::domain_error("dataset: expected 'synthetic' or 'csv:PATH', got '" + value +
                              "'");
    }
  } else if (key == "classes") {
    spec.dataset.classes = parse_size(key, value);
  } else if (key == "per_class") {
    spec.dataset.per_class = parse_size(key, value);
  } else if (key == "dim") {
    spec.dataset.dim = parse_size(key, value);
  } else if (key == "class_sep") {
    spec.dataset.class_separation = parse_double(key, value);
  } else if (key == "dump_data") {
    spec.dump_data = parse_bool(key, value);
  } else if (key == "no_alignment") {
    spec.fed.no_alignment = parse_bool(key, value);
  } else if (key == "no_drop") {
    spec.fed.no_drop = parse_bool(key, value);
  } else if (key == "random_sampling") {
    spec.fed.random_sampling = parse_bool(key, value);
  } else if (key == "weight_by_samples") {
    spec.fed.weight_by_samples = parse_bool(key, value);
  } else if (key == "aggregate_all_clients") {
    spec.fed.aggregate_all_clients = parse_bool(key, value);
  } else if (key == "rerank_every_round") {
    spec.fed.rerank_every_round = parse_bool(key, value);
  } else if (key == "regenerate_fill_every_m") {
    spec.fed.regenerate_fill_every_m = parse_bool(key, value);
  } else if (key == "reset_embeddings_each_round") {
    spec.fed.reset_embeddings_each_round = parse_bool(key, value);
  } else {
    std::string msg = "unknown key '" + key + "'; valid keys:";
    for (const std::string& k : valid_keys()) msg += " " + k;
    throw std::domain_error(msg);
  }
}

void apply_config_file(RunSpec& spec, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected 'key = value'");
    }
    apply_key(spec, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunSpec parse_run_spec(const std::vector<std::string>& args) {
  CLI::App app{"fbl: federated balanced learning simulator"};
  app.get_formatter()->column_width(34);

  std::string config_path;
  app.add_option("--config", config_path, "flat key=value config file")
      ->multi_option_policy(CLI::MultiOptionPolicy::Throw);

  // Valued flags share the key=value pipeline with the config file; flags
  // always win over file values.
  std::vector<std::pair<std::string, std::string>> flag_values;
  const std::vector<std::pair<std::string, std::string>> valued = {
      {"method", "fbl|fedavg|fedprox (comma list sweeps)"},
      {"clients", "number of clients K"},
      {"rounds", "global rounds T"},
      {"alpha", "Dirichlet concentration"},
      {"lambda", "unconstrained-client fraction (comma list sweeps)"},
      {"incapable-frac", "fraction of clients that cannot generate"},
      {"seed", "base seed"},
      {"seeds", "number of consecutive seeds"},
      {"gamma", "replay retain ratio"},
      {"replay-period", "rounds between replay refreshes (m)"},
      {"drop-count", "embeddings dropped per batch"},
      {"out", "output directory"},
      {"dataset", "synthetic or csv:PATH"},
      {"local-iters", "mini-batch steps per round (E)"},
      {"local-epochs", "full passes per round (overrides local-iters)"},
      {"selection-fraction", "fraction of clients per round"},
      {"lr", "learning rate"},
      {"momentum", "SGD momentum"},
      {"weight-decay", "SGD weight decay"},
      {"batch", "mini-batch size"},
      {"mu-prox", "FedProx proximal coefficient"},
      {"hidden", "hidden dims, e.g. 32,16"},
      {"threads", "client-parallelism degree"},
      {"classes", "synthetic benchmark classes"},
      {"dim", "synthetic benchmark dimension"},
      {"per-class", "synthetic train samples per class"},
      {"class-sep", "synthetic class separation"},
      {"augment-sigma", "real-data jitter sigma (<=0: auto)"},
      {"domain-shift", "generator domain shift (<=0: auto)"},
  };
  // std::map nodes are address-stable, so CLI11 can bind to the values.
  std::map<std::string, std::string> storage;
  for (const auto& [name, help] : valued) {
    app.add_option("--" + name, storage[name], help)
        ->multi_option_policy(CLI::MultiOptionPolicy::Throw);
  }

  const std::vector<std::pair<std::string, std::string>> toggles = {
      {"no-alignment", "disable alignment embeddings"},
      {"no-drop", "disable the knowledge drop regularizer"},
      {"random-sampling", "random instead of loss-based sampling"},
      {"weight-by-samples", "sample-count-weighted aggregation"},
      {"aggregate-all-clients", "average stale models of unselected clients"},
      {"rerank-every-round", "refresh sampled sets every round"},
      {"regenerate-fill-every-m", "regenerate synthetic fill at replay rounds"},
      {"reset-embeddings-each-round", "reset embeddings when a round starts"},
      {"dump-data", "write train/test CSVs next to the metrics"},
  };
  std::map<std::string, bool> toggle_set;
  for (const auto& [name, help] : toggles) {
    toggle_set[name] = false;
    app.add_flag("--" + name, toggle_set[name], help);
  }

  RunSpec spec;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());  // CLI11 convention
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help() << std::endl;
    std::exit(0);
  } catch (const CLI::ParseError& e) {
    throw std::domain_error(std::string("argument error: ") + e.what());
  }

  if (!config_path.empty()) apply_config_file(spec, config_path);

  auto underscored = [](std::string s) {
    std::replace(s.begin(), s.end(), '-', '_');
    return s;
  };
  for (const auto& [name, value] : storage) {
    if (app.get_option("--" + name)->count() > 0) {
      apply_key(spec, underscored(name), value);
    }
  }
  for (const auto& [name, set] : toggle_set) {
    if (set) apply_key(spec, underscored(name), "true");
  }

  spec.validate();
  return spec;
}

Benchmark load_benchmark(const DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == DatasetSpec::Kind::Synthetic) {
    RandomStream rng(seed, 0, 0, StreamPurpose::DatasetGen);
    return make_synthetic_benchmark(spec.classes, spec.per_class, spec.dim,
                                    spec.class_separation, rng);
  }
  return split_train_test(read_dataset_csv(spec.csv_path));
}

double sample_std(const std::vector<double>& values) {
  if (values.size() < 2) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return std::sqrt(sq / static_cast<double>(values.size() - 1));
}

std::string format_cell(double mean, double stddev) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f(%.2f)", mean, stddev);
  return buf;
}

std::string run_dir_name(Method method, double lambda, std::uint64_t seed) {
  char buf[80];
  std::snprintf(buf, sizeof(buf), "%s_lam%.2f_seed%llu", to_string(method).c_str(), lambda,
                static_cast<unsigned long long>(seed));
  return buf;
}

namespace {

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
}

}  // namespace

SweepSummary run_sweep(const RunSpec& spec) {
  spec.validate();
  fs::create_directories(spec.out_dir);

  SweepSummary summary;
  for (Method method : spec.methods) {
    for (double lambda : spec.lambdas) {
      SweepRow row;
      row.method = method;
      row.lambda = lambda;
      for (std::uint64_t seed : spec.seeds()) {
        FederationConfig cfg = spec.fed;
        cfg.method = method;
        cfg.lambda = lambda;
        cfg.seed = seed;

        const fs::path run_dir = fs::path(spec.out_dir) / run_dir_name(method, lambda, seed);
        fs::create_directories(run_dir);
        FederationResult result;
        Benchmark bench;
        try {
          bench = load_benchmark(spec.dataset, seed);
          // Rows are appended as rounds finish so partial runs leave a trace.
          std::ofstream metrics(run_dir / "metrics.csv");
          metrics << metrics_csv_header() << std::flush;
          result = run_federation(cfg, bench.train, bench.test,
                                  [&metrics](const RoundMetrics& m) {
                                    metrics << metrics_csv_row(m) << std::flush;
                                  });
        } catch (const std::exception& e) {
          const fs::path log = run_dir / "error.log";
          write_text(log, std::string(e.what()) + "\n");
          throw std::runtime_error("run " + run_dir.string() + " failed (" + e.what() +
                                   "); log: " + log.string());
        }

        if (spec.dump_data) {
          write_dataset_csv(bench.train, (run_dir / "train.csv").string());
          write_dataset_csv(bench.test, (run_dir / "test.csv").string());
        }

        nlohmann::json j;
        j["config"] = config_json(result.effective);
        j["dataset"] = dataset_json(spec.dataset);
        j["rounds_run"] = result.rounds.size();
        j["final_accuracy"] = result.final_accuracy;
        j["best_accuracy"] = result.best_accuracy;
        if (!result.rounds.empty() && std::isfinite(result.rounds.front().alignment_gap)) {
          j["alignment_gap_first"] = result.rounds.front().alignment_gap;
          j["alignment_gap_last"] = result.rounds.back().alignment_gap;
        }
        if (!result.rounds.empty() && std::isfinite(result.rounds.back().embedding_norm)) {
          j["embedding_norm_last"] = result.rounds.back().embedding_norm;
        }
        std::vector<std::string> mode_names;
        for (ComputeMode m : result.modes) {
          mode_names.push_back(m == ComputeMode::Constrained      ? "constrained"
                               : m == ComputeMode::Unconstrained  ? "unconstrained"
                                                                  : "incapable");
        }
        j["modes"] = mode_names;
        write_text(run_dir / "summary.json", j.dump(2) + "\n");

        row.accuracies.push_back(result.final_accuracy);
      }
      row.num_seeds = row.accuracies.size();
      double mean = 0.0;
      for (double a : row.accuracies) mean += a;
      row.mean_accuracy = mean / static_cast<double>(row.accuracies.size());
      row.std_accuracy = sample_std(row.accuracies);
      row.cell = format_cell(row.mean_accuracy, row.std_accuracy);
      summary.rows.push_back(std::move(row));
    }
  }

  std::ostringstream csv;
  csv << "method,lambda,seeds,mean_accuracy,std_accuracy,cell\n";
  char buf[160];
  for (const SweepRow& row : summary.rows) {
    std::snprintf(buf, sizeof(buf), "%s,%.2f,%zu,%.6f,%.6f,%s\n",
                  to_string(row.method).c_str(), row.lambda, row.num_seeds,
                  row.mean_accuracy, row.std_accuracy, row.cell.c_str());
    csv << buf;
  }
  write_text(fs::path(spec.out_dir) / "sweep_summary.csv", csv.str());
  return summary;
}

}  // namespace fbl
