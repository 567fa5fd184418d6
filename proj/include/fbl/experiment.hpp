// Experiment harness: run specification (config file + flag overrides),
// dataset loading, single runs, and (method x lambda x seed) sweeps with
// Table-style mean(std) reporting.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fbl/config.hpp"
#include "fbl/data.hpp"
#include "fbl/federation.hpp"

namespace fbl {

struct DatasetSpec {
  enum class Kind { Synthetic, Csv };
  Kind kind = Kind::Synthetic;
  std::size_t classes = 5;
  std::size_t per_class = 200;
  std::size_t dim = 8;
  double class_separation = 3.0;
  std::string csv_path;
};

struct RunSpec {
  FederationConfig fed;
  std::vector<Method> methods = {Method::FBL};
  std::vector<double> lambdas = {0.0};
  DatasetSpec dataset;
  std::string out_dir = "out";
  std::uint64_t seed_base = 1;
  std::size_t num_seeds = 1;
  bool dump_data = false;

  std::vector<std::uint64_t> seeds() const;
  void validate() const;
};

// Applies one `key = value` setting (file keys and flag names coincide, with
// dashes mapped to underscores). Unknown keys raise an error listing every
// valid key; bad values raise a domain error naming the constraint.
void apply_key(RunSpec& spec, const std::string& key, const std::string& value);

// Flat key-value file, one `key = value` per line, '#' comments.
void apply_config_file(RunSpec& spec, const std::string& path);

// Full CLI parse: --config file first, then flag overrides. Throws on any
// parse or validation error; prints help and exits for --help.
RunSpec parse_run_spec(const std::vector<std::string>& args);

Benchmark load_benchmark(const DatasetSpec& spec, std::uint64_t seed);

struct SweepRow {
  Method method = Method::FBL;
  double lambda = 0.0;
  std::size_t num_seeds = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::string cell;  // "0.60(0.14)"
  std::vector<double> accuracies;
};

struct SweepSummary {
  std::vector<SweepRow> rows;
};

// Runs every (method x lambda) cell over all seeds, writing per-run
// metrics.csv and summary.json under out_dir plus a sweep_summary.csv.
// Aborts (with the per-run log path in the message) if any run fails.
SweepSummary run_sweep(const RunSpec& spec);

double sample_std(const std::vector<double>& values);
std::string format_cell(double mean, double stddev);

std::string run_dir_name(Method method, double lambda, std::uint64_t seed);

}  // namespace fbl
