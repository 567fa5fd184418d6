#include "fbl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace fbl {

std::vector<std::size_t> class_counts(const LabeledDataset& dataset, std::size_t num_classes) {
  std::vector<std::size_t> counts(num_classes, 0);
  for (const Sample& s : dataset.samples) {
    if (s.label >= num_classes) throw std::domain_error("class_counts: label out of range");
    ++counts[s.label];
  }
  return counts;
}

std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& dataset,
                                                std::size_t num_clients, double alpha,
                                                RandomStream& rng) {
  if (num_clients == 0) throw std::domain_error("dirichlet_partition: need at least one client");
  if (alpha <= 0.0) throw std::domain_error("dirichlet_partition: alpha must be positive");

  std::vector<LabeledDataset> clients(num_clients);
  for (auto& c : clients) c.num_classes = dataset.num_classes;

  // Indices of each class, in dataset order.
  std::vector<std::vector<std::size_t>> by_class(dataset.num_classes);
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    by_class[dataset.samples[i].label].push_back(i);
  }

  for (std::size_t c = 0; c < dataset.num_classes; ++c) {
    const std::size_t n = by_class[c].size();
    if (n == 0) continue;

    std::vector<double> p(num_clients);
    double sum = 0.0;
    for (double& v : p) {
      v = rng.gamma(alpha);
      sum += v;
    }
    if (sum <= 0.0) {
      std::fill(p.begin(), p.end(), 1.0 / static_cast<double>(num_clients));
    } else {
      for (double& v : p) v /= sum;
    }

    // Largest-remainder rounding: floor first, then hand out the remainder
    // by descending fractional part, ties to the lower client index.
    std::vector<std::size_t> take(num_clients);
    std::vector<double> frac(num_clients);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      const double exact = p[k] * static_cast<double>(n);
      take[k] = static_cast<std::size_t>(std::floor(exact));
      frac[k] = exact - static_cast<double>(take[k]);
      assigned += take[k];
    }
    std::vector<std::size_t> order(num_clients);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&frac](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++take[order[i]];

    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      for (std::size_t j = 0; j < take[k]; ++j) {
        clients[k].samples.push_back(dataset.samples[by_class[c][pos++]]);
      }
    }
  }
  return clients;
}

Benchmark make_synthetic_benchmark(std::size_t num_classes, std::size_t n_per_class,
                                   std::size_t dim, double class_separation,
                                   RandomStream& rng) {
  if (num_classes < 2) throw std::domain_error("benchmark: need at least 2 classes");
  if (dim < 2) throw std::domain_error("benchmark: need dim >= 2");

  // Means on a circle in the first two coordinates; adjacent chord length
  // equals class_separation.
  const double radius =
      class_separation / (2.0 * std::sin(M_PI / static_cast<double>(num_classes)));
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double angle = 2.0 * M_PI * static_cast<double>(c) / static_cast<double>(num_classes);
    means[c][0] = radius * std::cos(angle);
    means[c][1] = radius * std::sin(angle);
  }

  auto draw = [&](std::size_t label) {
    Sample s;
    s.label = label;
    s.origin = Origin::Real;
    s.features.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) s.features[d] = means[label][d] + rng.normal();
    return s;
  };

  Benchmark b;
  b.train.num_classes = num_classes;
  b.test.num_classes = num_classes;
  const std::size_t n_test = (n_per_class + 3) / 4;  // 80/20 overall
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < n_per_class; ++i) b.train.samples.push_back(draw(c));
    for (std::size_t i = 0; i < n_test; ++i) b.test.samples.push_back(draw(c));
  }
  return b;
}

GaussianClassGenerator::GaussianClassGenerator(std::vector<std::vector<double>> means,
                                               std::vector<std::vector<double>> variances,
                                               std::vector<double> shift)
    : means_(std::move(means)), variances_(std::move(variances)), shift_(std::move(shift)) {}

std::vector<Sample> GaussianClassGenerator::generate(std::size_t label, std::size_t count,
                                                     RandomStream& rng) const {
  if (label >= means_.size()) throw std::domain_error("generate: label out of range");
  const auto& mean = means_[label];
  const auto& var = variances_[label];
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Sample s;
    s.label = label;
    s.origin = Origin::Synthetic;
    s.features.resize(mean.size());
    for (std::size_t d = 0; d < mean.size(); ++d) {
      s.features[d] = mean[d] + shift_[d] + std::sqrt(var[d]) * rng.normal();
    }
    out.push_back(std::move(s));
  }
  return out;
}

GaussianClassGenerator fit_gaussian_generator(const LabeledDataset& dataset,
                                              const std::vector<double>& domain_shift) {
  const std::size_t num_classes = dataset.num_classes;
  const std::size_t dim = dataset.dim();
  if (domain_shift.size() != dim) {
    throw std::invalid_argument("fit_gaussian_generator: shift dim mismatch");
  }
  std::vector<std::vector<double>> means(num_classes, std::vector<double>(dim, 0.0));
  std::vector<std::vector<double>> vars(num_classes, std::vector<double>(dim, 1.0));
  const std::vector<std::size_t> counts = class_counts(dataset, num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] == 0) {
      throw std::domain_error("fit_gaussian_generator: class " + std::to_string(c) +
                              " absent from fitting data");
    }
  }
  for (const Sample& s : dataset.samples) {
    for (std::size_t d = 0; d < dim; ++d) means[s.label][d] += s.features[d];
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    for (std::size_t d = 0; d < dim; ++d) means[c][d] /= static_cast<double>(counts[c]);
  }
  std::vector<std::vector<double>> sq(num_classes, std::vector<double>(dim, 0.0));
  for (const Sample& s : dataset.samples) {
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = s.features[d] - means[s.label][d];
      sq[s.label][d] += diff * diff;
    }
  }
  for (std::size_t c = 0; c < num_classes; ++c) {
    if (counts[c] < 2) continue;  // keep the unit-variance fallback
    for (std::size_t d = 0; d < dim; ++d) {
      vars[c][d] = sq[c][d] / static_cast<double>(counts[c] - 1);
    }
  }
  return GaussianClassGenerator(std::move(means), std::move(vars), domain_shift);
}

double mean_intra_class_std(const LabeledDataset& dataset) {
  const std::size_t dim = dataset.dim();
  const std::vector<std::size_t> counts = class_counts(dataset, dataset.num_classes);
  std::vector<std::vector<double>> means(dataset.num_classes, std::vector<double>(dim, 0.0));
  for (const Sample& s : dataset.samples) {
    for (std::size_t d = 0; d < dim; ++d) means[s.label][d] += s.features[d];
  }
  for (std::size_t c = 0; c < dataset.num_classes; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t d = 0; d < dim; ++d) means[c][d] /= static_cast<double>(counts[c]);
  }
  double acc = 0.0;
  std::size_t terms = 0;
  for (std::size_t c = 0; c < dataset.num_classes; ++c) {
    if (counts[c] < 2) continue;
    std::vector<double> sq(dim, 0.0);
    for (const Sample& s : dataset.samples) {
      if (s.label != c) continue;
      for (std::size_t d = 0; d < dim; ++d) {
        const double diff = s.features[d] - means[c][d];
        sq[d] += diff * diff;
      }
    }
    for (std::size_t d = 0; d < dim; ++d) {
      acc += std::sqrt(sq[d] / static_cast<double>(counts[c] - 1));
      ++terms;
    }
  }
  return terms == 0 ? 1.0 : acc / static_cast<double>(terms);
}

Sample augment_real(const Sample& sample, double sigma, RandomStream& rng) {
  if (sample.origin != Origin::Real) {
    throw std::logic_error("augment_real: called on a synthetic sample");
  }
  Sample out = sample;
  if (sigma > 0.0) {
    for (double& v : out.features) v += sigma * rng.normal();
  }
  return out;
}

void write_dataset_csv(const LabeledDataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  const std::size_t dim = dataset.dim();
  for (std::size_t d = 0; d < dim; ++d) out << "feature_" << d << ",";
  out << "label,origin\n";
  char buf[40];
  for (const Sample& s : dataset.samples) {
    for (double v : s.features) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf << ",";
    }
    out << s.label << "," << (s.origin == Origin::Real ? "real" : "synthetic") << "\n";
  }
}

LabeledDataset read_dataset_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset csv: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty dataset csv: " + path);

  LabeledDataset ds;
  std::size_t max_label = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() < 3) throw std::runtime_error("malformed csv row: " + line);
    Sample s;
    for (std::size_t i = 0; i + 2 < cells.size(); ++i) {
      s.features.push_back(std::stod(cells[i]));
    }
    s.label = static_cast<std::size_t>(std::stoul(cells[cells.size() - 2]));
    const std::string& org = cells.back();
    if (org == "real") {
      s.origin = Origin::Real;
    } else if (org == "synthetic") {
      s.origin = Origin::Synthetic;
    } else {
      throw std::runtime_error("malformed origin value: " + org);
    }
    max_label = std::max(max_label, s.label);
    ds.samples.push_back(std::move(s));
  }
  ds.num_classes = ds.samples.empty() ? 0 : max_label + 1;
  return ds;
}

Benchmark split_train_test(const LabeledDataset& dataset) {
  Benchmark b;
  b.train.num_classes = dataset.num_classes;
  b.test.num_classes = dataset.num_classes;
  std::vector<std::size_t> seen(dataset.num_classes, 0);
  const std::vector<std::size_t> totals = class_counts(dataset, dataset.num_classes);
  for (const Sample& s : dataset.samples) {
    const std::size_t train_quota = (totals[s.label] * 4) / 5;
    if (seen[s.label] < train_quota) {
      b.train.samples.push_back(s);
    } else {
      b.test.samples.push_back(s);
    }
    ++seen[s.label];
  }
  return b;
}

}  // namespace fbl
