// Datasets, the Dirichlet non-IID partitioner, the synthetic benchmark, and
// the pluggable class-conditional generator that stands in for an edge-side
// diffusion model.

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "fbl/rng.hpp"

namespace fbl {

enum class Origin { Real, Synthetic };

struct Sample {
  std::vector<double> features;
  std::size_t label = 0;
  Origin origin = Origin::Real;
};

struct LabeledDataset {
  std::vector<Sample> samples;
  std::size_t num_classes = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }
};

// counts[c] = number of samples with label c.
std::vector<std::size_t> class_counts(const LabeledDataset& dataset, std::size_t num_classes);

// Per class, draws p ~ Dirichlet(alpha * 1_K) and splits that class's samples
// across clients by largest-remainder rounding (ties to the lower client
// index), so the union of the client datasets is exactly the input.
std::vector<LabeledDataset> dirichlet_partition(const LabeledDataset& dataset,
                                                std::size_t num_clients, double alpha,
                                                RandomStream& rng);

struct Benchmark {
  LabeledDataset train;
  LabeledDataset test;
};

// Gaussian blobs (unit variance), one per class, means on a circle scaled so
// adjacent means are class_separation apart. Test set is a disjoint draw of
// one quarter of the train size per class (an 80/20 split overall).
Benchmark make_synthetic_benchmark(std::size_t num_classes, std::size_t n_per_class,
                                   std::size_t dim, double class_separation,
                                   RandomStream& rng);

class ClassGenerator {
 public:
  virtual ~ClassGenerator() = default;
  virtual std::vector<Sample> generate(std::size_t label, std::size_t count,
                                       RandomStream& rng) const = 0;
};

// Draws Normal(mean_c + shift, var_c) per coordinate. The shift models the
// synthetic-vs-real domain gap the alignment embeddings must absorb.
class GaussianClassGenerator : public ClassGenerator {
 public:
  GaussianClassGenerator(std::vector<std::vector<double>> means,
                         std::vector<std::vector<double>> variances,
                         std::vector<double> shift);

  std::vector<Sample> generate(std::size_t label, std::size_t count,
                               RandomStream& rng) const override;

  const std::vector<double>& mean(std::size_t label) const { return means_.at(label); }
  const std::vector<double>& shift() const { return shift_; }

 private:
  std::vector<std::vector<double>> means_;
  std::vector<std::vector<double>> variances_;
  std::vector<double> shift_;
};

// Per-class sample mean and variance from `dataset`; classes with fewer than
// two samples fall back to unit variance. Every class must be present.
GaussianClassGenerator fit_gaussian_generator(const LabeledDataset& dataset,
                                              const std::vector<double>& domain_shift);

// Mean over classes and coordinates of the within-class standard deviation.
// Drives the default domain shift and augmentation strength.
double mean_intra_class_std(const LabeledDataset& dataset);

// Gaussian jitter on a real sample; label and origin preserved. Calling this
// on a synthetic sample is a contract violation.
Sample augment_real(const Sample& sample, double sigma, RandomStream& rng);

// Columnar CSV: feature_0,...,feature_{d-1},label,origin
void write_dataset_csv(const LabeledDataset& dataset, const std::string& path);
LabeledDataset read_dataset_csv(const std::string& path);

// Deterministic per-class 80/20 split (file order), used for csv datasets.
Benchmark split_train_test(const LabeledDataset& dataset);

}  // namespace fbl
