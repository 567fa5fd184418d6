// A small dense classifier split into a feature extractor F and a linear
// classification head H, with hand-derived gradients and momentum SGD.
//
// F is a chain of dense layers with tanh between layers and no activation on
// the feature output; H is one dense layer feature_dim -> num_classes.

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fbl/rng.hpp"

namespace fbl {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct DenseLayer {
  Matrix w;
  std::vector<double> b;
};

using Logits = std::vector<double>;

struct Classifier {
  std::vector<DenseLayer> feature_layers;  // at least one
  DenseLayer head;

  std::size_t input_dim() const { return feature_layers.front().w.cols; }
  std::size_t feature_dim() const { return feature_layers.back().w.rows; }
  std::size_t num_classes() const { return head.w.rows; }

  std::size_t param_count() const;
  std::vector<double> to_flat() const;
  void from_flat(std::span<const double> flat);

  // Throws if any parameter is non-finite.
  void check_finite() const;
};

// Gradients plus the persistent momentum accumulator, shape-congruent with
// the classifier they were made for.
struct GradientBuffer {
  Classifier grad;
  Classifier velocity;
};

// dims: hidden sizes ending in feature_dim, e.g. {32, 16}. Weights are
// uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
Classifier make_classifier(std::size_t input_dim, const std::vector<std::size_t>& dims,
                           std::size_t num_classes, RandomStream& rng);

GradientBuffer make_gradient_buffer(const Classifier& like);

std::vector<double> forward_features(const Classifier& model, std::span<const double> x);
Logits forward_head(const Classifier& model, std::span<const double> feat);

// -log softmax(logits)[label]; numerically stabilised.
double cross_entropy(const Logits& logits, std::size_t label);

std::vector<double> softmax(const Logits& logits);

// One batch element: input, label, and an optional feature-space offset added
// after F (null when absent).
struct BatchItem {
  const std::vector<double>* x = nullptr;
  std::size_t label = 0;
  const std::vector<double>* offset = nullptr;
};

// Gradient of the mean batch cross-entropy w.r.t. all parameters; fills
// buffer.grad (velocity untouched) and, when offset_grads is non-null, the
// mean-loss gradient w.r.t. each supplied offset (empty vector where the item
// had none). Returns the mean loss.
double backward(const Classifier& model, std::span<const BatchItem> batch,
                GradientBuffer& buffer,
                std::vector<std::vector<double>>* offset_grads = nullptr);

// v <- momentum*v + grad + weight_decay*w;  w <- w - lr*v
void sgd_step(Classifier& model, GradientBuffer& buffer, double lr, double momentum,
              double weight_decay);

// Same update rule for a single parameter vector (used for embeddings).
void sgd_step_vector(std::vector<double>& param, std::vector<double>& velocity,
                     const std::vector<double>& grad, double lr, double momentum,
                     double weight_decay);

}  // namespace fbl
