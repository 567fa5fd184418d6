#include "fbl/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace fbl {

namespace {

void matvec(const Matrix& w, const std::vector<double>& b, std::span<const double> x,
            std::vector<double>& out) {
  out.assign(w.rows, 0.0);
  for (std::size_t r = 0; r < w.rows; ++r) {
    double acc = b[r];
    const double* row = &w.data[r * w.cols];
    for (std::size_t c = 0; c < w.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
}

void check_dim(std::size_t got, std::size_t want, const char* what) {
  if (got != want) {
    throw std::invalid_argument(std::string(what) + ": expected dim " +
                                std::to_string(want) + ", got " + std::to_string(got));
  }
}

template <typename Fn>
void for_each_layer(Classifier& m, Fn&& fn) {
  for (auto& layer : m.feature_layers) fn(layer);
  fn(m.head);
}

template <typename Fn>
void for_each_layer(const Classifier& m, Fn&& fn) {
  for (const auto& layer : m.feature_layers) fn(layer);
  fn(m.head);
}

}  // namespace

std::size_t Classifier::param_count() const {
  std::size_t n = 0;
  for_each_layer(*this, [&n](const DenseLayer& l) { n += l.w.data.size() + l.b.size(); });
  return n;
}

std::vector<double> Classifier::to_flat() const {
  std::vector<double> flat;
  flat.reserve(param_count());
  for_each_layer(*this, [&flat](const DenseLayer& l) {
    flat.insert(flat.end(), l.w.data.begin(), l.w.data.end());
    flat.insert(flat.end(), l.b.begin(), l.b.end());
  });
  return flat;
}

void Classifier::from_flat(std::span<const double> flat) {
  if (flat.size() != param_count()) {
    throw std::invalid_argument("from_flat: size mismatch");
  }
  std::size_t pos = 0;
  for_each_layer(*this, [&flat, &pos](DenseLayer& l) {
    std::copy_n(flat.begin() + pos, l.w.data.size(), l.w.data.begin());
    pos += l.w.data.size();
    std::copy_n(flat.begin() + pos, l.b.size(), l.b.begin());
    pos += l.b.size();
  });
}

void Classifier::check_finite() const {
  for_each_layer(*this, [](const DenseLayer& l) {
    for (double v : l.w.data) {
      if (!std::isfinite(v)) throw std::runtime_error("classifier parameter is not finite");
    }
    for (double v : l.b) {
      if (!std::isfinite(v)) throw std::runtime_error("classifier parameter is not finite");
    }
  });
}

Classifier make_classifier(std::size_t input_dim, const std::vector<std::size_t>& dims,
                           std::size_t num_classes, RandomStream& rng) {
  if (input_dim == 0 || num_classes == 0 || dims.empty()) {
    throw std::invalid_argument("make_classifier: dims must be nonempty, sizes positive");
  }
  auto init_layer = [&rng](std::size_t out, std::size_t in) {
    DenseLayer l;
    l.w = Matrix(out, in);
    l.b.assign(out, 0.0);
    const double s = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : l.w.data) v = rng.uniform_range(-s, s);
    return l;
  };
  Classifier m;
  std::size_t in = input_dim;
  for (std::size_t d : dims) {
    m.feature_layers.push_back(init_layer(d, in));
    in = d;
  }
  m.head = init_layer(num_classes, in);
  return m;
}

GradientBuffer make_gradient_buffer(const Classifier& like) {
  GradientBuffer buf;
  auto zero_like = [&like]() {
    Classifier z = like;
    for (auto& l : z.feature_layers) {
      std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
      std::fill(l.b.begin(), l.b.end(), 0.0);
    }
    std::fill(z.head.w.data.begin(), z.head.w.data.end(), 0.0);
    std::fill(z.head.b.begin(), z.head.b.end(), 0.0);
    return z;
  };
  buf.grad = zero_like();
  buf.velocity = zero_like();
  return buf;
}

std::vector<double> forward_features(const Classifier& model, std::span<const double> x) {
  check_dim(x.size(), model.input_dim(), "forward_features");
  std::vector<double> cur(x.begin(), x.end());
  std::vector<double> next;
  const std::size_t last = model.feature_layers.size() - 1;
  for (std::size_t l = 0; l <= last; ++l) {
    matvec(model.feature_layers[l].w, model.feature_layers[l].b, cur, next);
    if (l != last) {
      for (double& v : next) v = std::tanh(v);
    }
    cur.swap(next);
  }
  return cur;
}

Logits forward_head(const Classifier& model, std::span<const double> feat) {
  check_dim(feat.size(), model.feature_dim(), "forward_head");
  Logits out;
  matvec(model.head.w, model.head.b, feat, out);
  return out;
}

std::vector<double> softmax(const Logits& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - mx);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

double cross_entropy(const Logits& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw std::domain_error("cross_entropy: label out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return std::log(sum) + mx - logits[label];
}

double backward(const Classifier& model, std::span<const BatchItem> batch,
                GradientBuffer& buffer, std::vector<std::vector<double>>* offset_grads) {
  if (batch.empty()) throw std::domain_error("backward: empty batch");

  const std::size_t num_layers = model.feature_layers.size();
  auto& g = buffer.grad;
  for (auto& l : g.feature_layers) {
    std::fill(l.w.data.begin(), l.w.data.end(), 0.0);
    std::fill(l.b.begin(), l.b.end(), 0.0);
  }
  std::fill(g.head.w.data.begin(), g.head.w.data.end(), 0.0);
  std::fill(g.head.b.begin(), g.head.b.end(), 0.0);
  if (offset_grads) {
    offset_grads->assign(batch.size(), {});
  }

  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double total_loss = 0.0;

  // acts[0] = input, acts[l] = post-tanh output of layer l (1-based),
  // acts[num_layers] = feature vector (linear).
  std::vector<std::vector<double>> acts(num_layers + 1);
  std::vector<double> pre, feat_eff, delta, delta_prev;

  for (std::size_t bi = 0; bi < batch.size(); ++bi) {
    const BatchItem& item = batch[bi];
    check_dim(item.x->size(), model.input_dim(), "backward");

    acts[0].assign(item.x->begin(), item.x->end());
    for (std::size_t l = 0; l < num_layers; ++l) {
      matvec(model.feature_layers[l].w, model.feature_layers[l].b, acts[l], pre);
      if (l + 1 != num_layers) {
        for (double& v : pre) v = std::tanh(v);
      }
      acts[l + 1] = pre;
    }

    feat_eff = acts[num_layers];
    if (item.offset) {
      check_dim(item.offset->size(), model.feature_dim(), "backward offset");
      for (std::size_t i = 0; i < feat_eff.size(); ++i) feat_eff[i] += (*item.offset)[i];
    }

    Logits logits;
    matvec(model.head.w, model.head.b, feat_eff, logits);
    total_loss += cross_entropy(logits, item.label);

    // dL/dlogits for the mean loss: (softmax - onehot)/N
    delta = softmax(logits);
    delta[item.label] -= 1.0;
    for (double& v : delta) v *= inv_n;

    for (std::size_t r = 0; r < model.head.w.rows; ++r) {
      double* grow = &g.head.w.data[r * g.head.w.cols];
      for (std::size_t c = 0; c < model.head.w.cols; ++c) grow[c] += delta[r] * feat_eff[c];
      g.head.b[r] += delta[r];
    }

    // dL/dfeat_eff; this is also the gradient for the offset, if any.
    delta_prev.assign(model.feature_dim(), 0.0);
    for (std::size_t r = 0; r < model.head.w.rows; ++r) {
      const double* wrow = &model.head.w.data[r * model.head.w.cols];
      for (std::size_t c = 0; c < model.head.w.cols; ++c) delta_prev[c] += wrow[c] * delta[r];
    }
    if (item.offset && offset_grads) {
      (*offset_grads)[bi] = delta_prev;
    }

    delta = delta_prev;
    for (std::size_t l = num_layers; l-- > 0;) {
      const DenseLayer& layer = model.feature_layers[l];
      DenseLayer& gl = g.feature_layers[l];
      const std::vector<double>& in_act = acts[l];
      for (std::size_t r = 0; r < layer.w.rows; ++r) {
        double* grow = &gl.w.data[r * gl.w.cols];
        for (std::size_t c = 0; c < layer.w.cols; ++c) grow[c] += delta[r] * in_act[c];
        gl.b[r] += delta[r];
      }
      if (l == 0) break;
      delta_prev.assign(layer.w.cols, 0.0);
      for (std::size_t r = 0; r < layer.w.rows; ++r) {
        const double* wrow = &layer.w.data[r * layer.w.cols];
        for (std::size_t c = 0; c < layer.w.cols; ++c) delta_prev[c] += wrow[c] * delta[r];
      }
      // through the tanh that produced acts[l]
      for (std::size_t c = 0; c < delta_prev.size(); ++c) {
        delta_prev[c] *= 1.0 - acts[l][c] * acts[l][c];
      }
      delta = delta_prev;
    }
  }

  return total_loss * inv_n;
}

void sgd_step(Classifier& model, GradientBuffer& buffer, double lr, double momentum,
              double weight_decay) {
  auto update = [&](DenseLayer& w, DenseLayer& g, DenseLayer& v) {
    for (std::size_t i = 0; i < w.w.data.size(); ++i) {
      v.w.data[i] = momentum * v.w.data[i] + g.w.data[i] + weight_decay * w.w.data[i];
      w.w.data[i] -= lr * v.w.data[i];
    }
    for (std::size_t i = 0; i < w.b.size(); ++i) {
      v.b[i] = momentum * v.b[i] + g.b[i] + weight_decay * w.b[i];
      w.b[i] -= lr * v.b[i];
    }
  };
  for (std::size_t l = 0; l < model.feature_layers.size(); ++l) {
    update(model.feature_layers[l], buffer.grad.feature_layers[l],
           buffer.velocity.feature_layers[l]);
  }
  update(model.head, buffer.grad.head, buffer.velocity.head);
  model.check_finite();
}

void sgd_step_vector(std::vector<double>& param, std::vector<double>& velocity,
                     const std::vector<double>& grad, double lr, double momentum,
                     double weight_decay) {
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * param[i];
    param[i] -= lr * velocity[i];
  }
}

}  // namespace fbl
