#pragma once

#include "fviz/data.hpp"
#include "fviz/model.hpp"

#include <cmath>

namespace fviz {

template <class S>
FeatureBatch<S> make_batch(const DatasetHandle& dataset, const std::vector<int>& indices) {
  if (indices.empty()) throw ArgumentError("empty batch");
  FeatureBatch<S> batch;
  batch.batch = static_cast<int>(indices.size());
  batch.height = dataset.height;
  batch.width = dataset.width;
  const Eigen::Index hw = static_cast<Eigen::Index>(dataset.height) * dataset.width;
  batch.data.resize(dataset.channels, hw * batch.batch);
  for (std::size_t i = 0; i < indices.size(); ++i)
    batch.data.middleCols(static_cast<Eigen::Index>(i) * hw, hw) =
        dataset.images.at(static_cast<std::size_t>(indices[i])).pixels.template cast<S>();
  return batch;
}

inline std::vector<int> batch_labels(const DatasetHandle& dataset, const std::vector<int>& indices) {
  std::vector<int> labels;
  labels.reserve(indices.size());
  for (int i : indices) labels.push_back(dataset.images.at(static_cast<std::size_t>(i)).class_label);
  return labels;
}

inline std::vector<int> all_indices(const DatasetHandle& dataset) {
  std::vector<int> idx(static_cast<std::size_t>(dataset.count()));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  return idx;
}

// Logits for a list of images, evaluated in chunks: classes x indices.size().
template <class S>
MatX<S> forward_logits(ModelT<S>& model, const DatasetHandle& dataset, const std::vector<int>& indices,
                       int chunk = 256) {
  MatX<S> logits(model.class_count(), static_cast<Eigen::Index>(indices.size()));
  for (std::size_t at = 0; at < indices.size(); at += static_cast<std::size_t>(chunk)) {
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(chunk), indices.size() - at);
    std::vector<int> part(indices.begin() + static_cast<std::ptrdiff_t>(at),
                          indices.begin() + static_cast<std::ptrdiff_t>(at + n));
    auto tr = model.forward(make_batch<S>(dataset, part));
    logits.middleCols(static_cast<Eigen::Index>(at), static_cast<Eigen::Index>(n)) = tr.logits;
  }
  return logits;
}

// Fraction of correctly classified images.
template <class S>
double evaluate_accuracy(ModelT<S>& model, const DatasetHandle& dataset, int chunk = 256) {
  if (dataset.count() == 0) throw ArgumentError("empty evaluation set");
  const auto idx = all_indices(dataset);
  const MatX<S> logits = forward_logits(model, dataset, idx, chunk);
  int correct = 0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    Eigen::Index argmax = 0;
    logits.col(b).maxCoeff(&argmax);
    if (static_cast<int>(argmax) == dataset.images[static_cast<std::size_t>(b)].class_label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(dataset.count());
}

struct TrainConfig {
  int epochs = 12;
  double lr = 1e-3;
  int batch = 128;
  std::uint64_t seed = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int augment_shift = 0;  // train-time random wraparound translation, pixels
};

// Random per-image wraparound translation of a batch, up to +-shift pixels.
template <class S>
void augment_batch(FeatureBatch<S>& batch, int shift, std::mt19937_64& rng) {
  if (shift <= 0) return;
  const int h = batch.height, w = batch.width;
  MatX<S> tmp(batch.data.rows(), static_cast<Eigen::Index>(h) * w);
  for (int b = 0; b < batch.batch; ++b) {
    const int dy = static_cast<int>(uniform_index(rng, 2 * shift + 1)) - shift;
    const int dx = static_cast<int>(uniform_index(rng, 2 * shift + 1)) - shift;
    if (dy == 0 && dx == 0) continue;
    auto img = batch.image(b);
    for (int y = 0; y < h; ++y) {
      const int sy = ((y - dy) % h + h) % h;
      for (int x = 0; x < w; ++x) {
        const int sx = ((x - dx) % w + w) % w;
        tmp.col(static_cast<Eigen::Index>(y) * w + x) = img.col(static_cast<Eigen::Index>(sy) * w + sx);
      }
    }
    img = tmp;
  }
}

struct TrainResult {
  double final_loss = 0.0;
  int steps = 0;
};

// Plain Adam + softmax cross entropy over shuffled minibatches.
template <class S>
TrainResult train_classifier(ModelT<S>& model, const DatasetHandle& train, const TrainConfig& cfg) {
  if (cfg.epochs < 0) throw ArgumentError("epochs must be >= 0");
  if (cfg.batch <= 0 || cfg.lr <= 0) throw ArgumentError("batch and learning rate must be positive");
  TrainResult result;
  if (cfg.epochs == 0) return result;
  Adam<S> opt(model.params(), model.grads(), cfg.beta1, cfg.beta2, cfg.eps);
  auto rng = substream(cfg.seed, "train");
  auto order = all_indices(train);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_indices(order, rng);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch), order.size() - at);
      std::vector<int> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                           order.begin() + static_cast<std::ptrdiff_t>(at + n));
      auto batch = make_batch<S>(train, idx);
      augment_batch(batch, cfg.augment_shift, rng);
      auto tr = model.forward(batch);
      MatX<S> dlogits;
      const S loss = softmax_cross_entropy<S>(tr.logits, batch_labels(train, idx), &dlogits);
      if (!std::isfinite(static_cast<double>(loss)))
        throw TrainingError("training diverged (non-finite loss) at step " + std::to_string(result.steps));
      model.zero_grads();
      model.backward(dlogits, static_cast<int>(n));
      opt.step(cfg.lr);
      result.final_loss = static_cast<double>(loss);
      ++result.steps;
    }
  }
  return result;
}

}  // namespace fviz
