#pragma once

#include "fviz/arch.hpp"
#include "fviz/nn.hpp"

#include <map>
#include <optional>

namespace fviz {

// A named attack/scoring target: a conv block or fc layer. pre_node is the
// affine node itself, post_node the relu that follows it (or the node itself
// when nothing follows, e.g. the logits layer).
struct LayerHandle {
  std::string id;
  int pre_node = 0;
  int post_node = 0;
  bool is_conv = false;
  int channels = 0;
  int map_h = 1;
  int map_w = 1;
};

template <class S>
class ModelT {
 public:
  ModelT(const ArchSpec& arch, std::uint64_t init_seed) : arch_(arch) {
    build(init_seed);
  }

  const ArchSpec& arch() const { return arch_; }
  Sequential<S>& net() { return net_; }
  int class_count() const { return arch_.class_count(); }

  const std::vector<LayerHandle>& layer_handles() const { return handles_; }

  const LayerHandle& layer(const std::string& id) const {
    for (const auto& h : handles_)
      if (h.id == id) return h;
    throw SelectorError("unknown layer id '" + id + "'");
  }

  int capture_node(const std::string& id, bool pre) const {
    const auto& h = layer(id);
    return pre ? h.pre_node : h.post_node;
  }

  struct Trace {
    MatX<S> logits;  // classes x batch
    std::vector<FeatureBatch<S>> acts;
  };

  struct Capture {
    std::string layer;
    bool pre = false;
  };

  Trace forward(const FeatureBatch<S>& x, const std::vector<Capture>& caps = {}) {
    std::vector<int> nodes;
    nodes.reserve(caps.size());
    for (const auto& c : caps) nodes.push_back(capture_node(c.layer, c.pre));
    Trace tr;
    FeatureBatch<S> top = net_.forward(x, nodes, &tr.acts);
    tr.logits = top.data;
    return tr;
  }

  // dlogits may be empty when the loss only touches injected activations.
  void backward(const MatX<S>& dlogits, int batch, const std::vector<Injection<S>>& injections = {}) {
    FeatureBatch<S> top;
    if (dlogits.size() != 0) {
      top.data = dlogits;
      top.batch = batch;
      top.height = 1;
      top.width = 1;
    }
    net_.backward(top, injections);
  }

  std::vector<MatX<S>*> params() { return net_.params(); }
  std::vector<MatX<S>*> grads() { return net_.grads(); }
  void zero_grads() { net_.zero_grads(); }

  std::vector<MatX<S>*> layer_params(const std::string& id) {
    return net_.node(layer(id).pre_node).params();
  }

  std::vector<MatX<S>> snapshot() const {
    std::vector<MatX<S>> out;
    for (auto* p : const_cast<ModelT*>(this)->net_.params()) out.push_back(*p);
    return out;
  }
  void restore(const std::vector<MatX<S>>& snap) {
    auto ps = net_.params();
    if (snap.size() != ps.size()) throw StateError("parameter snapshot shape mismatch");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ps[i]->rows() != snap[i].rows() || ps[i]->cols() != snap[i].cols())
        throw StateError("parameter snapshot shape mismatch");
      *ps[i] = snap[i];
    }
  }

  std::uint64_t param_hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto* p : const_cast<ModelT*>(this)->net_.params()) {
      for (Eigen::Index i = 0; i < p->size(); ++i) {
        const S v = p->data()[i];
        const auto* bytes = reinterpret_cast<const unsigned char*>(&v);
        for (std::size_t b = 0; b < sizeof(S); ++b) {
          h ^= bytes[b];
          h *= 1099511628211ull;
        }
      }
    }
    return h;
  }

  template <class T>
  ModelT<T> cast() const {
    ModelT<T> out(arch_, 0);
    auto dst = out.params();
    auto src = const_cast<ModelT*>(this)->net_.params();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<T>();
    return out;
  }

  ModelT clone() const {
    ModelT out(arch_, 0);
    out.restore(snapshot());
    return out;
  }

 private:
  void build(std::uint64_t init_seed) {
    auto rng = substream(init_seed, "init");
    int c = arch_.in_c, h = arch_.in_h, w = arch_.in_w;
    bool flat = false;
    int conv_idx = 0, fc_idx = 0;
    auto ensure_flat = [&]() {
      if (flat) return;
      net_.add(std::make_unique<Flatten<S>>());
      c = c * h * w;
      h = w = 1;
      flat = true;
    };
    for (const auto& def : arch_.layers) {
      switch (def.kind) {
        case LayerDef::Kind::conv: {
          if (flat) throw SpecError("conv after flatten");
          auto conv = std::make_unique<Conv2d<S>>(c, def.out_c, def.ksize, def.stride, def.pad);
          if (h + 2 * def.pad < def.ksize || w + 2 * def.pad < def.ksize)
            throw SpecError("conv kernel does not fit input");
          conv->init_he(rng);
          const int node = net_.add(std::move(conv));
          LayerHandle handle;
          handle.id = "conv" + std::to_string(++conv_idx);
          handle.pre_node = handle.post_node = node;
          handle.is_conv = true;
          const auto& cv = static_cast<const Conv2d<S>&>(net_.node(node));
          h = cv.out_h(h);
          w = cv.out_w(w);
          c = def.out_c;
          handle.channels = c;
          handle.map_h = h;
          handle.map_w = w;
          handles_.push_back(handle);
          break;
        }
        case LayerDef::Kind::relu: {
          const int node = net_.add(std::make_unique<ReLU<S>>());
          if (!handles_.empty() && handles_.back().post_node == node - 1)
            handles_.back().post_node = node;
          break;
        }
        case LayerDef::Kind::pool: {
          if (flat) throw SpecError("pool after flatten");
          if (h < def.pool || w < def.pool) throw SpecError("pool does not fit input");
          net_.add(std::make_unique<MaxPool2d<S>>(def.pool));
          h /= def.pool;
          w /= def.pool;
          break;
        }
        case LayerDef::Kind::flatten:
          ensure_flat();
          break;
        case LayerDef::Kind::fc: {
          ensure_flat();
          auto fc = std::make_unique<Dense<S>>(c, def.width);
          fc->init_he(rng);
          const int node = net_.add(std::move(fc));
          LayerHandle handle;
          handle.id = "fc" + std::to_string(++fc_idx);
          handle.pre_node = handle.post_node = node;
          handle.is_conv = false;
          c = def.width;
          handle.channels = c;
          handles_.push_back(handle);
          break;
        }
      }
    }
    if (net_.size() == 0) throw SpecError("architecture has no layers");
  }

  ArchSpec arch_;
  Sequential<S> net_;
  std::vector<LayerHandle> handles_;
};

using Model = ModelT<float>;

// Spatial squared l2 norm per channel per image: scores(c, b). For fc maps
// (1x1) this is just the squared unit value.
template <class S>
MatX<S> channel_scores_post(const FeatureBatch<S>& maps) {
  MatX<S> scores(maps.channels(), maps.batch);
  const int hw = maps.spatial();
  for (int b = 0; b < maps.batch; ++b)
    scores.col(b) = maps.data.middleCols(static_cast<Eigen::Index>(b) * hw, hw).array().square().rowwise().sum();
  return scores;
}

// Spatial mean per channel per image (identity for fc); used for
// pre-activation scoring where sign matters.
template <class S>
MatX<S> channel_scores_pre(const FeatureBatch<S>& maps) {
  MatX<S> scores(maps.channels(), maps.batch);
  const int hw = maps.spatial();
  for (int b = 0; b < maps.batch; ++b)
    scores.col(b) = maps.data.middleCols(static_cast<Eigen::Index>(b) * hw, hw).rowwise().mean();
  return scores;
}

// Sum of squares of one activation map.
template <class Derived>
double channel_score(const Eigen::MatrixBase<Derived>& map) {
  return static_cast<double>(map.array().square().sum());
}

}  // namespace fviz
