#pragma once

#include "fviz/rng.hpp"
#include "fviz/types.hpp"

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace fviz {

template <class S>
class Layer {
 public:
  virtual ~Layer() = default;

  // forward caches whatever the next backward call needs; one backward
  // consumes the most recent forward.
  virtual FeatureBatch<S> forward(const FeatureBatch<S>& x) = 0;
  virtual FeatureBatch<S> backward(const FeatureBatch<S>& gy) = 0;

  virtual std::vector<MatX<S>*> params() { return {}; }
  virtual std::vector<MatX<S>*> grads() { return {}; }
  virtual const char* kind() const = 0;
};

template <class S>
class Conv2d final : public Layer<S> {
 public:
  Conv2d(int in_c, int out_c, int ksize, int stride, int pad)
      : in_c_(in_c), out_c_(out_c), k_(ksize), stride_(stride), pad_(pad) {
    w_.setZero(out_c, in_c * ksize * ksize);
    b_.setZero(out_c, 1);
    gw_.setZero(out_c, in_c * ksize * ksize);
    gb_.setZero(out_c, 1);
  }

  void init_he(std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(w_.cols()));
    for (Eigen::Index i = 0; i < w_.size(); ++i)
      w_.data()[i] = static_cast<S>(normal(rng, 0.0, stddev));
    b_.setZero();
  }

  int out_h(int in_h) const { return (in_h + 2 * pad_ - k_) / stride_ + 1; }
  int out_w(int in_w) const { return (in_w + 2 * pad_ - k_) / stride_ + 1; }

  FeatureBatch<S> forward(const FeatureBatch<S>& x) override {
    in_h_ = x.height;
    in_w_ = x.width;
    const int oh = out_h(x.height), ow = out_w(x.width);
    cols_ = im2col(x, oh, ow);
    FeatureBatch<S> y;
    y.batch = x.batch;
    y.height = oh;
    y.width = ow;
    y.data.noalias() = w_ * cols_;
    y.data.colwise() += b_.col(0);
    return y;
  }

  FeatureBatch<S> backward(const FeatureBatch<S>& gy) override {
    gw_.noalias() += gy.data * cols_.transpose();
    gb_.col(0) += gy.data.rowwise().sum();
    MatX<S> gcols;
    gcols.noalias() = w_.transpose() * gy.data;
    return col2im(gcols, gy);
  }

  std::vector<MatX<S>*> params() override { return {&w_, &b_}; }
  std::vector<MatX<S>*> grads() override { return {&gw_, &gb_}; }
  const char* kind() const override { return "conv"; }

  int in_channels() const { return in_c_; }
  int out_channels() const { return out_c_; }
  int ksize() const { return k_; }
  int stride() const { return stride_; }
  int pad() const { return pad_; }

 private:
  MatX<S> im2col(const FeatureBatch<S>& x, int oh, int ow) const {
    MatX<S> cols = MatX<S>::Zero(static_cast<Eigen::Index>(in_c_) * k_ * k_,
                                 static_cast<Eigen::Index>(x.batch) * oh * ow);
    const int hw = x.height * x.width;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < x.batch; ++b) {
      const Eigen::Index in_base = static_cast<Eigen::Index>(b) * hw;
      const Eigen::Index out_base = static_cast<Eigen::Index>(b) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * ow + ox;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= x.height) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= x.width) continue;
              const Eigen::Index src = in_base + static_cast<Eigen::Index>(iy) * x.width + ix;
              cols.block(static_cast<Eigen::Index>(ky * k_ + kx) * in_c_, col, in_c_, 1).noalias() =
                  x.data.col(src);
            }
          }
        }
      }
    }
    return cols;
  }

  FeatureBatch<S> col2im(const MatX<S>& gcols, const FeatureBatch<S>& gy) const {
    FeatureBatch<S> gx;
    gx.batch = gy.batch;
    gx.height = in_h_;
    gx.width = in_w_;
    gx.data = MatX<S>::Zero(in_c_, static_cast<Eigen::Index>(gy.batch) * in_h_ * in_w_);
    const int oh = gy.height, ow = gy.width;
#pragma omp parallel for schedule(static)
    for (int b = 0; b < gy.batch; ++b) {
      const Eigen::Index in_base = static_cast<Eigen::Index>(b) * in_h_ * in_w_;
      const Eigen::Index out_base = static_cast<Eigen::Index>(b) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * ow + ox;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= in_h_) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= in_w_) continue;
              const Eigen::Index dst = in_base + static_cast<Eigen::Index>(iy) * in_w_ + ix;
              gx.data.col(dst) += gcols.block(static_cast<Eigen::Index>(ky * k_ + kx) * in_c_, col, in_c_, 1);
            }
          }
        }
      }
    }
    return gx;
  }

  // Weight row r, column (ky*k + kx)*in_c + ci multiplies input channel ci at
  // kernel offset (ky, kx).
  MatX<S> w_, b_, gw_, gb_;
  MatX<S> cols_;
  int in_c_, out_c_, k_, stride_, pad_;
  int in_h_ = 0, in_w_ = 0;
};

template <class S>
class ReLU final : public Layer<S> {
 public:
  FeatureBatch<S> forward(const FeatureBatch<S>& x) override {
    FeatureBatch<S> y = x;
    y.data = y.data.cwiseMax(S(0));
    mask_ = (x.data.array() > S(0)).template cast<S>();
    return y;
  }
  FeatureBatch<S> backward(const FeatureBatch<S>& gy) override {
    FeatureBatch<S> gx = gy;
    gx.data.array() *= mask_.array();
    return gx;
  }
  const char* kind() const override { return "relu"; }

 private:
  MatX<S> mask_;
};

template <class S>
class MaxPool2d final : public Layer<S> {
 public:
  explicit MaxPool2d(int size) : size_(size) {}

  FeatureBatch<S> forward(const FeatureBatch<S>& x) override {
    in_h_ = x.height;
    in_w_ = x.width;
    const int oh = x.height / size_, ow = x.width / size_;
    FeatureBatch<S> y;
    y.batch = x.batch;
    y.height = oh;
    y.width = ow;
    y.data.resize(x.data.rows(), static_cast<Eigen::Index>(x.batch) * oh * ow);
    argmax_.resize(x.data.rows(), y.data.cols());
#pragma omp parallel for schedule(static)
    for (int b = 0; b < x.batch; ++b) {
      const Eigen::Index in_base = static_cast<Eigen::Index>(b) * x.height * x.width;
      const Eigen::Index out_base = static_cast<Eigen::Index>(b) * oh * ow;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const Eigen::Index col = out_base + static_cast<Eigen::Index>(oy) * ow + ox;
          for (Eigen::Index c = 0; c < x.data.rows(); ++c) {
            S best = x.data(c, in_base + static_cast<Eigen::Index>(oy * size_) * x.width + ox * size_);
            Eigen::Index best_src = in_base + static_cast<Eigen::Index>(oy * size_) * x.width + ox * size_;
            for (int py = 0; py < size_; ++py) {
              for (int px = 0; px < size_; ++px) {
                const Eigen::Index src =
                    in_base + static_cast<Eigen::Index>(oy * size_ + py) * x.width + (ox * size_ + px);
                if (x.data(c, src) > best) {
                  best = x.data(c, src);
                  best_src = src;
                }
              }
            }
            y.data(c, col) = best;
            argmax_(c, col) = best_src;
          }
        }
      }
    }
    return y;
  }

  FeatureBatch<S> backward(const FeatureBatch<S>& gy) override {
    FeatureBatch<S> gx;
    gx.batch = gy.batch;
    gx.height = in_h_;
    gx.width = in_w_;
    gx.data = MatX<S>::Zero(gy.data.rows(), static_cast<Eigen::Index>(gy.batch) * in_h_ * in_w_);
    for (Eigen::Index col = 0; col < gy.data.cols(); ++col)
      for (Eigen::Index c = 0; c < gy.data.rows(); ++c)
        gx.data(c, argmax_(c, col)) += gy.data(c, col);
    return gx;
  }
  const char* kind() const override { return "pool"; }

 private:
  int size_;
  int in_h_ = 0, in_w_ = 0;
  Eigen::Matrix<Eigen::Index, Eigen::Dynamic, Eigen::Dynamic> argmax_;
};

// (C, B*H*W) -> (C*H*W, B); row index c*H*W + y*W + x.
template <class S>
class Flatten final : public Layer<S> {
 public:
  FeatureBatch<S> forward(const FeatureBatch<S>& x) override {
    in_c_ = x.channels();
    in_h_ = x.height;
    in_w_ = x.width;
    const int hw = x.height * x.width;
    FeatureBatch<S> y;
    y.batch = x.batch;
    y.height = 1;
    y.width = 1;
    y.data.resize(static_cast<Eigen::Index>(in_c_) * hw, x.batch);
    for (int b = 0; b < x.batch; ++b)
      for (int c = 0; c < in_c_; ++c)
        y.data.block(static_cast<Eigen::Index>(c) * hw, b, hw, 1) =
            x.data.block(c, static_cast<Eigen::Index>(b) * hw, 1, hw).transpose();
    return y;
  }

  FeatureBatch<S> backward(const FeatureBatch<S>& gy) override {
    const int hw = in_h_ * in_w_;
    FeatureBatch<S> gx;
    gx.batch = gy.batch;
    gx.height = in_h_;
    gx.width = in_w_;
    gx.data.resize(in_c_, static_cast<Eigen::Index>(gy.batch) * hw);
    for (int b = 0; b < gy.batch; ++b)
      for (int c = 0; c < in_c_; ++c)
        gx.data.block(c, static_cast<Eigen::Index>(b) * hw, 1, hw) =
            gy.data.block(static_cast<Eigen::Index>(c) * hw, b, hw, 1).transpose();
    return gx;
  }
  const char* kind() const override { return "flatten"; }

 private:
  int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

template <class S>
class Dense final : public Layer<S> {
 public:
  Dense(int in_dim, int out_dim) : in_dim_(in_dim), out_dim_(out_dim) {
    w_.setZero(out_dim, in_dim);
    b_.setZero(out_dim, 1);
    gw_.setZero(out_dim, in_dim);
    gb_.setZero(out_dim, 1);
  }

  void init_he(std::mt19937_64& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_dim_));
    for (Eigen::Index i = 0; i < w_.size(); ++i)
      w_.data()[i] = static_cast<S>(normal(rng, 0.0, stddev));
    b_.setZero();
  }

  FeatureBatch<S> forward(const FeatureBatch<S>& x) override {
    x_ = x.data;
    FeatureBatch<S> y;
    y.batch = x.batch;
    y.height = 1;
    y.width = 1;
    y.data.noalias() = w_ * x.data;
    y.data.colwise() += b_.col(0);
    return y;
  }

  FeatureBatch<S> backward(const FeatureBatch<S>& gy) override {
    gw_.noalias() += gy.data * x_.transpose();
    gb_.col(0) += gy.data.rowwise().sum();
    FeatureBatch<S> gx;
    gx.batch = gy.batch;
    gx.height = 1;
    gx.width = 1;
    gx.data.noalias() = w_.transpose() * gy.data;
    return gx;
  }

  std::vector<MatX<S>*> params() override { return {&w_, &b_}; }
  std::vector<MatX<S>*> grads() override { return {&gw_, &gb_}; }
  const char* kind() const override { return "fc"; }

  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }

 private:
  MatX<S> w_, b_, gw_, gb_;
  MatX<S> x_;
  int in_dim_, out_dim_;
};

// Gradient contribution injected at the output of a given node during the
// backward pass, on top of whatever flows down from above.
template <class S>
struct Injection {
  int node = 0;
  FeatureBatch<S> grad;
};

template <class S>
class Sequential {
 public:
  int add(std::unique_ptr<Layer<S>> layer) {
    nodes_.push_back(std::move(layer));
    return static_cast<int>(nodes_.size()) - 1;
  }

  int size() const { return static_cast<int>(nodes_.size()); }
  Layer<S>& node(int i) { return *nodes_.at(static_cast<std::size_t>(i)); }
  const Layer<S>& node(int i) const { return *nodes_.at(static_cast<std::size_t>(i)); }

  // Runs the whole stack; optionally copies out the outputs of the nodes in
  // `capture` (ids must be sorted callers' concern; duplicates fine).
  FeatureBatch<S> forward(const FeatureBatch<S>& x, const std::vector<int>& capture = {},
                          std::vector<FeatureBatch<S>>* captured = nullptr) {
    FeatureBatch<S> cur = x;
    if (captured) captured->assign(capture.size(), {});
    for (int i = 0; i < size(); ++i) {
      cur = nodes_[static_cast<std::size_t>(i)]->forward(cur);
      if (captured) {
        for (std::size_t q = 0; q < capture.size(); ++q)
          if (capture[q] == i) (*captured)[q] = cur;
      }
    }
    last_batch_ = x.batch;
    return cur;
  }

  // dtop may be empty when the loss touches only injected nodes; nodes above
  // the highest injection then see no gradient at all and are skipped.
  // Returns the gradient with respect to the input batch.
  FeatureBatch<S> backward(const FeatureBatch<S>& dtop, const std::vector<Injection<S>>& injections = {}) {
    FeatureBatch<S> g = dtop;
    int start = size() - 1;
    if (g.data.size() == 0) {
      int hi = -1;
      for (const auto& inj : injections) hi = std::max(hi, inj.node);
      if (hi < 0) throw StateError("backward called with no gradient");
      start = hi;
    }
    for (int i = start; i >= 0; --i) {
      for (const auto& inj : injections) {
        if (inj.node != i) continue;
        if (g.data.size() == 0) {
          g = inj.grad;
        } else {
          g.data += inj.grad.data;
        }
      }
      if (g.data.size() == 0)
        throw StateError("backward reached node " + std::to_string(i) + " with no gradient");
      g = nodes_[static_cast<std::size_t>(i)]->backward(g);
    }
    return g;
  }

  std::vector<MatX<S>*> params() {
    std::vector<MatX<S>*> out;
    for (auto& n : nodes_)
      for (auto* p : n->params()) out.push_back(p);
    return out;
  }
  std::vector<MatX<S>*> grads() {
    std::vector<MatX<S>*> out;
    for (auto& n : nodes_)
      for (auto* g : n->grads()) out.push_back(g);
    return out;
  }
  void zero_grads() {
    for (auto* g : grads()) g->setZero();
  }

 private:
  std::vector<std::unique_ptr<Layer<S>>> nodes_;
  int last_batch_ = 0;
};

// Adam with the usual bias correction. Moment constants are owned by the
// caller's config; defaults match the common 0.9/0.999.
template <class S>
class Adam {
 public:
  Adam(std::vector<MatX<S>*> params, std::vector<MatX<S>*> grads, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8)
      : params_(std::move(params)), grads_(std::move(grads)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      m_.push_back(MatX<S>::Zero(p->rows(), p->cols()));
      v_.push_back(MatX<S>::Zero(p->rows(), p->cols()));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      const auto& g = *grads_[i];
      m = S(beta1_) * m + S(1.0 - beta1_) * g;
      v = (S(beta2_) * v.array() + S(1.0 - beta2_) * g.array().square()).matrix();
      auto mhat = (m.array() / S(bc1));
      auto vhat = (v.array() / S(bc2));
      params_[i]->array() -= S(lr) * mhat / (vhat.sqrt() + S(eps_));
    }
  }

 private:
  std::vector<MatX<S>*> params_;
  std::vector<MatX<S>*> grads_;
  std::vector<MatX<S>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

// Mean softmax cross entropy against integer labels; gradient written to
// dlogits if non-null (already divided by the batch size).
template <class S>
S softmax_cross_entropy(const MatX<S>& logits, const std::vector<int>& labels, MatX<S>* dlogits = nullptr) {
  const Eigen::Index bsz = logits.cols();
  if (static_cast<Eigen::Index>(labels.size()) != bsz)
    throw ArgumentError("label count does not match batch size");
  S loss = S(0);
  if (dlogits) dlogits->resize(logits.rows(), bsz);
  for (Eigen::Index b = 0; b < bsz; ++b) {
    VecX<S> col = logits.col(b);
    const S mx = col.maxCoeff();
    VecX<S> ex = (col.array() - mx).exp();
    const S z = ex.sum();
    loss += -(col(labels[static_cast<std::size_t>(b)]) - mx - std::log(z));
    if (dlogits) {
      VecX<S> p = ex / z;
      p(labels[static_cast<std::size_t>(b)]) -= S(1);
      dlogits->col(b) = p / S(bsz);
    }
  }
  return loss / S(bsz);
}

template <class S>
MatX<S> softmax_columns(const MatX<S>& logits) {
  MatX<S> p(logits.rows(), logits.cols());
  for (Eigen::Index b = 0; b < logits.cols(); ++b) {
    VecX<S> col = logits.col(b);
    const S mx = col.maxCoeff();
    VecX<S> ex = (col.array() - mx).exp();
    p.col(b) = ex / ex.sum();
  }
  return p;
}

}  // namespace fviz
