#pragma once

#include "fviz/model.hpp"

#include <functional>

namespace fviz::testing {

// Central-difference gradient check over the given parameter matrices.
// loss_value() must evaluate the loss at the current parameters without side
// effects; analytic[i] are the already-computed gradients aligned with
// params[i]. Returns the max relative error, with a small absolute floor so
// genuinely-zero gradients compare cleanly.
inline double max_grad_rel_err(const std::vector<Matd*>& params, const std::vector<Matd>& analytic,
                               const std::function<double()>& loss_value, double h = 1e-5,
                               double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Matd& p = *params[pi];
    for (Eigen::Index i = 0; i < p.size(); ++i) {
      const double saved = p.data()[i];
      p.data()[i] = saved + h;
      const double lp = loss_value();
      p.data()[i] = saved - h;
      const double lm = loss_value();
      p.data()[i] = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = analytic[pi].data()[i];
      const double denom = std::max({std::abs(fd), std::abs(an), floor});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// Direct convolution, no im2col: reference for the GEMM path.
inline Matd conv2d_reference(const Matd& x, int h, int w, const Matd& weights, const Vecd& bias,
                             int in_c, int out_c, int k, int stride, int pad) {
  const int oh = (h + 2 * pad - k) / stride + 1;
  const int ow = (w + 2 * pad - k) / stride + 1;
  Matd y = Matd::Zero(out_c, static_cast<Eigen::Index>(oh) * ow);
  for (int oc = 0; oc < out_c; ++oc) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = bias(oc);
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
            for (int ci = 0; ci < in_c; ++ci)
              acc += weights(oc, static_cast<Eigen::Index>(ky * k + kx) * in_c + ci) *
                     x(ci, static_cast<Eigen::Index>(iy) * w + ix);
          }
        }
        y(oc, static_cast<Eigen::Index>(oy) * ow + ox) = acc;
      }
    }
  }
  return y;
}

inline FeatureBatch<double> random_batch(int batch, int c, int h, int w, std::mt19937_64& rng,
                                         double scale = 1.0) {
  FeatureBatch<double> x;
  x.batch = batch;
  x.height = h;
  x.width = w;
  x.data.resize(c, static_cast<Eigen::Index>(batch) * h * w);
  for (Eigen::Index i = 0; i < x.data.size(); ++i) x.data.data()[i] = normal(rng, 0.0, scale);
  return x;
}

}  // namespace fviz::testing
