#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace fviz {

template <class Scalar>
using MatX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VecX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matf = MatX<float>;
using Vecf = VecX<float>;
using Matd = MatX<double>;
using Vecd = VecX<double>;

// A batch of feature maps. Column layout: (b*height + y)*width + x, so each
// image occupies a contiguous block of height*width columns. Fully-connected
// activations use height = width = 1 with one column per image.
template <class Scalar>
struct FeatureBatch {
  MatX<Scalar> data;  // channels x (batch * height * width)
  int batch = 0;
  int height = 0;
  int width = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  int spatial() const { return height * width; }

  // View of one image's maps: channels x (height*width).
  auto image(int b) const { return data.middleCols(static_cast<Eigen::Index>(b) * spatial(), spatial()); }
  auto image(int b) { return data.middleCols(static_cast<Eigen::Index>(b) * spatial(), spatial()); }

  static FeatureBatch zeros_like(const FeatureBatch& other) {
    FeatureBatch out;
    out.data = MatX<Scalar>::Zero(other.data.rows(), other.data.cols());
    out.batch = other.batch;
    out.height = other.height;
    out.width = other.width;
    return out;
  }
};

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-supplied configuration, manifest or CLI arguments (exit code 2).
struct ConfigError : Error {
  using Error::Error;
};
struct ArgumentError : ConfigError {
  using ConfigError::ConfigError;
};
struct SpecError : ConfigError {
  using ConfigError::ConfigError;
};
struct SelectorError : ConfigError {
  using ConfigError::ConfigError;
};
struct IndexError : ConfigError {
  using ConfigError::ConfigError;
};

// Failures while running a valid configuration (exit code 3).
struct RuntimeFailure : Error {
  using Error::Error;
};
struct LoadError : RuntimeFailure {
  using RuntimeFailure::RuntimeFailure;
};
struct DataError : RuntimeFailure {
  using RuntimeFailure::RuntimeFailure;
};
struct StateError : RuntimeFailure {
  using RuntimeFailure::RuntimeFailure;
};
struct TrainingError : RuntimeFailure {
  using RuntimeFailure::RuntimeFailure;
};

}  // namespace fviz
