#pragma once

#include <random>
#include <string>
#include <vector>

#include "csdn/types.hpp"

// Minimal layers with explicit forward/backward passes. Backward calls add into
// the parameter gradients and return the gradient with respect to the input.
namespace csdn::nn {

struct Parameter {
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(Eigen::Index rows, Eigen::Index cols) : value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

struct NamedParameter {
  std::string name;
  Parameter* param;
};

// Samples are (channels, height * width) planes.
class Conv2d {
 public:
  struct Cache {
    Matrix cols;
    int in_height = 0;
    int in_width = 0;
  };

  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding);

  void init_he(std::mt19937_64& rng);

  int out_height(int h) const { return (h + 2 * padding_ - kernel_) / stride_ + 1; }
  int out_width(int w) const { return (w + 2 * padding_ - kernel_) / stride_ + 1; }
  int in_channels() const { return in_channels_; }
  int out_channels() const { return out_channels_; }

  Matrix forward(const Matrix& x, int height, int width, Cache* cache) const;
  Matrix backward(const Cache& cache, const Matrix& d_out);

  Parameter weight;  // (out, in * k * k)
  Parameter bias;    // (out, 1)

 private:
  Matrix im2col(const Matrix& x, int height, int width) const;
  Matrix col2im(const Matrix& cols, int height, int width) const;

  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 3;
  int stride_ = 1;
  int padding_ = 1;
};

// Convolutions, each followed by a ReLU.
class ConvStack {
 public:
  struct Cache {
    std::vector<Conv2d::Cache> conv;
    std::vector<Matrix> activations;  // post-ReLU outputs
    int out_height = 0;
    int out_width = 0;
  };

  void add(Conv2d conv) { layers_.push_back(std::move(conv)); }
  void init_he(std::mt19937_64& rng);

  Matrix forward(const Matrix& x, int height, int width, Cache* cache, int* out_height = nullptr,
                 int* out_width = nullptr) const;
  Matrix backward(const Cache& cache, const Matrix& d_out);

  void append_parameters(const std::string& prefix, std::vector<NamedParameter>& out);
  std::size_t size() const { return layers_.size(); }
  Conv2d& layer(std::size_t i) { return layers_[i]; }

 private:
  std::vector<Conv2d> layers_;
};

// Row-wise affine map: y = x W^T + b.
class Linear {
 public:
  Linear() = default;
  Linear(int in_features, int out_features, bool with_bias);

  void init_uniform(std::mt19937_64& rng);

  Matrix forward(const Matrix& x) const;
  Matrix backward(const Matrix& x, const Matrix& d_out);

  void append_parameters(const std::string& prefix, std::vector<NamedParameter>& out);

  int in_features() const { return static_cast<int>(weight.value.cols()); }
  int out_features() const { return static_cast<int>(weight.value.rows()); }
  bool has_bias() const { return with_bias_; }

  Parameter weight;  // (out, in)
  Parameter bias;    // (1, out), unused without bias

 private:
  bool with_bias_ = true;
};

}  // namespace csdn::nn
