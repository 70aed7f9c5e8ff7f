#include "csdn/nn.hpp"

#include <cmath>

#include "csdn/errors.hpp"

namespace csdn::nn {

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding)
    : weight(out_channels, in_channels * kernel * kernel),
      bias(out_channels, 1),
      in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      padding_(padding) {}

void Conv2d::init_he(std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(weight.value.cols())));
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = normal(rng);
  bias.value.setZero();
}

Matrix Conv2d::im2col(const Matrix& x, int height, int width) const {
  const int oh = out_height(height);
  const int ow = out_width(width);
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(in_channels_) * kernel_ * kernel_, oh * ow);
  for (int c = 0; c < in_channels_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kernel_ + ki) * kernel_ + kj;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - padding_ + ki;
          if (iy < 0 || iy >= height) continue;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride_ - padding_ + kj;
            if (ix < 0 || ix >= width) continue;
            cols(row, y * ow + xo) = x(c, iy * width + ix);
          }
        }
      }
    }
  }
  return cols;
}

Matrix Conv2d::col2im(const Matrix& cols, int height, int width) const {
  const int oh = out_height(height);
  const int ow = out_width(width);
  Matrix x = Matrix::Zero(in_channels_, height * width);
  for (int c = 0; c < in_channels_; ++c) {
    for (int ki = 0; ki < kernel_; ++ki) {
      for (int kj = 0; kj < kernel_; ++kj) {
        const Eigen::Index row = (static_cast<Eigen::Index>(c) * kernel_ + ki) * kernel_ + kj;
        for (int y = 0; y < oh; ++y) {
          const int iy = y * stride_ - padding_ + ki;
          if (iy < 0 || iy >= height) continue;
          for (int xo = 0; xo < ow; ++xo) {
            const int ix = xo * stride_ - padding_ + kj;
            if (ix < 0 || ix >= width) continue;
            x(c, iy * width + ix) += cols(row, y * ow + xo);
          }
        }
      }
    }
  }
  return x;
}

Matrix Conv2d::forward(const Matrix& x, int height, int width, Cache* cache) const {
  if (x.rows() != in_channels_ || x.cols() != static_cast<Eigen::Index>(height) * width) {
    throw InputError("conv input has shape (" + std::to_string(x.rows()) + ", " + std::to_string(x.cols()) +
                     "), expected (" + std::to_string(in_channels_) + ", " + std::to_string(height * width) + ")");
  }
  Matrix cols = im2col(x, height, width);
  Matrix out = weight.value * cols;
  out.colwise() += bias.value.col(0);
  if (cache != nullptr) {
    cache->cols = std::move(cols);
    cache->in_height = height;
    cache->in_width = width;
  }
  return out;
}

Matrix Conv2d::backward(const Cache& cache, const Matrix& d_out) {
  weight.grad.noalias() += d_out * cache.cols.transpose();
  bias.grad.col(0) += d_out.rowwise().sum();
  return col2im(weight.value.transpose() * d_out, cache.in_height, cache.in_width);
}

void ConvStack::init_he(std::mt19937_64& rng) {
  for (auto& l : layers_) l.init_he(rng);
}

Matrix ConvStack::forward(const Matrix& x, int height, int width, Cache* cache, int* out_height,
                          int* out_width) const {
  Matrix h = x;
  int hh = height;
  int ww = width;
  if (cache != nullptr) {
    cache->conv.assign(layers_.size(), {});
    cache->activations.assign(layers_.size(), {});
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i].forward(h, hh, ww, cache ? &cache->conv[i] : nullptr).cwiseMax(0.0);
    hh = layers_[i].out_height(hh);
    ww = layers_[i].out_width(ww);
    if (cache != nullptr) cache->activations[i] = h;
  }
  if (cache != nullptr) {
    cache->out_height = hh;
    cache->out_width = ww;
  }
  if (out_height != nullptr) *out_height = hh;
  if (out_width != nullptr) *out_width = ww;
  return h;
}

Matrix ConvStack::backward(const Cache& cache, const Matrix& d_out) {
  Matrix d = d_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    d = (cache.activations[i].array() > 0.0).select(d, 0.0);
    d = layers_[i].backward(cache.conv[i], d);
  }
  return d;
}

void ConvStack::append_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    out.push_back({prefix + "conv" + std::to_string(i) + ".weight", &layers_[i].weight});
    out.push_back({prefix + "conv" + std::to_string(i) + ".bias", &layers_[i].bias});
  }
}

Linear::Linear(int in_features, int out_features, bool with_bias)
    : weight(out_features, in_features), bias(1, with_bias ? out_features : 0), with_bias_(with_bias) {}

void Linear::init_uniform(std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(weight.value.cols()));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = uniform(rng);
  bias.value.setZero();
}

Matrix Linear::forward(const Matrix& x) const {
  if (x.cols() != weight.value.cols()) {
    throw InputError("linear input has " + std::to_string(x.cols()) + " features, expected " +
                     std::to_string(weight.value.cols()));
  }
  Matrix y = x * weight.value.transpose();
  if (with_bias_) y.rowwise() += bias.value.row(0);
  return y;
}

Matrix Linear::backward(const Matrix& x, const Matrix& d_out) {
  weight.grad.noalias() += d_out.transpose() * x;
  if (with_bias_) bias.grad.row(0) += d_out.colwise().sum();
  return d_out * weight.value;
}

void Linear::append_parameters(const std::string& prefix, std::vector<NamedParameter>& out) {
  out.push_back({prefix + "weight", &weight});
  if (with_bias_) out.push_back({prefix + "bias", &bias});
}

}  // namespace csdn::nn
