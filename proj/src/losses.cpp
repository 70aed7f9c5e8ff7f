#include "csdn/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "csdn/errors.hpp"

namespace csdn::losses {

namespace {

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }
double sigmoid(double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// Row-wise log-softmax; writes softmax probabilities into `prob`.
Matrix log_softmax_rows(const Matrix& s, Matrix& prob) {
  Matrix out(s.rows(), s.cols());
  prob.resize(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    const double lse = mx + std::log((s.row(i).array() - mx).exp().sum());
    out.row(i) = s.row(i).array() - lse;
    prob.row(i) = out.row(i).array().exp();
  }
  return out;
}

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes, const char* who) {
  if (static_cast<Eigen::Index>(labels.size()) != rows) {
    throw InputError(std::string(who) + ": expected " + std::to_string(rows) + " labels, got " +
                     std::to_string(labels.size()));
  }
  for (int y : labels) {
    if (y < 0 || (num_classes > 0 && y >= num_classes)) {
      throw InputError(std::string(who) + ": label " + std::to_string(y) + " outside [0, " +
                       std::to_string(num_classes) + ")");
    }
  }
}

void record_guard(LossValue& v, int guarded) {
  if (guarded > 0) v.components["norm_guard"] += guarded;
}

}  // namespace

Similarity similarity(const RowVector& a, const RowVector& b) {
  if (a.size() != b.size()) throw InputError("similarity of vectors with different lengths");
  const double na = a.norm();
  const double nb = b.norm();
  Similarity s;
  s.guarded = na < kNormEpsilon || nb < kNormEpsilon;
  s.value = a.dot(b) / (std::max(na, kNormEpsilon) * std::max(nb, kNormEpsilon));
  return s;
}

Matrix normalize_rows(const Matrix& x, int* guarded) {
  Matrix u(x.rows(), x.cols());
  int count = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n < kNormEpsilon) ++count;
    u.row(i) = x.row(i) / std::max(n, kNormEpsilon);
  }
  if (guarded != nullptr) *guarded += count;
  return u;
}

Matrix normalize_rows_backward(const Matrix& x, const Matrix& normalized, const Matrix& d_normalized) {
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double n = x.row(i).norm();
    if (n < kNormEpsilon) {
      dx.row(i) = d_normalized.row(i) / kNormEpsilon;
    } else {
      const double proj = normalized.row(i).dot(d_normalized.row(i));
      dx.row(i) = (d_normalized.row(i) - proj * normalized.row(i)) / n;
    }
  }
  return dx;
}

LossGrad identity_loss(const Matrix& logits, std::span<const int> labels) {
  check_labels(labels, logits.rows(), static_cast<int>(logits.cols()), "identity_loss");
  LossGrad out;
  const auto n = logits.rows();
  if (n == 0) {
    out.d_input = Matrix::Zero(0, logits.cols());
    return out;
  }
  Matrix prob;
  const Matrix logp = log_softmax_rows(logits, prob);
  double total = 0.0;
  out.d_input = prob / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    total -= logp(i, labels[i]);
    out.d_input(i, labels[i]) -= 1.0 / static_cast<double>(n);
  }
  out.loss.value = total / static_cast<double>(n);
  out.loss.components["identity"] = out.loss.value;
  return out;
}

double weighted_triplet_anchor_term(std::span<const double> positive_distances,
                                    std::span<const double> negative_distances) {
  if (positive_distances.empty() || negative_distances.empty()) {
    throw InputError("weighted triplet needs at least one positive and one negative");
  }
  auto weighted = [](std::span<const double> d, double sign) {
    double mx = -INFINITY;
    for (double x : d) mx = std::max(mx, sign * x);
    double num = 0.0;
    double den = 0.0;
    for (double x : d) {
      const double w = std::exp(sign * x - mx);
      num += w * x;
      den += w;
    }
    return num / den;
  };
  return softplus(weighted(positive_distances, 1.0) - weighted(negative_distances, -1.0));
}

LossGrad weighted_regularized_triplet(const Matrix& x, std::span<const int> labels) {
  check_labels(labels, x.rows(), 0, "weighted_regularized_triplet");
  const auto n = x.rows();
  LossGrad out;
  out.d_input = Matrix::Zero(n, x.cols());
  if (n == 0) return out;

  Matrix dist(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) dist(i, j) = std::sqrt(std::max((x.row(i) - x.row(j)).squaredNorm(), 1e-24));
  }

  Matrix d_dist = Matrix::Zero(n, n);
  double total = 0.0;
  std::vector<Eigen::Index> pos;
  std::vector<Eigen::Index> neg;
  for (Eigen::Index i = 0; i < n; ++i) {
    pos.clear();
    neg.clear();
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j == i) continue;
      (labels[j] == labels[i] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) {
      throw InputError("weighted triplet anchor " + std::to_string(i) + " has no " +
                       (pos.empty() ? "positive" : "negative") + " in the batch");
    }
    auto weights = [&](const std::vector<Eigen::Index>& idx, double sign, double& mean) {
      double mx = -INFINITY;
      for (auto j : idx) mx = std::max(mx, sign * dist(i, j));
      std::vector<double> w(idx.size());
      double den = 0.0;
      for (std::size_t t = 0; t < idx.size(); ++t) den += (w[t] = std::exp(sign * dist(i, idx[t]) - mx));
      mean = 0.0;
      for (std::size_t t = 0; t < idx.size(); ++t) mean += (w[t] /= den) * dist(i, idx[t]);
      return w;
    };
    double a = 0.0;
    double b = 0.0;
    const auto wp = weights(pos, 1.0, a);
    const auto wn = weights(neg, -1.0, b);
    const double z = a - b;
    total += softplus(z);
    const double g = sigmoid(z) / static_cast<double>(n);
    for (std::size_t t = 0; t < pos.size(); ++t) d_dist(i, pos[t]) += g * wp[t] * (1.0 + dist(i, pos[t]) - a);
    for (std::size_t t = 0; t < neg.size(); ++t) d_dist(i, neg[t]) -= g * wn[t] * (1.0 - dist(i, neg[t]) + b);
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (d_dist(i, j) == 0.0) continue;
      const RowVector dir = (x.row(i) - x.row(j)) / dist(i, j);
      out.d_input.row(i) += d_dist(i, j) * dir;
      out.d_input.row(j) -= d_dist(i, j) * dir;
    }
  }
  out.loss.value = total / static_cast<double>(n);
  out.loss.components["triplet"] = out.loss.value;
  return out;
}

PairLossGrad image_to_text_contrastive(const Matrix& image, const Matrix& text, double scale) {
  if (image.rows() != text.rows() || image.cols() != text.cols()) {
    throw InputError("image_to_text_contrastive expects matching (n, d) inputs");
  }
  PairLossGrad out;
  const auto n = image.rows();
  out.d_image = Matrix::Zero(n, image.cols());
  out.d_text = Matrix::Zero(n, text.cols());
  if (n == 0) return out;
  int guarded = 0;
  const Matrix u = normalize_rows(image, &guarded);
  const Matrix t = normalize_rows(text, &guarded);
  const Matrix s = scale * (u * t.transpose());
  Matrix prob;
  const Matrix logp = log_softmax_rows(s, prob);
  out.loss.value = -logp.diagonal().sum() / static_cast<double>(n);
  Matrix d_s = prob;
  d_s.diagonal().array() -= 1.0;
  d_s /= static_cast<double>(n);
  out.d_image = normalize_rows_backward(image, u, scale * d_s * t);
  out.d_text = normalize_rows_backward(text, t, scale * d_s.transpose() * u);
  record_guard(out.loss, guarded);
  return out;
}

PairLossGrad text_to_image_contrastive(const Matrix& image, std::span<const int> labels, const Matrix& text,
                                       double scale) {
  if (image.rows() != text.rows() || image.cols() != text.cols()) {
    throw InputError("text_to_image_contrastive expects matching (n, d) inputs");
  }
  check_labels(labels, image.rows(), 0, "text_to_image_contrastive");
  PairLossGrad out;
  const auto n = image.rows();
  out.d_image = Matrix::Zero(n, image.cols());
  out.d_text = Matrix::Zero(n, text.cols());
  if (n == 0) return out;
  int guarded = 0;
  const Matrix u = normalize_rows(image, &guarded);
  const Matrix t = normalize_rows(text, &guarded);
  // Row i scores every image against anchor text t_i.
  const Matrix s = scale * (t * u.transpose());
  Matrix prob;
  const Matrix logp = log_softmax_rows(s, prob);

  Matrix d_s = prob;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int count = 0;
    for (Eigen::Index p = 0; p < n; ++p) count += labels[p] == labels[i];
    double inner = 0.0;
    for (Eigen::Index p = 0; p < n; ++p) {
      if (labels[p] != labels[i]) continue;
      inner += logp(i, p);
      d_s(i, p) -= 1.0 / count;
    }
    total -= inner / count;
  }
  d_s /= static_cast<double>(n);
  out.loss.value = total / static_cast<double>(n);
  out.d_text = normalize_rows_backward(text, t, scale * d_s * u);
  out.d_image = normalize_rows_backward(image, u, scale * d_s.transpose() * t);
  record_guard(out.loss, guarded);
  return out;
}

PairLossGrad image_to_text_ce(const Matrix& image, std::span<const int> labels, const Matrix& bank, double scale) {
  if (image.cols() != bank.cols()) throw InputError("image_to_text_ce: feature and bank dimensions differ");
  check_labels(labels, image.rows(), static_cast<int>(bank.rows()), "image_to_text_ce");
  PairLossGrad out;
  const auto n = image.rows();
  out.d_image = Matrix::Zero(n, image.cols());
  out.d_text = Matrix::Zero(bank.rows(), bank.cols());
  if (n == 0) return out;
  int guarded = 0;
  const Matrix u = normalize_rows(image, &guarded);
  const Matrix b = normalize_rows(bank, &guarded);
  const Matrix s = scale * (u * b.transpose());
  Matrix prob;
  const Matrix logp = log_softmax_rows(s, prob);
  Matrix d_s = prob;
  double total = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    total -= logp(i, labels[i]);
    d_s(i, labels[i]) -= 1.0;
  }
  d_s /= static_cast<double>(n);
  out.loss.value = total / static_cast<double>(n);
  out.d_image = normalize_rows_backward(image, u, scale * d_s * b);
  out.d_text = normalize_rows_backward(bank, b, scale * d_s.transpose() * u);
  record_guard(out.loss, guarded);
  return out;
}

LossValue combine_stage3(const Stage3Components& c, const LossWeights& w) {
  LossValue v;
  v.value = c.identity + w.lambda1 * c.triplet + w.lambda2 * c.ce_visible + w.lambda3 * c.ce_infrared;
  v.components = {{"identity", c.identity},
                  {"triplet", c.triplet},
                  {"ce_visible", c.ce_visible},
                  {"ce_infrared", c.ce_infrared}};
  return v;
}

Stage3Result stage3_total(const Matrix& features, const Matrix& logits, std::span<const int> labels,
                          std::span<const Modality> modality, const Matrix& visible_bank, const Matrix& infrared_bank,
                          const LossWeights& weights, double scale) {
  if (modality.size() != labels.size()) throw InputError("stage3_total: one modality tag per sample is required");
  const LossGrad id = identity_loss(logits, labels);
  const LossGrad wrt = weighted_regularized_triplet(features, labels);

  Stage3Result out;
  out.d_logits = id.d_input;
  out.d_features = weights.lambda1 * wrt.d_input;

  Stage3Components c;
  c.identity = id.loss.value;
  c.triplet = wrt.loss.value;
  for (Modality m : {Modality::kVisible, Modality::kInfrared}) {
    std::vector<Eigen::Index> rows;
    std::vector<int> sub_labels;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (modality[i] == m) {
        rows.push_back(static_cast<Eigen::Index>(i));
        sub_labels.push_back(labels[i]);
      }
    }
    Matrix sub(static_cast<Eigen::Index>(rows.size()), features.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) sub.row(static_cast<Eigen::Index>(r)) = features.row(rows[r]);
    const bool visible = m == Modality::kVisible;
    const PairLossGrad ce = image_to_text_ce(sub, sub_labels, visible ? visible_bank : infrared_bank, scale);
    const double lambda = visible ? weights.lambda2 : weights.lambda3;
    (visible ? c.ce_visible : c.ce_infrared) = ce.loss.value;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.d_features.row(rows[r]) += lambda * ce.d_image.row(static_cast<Eigen::Index>(r));
    }
  }
  out.loss = combine_stage3(c, weights);
  return out;
}

}  // namespace csdn::losses
