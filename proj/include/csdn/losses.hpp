#pragma once

#include <map>
#include <span>
#include <string>

#include "csdn/types.hpp"

namespace csdn::losses {

inline constexpr double kNormEpsilon = 1e-12;

struct LossValue {
  double value = 0.0;
  std::map<std::string, double> components;
};

struct LossWeights {
  double lambda1 = 0.15;  // weighted regularized triplet
  double lambda2 = 0.05;  // visible image-to-prototype cross-entropy
  double lambda3 = 0.1;   // infrared image-to-prototype cross-entropy
};

struct Similarity {
  double value = 0.0;
  bool guarded = false;  // a norm fell below kNormEpsilon and was clamped
};

Similarity similarity(const RowVector& a, const RowVector& b);

// Losses over a single input return d(loss)/d(input) alongside the value.
struct LossGrad {
  LossValue loss;
  Matrix d_input;
};

// Losses coupling image features with text features.
struct PairLossGrad {
  LossValue loss;
  Matrix d_image;
  Matrix d_text;
};

// Mean softmax cross-entropy against one-hot labels.
LossGrad identity_loss(const Matrix& logits, std::span<const int> labels);

// softplus(sum_j w_j d_j - sum_k w_k d_k) with softmax(d) weights on positive
// distances and softmax(-d) weights on negative distances.
double weighted_triplet_anchor_term(std::span<const double> positive_distances,
                                    std::span<const double> negative_distances);

// Mean of the anchor term over every row; positives exclude the anchor itself.
// Throws InputError if some anchor lacks a positive or a negative.
LossGrad weighted_regularized_triplet(const Matrix& features, std::span<const int> labels);

// One modality term: -1/n sum_i log softmax_j(s(f_i, t_j))_i where row i of
// `text` is the text feature of sample i's identity.
PairLossGrad image_to_text_contrastive(const Matrix& image, const Matrix& text, double scale = 1.0);

// One modality term: for anchor i with text t_i = text of y_i, the softmax runs
// over all images j against t_i and the log-likelihood is averaged over the
// samples sharing y_i.
PairLossGrad text_to_image_contrastive(const Matrix& image, std::span<const int> labels, const Matrix& text,
                                       double scale = 1.0);

// Cross-entropy of each image against the full per-identity prototype bank.
PairLossGrad image_to_text_ce(const Matrix& image, std::span<const int> labels, const Matrix& bank,
                              double scale = 1.0);

struct Stage3Components {
  double identity = 0.0;
  double triplet = 0.0;
  double ce_visible = 0.0;
  double ce_infrared = 0.0;
};

// L_id + l1 L_wrt + l2 L_ce^v + l3 L_ce^r.
LossValue combine_stage3(const Stage3Components& c, const LossWeights& w);

struct Stage3Result {
  LossValue loss;
  Matrix d_features;
  Matrix d_logits;
};

// Full stage-3 objective over one batch. `visible_bank` / `infrared_bank`
// are the prototype banks for the two modality terms (both f_ts in the full
// model) and are treated as constants.
Stage3Result stage3_total(const Matrix& features, const Matrix& logits, std::span<const int> labels,
                          std::span<const Modality> modality, const Matrix& visible_bank, const Matrix& infrared_bank,
                          const LossWeights& weights, double scale = 1.0);

// Row-wise L2 normalization with the epsilon clamp; counts clamped rows.
Matrix normalize_rows(const Matrix& x, int* guarded = nullptr);
Matrix normalize_rows_backward(const Matrix& x, const Matrix& normalized, const Matrix& d_normalized);

}  // namespace csdn::losses
