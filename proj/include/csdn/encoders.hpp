#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "csdn/dataset.hpp"
#include "csdn/nn.hpp"
#include "csdn/types.hpp"

namespace csdn {

struct EncoderConfig {
  data::ImageShape image_shape{32, 16, 3};
  int stem_channels = 8;
  int trunk_channels = 16;
  int feature_dim = 32;
};

// Dual-stream visual encoder: a modality-specific stem (two conv blocks each)
// feeding a shared trunk (two conv blocks, global average pool, linear to d).
// Each image is channel-centred before its stem. Features are returned
// unnormalized.
class VisualEncoder {
 public:
  struct SampleCache {
    Modality modality = Modality::kVisible;
    nn::ConvStack::Cache stem;
    nn::ConvStack::Cache trunk;
  };
  struct Cache {
    std::vector<SampleCache> samples;
    Matrix pooled;  // (n, trunk_channels)
  };

  VisualEncoder() = default;
  VisualEncoder(const EncoderConfig& config, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }
  int feature_dim() const { return config_.feature_dim; }

  // Row i is trunk(stem_{modality[i]}(images[i])).
  Matrix encode(std::span<const data::Image> images, std::span<const Modality> modality,
                Cache* cache = nullptr) const;
  void backward(const Cache& cache, const Matrix& d_features);

  std::vector<nn::NamedParameter> stem_parameters();
  std::vector<nn::NamedParameter> trunk_parameters();

  nn::Linear& projection() { return projection_; }

 private:
  EncoderConfig config_;
  nn::ConvStack stem_visible_;
  nn::ConvStack stem_infrared_;
  nn::ConvStack trunk_;
  nn::Linear projection_;
};

Matrix encode_images(const VisualEncoder& encoder, const data::Batch& batch, VisualEncoder::Cache* cache = nullptr);

// Bias-free identity classifier d -> N_c.
class ClassifierHead {
 public:
  ClassifierHead() = default;
  ClassifierHead(int feature_dim, int num_identities, std::mt19937_64& rng);

  Matrix classify(const Matrix& features) const;
  Matrix backward(const Matrix& features, const Matrix& d_logits);

  int num_identities() const { return static_cast<int>(weight.value.rows()); }
  int feature_dim() const { return static_cast<int>(weight.value.cols()); }

  nn::Parameter weight;  // (N_c, d)
};

Matrix classify(const ClassifierHead& head, const Matrix& features);

// Deterministic embedding of a template word; the same word always maps to the
// same vector for a given seed.
RowVector embed_word(std::string_view word, int dim, std::uint64_t seed);

struct PromptConfig {
  int num_identities = 0;
  int num_tokens = 4;  // M
  int token_dim = 32;
  bool shared = false;  // one bank for both modalities
  std::uint64_t seed = 0;
};

// "A photo of a [X]_1 ... [X]_M [Cls] person" with per-identity learnable [X]
// tokens. The visible bank doubles as the shared bank when `shared` is set.
struct PromptBank {
  PromptConfig config;
  nn::Parameter visible_tokens;   // (N_c * M, token_dim), row y * M + m
  nn::Parameter infrared_tokens;  // same shape; empty when shared
  Matrix identity_tokens;         // (N_c, token_dim), fixed
  Matrix context_prefix;          // fixed, one row per word of "a photo of a"
  Matrix context_suffix;          // fixed, "person"

  static PromptBank create(const PromptConfig& config);

  int num_identities() const { return config.num_identities; }
  int sequence_length() const {
    return static_cast<int>(context_prefix.rows()) + config.num_tokens + 1 + static_cast<int>(context_suffix.rows());
  }
  nn::Parameter& tokens_for(Modality m);
  const nn::Parameter& tokens_for(Modality m) const;
};

// (sequence_length, token_dim).
Matrix build_prompt_sequence(const PromptBank& bank, int identity, Modality modality);

// Frozen text encoder: mean of the token embeddings, then a fixed linear map to d.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(int token_dim, int feature_dim, std::uint64_t seed);

  RowVector encode(const Matrix& tokens) const;
  // Gradient with respect to every token of a sequence of `length` tokens; the
  // encoder's own parameters never receive gradient.
  RowVector token_gradient(const RowVector& d_feature, int length) const;

  int token_dim() const { return static_cast<int>(projection.value.cols()); }
  int feature_dim() const { return static_cast<int>(projection.value.rows()); }

  nn::Parameter projection;  // (d, token_dim)
};

struct TextFeatureBank {
  Matrix f_tv;  // (N_c, d)
  Matrix f_tr;  // (N_c, d)
  Matrix f_ts;  // (N_c, d), filled by the fusion block
};

TextFeatureBank compute_text_bank(const PromptBank& bank, const TextEncoder& encoder);

// Back-propagates bank-row gradients into the learnable tokens. In shared mode
// both gradients land on the single bank.
void accumulate_prompt_gradients(PromptBank& bank, const TextEncoder& encoder, const Matrix& d_tv,
                                 const Matrix& d_tr);

}  // namespace csdn
