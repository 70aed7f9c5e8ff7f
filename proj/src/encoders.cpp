#include "csdn/encoders.hpp"

#include <cmath>

#include "csdn/errors.hpp"

namespace csdn {

namespace {

constexpr std::string_view kPrefixWords[] = {"a", "photo", "of", "a"};
constexpr std::string_view kSuffixWords[] = {"person"};
constexpr double kInputGain = 4.0;

std::uint64_t fnv1a(std::string_view s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ULL ^ seed;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ULL;
  }
  return h;
}

void check_modality(Modality m) {
  if (m != Modality::kVisible && m != Modality::kInfrared) {
    throw InputError("modality value " + std::to_string(static_cast<int>(m)) + " is not visible or infrared");
  }
}

}  // namespace

VisualEncoder::VisualEncoder(const EncoderConfig& config, std::mt19937_64& rng) : config_(config) {
  if (config.stem_channels < 1 || config.trunk_channels < 1 || config.feature_dim < 1) {
    throw ConfigError("encoder channel counts and feature_dim must be >= 1");
  }
  const int c = config.image_shape.channels;
  for (auto* stem : {&stem_visible_, &stem_infrared_}) {
    stem->add(nn::Conv2d(c, config.stem_channels, 3, 1, 1));
    stem->add(nn::Conv2d(config.stem_channels, config.stem_channels, 3, 1, 1));
    stem->init_he(rng);
  }
  trunk_.add(nn::Conv2d(config.stem_channels, config.trunk_channels, 3, 2, 1));
  trunk_.add(nn::Conv2d(config.trunk_channels, config.trunk_channels, 3, 1, 1));
  trunk_.init_he(rng);
  projection_ = nn::Linear(config.trunk_channels, config.feature_dim, true);
  projection_.init_uniform(rng);
}

Matrix VisualEncoder::encode(std::span<const data::Image> images, std::span<const Modality> modality,
                             Cache* cache) const {
  if (images.size() != modality.size()) throw InputError("one modality tag is required per image");
  const auto& shape = config_.image_shape;
  const auto n = static_cast<Eigen::Index>(images.size());
  Matrix pooled(n, config_.trunk_channels);
  if (cache != nullptr) cache->samples.assign(images.size(), {});

  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& img = images[i];
    check_modality(modality[i]);
    if (img.rows() != shape.channels || img.cols() != shape.pixels()) {
      throw InputError("image " + std::to_string(i) + " does not match the configured shape");
    }
    SampleCache* sc = cache ? &cache->samples[i] : nullptr;
    if (sc != nullptr) sc->modality = modality[i];
    const auto& stem = modality[i] == Modality::kVisible ? stem_visible_ : stem_infrared_;
    int h = 0;
    int w = 0;
    // Per-image channel centering; the gain brings [0, 1] pixels to roughly unit scale.
    const Matrix x = (img.colwise() - img.rowwise().mean()) * kInputGain;
    const Matrix s = stem.forward(x, shape.height, shape.width, sc ? &sc->stem : nullptr, &h, &w);
    const Matrix t = trunk_.forward(s, h, w, sc ? &sc->trunk : nullptr);
    pooled.row(i) = t.rowwise().mean().transpose();
  }
  if (cache != nullptr) cache->pooled = pooled;
  return projection_.forward(pooled);
}

void VisualEncoder::backward(const Cache& cache, const Matrix& d_features) {
  const Matrix d_pooled = projection_.backward(cache.pooled, d_features);
  for (std::size_t i = 0; i < cache.samples.size(); ++i) {
    const auto& sc = cache.samples[i];
    const int spatial = sc.trunk.out_height * sc.trunk.out_width;
    // Mean pool spreads the gradient evenly over all positions.
    const Matrix d_trunk =
        (d_pooled.row(static_cast<Eigen::Index>(i)).transpose() / spatial).replicate(1, spatial);
    const Matrix d_stem = trunk_.backward(sc.trunk, d_trunk);
    auto& stem = sc.modality == Modality::kVisible ? stem_visible_ : stem_infrared_;
    stem.backward(sc.stem, d_stem);
  }
}

std::vector<nn::NamedParameter> VisualEncoder::stem_parameters() {
  std::vector<nn::NamedParameter> out;
  stem_visible_.append_parameters("visible.", out);
  stem_infrared_.append_parameters("infrared.", out);
  return out;
}

std::vector<nn::NamedParameter> VisualEncoder::trunk_parameters() {
  std::vector<nn::NamedParameter> out;
  trunk_.append_parameters("", out);
  projection_.append_parameters("projection.", out);
  return out;
}

Matrix encode_images(const VisualEncoder& encoder, const data::Batch& batch, VisualEncoder::Cache* cache) {
  return encoder.encode(batch.images, batch.modality, cache);
}

ClassifierHead::ClassifierHead(int feature_dim, int num_identities, std::mt19937_64& rng)
    : weight(num_identities, feature_dim) {
  std::normal_distribution<double> normal(0.0, 0.001);
  for (Eigen::Index i = 0; i < weight.value.size(); ++i) weight.value.data()[i] = normal(rng);
}

Matrix ClassifierHead::classify(const Matrix& features) const {
  if (features.cols() != weight.value.cols()) {
    throw InputError("classifier expects " + std::to_string(weight.value.cols()) + "-dim features, got " +
                     std::to_string(features.cols()));
  }
  return features * weight.value.transpose();
}

Matrix ClassifierHead::backward(const Matrix& features, const Matrix& d_logits) {
  weight.grad.noalias() += d_logits.transpose() * features;
  return d_logits * weight.value;
}

Matrix classify(const ClassifierHead& head, const Matrix& features) { return head.classify(features); }

RowVector embed_word(std::string_view word, int dim, std::uint64_t seed) {
  std::mt19937_64 rng(fnv1a(word, seed));
  std::normal_distribution<double> normal(0.0, 1.0);
  RowVector v(dim);
  for (int i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

PromptBank PromptBank::create(const PromptConfig& config) {
  if (config.num_identities < 1 || config.num_tokens < 1 || config.token_dim < 1) {
    throw ConfigError("prompt bank needs num_identities, num_tokens and token_dim >= 1");
  }
  PromptBank bank;
  bank.config = config;
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> ctx(0.0, 0.02);
  std::normal_distribution<double> unit(0.0, 1.0);

  const Eigen::Index rows = static_cast<Eigen::Index>(config.num_identities) * config.num_tokens;
  bank.visible_tokens = nn::Parameter(rows, config.token_dim);
  for (Eigen::Index i = 0; i < bank.visible_tokens.value.size(); ++i) bank.visible_tokens.value.data()[i] = ctx(rng);
  if (!config.shared) {
    bank.infrared_tokens = nn::Parameter(rows, config.token_dim);
    for (Eigen::Index i = 0; i < bank.infrared_tokens.value.size(); ++i)
      bank.infrared_tokens.value.data()[i] = ctx(rng);
  }
  bank.identity_tokens.resize(config.num_identities, config.token_dim);
  for (Eigen::Index i = 0; i < bank.identity_tokens.size(); ++i) bank.identity_tokens.data()[i] = unit(rng);

  bank.context_prefix.resize(std::size(kPrefixWords), config.token_dim);
  for (std::size_t i = 0; i < std::size(kPrefixWords); ++i)
    bank.context_prefix.row(static_cast<Eigen::Index>(i)) = embed_word(kPrefixWords[i], config.token_dim, config.seed);
  bank.context_suffix.resize(std::size(kSuffixWords), config.token_dim);
  for (std::size_t i = 0; i < std::size(kSuffixWords); ++i)
    bank.context_suffix.row(static_cast<Eigen::Index>(i)) = embed_word(kSuffixWords[i], config.token_dim, config.seed);
  return bank;
}

nn::Parameter& PromptBank::tokens_for(Modality m) {
  check_modality(m);
  return (config.shared || m == Modality::kVisible) ? visible_tokens : infrared_tokens;
}

const nn::Parameter& PromptBank::tokens_for(Modality m) const {
  check_modality(m);
  return (config.shared || m == Modality::kVisible) ? visible_tokens : infrared_tokens;
}

Matrix build_prompt_sequence(const PromptBank& bank, int identity, Modality modality) {
  if (identity < 0 || identity >= bank.num_identities()) {
    throw InputError("identity " + std::to_string(identity) + " outside the prompt bank");
  }
  const auto& tokens = bank.tokens_for(modality).value;
  const int M = bank.config.num_tokens;
  const auto prefix = bank.context_prefix.rows();
  Matrix seq(bank.sequence_length(), bank.config.token_dim);
  seq.topRows(prefix) = bank.context_prefix;
  seq.middleRows(prefix, M) = tokens.middleRows(static_cast<Eigen::Index>(identity) * M, M);
  seq.row(prefix + M) = bank.identity_tokens.row(identity);
  seq.bottomRows(bank.context_suffix.rows()) = bank.context_suffix;
  return seq;
}

TextEncoder::TextEncoder(int token_dim, int feature_dim, std::uint64_t seed) : projection(feature_dim, token_dim) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(token_dim)));
  for (Eigen::Index i = 0; i < projection.value.size(); ++i) projection.value.data()[i] = normal(rng);
}

RowVector TextEncoder::encode(const Matrix& tokens) const {
  if (tokens.cols() != projection.value.cols()) throw InputError("token dimension does not match the text encoder");
  const RowVector pooled = tokens.colwise().mean();
  return pooled * projection.value.transpose();
}

RowVector TextEncoder::token_gradient(const RowVector& d_feature, int length) const {
  return (d_feature * projection.value) / static_cast<double>(length);
}

TextFeatureBank compute_text_bank(const PromptBank& bank, const TextEncoder& encoder) {
  TextFeatureBank out;
  const int n = bank.num_identities();
  out.f_tv.resize(n, encoder.feature_dim());
  out.f_tr.resize(n, encoder.feature_dim());
  for (int y = 0; y < n; ++y) {
    out.f_tv.row(y) = encoder.encode(build_prompt_sequence(bank, y, Modality::kVisible));
    out.f_tr.row(y) = encoder.encode(build_prompt_sequence(bank, y, Modality::kInfrared));
  }
  return out;
}

void accumulate_prompt_gradients(PromptBank& bank, const TextEncoder& encoder, const Matrix& d_tv,
                                 const Matrix& d_tr) {
  const int M = bank.config.num_tokens;
  const int length = bank.sequence_length();
  auto scatter = [&](nn::Parameter& tokens, const Matrix& d) {
    if (d.size() == 0) return;
    if (tokens.grad.rows() != tokens.value.rows() || tokens.grad.cols() != tokens.value.cols()) tokens.zero_grad();
    for (int y = 0; y < bank.num_identities(); ++y) {
      const RowVector g = encoder.token_gradient(d.row(y), length);
      for (int m = 0; m < M; ++m) tokens.grad.row(static_cast<Eigen::Index>(y) * M + m) += g;
    }
  };
  scatter(bank.tokens_for(Modality::kVisible), d_tv);
  scatter(bank.tokens_for(Modality::kInfrared), d_tr);
}

}  // namespace csdn
