#include "csdn/fusion.hpp"

#include <cmath>
#include <string>

#include "csdn/errors.hpp"

namespace csdn {

std::string_view to_string(FusionDirection d) {
  return d == FusionDirection::kVisibleQuery ? "v_query" : "r_query";
}

FusionDirection parse_fusion_direction(std::string_view s) {
  if (s == "v_query") return FusionDirection::kVisibleQuery;
  if (s == "r_query") return FusionDirection::kInfraredQuery;
  throw ConfigError("fusion_direction must be v_query or r_query, got '" + std::string(s) + "'");
}

FusionParams FusionParams::create(int dim, std::mt19937_64& rng) {
  if (dim < 1) throw ConfigError("fusion dimension must be >= 1");
  FusionParams p;
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  std::uniform_real_distribution<double> uniform(-bound, bound);
  for (auto* w : {&p.w_q, &p.w_k, &p.w_v}) {
    *w = nn::Parameter(dim, dim);
    for (Eigen::Index i = 0; i < w->value.size(); ++i) w->value.data()[i] = uniform(rng);
  }
  p.w_c = nn::Parameter(dim, dim);
  return p;
}

std::vector<nn::NamedParameter> FusionParams::parameters() {
  return {{"w_q", &w_q}, {"w_k", &w_k}, {"w_v", &w_v}, {"w_c", &w_c}};
}

Matrix attention_fuse(const FusionParams& params, const Matrix& query, const Matrix& key_value, FusionCache* cache) {
  const int d = params.dim();
  if (query.rows() < 1 || query.rows() != key_value.rows() || query.cols() != d || key_value.cols() != d) {
    throw InputError("attention_fuse expects two (n, " + std::to_string(d) + ") inputs with n >= 1, got (" +
                     std::to_string(query.rows()) + ", " + std::to_string(query.cols()) + ") and (" +
                     std::to_string(key_value.rows()) + ", " + std::to_string(key_value.cols()) + ")");
  }
  const Matrix q = query * params.w_q.value.transpose();
  const Matrix k = key_value * params.w_k.value.transpose();
  const Matrix v = key_value * params.w_v.value.transpose();

  Matrix a = (q * k.transpose()) / std::sqrt(static_cast<double>(d));
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double mx = a.row(i).maxCoeff();
    a.row(i) = (a.row(i).array() - mx).exp().matrix();
    a.row(i) /= a.row(i).sum();
  }
  const Matrix mixed = a * v;
  Matrix out = query + mixed * params.w_c.value.transpose();
  if (cache != nullptr) {
    cache->query_in = query;
    cache->kv_in = key_value;
    cache->q = q;
    cache->k = k;
    cache->v = v;
    cache->attention = std::move(a);
    cache->mixed = mixed;
  }
  return out;
}

FusionInputGrads attention_fuse_backward(FusionParams& params, const FusionCache& cache, const Matrix& d_out) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params.dim()));
  const Matrix& a = cache.attention;

  params.w_c.grad.noalias() += d_out.transpose() * cache.mixed;
  const Matrix d_mixed = d_out * params.w_c.value;
  const Matrix d_a = d_mixed * cache.v.transpose();
  const Matrix d_v = a.transpose() * d_mixed;

  // Row-softmax Jacobian.
  const Vector row_dot = (d_a.array() * a.array()).rowwise().sum();
  const Matrix d_scores = (a.array() * (d_a.array().colwise() - row_dot.array())).matrix() * inv_sqrt_d;
  const Matrix d_q = d_scores * cache.k;
  const Matrix d_k = d_scores.transpose() * cache.q;

  params.w_q.grad.noalias() += d_q.transpose() * cache.query_in;
  params.w_k.grad.noalias() += d_k.transpose() * cache.kv_in;
  params.w_v.grad.noalias() += d_v.transpose() * cache.kv_in;

  FusionInputGrads g;
  g.d_query = d_out + d_q * params.w_q.value;
  g.d_key_value = d_k * params.w_k.value + d_v * params.w_v.value;
  return g;
}

Matrix fuse_text_banks(const FusionParams& params, const Matrix& f_tv, const Matrix& f_tr, FusionDirection direction,
                       FusionCache* cache) {
  return direction == FusionDirection::kVisibleQuery ? attention_fuse(params, f_tv, f_tr, cache)
                                                     : attention_fuse(params, f_tr, f_tv, cache);
}

}  // namespace csdn
