#pragma once

#include <random>
#include <string_view>
#include <vector>

#include "csdn/nn.hpp"
#include "csdn/types.hpp"

namespace csdn {

// Which text bank supplies the attention query. With v_query the visible bank is
// the query and residual and the infrared bank supplies keys and values; r_query
// swaps the two roles.
enum class FusionDirection { kVisibleQuery, kInfraredQuery };

std::string_view to_string(FusionDirection d);
FusionDirection parse_fusion_direction(std::string_view s);

// Four bias-free d x d maps. W_c starts at zero so the block initially returns
// its query input unchanged.
struct FusionParams {
  nn::Parameter w_q;
  nn::Parameter w_k;
  nn::Parameter w_v;
  nn::Parameter w_c;

  static FusionParams create(int dim, std::mt19937_64& rng);
  int dim() const { return static_cast<int>(w_q.value.rows()); }
  std::vector<nn::NamedParameter> parameters();
};

struct FusionCache {
  Matrix query_in;
  Matrix kv_in;
  Matrix q;
  Matrix k;
  Matrix v;
  Matrix attention;  // (n, n), row-stochastic
  Matrix mixed;      // attention * v
};

// out = query + (softmax(q k^T / sqrt(d)) v) W_c^T with q = query W_q^T,
// k = kv W_k^T, v = kv W_v^T.
Matrix attention_fuse(const FusionParams& params, const Matrix& query, const Matrix& key_value,
                      FusionCache* cache = nullptr);

struct FusionInputGrads {
  Matrix d_query;
  Matrix d_key_value;
};

// Adds parameter gradients into `params` and returns the input gradients.
FusionInputGrads attention_fuse_backward(FusionParams& params, const FusionCache& cache, const Matrix& d_out);

// f_ts from the two text banks, honouring the direction switch.
Matrix fuse_text_banks(const FusionParams& params, const Matrix& f_tv, const Matrix& f_tr, FusionDirection direction,
                       FusionCache* cache = nullptr);

}  // namespace csdn
