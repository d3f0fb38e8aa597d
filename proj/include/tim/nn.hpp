#pragma once

#include <string>
#include <vector>

#include "tim/ad.hpp"
#include "tim/rng.hpp"

namespace tim::nn {

using ad::Parameter;
using ad::Tape;
using ad::Var;

/// Symmetric uniform fan-in initialization: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
Mat uniform_fan_in(Index rows, Index cols, Index fan_in, Rng& rng);

struct Linear {
  Parameter w;  // in x out
  Parameter b;  // 1 x out

  Linear() = default;
  Linear(const std::string& name, Index in, Index out, Rng& rng);

  /// row_stable routes through the per-row product kernel, which keeps a
  /// row's output bit-identical regardless of the batch's row count.
  Var forward(Var x, bool row_stable) const;
  Var operator()(Var x) const { return forward(x, false); }
  Index in_dim() const { return w.value.rows(); }
  Index out_dim() const { return w.value.cols(); }
  void collect(std::vector<Parameter*>& out);
};

struct LayerNorm {
  Parameter gamma;  // 1 x d
  Parameter beta;   // 1 x d
  Real eps = 1e-5;

  LayerNorm() = default;
  LayerNorm(const std::string& name, Index d);

  Var operator()(Var x) const;
  void collect(std::vector<Parameter*>& out);
};

/// Inverted dropout; identity when !train or p == 0.
Var dropout(Var x, Real p, bool train, Rng& rng);

/// Zeroes whole channels (columns) of x with probability p, shared across
/// all rows; used on raw modality features.
Var channel_dropout(Var x, Real p, bool train, Rng& rng);

struct AttentionCapture {
  // per layer, per head: query-block attention rows, Q x (N_features + 1);
  // the final column is the query's self-attention weight.
  std::vector<std::vector<Mat>> query_attention;
};

/// Multi-head self-attention with the interval-query masking rule baked
/// into its structure: feature tokens attend to all feature tokens and to
/// no query; each query token attends to all feature tokens and itself
/// only. Computing the two blocks separately both enforces the mask and
/// keeps a query's output bit-identical regardless of co-queries.
struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, Index dim, int heads, Rng& rng);

  struct Out {
    Var features;  // N x dim
    Var queries;   // Q x dim (rows of an empty Var when Q == 0)
  };

  Out forward(Var x_feat, Var x_query, Real attn_dropout, bool train,
              Rng& rng, std::vector<Mat>* capture_heads = nullptr) const;

  void collect(std::vector<Parameter*>& out);
};

/// Pre-norm transformer block: x + MHA(LN(x)), then x + FFN(LN(x)) with a
/// 4x feed-forward expansion and GELU.
struct EncoderBlock {
  LayerNorm ln1, ln2;
  MultiHeadAttention attn;
  Linear ff1, ff2;
  Real dropout_p = 0.1;

  EncoderBlock() = default;
  EncoderBlock(const std::string& name, Index dim, int heads, Real dropout_p,
               Rng& rng);

  struct Out {
    Var features;
    Var queries;
  };

  Out forward(Var x_feat, Var x_query, bool train, Rng& rng,
              std::vector<Mat>* capture_heads = nullptr) const;

  void collect(std::vector<Parameter*>& out);
};

}  // namespace tim::nn
