#pragma once

#include <string>
#include <vector>

#include "tim/interval_encoder.hpp"
#include "tim/nn.hpp"
#include "tim/windowing.hpp"

namespace tim {

struct ModelConfig {
  int embed_dim = 512;  // D
  int encoder_layers = 4;
  int attention_heads = 8;
  double encoder_dropout = 0.1;
  double channel_dropout_input = 0.5;
  int time_mlp_hidden = 512;
  int td_head_hidden = 1024;
  IntervalVariant interval_variant = IntervalVariant::kIntervalCat;
  bool detection = false;  // adds interval regression heads
  Schema schema;

  /// Token width: 2D for concatenated interval encodings, D for summed.
  int token_dim() const;
  void validate() const;
};

/// A query to run through the encoder: which interval, in which modality,
/// against which label set.
struct IntervalQuery {
  NormalizedInterval t;
  int modality = 0;
  int label_set = 0;
};

struct QueryGroupOut {
  int modality = 0;
  int label_set = 0;
  std::vector<int> query_indices;  // positions in the submitted query list
  nn::Var outputs;                 // k x token_dim
  nn::Var logits;                  // k x classes
};

struct AttentionMaps {
  // [layer][head]: rows are query tokens, columns are feature tokens plus
  // a final self column
  std::vector<std::vector<Mat>> query_attention;
};

struct ForwardOut {
  nn::Var features;                        // total x token_dim
  std::vector<NormalizedInterval> feature_times;  // aligned with rows
  std::vector<int> feature_modality;              // aligned with rows
  std::vector<QueryGroupOut> groups;
  AttentionMaps attention;  // filled when requested
};

/// Interval-conditioned multi-modal transformer. Feature tokens carry
/// embedded features stamped with their interval encoding and a modality
/// encoding; query tokens carry a learnable classification token stamped
/// the same way. Queries never see one another.
struct TimModel {
  ModelConfig cfg;
  IntervalEncoder interval_enc;
  std::vector<nn::Linear> embed;       // per modality
  std::vector<nn::LayerNorm> embed_norm;
  std::vector<nn::Parameter> modality_enc;  // e^m, 1 x token_dim
  std::vector<std::vector<nn::Parameter>> cls;  // [modality][set], 1 x D
  std::vector<nn::EncoderBlock> blocks;
  nn::LayerNorm final_norm;
  std::vector<std::vector<nn::Linear>> heads;  // [modality][set]
  nn::Linear td_fc1, td_fc2, td_fc3;
  std::vector<nn::Linear> reg_fc1, reg_fc2, reg_fc3;  // per modality

  TimModel() = default;
  TimModel(ModelConfig config, Rng& rng);

  /// Assemble tokens for one window plus an explicit query list and run
  /// the encoder. Dropout applies only when train; eval is deterministic.
  ForwardOut forward(nn::Tape& tape, const WindowSample& window,
                     const std::vector<IntervalQuery>& queries, bool train,
                     Rng& rng, bool want_attention = false) const;

  /// Convenience: forward over the window's own (valid) queries.
  ForwardOut forward(nn::Tape& tape, const WindowSample& window, bool train,
                     Rng& rng, bool want_attention = false) const;

  /// Temporal-distance head on channel-concatenated output pairs
  /// (n x 2*token_dim) -> n x 1 predicted elapsed time.
  nn::Var td_head(nn::Var pairs) const;

  /// Interval regression head for a modality: n x token_dim ->
  /// n x 2 (start, end) in [0,1], swapped into order.
  nn::Var regression_head(int modality, nn::Var z) const;

  std::vector<nn::Parameter*> params();
  Index param_count();

 private:
  nn::Var embed_features(nn::Tape& tape, int modality,
                         const SelectedFeatures& sel, bool train,
                         Rng& rng) const;
};

/// The masking rule as an explicit matrix, token order [features...,
/// queries...]: feature rows attend to every feature and no query; query
/// rows attend to every feature and themselves only.
MatX<bool> build_attention_mask(Index n_features, Index n_queries);

}  // namespace tim
