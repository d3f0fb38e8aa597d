#include "tim/model.hpp"

#include <cmath>
#include <stdexcept>

namespace tim {

int ModelConfig::token_dim() const {
  const bool cat = interval_variant != IntervalVariant::kIntervalAdd &&
                   interval_variant != IntervalVariant::kSeparateAdd;
  return cat ? 2 * embed_dim : embed_dim;
}

void ModelConfig::validate() const {
  if (embed_dim <= 0) throw std::invalid_argument("embed_dim must be > 0");
  if (encoder_layers <= 0)
    throw std::invalid_argument("encoder_layers must be > 0");
  if (attention_heads <= 0 || token_dim() % attention_heads != 0)
    throw std::invalid_argument("token dim must divide by attention heads");
  if (encoder_dropout < 0.0 || encoder_dropout >= 1.0 ||
      channel_dropout_input < 0.0 || channel_dropout_input >= 1.0)
    throw std::invalid_argument("dropout probabilities must be in [0,1)");
  if (time_mlp_hidden <= 0 || td_head_hidden <= 0)
    throw std::invalid_argument("hidden widths must be > 0");
  schema.validate();
}

TimModel::TimModel(ModelConfig config, Rng& rng) : cfg(std::move(config)) {
  cfg.validate();
  const int d = cfg.embed_dim;
  const int td = cfg.token_dim();

  for (std::size_t m = 0; m < cfg.schema.modalities.size(); ++m) {
    const std::string& name = cfg.schema.modalities[m];
    embed.emplace_back("embed." + name, cfg.schema.feature_dims[m], d, rng);
    embed_norm.emplace_back("embed." + name + ".norm", d);
  }
  interval_enc = IntervalEncoder(cfg.interval_variant, d, cfg.time_mlp_hidden,
                                 rng);
  for (std::size_t m = 0; m < cfg.schema.modalities.size(); ++m) {
    const std::string& name = cfg.schema.modalities[m];
    modality_enc.emplace_back("modality_enc." + name,
                              nn::uniform_fan_in(1, td, d, rng));
    std::vector<nn::Parameter> sets;
    for (const auto& s : cfg.schema.label_sets[m])
      sets.emplace_back("cls." + name + "." + s.name,
                        nn::uniform_fan_in(1, d, d, rng));
    cls.push_back(std::move(sets));
  }
  for (int l = 0; l < cfg.encoder_layers; ++l)
    blocks.emplace_back("encoder." + std::to_string(l), td,
                        cfg.attention_heads, cfg.encoder_dropout, rng);
  final_norm = nn::LayerNorm("encoder.norm", td);
  // focal-loss prior: detection heads start with every class improbable,
  // so the negative sea does not drown the rare positives early on
  const Real detection_prior_bias = -std::log((1.0 - 0.01) / 0.01);
  for (std::size_t m = 0; m < cfg.schema.modalities.size(); ++m) {
    const std::string& name = cfg.schema.modalities[m];
    std::vector<nn::Linear> hs;
    for (const auto& s : cfg.schema.label_sets[m]) {
      hs.emplace_back("head." + name + "." + s.name, td, s.classes, rng);
      if (cfg.detection)
        hs.back().b.value.setConstant(detection_prior_bias);
    }
    heads.push_back(std::move(hs));
  }
  td_fc1 = nn::Linear("td_head.fc1", 2 * td, cfg.td_head_hidden, rng);
  td_fc2 = nn::Linear("td_head.fc2", cfg.td_head_hidden, cfg.td_head_hidden,
                      rng);
  td_fc3 = nn::Linear("td_head.fc3", cfg.td_head_hidden, 1, rng);
  if (cfg.detection) {
    for (std::size_t m = 0; m < cfg.schema.modalities.size(); ++m) {
      const std::string& name = cfg.schema.modalities[m];
      reg_fc1.emplace_back("reg." + name + ".fc1", td, d, rng);
      reg_fc2.emplace_back("reg." + name + ".fc2", d, d, rng);
      reg_fc3.emplace_back("reg." + name + ".fc3", d, 2, rng);
    }
  }
}

nn::Var TimModel::embed_features(nn::Tape& tape, int modality,
                                 const SelectedFeatures& sel, bool train,
                                 Rng& rng) const {
  const std::size_t m = static_cast<std::size_t>(modality);
  if (sel.features.cols() != cfg.schema.feature_dims[m])
    throw std::invalid_argument("feature dim mismatch for modality " +
                                cfg.schema.modalities[m]);
  nn::Var x = tape.constant(sel.features);
  x = nn::channel_dropout(x, cfg.channel_dropout_input, train, rng);
  nn::Var g = embed_norm[m](ad::gelu(embed[m](x)));
  nn::Var enc = interval_enc.encode(tape, sel.times);
  nn::Var tok = interval_enc.concat_consumed() ? ad::concat_cols(g, enc)
                                               : ad::add(g, enc);
  auto& self = const_cast<TimModel&>(*this);
  return ad::add_rowvec(tok, tape.param(self.modality_enc[m]));
}

ForwardOut TimModel::forward(nn::Tape& tape, const WindowSample& window,
                             const std::vector<IntervalQuery>& queries,
                             bool train, Rng& rng,
                             bool want_attention) const {
  auto& self = const_cast<TimModel&>(*this);
  ForwardOut out;

  // feature tokens, modality blocks stacked in schema order
  nn::Var x_feat;
  for (std::size_t m = 0; m < cfg.schema.modalities.size(); ++m) {
    const auto& sel = window.per_modality[m];
    if (sel.features.rows() == 0) continue;
    nn::Var tok = embed_features(tape, static_cast<int>(m), sel, train, rng);
    x_feat = x_feat.valid() ? ad::concat_rows(x_feat, tok) : tok;
    for (std::size_t i = 0; i < sel.times.size(); ++i) {
      out.feature_times.push_back(sel.times[i]);
      out.feature_modality.push_back(static_cast<int>(m));
    }
  }

  // query tokens, grouped by (modality, label set)
  struct GroupDraft {
    int modality, set;
    std::vector<int> indices;
    std::vector<NormalizedInterval> ts;
  };
  std::vector<GroupDraft> drafts;
  for (std::size_t qi = 0; qi < queries.size(); ++qi) {
    const auto& q = queries[qi];
    if (q.modality < 0 ||
        q.modality >= static_cast<int>(cfg.schema.modalities.size()))
      throw std::invalid_argument("query names an unknown modality");
    if (q.label_set < 0 ||
        q.label_set >=
            static_cast<int>(cfg.schema.label_sets[static_cast<std::size_t>(
                                                       q.modality)]
                                 .size()))
      throw std::invalid_argument("query names an unknown label set");
    GroupDraft* g = nullptr;
    for (auto& d : drafts)
      if (d.modality == q.modality && d.set == q.label_set) g = &d;
    if (!g) {
      drafts.push_back(GroupDraft{q.modality, q.label_set, {}, {}});
      g = &drafts.back();
    }
    g->indices.push_back(static_cast<int>(qi));
    g->ts.push_back(q.t);
  }

  nn::Var x_query;
  std::vector<std::pair<Index, Index>> group_rows;  // row0, count
  Index row0 = 0;
  for (const auto& d : drafts) {
    const std::size_t m = static_cast<std::size_t>(d.modality);
    const std::size_t s = static_cast<std::size_t>(d.set);
    const Index k = static_cast<Index>(d.indices.size());
    nn::Var enc = interval_enc.encode(tape, d.ts, /*row_stable=*/true);
    nn::Var base = ad::matmul_rows(tape.constant(Mat::Ones(k, 1)),
                                   tape.param(self.cls[m][s]));
    nn::Var tok = interval_enc.concat_consumed() ? ad::concat_cols(base, enc)
                                                 : ad::add(base, enc);
    tok = ad::add_rowvec(tok, tape.param(self.modality_enc[m]));
    x_query = x_query.valid() ? ad::concat_rows(x_query, tok) : tok;
    group_rows.emplace_back(row0, k);
    row0 += k;
  }

  // encoder stack
  if (want_attention) out.attention.query_attention.resize(blocks.size());
  for (std::size_t l = 0; l < blocks.size(); ++l) {
    auto r = blocks[l].forward(
        x_feat, x_query, train, rng,
        want_attention ? &out.attention.query_attention[l] : nullptr);
    x_feat = r.features;
    x_query = r.queries;
  }
  if (x_feat.valid()) x_feat = final_norm(x_feat);
  if (x_query.valid()) x_query = final_norm(x_query);
  out.features = x_feat;

  for (std::size_t gi = 0; gi < drafts.size(); ++gi) {
    QueryGroupOut g;
    g.modality = drafts[gi].modality;
    g.label_set = drafts[gi].set;
    g.query_indices = drafts[gi].indices;
    g.outputs = ad::slice_rows(x_query, group_rows[gi].first,
                               group_rows[gi].second);
    g.logits = heads[static_cast<std::size_t>(g.modality)]
                    [static_cast<std::size_t>(g.label_set)]
                        .forward(g.outputs, /*row_stable=*/true);
    out.groups.push_back(std::move(g));
  }
  return out;
}

ForwardOut TimModel::forward(nn::Tape& tape, const WindowSample& window,
                             bool train, Rng& rng,
                             bool want_attention) const {
  std::vector<IntervalQuery> qs;
  for (const auto& q : window.queries)
    if (q.valid) qs.push_back(IntervalQuery{q.t, q.modality, q.label_set});
  return forward(tape, window, qs, train, rng, want_attention);
}

nn::Var TimModel::td_head(nn::Var pairs) const {
  nn::Var h = ad::relu(td_fc1(pairs));
  h = ad::relu(td_fc2(h));
  return td_fc3(h);
}

nn::Var TimModel::regression_head(int modality, nn::Var z) const {
  if (!cfg.detection)
    throw std::logic_error("regression head requires a detection model");
  const std::size_t m = static_cast<std::size_t>(modality);
  nn::Var h = ad::relu(reg_fc1[m].forward(z, true));
  h = ad::relu(reg_fc2[m].forward(h, true));
  return ad::sort2_cols(ad::sigmoid(reg_fc3[m].forward(h, true)));
}

std::vector<nn::Parameter*> TimModel::params() {
  std::vector<nn::Parameter*> out;
  for (auto& e : embed) e.collect(out);
  for (auto& n : embed_norm) n.collect(out);
  interval_enc.collect(out);
  for (auto& p : modality_enc) out.push_back(&p);
  for (auto& sets : cls)
    for (auto& p : sets) out.push_back(&p);
  for (auto& b : blocks) b.collect(out);
  final_norm.collect(out);
  for (auto& sets : heads)
    for (auto& h : sets) h.collect(out);
  td_fc1.collect(out);
  td_fc2.collect(out);
  td_fc3.collect(out);
  for (auto& l : reg_fc1) l.collect(out);
  for (auto& l : reg_fc2) l.collect(out);
  for (auto& l : reg_fc3) l.collect(out);
  return out;
}

Index TimModel::param_count() {
  Index n = 0;
  for (auto* p : params()) n += p->size();
  return n;
}

MatX<bool> build_attention_mask(Index n_features, Index n_queries) {
  if (n_features < 0 || n_queries < 0)
    throw std::invalid_argument("token counts must be >= 0");
  const Index n = n_features + n_queries;
  MatX<bool> mask = MatX<bool>::Constant(n, n, false);
  mask.topLeftCorner(n_features, n_features).setConstant(true);
  mask.bottomLeftCorner(n_queries, n_features).setConstant(true);
  for (Index q = 0; q < n_queries; ++q)
    mask(n_features + q, n_features + q) = true;
  return mask;
}

}  // namespace tim
