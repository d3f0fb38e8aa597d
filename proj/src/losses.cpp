#include "tim/losses.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace tim {

LossWeights LossWeights::defaults_for(const Schema& schema) {
  LossWeights w;
  for (const auto& m : schema.modalities)
    w.modality.push_back(m == "audio" ? 0.01 : 1.0);
  return w;
}

std::vector<PairSample> sample_td_pairs(
    const std::vector<NormalizedInterval>& times,
    const std::vector<int>& modality, PairSampling mode, Rng& rng) {
  std::vector<std::vector<int>> by_mod;
  for (std::size_t i = 0; i < modality.size(); ++i) {
    const std::size_t m = static_cast<std::size_t>(modality[i]);
    if (by_mod.size() <= m) by_mod.resize(m + 1);
    by_mod[m].push_back(static_cast<int>(i));
  }
  std::vector<PairSample> out;
  const bool cross = mode == PairSampling::kCrossModal && by_mod.size() >= 2 &&
                     !by_mod[0].empty() && !by_mod[1].empty();
  if (cross) {
    auto a = by_mod[0];
    auto b = by_mod[1];
    rng.shuffle(a);
    rng.shuffle(b);
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t k = 0; k < n; ++k) {
      PairSample p;
      p.i = a[k];
      p.j = b[k];
      p.target = td_target(times[static_cast<std::size_t>(p.i)],
                           times[static_cast<std::size_t>(p.j)]);
      out.push_back(p);
    }
  } else {
    for (auto& ids : by_mod) {
      rng.shuffle(ids);
      for (std::size_t k = 0; k + 1 < ids.size(); k += 2) {
        PairSample p;
        p.i = ids[k];
        p.j = ids[k + 1];
        p.target = td_target(times[static_cast<std::size_t>(p.i)],
                             times[static_cast<std::size_t>(p.j)]);
        out.push_back(p);
      }
    }
  }
  return out;
}

Real query_ce_loss(const Mat& logits, const std::vector<int>& targets,
                   bool* empty_flag) {
  if (empty_flag) *empty_flag = logits.rows() == 0;
  if (logits.rows() == 0) return 0.0;
  if (static_cast<Index>(targets.size()) != logits.rows())
    throw std::invalid_argument("targets must align with logits");
  Real sum = 0.0;
  for (Index i = 0; i < logits.rows(); ++i) {
    const Real m = logits.row(i).maxCoeff();
    const Real lse = m + std::log((logits.row(i).array() - m).exp().sum());
    sum += lse - logits(i, targets[static_cast<std::size_t>(i)]);
  }
  return sum / static_cast<Real>(logits.rows());
}

Real total_loss(const std::vector<Real>& modality_losses, Real td,
                const LossWeights& w) {
  if (modality_losses.size() != w.modality.size())
    throw std::invalid_argument("one loss per modality expected");
  Real out = 0.0;
  for (std::size_t m = 0; m < modality_losses.size(); ++m)
    out += w.modality[m] * modality_losses[m];
  return out + w.td * td;
}

Real focal_loss(const Mat& logits, const Mat& targets, Real gamma,
                Real alpha) {
  if (logits.rows() == 0) return 0.0;
  if (targets.rows() != logits.rows() || targets.cols() != logits.cols())
    throw std::invalid_argument("focal targets must match logits");
  nn::Tape tape;
  nn::Var terms = ad::sigmoid_focal_terms(tape.leaf(logits), targets, gamma,
                                          alpha);
  return terms.val().sum() / static_cast<Real>(logits.rows());
}

Real diou_loss(const NormalizedInterval& pred, const NormalizedInterval& gt) {
  nn::Tape tape;
  Mat p(1, 2), g(1, 2);
  p << pred.start, pred.end;
  g << gt.start, gt.end;
  return ad::diou_rows(tape.leaf(p), g).val()(0, 0);
}

Real detection_loss(Real cls, Real reg, const LossWeights& w) {
  return cls + w.det_reg * reg;
}

RecognitionWindowTerms build_recognition_terms(const TimModel& model,
                                               const ForwardOut& fwd,
                                               const WindowSample& window,
                                               PairSampling mode, Rng& rng) {
  RecognitionWindowTerms terms;
  const std::size_t n_mod = model.cfg.schema.modalities.size();
  terms.ce_sum.resize(n_mod);
  terms.ce_count.assign(n_mod, 0);

  // window.queries holds the valid queries in forward order
  std::vector<const Query*> valid;
  for (const auto& q : window.queries)
    if (q.valid) valid.push_back(&q);

  for (const auto& g : fwd.groups) {
    std::vector<int> targets;
    targets.reserve(g.query_indices.size());
    for (int qi : g.query_indices) {
      const Query* q = valid[static_cast<std::size_t>(qi)];
      if (q->target < 0)
        throw std::invalid_argument("recognition query without a target");
      targets.push_back(q->target);
    }
    nn::Var losses = ad::cross_entropy_rows(g.logits, std::move(targets));
    nn::Var s = ad::sum_all(losses);
    const std::size_t m = static_cast<std::size_t>(g.modality);
    terms.ce_sum[m] =
        terms.ce_sum[m].valid() ? ad::add(terms.ce_sum[m], s) : s;
    terms.ce_count[m] += static_cast<int>(g.query_indices.size());
  }

  auto pairs = sample_td_pairs(fwd.feature_times, fwd.feature_modality, mode,
                               rng);
  if (!pairs.empty() && fwd.features.valid()) {
    std::vector<int> left, right;
    Mat targets(static_cast<Index>(pairs.size()), 1);
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      left.push_back(pairs[k].i);
      right.push_back(pairs[k].j);
      targets(static_cast<Index>(k), 0) = pairs[k].target;
    }
    nn::Var zi = ad::gather_rows(fwd.features, std::move(left));
    nn::Var zj = ad::gather_rows(fwd.features, std::move(right));
    nn::Var pred = model.td_head(ad::concat_cols(zi, zj));
    nn::Var err =
        ad::abs(ad::sub(pred, fwd.features.tape->constant(targets)));
    terms.td_sum = ad::sum_all(err);
    terms.td_count = static_cast<int>(pairs.size());
  }
  return terms;
}

DetectionWindowTerms build_detection_terms(
    const TimModel& model, const ForwardOut& fwd,
    const std::vector<DetectionTargetSpec>& targets, Real gamma, Real alpha) {
  DetectionWindowTerms terms;
  for (const auto& g : fwd.groups) {
    const int classes =
        model.cfg.schema.label_sets[static_cast<std::size_t>(g.modality)]
                                   [static_cast<std::size_t>(g.label_set)]
                                       .classes;
    Mat multi = Mat::Zero(static_cast<Index>(g.query_indices.size()), classes);
    std::vector<int> positive_rows;
    Mat gt(static_cast<Index>(g.query_indices.size()), 2);
    Index n_pos = 0;
    for (std::size_t r = 0; r < g.query_indices.size(); ++r) {
      const auto& t = targets[static_cast<std::size_t>(g.query_indices[r])];
      if (t.cls >= 0) {
        multi(static_cast<Index>(r), t.cls) = 1.0;
        gt.row(n_pos) << t.gt.start, t.gt.end;
        positive_rows.push_back(static_cast<int>(r));
        ++n_pos;
      }
    }
    nn::Var focal =
        ad::sigmoid_focal_terms(g.logits, std::move(multi), gamma, alpha);
    nn::Var fs = ad::sum_all(focal);
    terms.focal_sum =
        terms.focal_sum.valid() ? ad::add(terms.focal_sum, fs) : fs;
    terms.query_count += static_cast<int>(g.query_indices.size());

    if (n_pos > 0) {
      nn::Var zpos = ad::gather_rows(g.outputs, std::move(positive_rows));
      nn::Var pred = model.regression_head(g.modality, zpos);
      nn::Var losses = ad::diou_rows(pred, gt.topRows(n_pos));
      nn::Var ds = ad::sum_all(losses);
      terms.diou_sum =
          terms.diou_sum.valid() ? ad::add(terms.diou_sum, ds) : ds;
      terms.positive_count += static_cast<int>(n_pos);
    }
  }
  return terms;
}

}  // namespace tim
