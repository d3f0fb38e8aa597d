#pragma once

#include <vector>

#include "tim/model.hpp"

namespace tim {

struct LossWeights {
  std::vector<double> modality;  // aligned with schema modalities
  double td = 0.3;
  double det_reg = 0.5;

  /// Default weighting for a schema: 1.0 everywhere except audio at 0.01.
  static LossWeights defaults_for(const Schema& schema);
};

enum class PairSampling { kCrossModal, kWithinModal };

struct PairSample {
  int i = 0;
  int j = 0;
  double target = 0.0;  // d_ij
};

/// Temporal distance between two window-normalized intervals: absolute
/// difference of midpoints, in window units.
inline double td_target(const NormalizedInterval& a,
                        const NormalizedInterval& b) {
  return std::abs(a.centre() - b.centre());
}

/// Sample feature pairs for the temporal-distance loss. Cross-modal mode
/// pairs features of the first modality with features of the second,
/// uniformly without replacement, min(N^a, N^b) pairs; within-modal mode
/// forms disjoint pairs inside each modality instead.
std::vector<PairSample> sample_td_pairs(
    const std::vector<NormalizedInterval>& times,
    const std::vector<int>& modality, PairSampling mode, Rng& rng);

// ---------------------------------------------------------------------
// Value-level forms (pure; also the shapes the unit tests pin down).
// ---------------------------------------------------------------------

/// Mean softmax cross-entropy over queries. Empty input returns 0 and
/// sets *empty_flag when provided.
Real query_ce_loss(const Mat& logits, const std::vector<int>& targets,
                   bool* empty_flag = nullptr);

/// Sum of modality losses weighted by lambda^m plus lambda^td * td.
Real total_loss(const std::vector<Real>& modality_losses, Real td,
                const LossWeights& w);

/// Sigmoid focal loss: per-class terms summed per query, averaged over
/// queries. Targets are {0,1} per class; all-zero rows are negatives.
Real focal_loss(const Mat& logits, const Mat& targets, Real gamma = 2.0,
                Real alpha = 0.25);

/// 1-D distance-IoU loss: 1 - IoU + squared centre offset over the
/// squared enclosing span. Zero only for identical intervals; a fully
/// degenerate coincident pair is defined as 0.
Real diou_loss(const NormalizedInterval& pred, const NormalizedInterval& gt);

Real detection_loss(Real cls, Real reg, const LossWeights& w);

// ---------------------------------------------------------------------
// Graph-level builders used by training.
// ---------------------------------------------------------------------

struct RecognitionWindowTerms {
  std::vector<nn::Var> ce_sum;  // per modality; invalid when no queries
  std::vector<int> ce_count;    // valid queries per modality
  nn::Var td_sum;               // invalid when no pairs
  int td_count = 0;
};

/// Per-window loss pieces; batch-level normalizers are applied by the
/// caller once counts across the batch are known.
RecognitionWindowTerms build_recognition_terms(const TimModel& model,
                                               const ForwardOut& fwd,
                                               const WindowSample& window,
                                               PairSampling mode, Rng& rng);

struct DetectionTargetSpec {
  int cls = -1;                     // -1 = negative
  NormalizedInterval gt;            // defined for positives
};

struct DetectionWindowTerms {
  nn::Var focal_sum;  // summed focal terms over all queries
  int query_count = 0;
  nn::Var diou_sum;   // invalid when no positives
  int positive_count = 0;
};

DetectionWindowTerms build_detection_terms(
    const TimModel& model, const ForwardOut& fwd,
    const std::vector<DetectionTargetSpec>& targets, Real gamma, Real alpha);

}  // namespace tim
