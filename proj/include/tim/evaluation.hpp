#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tim/detection.hpp"
#include "tim/losses.hpp"
#include "tim/model.hpp"

namespace tim {

/// Element-wise mean of per-window softmax distributions for one query.
Vec tta_aggregate(const std::vector<Vec>& window_probs);

Real top1_accuracy(const std::vector<int>& preds,
                   const std::vector<int>& targets);

/// Unweighted mean of per-class recalls over classes with >= 1 target.
Real per_class_accuracy(const std::vector<int>& preds,
                        const std::vector<int>& targets);

struct GroundTruthInstance {
  std::string video;
  int cls = 0;
  TimeInterval t;
};

struct ApReport {
  std::vector<double> thresholds;
  std::vector<double> ap;  // aligned with thresholds
  double average = 0.0;
};

/// Detection mAP: per class, detections sorted by score match greedily to
/// the highest-IoU unmatched ground truth at or above the threshold;
/// AP sums precision at each true positive over the ground-truth count.
/// Classes without ground truth are excluded from the mean.
ApReport detection_map(
    const std::vector<Detection>& dets,
    const std::vector<GroundTruthInstance>& gts,
    const std::vector<double>& thresholds = {0.1, 0.2, 0.3, 0.4, 0.5});

struct SetMetrics {
  std::string modality;
  std::string set_name;
  Real top1 = 0.0;
  Real pca = 0.0;
  Real top1_short = 0.0;  // events shorter than the split
  Real top1_long = 0.0;
  int count = 0;
  int count_short = 0;
  int count_long = 0;
};

struct EventPrediction {
  int event_index = -1;
  int modality = 0;
  int label_set = 0;
  int target = -1;
  Vec probs;  // aggregated across windows; empty when never queried
  int windows = 0;

  int predicted() const {
    if (probs.size() == 0) return -1;
    Index arg = 0;
    probs.maxCoeff(&arg);
    return static_cast<int>(arg);
  }
};

struct RecognitionReport {
  std::vector<SetMetrics> sets;
  std::vector<EventPrediction> events;

  const SetMetrics* find(const std::string& modality,
                         const std::string& set_name) const;
};

struct EvalOptions {
  double query_offset_s = 0.0;  // shift applied to every query interval
  double query_scale = 1.0;     // scale about the interval midpoint
  double short_long_split_s = 2.0;
  int threads = 1;
};

/// Validation protocol: every annotated event is queried in every window
/// it overlaps by more than delta, per-window softmax distributions are
/// averaged (test-time aggregation), and the argmax is scored. Events the
/// perturbation pushes out of every window count as wrong.
RecognitionReport evaluate_recognition(
    const TimModel& model, const Dataset& data,
    const std::vector<const VideoData*>& videos, const WindowSpec& spec,
    const EvalOptions& opts = {});

struct ShiftScalePoint {
  std::string kind;  // "shift" or "scale"
  double value = 0.0;
  std::vector<SetMetrics> sets;
};

/// Accuracy curves under query shifting (seconds) and scaling about the
/// midpoint, split into short and long events.
std::vector<ShiftScalePoint> shift_scale_analysis(
    const TimModel& model, const Dataset& data,
    const std::vector<const VideoData*>& videos, const WindowSpec& spec,
    const std::vector<double>& offsets_s, const std::vector<double>& scales,
    int threads = 1);

/// Mean absolute error of the temporal-distance head over sampled
/// cross-modal feature pairs of the given videos' windows.
Real td_head_mae(const TimModel& model, const Dataset& data,
                 const std::vector<const VideoData*>& videos,
                 const WindowSpec& spec, PairSampling mode,
                 std::uint64_t seed);

}  // namespace tim
