#pragma once

#include <string>
#include <utility>
#include <vector>

#include "tim/model.hpp"

namespace tim {

struct PyramidConfig {
  double base_fraction = 0.005;  // smallest query size as a fraction of W
  double growth = 2.0;           // size multiplier between levels
  double level_stride_fraction = 0.5;  // stride as a fraction of the size
  double confidence_threshold = 0.03;
  double nms_sigma = 0.25;
  double nms_score_floor = 1e-4;

  void validate() const;
};

/// A fixed proposal interval inside a window, in window seconds.
struct ProposalQuery {
  double start_s = 0.0;
  double size_s = 0.0;
  int level = 0;

  double end_s() const { return start_s + size_s; }
};

/// Geometric multi-scale query set: level k has size
/// base_fraction * W * growth^k while that stays below W, and queries
/// step by level_stride_fraction * size while they fit in the window.
std::vector<ProposalQuery> build_pyramid(double window_s,
                                         const PyramidConfig& cfg);

struct AssignedTarget {
  int cls = -1;  // -1 = negative (zero-vector label)
  TimeInterval gt;  // window seconds; defined for positives
  double iou = 0.0;
};

/// Positive when IoU >= threshold with some ground truth; overlaps with
/// several ground truths resolve to the highest IoU.
std::vector<AssignedTarget> assign_targets(
    const std::vector<ProposalQuery>& queries,
    const std::vector<std::pair<TimeInterval, int>>& ground_truth,
    double iou_threshold = 0.6);

struct Detection {
  std::string video;
  std::string label_set;
  int cls = 0;
  TimeInterval t;
  double score = 0.0;
};

/// Gaussian-decay Soft-NMS over detections of one class: repeatedly keep
/// the best-scored detection (ties resolved by earlier start) and decay
/// the rest by exp(-IoU^2 / sigma); detections falling below score_floor
/// are dropped.
std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma,
                                double score_floor);

struct FusedProposal {
  double p_action = 0.0;
  TimeInterval t;
};

/// Combine a verb and a noun proposal for the same query:
/// p = p_v^alpha * p_n^(1-alpha), boundaries mixed with
/// omega = p_v / (p_v + p_n).
FusedProposal fuse_verb_noun(double p_verb, double p_noun,
                             const TimeInterval& verb_t,
                             const TimeInterval& noun_t, double alpha = 0.45);

struct DetectionTask {
  int modality = 0;
  int label_set = 0;
};

/// Score and regress every pyramid query in every window of each video,
/// keep scores above the confidence threshold, and run class-dependent
/// Soft-NMS per video. Videos are processed in parallel up to `threads`.
std::vector<Detection> run_detection(const TimModel& model,
                                     const Dataset& data,
                                     const std::vector<const VideoData*>& videos,
                                     const WindowSpec& spec,
                                     const PyramidConfig& cfg,
                                     const DetectionTask& task, int threads);

}  // namespace tim
