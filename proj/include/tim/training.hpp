#pragma once

#include <functional>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tim/detection.hpp"
#include "tim/evaluation.hpp"
#include "tim/losses.hpp"
#include "tim/model.hpp"

namespace tim {

enum class TrainMode { kRecognition, kDetection };

struct TrainConfig {
  int epochs = 100;
  int batch_size = 64;
  double weight_decay = 1e-4;
  double target_lr = 1e-4;
  int warmup_epochs = 2;
  double warmup_start_lr = 1e-6;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kRecognition;
  LossWeights weights;
  bool td_normalize = false;  // divide the pair sum by the pair count
  PairSampling td_sampling = PairSampling::kCrossModal;
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double det_iou_threshold = 0.6;
  // Adam moments
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

/// Linear warmup from warmup_start_lr to target_lr, then cosine decay
/// from target_lr to 0 over the remaining steps.
double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg);

/// Adam with decoupled weight decay: the decay multiplies parameters
/// directly and never enters the gradient moments.
class AdamW {
 public:
  AdamW(double beta1, double beta2, double eps, double weight_decay)
      : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

  void step(const std::vector<nn::Parameter*>& params, double lr);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<Mat> m_, v_;
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double selection_metric = 0.0;  // visual top-1 or average mAP
  std::map<std::string, double> values;
};

/// Epoch with the best selection metric; ties go to the earlier epoch.
int select_model(const std::vector<EpochMetrics>& metrics);

struct TrainResult {
  std::vector<EpochMetrics> epochs;
  int best_epoch = -1;
};

struct TrainHooks {
  std::ostream* step_log = nullptr;  // JSON lines, one per optimizer step
  /// Return true to stop after the current epoch.
  std::function<bool(const EpochMetrics&)> after_epoch;
};

/// Full optimization loop. Deterministic for a fixed seed: batch order,
/// dropout and pair sampling all derive from cfg.seed. After training the
/// model carries the best epoch's weights.
TrainResult train(TimModel& model, const Dataset& data,
                  const std::vector<const VideoData*>& train_videos,
                  const std::vector<const VideoData*>& val_videos,
                  const WindowSpec& spec, const TrainConfig& cfg,
                  const PyramidConfig* pyramid = nullptr,
                  const DetectionTask* task = nullptr,
                  const TrainHooks& hooks = {});

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  long checked = 0;
};

/// Compare analytic gradients against central finite differences
/// (h = 1e-5, relative) for every parameter tensor. loss_fn must be
/// deterministic across calls and accumulate gradients into the
/// parameters when invoked. value_fn, when given, evaluates the same loss
/// without gradients and serves the finite-difference probes.
GradCheckReport check_gradients(const std::vector<nn::Parameter*>& params,
                                const std::function<Real()>& loss_fn,
                                Real h = 1e-5,
                                const std::function<Real()>& value_fn = {});

}  // namespace tim
