#pragma once

#include <cstdint>

#include "tim/rng.hpp"
#include "tim/windowing.hpp"

namespace tim {

/// Synthetic audio-visual stream generator. Each class owns a random unit
/// prototype; a feature extracted at grid time t is the sum of prototypes
/// of the events active at t in its modality, plus isotropic noise. A
/// configurable fraction of visual classes come in pairs that share one
/// visual prototype and differ only through a co-occurring audio event,
/// which makes those classes unresolvable from vision alone.
struct SynthConfig {
  int videos = 200;
  double video_length_s = 60.0;
  int visual_classes = 8;
  int audio_classes = 8;
  int visual_feature_dim = 64;
  int audio_feature_dim = 64;
  double feature_stride_s = 0.6;  // extraction grid
  double feature_span_s = 1.0;    // each feature's interval length
  double event_rate_hz = 0.2;     // mean events per second per modality
  double min_duration_s = 0.8;
  double max_duration_s = 4.0;
  double noise_sigma = 0.1;
  double cue_fraction = 0.0;  // fraction of visual classes in cued pairs
  bool non_overlapping = false;  // place events with gaps (detection sets)
  double min_gap_s = 0.5;
  double snap_to_grid_s = 0.0;  // >0: snap event boundaries to this grid

  void validate() const;
  Schema schema() const;
};

struct SynthResult {
  Dataset dataset;
  Mat visual_prototypes;  // classes x dim
  Mat audio_prototypes;
  std::vector<int> cued_visual_classes;
};

SynthResult generate_synthetic(const SynthConfig& cfg, std::uint64_t seed);

}  // namespace tim
