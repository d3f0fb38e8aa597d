#pragma once

#include <map>
#include <string>
#include <vector>

#include "tim/interval.hpp"
#include "tim/types.hpp"

namespace tim {

/// Names the modalities, their feature dimensions and their label sets.
/// Shared vocabulary between datasets and models.
struct LabelSetSpec {
  std::string name;
  int classes = 0;
};

struct Schema {
  std::vector<std::string> modalities;                 // ordered
  std::vector<int> feature_dims;                       // per modality
  std::vector<std::vector<LabelSetSpec>> label_sets;   // per modality

  int modality_index(const std::string& name) const;
  int set_index(int modality, const std::string& name) const;
  void validate() const;
};

/// Per-modality sequence of fixed-dimension features, each spanning an
/// absolute time interval, extracted on a uniform grid sorted by start.
struct FeatureStream {
  std::string video;
  std::string modality;
  Mat features;                     // count x dim
  std::vector<TimeInterval> times;  // aligned with rows

  Index count() const { return features.rows(); }
  Index dim() const { return features.cols(); }
};

struct Event {
  std::string video;
  std::string modality;
  TimeInterval t;
  std::map<std::string, int> labels;  // label-set name -> class id
};

struct AnnotationSet {
  std::vector<Event> events;
};

struct WindowSpec {
  double window_s = 30.0;        // W
  double window_stride_s = 1.0;  // H_w
  int features_per_modality = 50;
  double feature_stride_s = 0.6;  // H_f
  double overlap_delta_s = 0.2;   // delta

  void validate() const;
};

/// Window starts covering a video: the stride grid, plus one tail window
/// at video_length - W when the grid does not land on it exactly. Videos
/// shorter than W get a single zero-padded window at 0.
std::vector<double> enumerate_windows(double video_length_s,
                                      const WindowSpec& spec);

struct SelectedFeatures {
  Mat features;                           // N x dim
  std::vector<NormalizedInterval> times;  // normalized to the window
  std::vector<bool> padded;               // true for zero-filled slots
};

/// Pick N features at targets window_start + i*H_f by nearest start time.
/// Slots whose nearest feature is farther than half a stride (or an empty
/// stream) are zero-filled and flagged padded, with nominal 1 s spans.
SelectedFeatures select_features(double window_start,
                                 const FeatureStream& stream,
                                 const WindowSpec& spec);

struct Query {
  NormalizedInterval t;  // clipped to the window, then normalized
  int modality = 0;
  int label_set = 0;
  int target = -1;      // class id; -1 when unset
  int event_index = -1; // source event, for aggregation across windows
  bool valid = true;
};

struct WindowSample {
  std::string video;
  double window_start = 0.0;
  double window_length = 0.0;
  std::vector<SelectedFeatures> per_modality;  // aligned with schema
  std::vector<Query> queries;
};

/// Queries for every event overlapping the window by more than delta,
/// one per (event, label set). Event intervals are clipped to the window
/// before normalization.
std::vector<Query> assemble_queries(double window_start,
                                    const WindowSpec& spec,
                                    const Schema& schema,
                                    const AnnotationSet& annotations,
                                    const std::vector<int>& event_indices);

/// Pad every sample's query list to the batch maximum with invalid
/// entries. Invalid queries produce no tokens and no loss.
void pad_query_batch(std::vector<WindowSample>& samples);

struct VideoData {
  std::string id;
  double length_s = 0.0;
  std::vector<FeatureStream> streams;  // aligned with schema modalities
  std::vector<int> event_indices;      // into AnnotationSet::events
};

struct Dataset {
  Schema schema;
  AnnotationSet annotations;
  std::vector<VideoData> videos;

  const VideoData* find_video(const std::string& id) const;
};

WindowSample make_window_sample(const Dataset& data, const VideoData& video,
                                double window_start, const WindowSpec& spec);

}  // namespace tim
