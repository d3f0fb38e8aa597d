#include "tim/windowing.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace tim {

namespace {
constexpr double kEps = 1e-9;
}

int Schema::modality_index(const std::string& name) const {
  for (std::size_t i = 0; i < modalities.size(); ++i)
    if (modalities[i] == name) return static_cast<int>(i);
  return -1;
}

int Schema::set_index(int modality, const std::string& name) const {
  if (modality < 0 || modality >= static_cast<int>(label_sets.size()))
    return -1;
  const auto& sets = label_sets[static_cast<std::size_t>(modality)];
  for (std::size_t i = 0; i < sets.size(); ++i)
    if (sets[i].name == name) return static_cast<int>(i);
  return -1;
}

void Schema::validate() const {
  if (modalities.empty())
    throw std::invalid_argument("schema needs at least one modality");
  if (feature_dims.size() != modalities.size() ||
      label_sets.size() != modalities.size())
    throw std::invalid_argument("schema fields must align with modalities");
  for (int d : feature_dims)
    if (d <= 0) throw std::invalid_argument("feature dims must be positive");
  for (const auto& sets : label_sets)
    for (const auto& s : sets)
      if (s.classes < 1)
        throw std::invalid_argument("label sets need at least one class");
}

void WindowSpec::validate() const {
  if (window_s <= 0.0 || window_stride_s <= 0.0 || feature_stride_s <= 0.0)
    throw std::invalid_argument("window sizes and strides must be positive");
  if (features_per_modality <= 0)
    throw std::invalid_argument("features_per_modality must be positive");
  if (!(overlap_delta_s < window_s))
    throw std::invalid_argument("overlap delta must be below window size");
  // the feature grid must tile the window: W = N * H_f within one stride
  const double covered = features_per_modality * feature_stride_s;
  if (std::abs(covered - window_s) > feature_stride_s + 1e-9)
    throw std::invalid_argument(
        "features_per_modality * feature_stride_s must match window_s "
        "within one stride");
}

std::vector<double> enumerate_windows(double video_length_s,
                                      const WindowSpec& spec) {
  if (!(video_length_s > 0.0))
    throw std::invalid_argument("video length must be positive");
  spec.validate();
  if (video_length_s < spec.window_s) return {0.0};
  std::vector<double> starts;
  const double last = video_length_s - spec.window_s;
  for (std::size_t k = 0;; ++k) {
    const double s = static_cast<double>(k) * spec.window_stride_s;
    if (s > last + kEps) break;
    starts.push_back(s);
  }
  if (starts.empty() || starts.back() < last - kEps) starts.push_back(last);
  return starts;
}

SelectedFeatures select_features(double window_start,
                                 const FeatureStream& stream,
                                 const WindowSpec& spec) {
  spec.validate();
  const int n = spec.features_per_modality;
  const Index dim = stream.dim();
  SelectedFeatures out;
  out.features = Mat::Zero(n, dim);
  out.times.resize(static_cast<std::size_t>(n));
  out.padded.assign(static_cast<std::size_t>(n), true);

  for (int i = 0; i < n; ++i) {
    const double target = window_start + i * spec.feature_stride_s;
    Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    if (stream.count() > 0) {
      // streams are sorted by start; binary search for the neighbour
      auto it = std::lower_bound(
          stream.times.begin(), stream.times.end(), target,
          [](const TimeInterval& t, double v) { return t.start_s < v; });
      for (auto cand : {it == stream.times.begin() ? it : std::prev(it), it}) {
        if (cand == stream.times.end()) continue;
        const double d = std::abs(cand->start_s - target);
        const Index idx = static_cast<Index>(cand - stream.times.begin());
        if (d < best_dist - kEps ||
            (std::abs(d - best_dist) <= kEps && idx < best)) {
          best_dist = d;
          best = idx;
        }
      }
    }
    if (best >= 0 && best_dist <= spec.feature_stride_s / 2.0 + kEps) {
      out.features.row(i) = stream.features.row(best);
      out.times[static_cast<std::size_t>(i)] = normalize_interval(
          stream.times[static_cast<std::size_t>(best)], window_start,
          spec.window_s);
      out.padded[static_cast<std::size_t>(i)] = false;
    } else {
      // zero-filled slot with a nominal 1 s span
      out.times[static_cast<std::size_t>(i)] =
          normalize_interval(TimeInterval{target, target + 1.0}, window_start,
                             spec.window_s);
    }
  }
  return out;
}

std::vector<Query> assemble_queries(double window_start,
                                    const WindowSpec& spec,
                                    const Schema& schema,
                                    const AnnotationSet& annotations,
                                    const std::vector<int>& event_indices) {
  spec.validate();
  const double w0 = window_start;
  const double w1 = window_start + spec.window_s;
  std::vector<Query> out;
  for (int ei : event_indices) {
    const Event& ev = annotations.events[static_cast<std::size_t>(ei)];
    const int m = schema.modality_index(ev.modality);
    if (m < 0) continue;
    const double overlap = span_overlap(ev.t.start_s, ev.t.end_s, w0, w1);
    if (!(overlap > spec.overlap_delta_s)) continue;
    const TimeInterval clipped{std::max(ev.t.start_s, w0),
                               std::min(ev.t.end_s, w1)};
    const NormalizedInterval t =
        normalize_interval(clipped, w0, spec.window_s);
    for (const auto& [set_name, cls] : ev.labels) {
      const int s = schema.set_index(m, set_name);
      if (s < 0) continue;
      Query q;
      q.t = t;
      q.modality = m;
      q.label_set = s;
      q.target = cls;
      q.event_index = ei;
      q.valid = true;
      out.push_back(q);
    }
  }
  return out;
}

void pad_query_batch(std::vector<WindowSample>& samples) {
  if (samples.empty())
    throw std::invalid_argument("pad_query_batch needs at least one sample");
  std::size_t max_q = 0;
  for (const auto& s : samples) max_q = std::max(max_q, s.queries.size());
  for (auto& s : samples) {
    while (s.queries.size() < max_q) {
      Query pad;
      pad.valid = false;
      s.queries.push_back(pad);
    }
  }
}

const VideoData* Dataset::find_video(const std::string& id) const {
  for (const auto& v : videos)
    if (v.id == id) return &v;
  return nullptr;
}

WindowSample make_window_sample(const Dataset& data, const VideoData& video,
                                double window_start, const WindowSpec& spec) {
  WindowSample w;
  w.video = video.id;
  w.window_start = window_start;
  w.window_length = spec.window_s;
  w.per_modality.reserve(data.schema.modalities.size());
  for (std::size_t m = 0; m < data.schema.modalities.size(); ++m)
    w.per_modality.push_back(
        select_features(window_start, video.streams[m], spec));
  w.queries = assemble_queries(window_start, spec, data.schema,
                               data.annotations, video.event_indices);
  return w;
}

}  // namespace tim
