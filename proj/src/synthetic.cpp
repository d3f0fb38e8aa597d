#include "tim/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace tim {

void SynthConfig::validate() const {
  if (videos < 0) throw std::invalid_argument("videos must be >= 0");
  if (video_length_s <= 0.0)
    throw std::invalid_argument("video length must be positive");
  if (visual_classes < 1 || audio_classes < 1)
    throw std::invalid_argument("class counts must be >= 1");
  if (visual_feature_dim < 1 || audio_feature_dim < 1)
    throw std::invalid_argument("feature dims must be >= 1");
  if (feature_stride_s <= 0.0 || feature_span_s <= 0.0)
    throw std::invalid_argument("feature grid must be positive");
  if (min_duration_s <= 0.0 || max_duration_s < min_duration_s)
    throw std::invalid_argument("bad duration range");
  if (max_duration_s > video_length_s)
    throw std::invalid_argument("event duration exceeds video length");
  if (event_rate_hz < 0.0) throw std::invalid_argument("rate must be >= 0");
  if (noise_sigma < 0.0) throw std::invalid_argument("noise must be >= 0");
  if (cue_fraction < 0.0 || cue_fraction > 1.0)
    throw std::invalid_argument("cue fraction must be in [0,1]");
}

Schema SynthConfig::schema() const {
  Schema s;
  s.modalities = {"visual", "audio"};
  s.feature_dims = {visual_feature_dim, audio_feature_dim};
  s.label_sets = {{{"action", visual_classes}},
                  {{"audio_action", audio_classes}}};
  return s;
}

namespace {

Mat random_prototypes(int classes, int dim, Rng& rng) {
  Mat p(classes, dim);
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < dim; ++j) p(c, j) = rng.normal();
    p.row(c).normalize();
  }
  return p;
}

int poisson_count(double mean, Rng& rng) {
  if (mean <= 0.0) return 0;
  // Knuth's method; means stay small at desk scale
  const double limit = std::exp(-mean);
  int k = 0;
  double prod = 1.0;
  while (true) {
    prod *= rng.uniform();
    if (prod <= limit) return k;
    ++k;
  }
}

double snap(double v, double grid) {
  if (grid <= 0.0) return v;
  return std::round(v / grid) * grid;
}

struct DrawnEvent {
  TimeInterval t;
  int cls;
};

std::vector<DrawnEvent> draw_events(const SynthConfig& cfg, int classes,
                                    Rng& rng) {
  std::vector<DrawnEvent> events;
  const int count =
      poisson_count(cfg.event_rate_hz * cfg.video_length_s, rng);
  for (int k = 0; k < count; ++k) {
    double dur = rng.uniform(cfg.min_duration_s, cfg.max_duration_s);
    if (cfg.snap_to_grid_s > 0.0)
      dur = std::max(cfg.snap_to_grid_s, snap(dur, cfg.snap_to_grid_s));
    double start = rng.uniform(0.0, cfg.video_length_s - dur);
    if (cfg.snap_to_grid_s > 0.0) {
      start = snap(start, cfg.snap_to_grid_s);
      start = std::min(start, cfg.video_length_s - dur);
    }
    const int cls = static_cast<int>(rng.below(
        static_cast<std::uint64_t>(classes)));
    events.push_back({TimeInterval{start, start + dur}, cls});
  }
  std::sort(events.begin(), events.end(),
            [](const DrawnEvent& a, const DrawnEvent& b) {
              return a.t.start_s < b.t.start_s;
            });
  if (cfg.non_overlapping) {
    std::vector<DrawnEvent> kept;
    double free_from = 0.0;
    for (const auto& e : events) {
      if (e.t.start_s >= free_from) {
        kept.push_back(e);
        free_from = e.t.end_s + cfg.min_gap_s;
      }
    }
    return kept;
  }
  return events;
}

Mat render_stream(const SynthConfig& cfg, const Mat& prototypes,
                  const std::vector<DrawnEvent>& events, int dim,
                  const std::vector<TimeInterval>& grid, Rng& rng) {
  Mat f(static_cast<Index>(grid.size()), dim);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double t = grid[i].start_s;
    Row row = Row::Zero(dim);
    for (const auto& e : events)
      if (e.t.start_s <= t && t <= e.t.end_s) row += prototypes.row(e.cls);
    for (int j = 0; j < dim; ++j)
      row(j) += cfg.noise_sigma * rng.normal();
    f.row(static_cast<Index>(i)) = row;
  }
  return f;
}

std::vector<TimeInterval> feature_grid(const SynthConfig& cfg) {
  std::vector<TimeInterval> grid;
  for (std::size_t k = 0;; ++k) {
    const double s = static_cast<double>(k) * cfg.feature_stride_s;
    if (s + cfg.feature_span_s > cfg.video_length_s + 1e-9) break;
    grid.push_back(TimeInterval{s, s + cfg.feature_span_s});
  }
  return grid;
}

}  // namespace

SynthResult generate_synthetic(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  SynthResult result;
  result.dataset.schema = cfg.schema();

  result.visual_prototypes =
      random_prototypes(cfg.visual_classes, cfg.visual_feature_dim, rng);
  result.audio_prototypes =
      random_prototypes(cfg.audio_classes, cfg.audio_feature_dim, rng);

  // cued pairs share one visual prototype; the pair members get distinct
  // co-occurring audio classes
  const int n_cued =
      2 * static_cast<int>(cfg.cue_fraction * cfg.visual_classes / 2.0);
  std::vector<int> cue_audio_class(
      static_cast<std::size_t>(cfg.visual_classes), -1);
  for (int c = 0; c + 1 < n_cued; c += 2) {
    result.visual_prototypes.row(c + 1) = result.visual_prototypes.row(c);
    cue_audio_class[static_cast<std::size_t>(c)] = c % cfg.audio_classes;
    cue_audio_class[static_cast<std::size_t>(c + 1)] =
        (c + 1) % cfg.audio_classes;
    result.cued_visual_classes.push_back(c);
    result.cued_visual_classes.push_back(c + 1);
  }

  const auto grid = feature_grid(cfg);
  for (int v = 0; v < cfg.videos; ++v) {
    VideoData video;
    video.id = "synth_" + std::to_string(v);
    video.length_s = cfg.video_length_s;

    auto visual_events = draw_events(cfg, cfg.visual_classes, rng);
    auto audio_events = draw_events(cfg, cfg.audio_classes, rng);
    for (const auto& e : visual_events) {
      const int cue = cue_audio_class[static_cast<std::size_t>(e.cls)];
      if (cue >= 0) audio_events.push_back({e.t, cue});
    }
    std::sort(audio_events.begin(), audio_events.end(),
              [](const DrawnEvent& a, const DrawnEvent& b) {
                return a.t.start_s < b.t.start_s;
              });

    FeatureStream vis;
    vis.video = video.id;
    vis.modality = "visual";
    vis.times = grid;
    vis.features = render_stream(cfg, result.visual_prototypes, visual_events,
                                 cfg.visual_feature_dim, grid, rng);
    FeatureStream aud;
    aud.video = video.id;
    aud.modality = "audio";
    aud.times = grid;
    aud.features = render_stream(cfg, result.audio_prototypes, audio_events,
                                 cfg.audio_feature_dim, grid, rng);
    video.streams = {std::move(vis), std::move(aud)};

    for (const auto& e : visual_events) {
      Event ev;
      ev.video = video.id;
      ev.modality = "visual";
      ev.t = e.t;
      ev.labels["action"] = e.cls;
      video.event_indices.push_back(
          static_cast<int>(result.dataset.annotations.events.size()));
      result.dataset.annotations.events.push_back(std::move(ev));
    }
    for (const auto& e : audio_events) {
      Event ev;
      ev.video = video.id;
      ev.modality = "audio";
      ev.t = e.t;
      ev.labels["audio_action"] = e.cls;
      video.event_indices.push_back(
          static_cast<int>(result.dataset.annotations.events.size()));
      result.dataset.annotations.events.push_back(std::move(ev));
    }
    result.dataset.videos.push_back(std::move(video));
  }
  return result;
}

}  // namespace tim
