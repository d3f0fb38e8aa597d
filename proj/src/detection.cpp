#include "tim/detection.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

#include "tim/parallel.hpp"

namespace tim {

void PyramidConfig::validate() const {
  if (!(base_fraction > 0.0 && base_fraction < 1.0))
    throw std::invalid_argument("base_fraction must be in (0,1)");
  if (!(growth > 1.0)) throw std::invalid_argument("growth must be > 1");
  if (!(level_stride_fraction > 0.0))
    throw std::invalid_argument("level stride fraction must be > 0");
  if (nms_sigma <= 0.0) throw std::invalid_argument("nms sigma must be > 0");
}

std::vector<ProposalQuery> build_pyramid(double window_s,
                                         const PyramidConfig& cfg) {
  if (!(window_s > 0.0))
    throw std::invalid_argument("window size must be positive");
  cfg.validate();
  std::vector<ProposalQuery> out;
  constexpr double kEps = 1e-9;
  int level = 0;
  for (double size = cfg.base_fraction * window_s; size < window_s - kEps;
       size *= cfg.growth, ++level) {
    const double stride = cfg.level_stride_fraction * size;
    for (double start = 0.0; start + size <= window_s + kEps;
         start += stride) {
      out.push_back(ProposalQuery{start, size, level});
    }
  }
  return out;
}

std::vector<AssignedTarget> assign_targets(
    const std::vector<ProposalQuery>& queries,
    const std::vector<std::pair<TimeInterval, int>>& ground_truth,
    double iou_threshold) {
  std::vector<AssignedTarget> out(queries.size());
  for (std::size_t q = 0; q < queries.size(); ++q) {
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double iou =
          span_iou(queries[q].start_s, queries[q].end_s(),
                   ground_truth[g].first.start_s, ground_truth[g].first.end_s);
      if (iou > best) {
        best = iou;
        best_gt = static_cast<int>(g);
      }
    }
    if (best_gt >= 0 && best >= iou_threshold) {
      out[q].cls = ground_truth[static_cast<std::size_t>(best_gt)].second;
      out[q].gt = ground_truth[static_cast<std::size_t>(best_gt)].first;
      out[q].iou = best;
    }
  }
  return out;
}

std::vector<Detection> soft_nms(std::vector<Detection> dets, double sigma,
                                double score_floor) {
  std::vector<Detection> kept;
  kept.reserve(dets.size());
  while (!dets.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < dets.size(); ++i) {
      if (dets[i].score > dets[best].score ||
          (dets[i].score == dets[best].score &&
           dets[i].t.start_s < dets[best].t.start_s)) {
        best = i;
      }
    }
    Detection top = dets[best];
    dets.erase(dets.begin() + static_cast<std::ptrdiff_t>(best));
    kept.push_back(top);
    std::vector<Detection> rest;
    rest.reserve(dets.size());
    for (auto& d : dets) {
      const double iou = temporal_iou(top.t, d.t);
      d.score *= std::exp(-(iou * iou) / sigma);
      if (d.score >= score_floor) rest.push_back(d);
    }
    dets = std::move(rest);
  }
  return kept;
}

FusedProposal fuse_verb_noun(double p_verb, double p_noun,
                             const TimeInterval& verb_t,
                             const TimeInterval& noun_t, double alpha) {
  if (!(p_verb > 0.0 && p_verb <= 1.0 && p_noun > 0.0 && p_noun <= 1.0))
    throw std::invalid_argument("probabilities must be in (0,1]");
  FusedProposal f;
  f.p_action = std::pow(p_verb, alpha) * std::pow(p_noun, 1.0 - alpha);
  const double omega = p_verb / (p_verb + p_noun);
  f.t.start_s = omega * verb_t.start_s + (1.0 - omega) * noun_t.start_s;
  f.t.end_s = omega * verb_t.end_s + (1.0 - omega) * noun_t.end_s;
  return f;
}

std::vector<Detection> run_detection(const TimModel& model,
                                     const Dataset& data,
                                     const std::vector<const VideoData*>& videos,
                                     const WindowSpec& spec,
                                     const PyramidConfig& cfg,
                                     const DetectionTask& task, int threads) {
  spec.validate();
  cfg.validate();
  const auto pyramid = build_pyramid(spec.window_s, cfg);
  std::vector<IntervalQuery> queries;
  queries.reserve(pyramid.size());
  for (const auto& p : pyramid) {
    IntervalQuery q;
    q.t = NormalizedInterval{p.start_s / spec.window_s,
                             p.end_s() / spec.window_s};
    q.modality = task.modality;
    q.label_set = task.label_set;
    queries.push_back(q);
  }
  const std::string set_name =
      model.cfg.schema.label_sets[static_cast<std::size_t>(task.modality)]
                                 [static_cast<std::size_t>(task.label_set)]
                                     .name;

  std::vector<std::vector<Detection>> per_video(videos.size());
  parallel_for(videos.size(), threads, [&](std::size_t vi) {
    const VideoData& video = *videos[vi];
    std::vector<Detection> raw;
    Rng rng(0);  // eval mode only; never consumed
    for (double ws : enumerate_windows(video.length_s, spec)) {
      WindowSample window = make_window_sample(data, video, ws, spec);
      nn::Tape tape;
      ForwardOut fwd =
          model.forward(tape, window, queries, /*train=*/false, rng);
      const auto& group = fwd.groups.front();
      Mat scores =
          (1.0 / (1.0 + (-group.logits.val().array()).exp())).matrix();
      Mat reg = model.regression_head(task.modality, group.outputs).val();
      for (Index r = 0; r < scores.rows(); ++r) {
        double abs_start = ws + reg(r, 0) * spec.window_s;
        double abs_end = ws + reg(r, 1) * spec.window_s;
        abs_start = std::clamp(abs_start, 0.0, video.length_s);
        abs_end = std::clamp(abs_end, 0.0, video.length_s);
        for (Index c = 0; c < scores.cols(); ++c) {
          const double s = scores(r, c);
          if (s < cfg.confidence_threshold) continue;
          Detection d;
          d.video = video.id;
          d.label_set = set_name;
          d.cls = static_cast<int>(c);
          d.t = TimeInterval{abs_start, abs_end};
          d.score = s;
          raw.push_back(d);
        }
      }
    }
    // class-dependent Soft-NMS over the whole video
    std::map<int, std::vector<Detection>> by_class;
    for (auto& d : raw) by_class[d.cls].push_back(std::move(d));
    std::vector<Detection> kept;
    for (auto& [cls, dets] : by_class) {
      auto survivors = soft_nms(std::move(dets), cfg.nms_sigma,
                                cfg.nms_score_floor);
      kept.insert(kept.end(), survivors.begin(), survivors.end());
    }
    per_video[vi] = std::move(kept);
  });

  std::vector<Detection> out;
  for (auto& v : per_video) out.insert(out.end(), v.begin(), v.end());
  return out;
}

}  // namespace tim
