#include "tim/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include "tim/parallel.hpp"

namespace tim {

Vec tta_aggregate(const std::vector<Vec>& window_probs) {
  if (window_probs.empty())
    throw std::invalid_argument("aggregation needs at least one window");
  Vec sum = Vec::Zero(window_probs.front().size());
  for (const auto& p : window_probs) {
    if (p.size() != sum.size())
      throw std::invalid_argument("distribution sizes differ across windows");
    sum += p;
  }
  return sum / static_cast<Real>(window_probs.size());
}

Real top1_accuracy(const std::vector<int>& preds,
                   const std::vector<int>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("need aligned non-empty predictions");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < preds.size(); ++i)
    if (preds[i] == targets[i]) ++correct;
  return static_cast<Real>(correct) / static_cast<Real>(preds.size());
}

Real per_class_accuracy(const std::vector<int>& preds,
                        const std::vector<int>& targets) {
  if (preds.empty() || preds.size() != targets.size())
    throw std::invalid_argument("need aligned non-empty predictions");
  std::map<int, std::pair<int, int>> per_class;  // class -> (correct, total)
  for (std::size_t i = 0; i < preds.size(); ++i) {
    auto& [correct, total] = per_class[targets[i]];
    ++total;
    if (preds[i] == targets[i]) ++correct;
  }
  Real sum = 0.0;
  for (const auto& [cls, ct] : per_class)
    sum += static_cast<Real>(ct.first) / static_cast<Real>(ct.second);
  return sum / static_cast<Real>(per_class.size());
}

ApReport detection_map(const std::vector<Detection>& dets,
                       const std::vector<GroundTruthInstance>& gts,
                       const std::vector<double>& thresholds) {
  ApReport report;
  report.thresholds = thresholds;

  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.cls);

  for (double thr : thresholds) {
    double ap_sum = 0.0;
    for (int cls : classes) {
      std::vector<const Detection*> cls_dets;
      for (const auto& d : dets)
        if (d.cls == cls) cls_dets.push_back(&d);
      std::sort(cls_dets.begin(), cls_dets.end(),
                [](const Detection* a, const Detection* b) {
                  if (a->score != b->score) return a->score > b->score;
                  if (a->t.start_s != b->t.start_s)
                    return a->t.start_s < b->t.start_s;
                  return a->video < b->video;
                });
      std::vector<const GroundTruthInstance*> cls_gts;
      for (const auto& g : gts)
        if (g.cls == cls) cls_gts.push_back(&g);
      std::vector<bool> matched(cls_gts.size(), false);

      int tp = 0;
      double precision_sum = 0.0;
      int seen = 0;
      for (const Detection* d : cls_dets) {
        ++seen;
        double best_iou = 0.0;
        int best = -1;
        for (std::size_t g = 0; g < cls_gts.size(); ++g) {
          if (matched[g] || cls_gts[g]->video != d->video) continue;
          const double iou = temporal_iou(d->t, cls_gts[g]->t);
          if (iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(g);
          }
        }
        if (best >= 0 && best_iou >= thr) {
          matched[static_cast<std::size_t>(best)] = true;
          ++tp;
          precision_sum += static_cast<Real>(tp) / static_cast<Real>(seen);
        }
      }
      ap_sum += precision_sum / static_cast<Real>(cls_gts.size());
    }
    report.ap.push_back(classes.empty() ? 0.0
                                        : ap_sum /
                                              static_cast<Real>(classes.size()));
  }
  for (double a : report.ap) report.average += a;
  if (!report.ap.empty()) report.average /= static_cast<Real>(report.ap.size());
  return report;
}

const SetMetrics* RecognitionReport::find(const std::string& modality,
                                          const std::string& set_name) const {
  for (const auto& s : sets)
    if (s.modality == modality && s.set_name == set_name) return &s;
  return nullptr;
}

namespace {

TimeInterval perturb_interval(const TimeInterval& t, double offset_s,
                              double scale) {
  const double mid = t.centre();
  const double half = 0.5 * t.duration() * scale;
  double s = mid - half + offset_s;
  double e = mid + half + offset_s;
  if (s > e) std::swap(s, e);
  return TimeInterval{s, e};
}

}  // namespace

RecognitionReport evaluate_recognition(
    const TimModel& model, const Dataset& data,
    const std::vector<const VideoData*>& videos, const WindowSpec& spec,
    const EvalOptions& opts) {
  spec.validate();
  const Schema& schema = model.cfg.schema;

  // (event, set) accumulation slots, filled per video then reduced
  struct Slot {
    Vec prob_sum;
    int windows = 0;
  };
  struct PerVideo {
    std::map<std::pair<int, int>, Slot> slots;  // (event index, set) -> slot
  };
  std::vector<PerVideo> results(videos.size());

  parallel_for(videos.size(), opts.threads, [&](std::size_t vi) {
    const VideoData& video = *videos[vi];
    PerVideo& acc = results[vi];
    Rng rng(0);  // eval mode; never consumed

    // perturbed copies of this video's events
    AnnotationSet perturbed;
    std::vector<int> indices;
    std::vector<int> original_index;
    for (int ei : video.event_indices) {
      Event ev = data.annotations.events[static_cast<std::size_t>(ei)];
      ev.t = perturb_interval(ev.t, opts.query_offset_s, opts.query_scale);
      if (ev.t.end_s <= 0.0 || ev.t.start_s >= video.length_s) continue;
      ev.t.start_s = std::max(ev.t.start_s, 0.0);
      ev.t.end_s = std::min(ev.t.end_s, video.length_s);
      indices.push_back(static_cast<int>(perturbed.events.size()));
      original_index.push_back(ei);
      perturbed.events.push_back(std::move(ev));
    }

    for (double ws : enumerate_windows(video.length_s, spec)) {
      WindowSample window = make_window_sample(data, video, ws, spec);
      window.queries =
          assemble_queries(ws, spec, schema, perturbed, indices);
      if (window.queries.empty()) continue;
      nn::Tape tape;
      ForwardOut fwd = model.forward(tape, window, /*train=*/false, rng);
      for (const auto& g : fwd.groups) {
        const Mat& logits = g.logits.val();
        for (std::size_t r = 0; r < g.query_indices.size(); ++r) {
          const Query& q =
              window.queries[static_cast<std::size_t>(g.query_indices[r])];
          Row row = logits.row(static_cast<Index>(r));
          const Real m = row.maxCoeff();
          Row p = (row.array() - m).exp();
          p /= p.sum();
          auto key = std::make_pair(
              original_index[static_cast<std::size_t>(q.event_index)],
              g.label_set);
          Slot& slot = acc.slots[key];
          if (slot.windows == 0) slot.prob_sum = Vec::Zero(p.size());
          slot.prob_sum += p.transpose();
          slot.windows += 1;
        }
      }
    }
  });

  RecognitionReport report;
  std::map<std::pair<int, int>, Slot> merged;
  for (auto& pv : results)
    for (auto& [key, slot] : pv.slots) {
      Slot& m = merged[key];
      if (m.windows == 0)
        m = std::move(slot);
      else {
        m.prob_sum += slot.prob_sum;
        m.windows += slot.windows;
      }
    }

  // score every event of every listed video, missing predictions as wrong
  struct Bucket {
    std::vector<int> preds, targets;
    std::vector<bool> is_short;
  };
  std::map<std::pair<int, int>, Bucket> buckets;  // (modality, set)
  for (const VideoData* video : videos) {
    for (int ei : video->event_indices) {
      const Event& ev = data.annotations.events[static_cast<std::size_t>(ei)];
      const int m = schema.modality_index(ev.modality);
      if (m < 0) continue;
      for (const auto& [set_name, cls] : ev.labels) {
        const int s = schema.set_index(m, set_name);
        if (s < 0) continue;
        EventPrediction pred;
        pred.event_index = ei;
        pred.modality = m;
        pred.label_set = s;
        pred.target = cls;
        auto it = merged.find(std::make_pair(ei, s));
        if (it != merged.end()) {
          pred.probs = it->second.prob_sum / it->second.windows;
          pred.windows = it->second.windows;
        }
        Bucket& b = buckets[std::make_pair(m, s)];
        b.preds.push_back(pred.predicted());
        b.targets.push_back(cls);
        b.is_short.push_back(ev.t.duration() < opts.short_long_split_s);
        report.events.push_back(std::move(pred));
      }
    }
  }

  for (const auto& [key, b] : buckets) {
    SetMetrics sm;
    sm.modality = schema.modalities[static_cast<std::size_t>(key.first)];
    sm.set_name = schema.label_sets[static_cast<std::size_t>(key.first)]
                                   [static_cast<std::size_t>(key.second)]
                                       .name;
    sm.count = static_cast<int>(b.preds.size());
    sm.top1 = top1_accuracy(b.preds, b.targets);
    sm.pca = per_class_accuracy(b.preds, b.targets);
    int cs = 0, cl = 0, ss = 0, sl = 0;
    for (std::size_t i = 0; i < b.preds.size(); ++i) {
      if (b.is_short[i]) {
        ++cs;
        if (b.preds[i] == b.targets[i]) ++ss;
      } else {
        ++cl;
        if (b.preds[i] == b.targets[i]) ++sl;
      }
    }
    sm.count_short = cs;
    sm.count_long = cl;
    sm.top1_short = cs > 0 ? static_cast<Real>(ss) / cs : 0.0;
    sm.top1_long = cl > 0 ? static_cast<Real>(sl) / cl : 0.0;
    report.sets.push_back(std::move(sm));
  }
  return report;
}

std::vector<ShiftScalePoint> shift_scale_analysis(
    const TimModel& model, const Dataset& data,
    const std::vector<const VideoData*>& videos, const WindowSpec& spec,
    const std::vector<double>& offsets_s, const std::vector<double>& scales,
    int threads) {
  std::vector<ShiftScalePoint> out;
  for (double off : offsets_s) {
    EvalOptions opts;
    opts.query_offset_s = off;
    opts.threads = threads;
    auto rep = evaluate_recognition(model, data, videos, spec, opts);
    out.push_back(ShiftScalePoint{"shift", off, std::move(rep.sets)});
  }
  for (double sc : scales) {
    EvalOptions opts;
    opts.query_scale = sc;
    opts.threads = threads;
    auto rep = evaluate_recognition(model, data, videos, spec, opts);
    out.push_back(ShiftScalePoint{"scale", sc, std::move(rep.sets)});
  }
  return out;
}

Real td_head_mae(const TimModel& model, const Dataset& data,
                 const std::vector<const VideoData*>& videos,
                 const WindowSpec& spec, PairSampling mode,
                 std::uint64_t seed) {
  Rng rng(seed);
  Rng eval_rng(0);
  Real abs_sum = 0.0;
  long n = 0;
  for (const VideoData* video : videos) {
    for (double ws : enumerate_windows(video->length_s, spec)) {
      WindowSample window = make_window_sample(data, *video, ws, spec);
      window.queries.clear();
      nn::Tape tape;
      ForwardOut fwd = model.forward(tape, window, /*train=*/false, eval_rng);
      auto pairs =
          sample_td_pairs(fwd.feature_times, fwd.feature_modality, mode, rng);
      if (pairs.empty()) continue;
      std::vector<int> left, right;
      Mat targets(static_cast<Index>(pairs.size()), 1);
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        left.push_back(pairs[k].i);
        right.push_back(pairs[k].j);
        targets(static_cast<Index>(k), 0) = pairs[k].target;
      }
      nn::Var zi = ad::gather_rows(fwd.features, std::move(left));
      nn::Var zj = ad::gather_rows(fwd.features, std::move(right));
      Mat pred = model.td_head(ad::concat_cols(zi, zj)).val();
      abs_sum += (pred - targets).cwiseAbs().sum();
      n += static_cast<long>(pairs.size());
    }
  }
  if (n == 0) throw std::runtime_error("no pairs available for TD check");
  return abs_sum / static_cast<Real>(n);
}

}  // namespace tim
