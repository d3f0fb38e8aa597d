#include "tim/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "tim/parallel.hpp"

namespace tim {

void TrainConfig::validate() const {
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (batch_size <= 0) throw std::invalid_argument("batch_size must be > 0");
  if (target_lr <= 0.0 || warmup_start_lr <= 0.0)
    throw std::invalid_argument("learning rates must be > 0");
  if (weight_decay < 0.0)
    throw std::invalid_argument("weight decay must be >= 0");
  if (warmup_epochs < 0 || (epochs > 0 && warmup_epochs >= epochs))
    throw std::invalid_argument("warmup_epochs must be below epochs");
}

double lr_at(long step, long steps_per_epoch, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("step must be >= 0");
  const long warmup = static_cast<long>(cfg.warmup_epochs) * steps_per_epoch;
  const long total = static_cast<long>(cfg.epochs) * steps_per_epoch;
  if (step < warmup) {
    const double f = static_cast<double>(step) / static_cast<double>(warmup);
    return cfg.warmup_start_lr + f * (cfg.target_lr - cfg.warmup_start_lr);
  }
  if (total <= warmup) return cfg.target_lr;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total - warmup);
  const double clamped = std::min(progress, 1.0);
  return cfg.target_lr * 0.5 * (1.0 + std::cos(M_PI * clamped));
}

void AdamW::step(const std::vector<nn::Parameter*>& params, double lr) {
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (auto* p : params) {
      m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (m_.size() != params.size())
    throw std::invalid_argument("optimizer bound to a different parameter set");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    nn::Parameter& p = *params[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] +
            (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    const Mat mhat = m_[i] / bc1;
    const Mat vhat = v_[i] / bc2;
    const Mat update = (mhat.array() / (vhat.array().sqrt() + eps_)).matrix();
    // decoupled decay multiplies the previous weights directly
    p.value = p.value * (1.0 - lr * weight_decay_) - lr * update;
  }
}

int select_model(const std::vector<EpochMetrics>& metrics) {
  if (metrics.empty())
    throw std::invalid_argument("select_model needs at least one epoch");
  int best = 0;
  for (std::size_t i = 1; i < metrics.size(); ++i)
    if (metrics[i].selection_metric > metrics[best].selection_metric)
      best = static_cast<int>(i);
  return best;
}

namespace {

struct TrainWindow {
  WindowSample sample;
  std::vector<DetectionTargetSpec> det_targets;  // detection mode only
};

std::string json_escape_number(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void log_step(std::ostream* log, long step, double lr,
              const std::map<std::string, double>& components) {
  if (!log) return;
  (*log) << "{\"step\":" << step << ",\"lr\":" << json_escape_number(lr);
  for (const auto& [k, v] : components)
    (*log) << ",\"" << k << "\":" << json_escape_number(v);
  (*log) << "}\n";
}

}  // namespace

TrainResult train(TimModel& model, const Dataset& data,
                  const std::vector<const VideoData*>& train_videos,
                  const std::vector<const VideoData*>& val_videos,
                  const WindowSpec& spec, const TrainConfig& cfg,
                  const PyramidConfig* pyramid, const DetectionTask* task,
                  const TrainHooks& hooks) {
  cfg.validate();
  spec.validate();
  const bool detection = cfg.mode == TrainMode::kDetection;
  if (detection && (!pyramid || !task))
    throw std::invalid_argument("detection training needs a pyramid and task");
  if (cfg.weights.modality.size() != model.cfg.schema.modalities.size())
    throw std::invalid_argument("loss weights must align with modalities");

  Rng rng(cfg.seed);

  // assemble every training window up front
  std::vector<ProposalQuery> pyramid_queries;
  std::vector<IntervalQuery> det_queries;
  if (detection) {
    pyramid_queries = build_pyramid(spec.window_s, *pyramid);
    for (const auto& p : pyramid_queries) {
      IntervalQuery q;
      q.t = NormalizedInterval{p.start_s / spec.window_s,
                               p.end_s() / spec.window_s};
      q.modality = task->modality;
      q.label_set = task->label_set;
      det_queries.push_back(q);
    }
  }
  const std::string task_set_name =
      detection ? model.cfg.schema
                      .label_sets[static_cast<std::size_t>(task->modality)]
                                 [static_cast<std::size_t>(task->label_set)]
                      .name
                : "";

  std::vector<TrainWindow> windows;
  for (const VideoData* video : train_videos) {
    for (double ws : enumerate_windows(video->length_s, spec)) {
      TrainWindow tw;
      tw.sample = make_window_sample(data, *video, ws, spec);
      if (detection) {
        std::vector<std::pair<TimeInterval, int>> gts;
        for (int ei : video->event_indices) {
          const Event& ev =
              data.annotations.events[static_cast<std::size_t>(ei)];
          const int m = model.cfg.schema.modality_index(ev.modality);
          if (m != task->modality) continue;
          auto it = ev.labels.find(task_set_name);
          if (it == ev.labels.end()) continue;
          const double w0 = ws, w1 = ws + spec.window_s;
          if (!(span_overlap(ev.t.start_s, ev.t.end_s, w0, w1) > 0.0))
            continue;
          // window seconds, clipped
          gts.emplace_back(
              TimeInterval{std::max(ev.t.start_s, w0) - w0,
                           std::min(ev.t.end_s, w1) - w0},
              it->second);
        }
        auto assigned =
            assign_targets(pyramid_queries, gts, cfg.det_iou_threshold);
        tw.det_targets.reserve(assigned.size());
        for (const auto& a : assigned) {
          DetectionTargetSpec t;
          t.cls = a.cls;
          if (a.cls >= 0)
            t.gt = NormalizedInterval{a.gt.start_s / spec.window_s,
                                      a.gt.end_s / spec.window_s};
          tw.det_targets.push_back(t);
        }
      }
      windows.push_back(std::move(tw));
    }
  }
  if (windows.empty()) throw std::invalid_argument("no training windows");

  const long steps_per_epoch =
      (static_cast<long>(windows.size()) + cfg.batch_size - 1) /
      cfg.batch_size;

  auto params = model.params();
  AdamW opt(cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay);

  TrainResult result;
  double best_metric = -std::numeric_limits<double>::infinity();
  std::vector<Mat> best_values;
  long global_step = 0;

  std::vector<int> order(windows.size());
  for (std::size_t i = 0; i < order.size(); ++i)
    order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(order);
    double epoch_loss = 0.0;
    long epoch_batches = 0;

    for (std::size_t b0 = 0; b0 < order.size();
         b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(
          order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const double lr = lr_at(global_step, steps_per_epoch, cfg);

      for (auto* p : params) p->zero_grad();

      // phase one: forward every window, keep tapes alive
      struct Graph {
        std::unique_ptr<nn::Tape> tape;
        RecognitionWindowTerms rec;
        DetectionWindowTerms det;
      };
      std::vector<Graph> graphs;
      graphs.reserve(b1 - b0);
      for (std::size_t k = b0; k < b1; ++k) {
        const TrainWindow& tw = windows[static_cast<std::size_t>(order[k])];
        Graph g;
        g.tape = std::make_unique<nn::Tape>();
        if (!detection) {
          ForwardOut fwd =
              model.forward(*g.tape, tw.sample, /*train=*/true, rng);
          g.rec = build_recognition_terms(model, fwd, tw.sample,
                                          cfg.td_sampling, rng);
        } else {
          ForwardOut fwd = model.forward(*g.tape, tw.sample, det_queries,
                                         /*train=*/true, rng);
          g.det = build_detection_terms(model, fwd, tw.det_targets,
                                        cfg.focal_gamma, cfg.focal_alpha);
        }
        graphs.push_back(std::move(g));
      }

      // phase two: batch-level normalizers, then backward per window
      double batch_loss = 0.0;
      std::map<std::string, double> components;
      if (!detection) {
        const std::size_t n_mod = model.cfg.schema.modalities.size();
        std::vector<long> ce_counts(n_mod, 0);
        long pair_count = 0;
        for (const auto& g : graphs) {
          for (std::size_t m = 0; m < n_mod; ++m)
            ce_counts[m] += g.rec.ce_count[m];
          pair_count += g.rec.td_count;
        }
        const double td_norm =
            cfg.td_normalize && pair_count > 0
                ? 1.0 / static_cast<double>(pair_count)
                : 1.0;
        for (auto& g : graphs) {
          nn::Var total;
          for (std::size_t m = 0; m < n_mod; ++m) {
            if (!g.rec.ce_sum[m].valid() || ce_counts[m] == 0) continue;
            nn::Var term = ad::scalar_mul(
                g.rec.ce_sum[m],
                cfg.weights.modality[m] / static_cast<double>(ce_counts[m]));
            total = total.valid() ? ad::add(total, term) : term;
          }
          if (g.rec.td_sum.valid()) {
            nn::Var term =
                ad::scalar_mul(g.rec.td_sum, cfg.weights.td * td_norm);
            total = total.valid() ? ad::add(total, term) : term;
          }
          if (!total.valid()) continue;
          batch_loss += total.val()(0, 0);
          g.tape->backward(total);
        }
        for (std::size_t m = 0; m < n_mod; ++m)
          components["queries_" + model.cfg.schema.modalities[m]] =
              static_cast<double>(ce_counts[m]);
      } else {
        long query_count = 0, positive_count = 0;
        for (const auto& g : graphs) {
          query_count += g.det.query_count;
          positive_count += g.det.positive_count;
        }
        for (auto& g : graphs) {
          nn::Var total;
          if (g.det.focal_sum.valid() && query_count > 0)
            total = ad::scalar_mul(g.det.focal_sum,
                                   1.0 / static_cast<double>(query_count));
          if (g.det.diou_sum.valid() && positive_count > 0) {
            nn::Var term = ad::scalar_mul(
                g.det.diou_sum,
                cfg.weights.det_reg / static_cast<double>(positive_count));
            total = total.valid() ? ad::add(total, term) : term;
          }
          if (!total.valid()) continue;
          batch_loss += total.val()(0, 0);
          g.tape->backward(total);
        }
        components["positives"] = static_cast<double>(positive_count);
      }

      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "non-finite loss at step " << global_step << " (epoch " << epoch
           << "): " << batch_loss;
        throw std::runtime_error(os.str());
      }

      opt.step(params, lr);
      components["loss"] = batch_loss;
      log_step(hooks.step_log, global_step, lr, components);
      epoch_loss += batch_loss;
      ++epoch_batches;
      ++global_step;
    }

    EpochMetrics em;
    em.epoch = epoch;
    em.train_loss =
        epoch_batches > 0 ? epoch_loss / static_cast<double>(epoch_batches)
                          : 0.0;

    if (!val_videos.empty()) {
      if (!detection) {
        EvalOptions opts;
        opts.threads = worker_threads();
        auto report =
            evaluate_recognition(model, data, val_videos, spec, opts);
        double visual_sum = 0.0;
        int visual_sets = 0;
        for (const auto& s : report.sets) {
          em.values["top1_" + s.modality + "_" + s.set_name] = s.top1;
          em.values["pca_" + s.modality + "_" + s.set_name] = s.pca;
          if (s.modality == model.cfg.schema.modalities.front()) {
            visual_sum += s.top1;
            ++visual_sets;
          }
        }
        em.selection_metric =
            visual_sets > 0 ? visual_sum / visual_sets : -em.train_loss;
      } else {
        auto dets = run_detection(model, data, val_videos, spec, *pyramid,
                                  *task, worker_threads());
        std::vector<GroundTruthInstance> gts;
        for (const VideoData* v : val_videos)
          for (int ei : v->event_indices) {
            const Event& ev =
                data.annotations.events[static_cast<std::size_t>(ei)];
            const int m = model.cfg.schema.modality_index(ev.modality);
            if (m != task->modality) continue;
            auto it = ev.labels.find(task_set_name);
            if (it == ev.labels.end()) continue;
            gts.push_back(GroundTruthInstance{ev.video, it->second, ev.t});
          }
        auto ap = detection_map(dets, gts);
        em.values["map_avg"] = ap.average;
        for (std::size_t i = 0; i < ap.thresholds.size(); ++i) {
          std::ostringstream key;
          key << "map_" << ap.thresholds[i];
          em.values[key.str()] = ap.ap[i];
        }
        em.selection_metric = ap.average;
      }
    } else {
      em.selection_metric = -em.train_loss;
    }

    result.epochs.push_back(em);
    if (em.selection_metric > best_metric) {
      best_metric = em.selection_metric;
      best_values.clear();
      best_values.reserve(params.size());
      for (auto* p : params) best_values.push_back(p->value);
    }
    if (hooks.after_epoch && hooks.after_epoch(em)) break;
  }

  if (!result.epochs.empty()) {
    result.best_epoch = select_model(result.epochs);
    // leave the model at its best epoch
    if (!best_values.empty())
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i]->value = best_values[i];
  }
  return result;
}

GradCheckReport check_gradients(const std::vector<nn::Parameter*>& params,
                                const std::function<Real()>& loss_fn,
                                Real h,
                                const std::function<Real()>& value_fn) {
  for (auto* p : params) p->zero_grad();
  loss_fn();
  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (auto* p : params) analytic.push_back(p->grad);
  const auto& probe = value_fn ? value_fn : loss_fn;

  GradCheckReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    nn::Parameter& p = *params[pi];
    for (Index r = 0; r < p.value.rows(); ++r)
      for (Index c = 0; c < p.value.cols(); ++c) {
        const Real theta = p.value(r, c);
        const Real hi = h * std::max<Real>(1.0, std::abs(theta));
        p.value(r, c) = theta + hi;
        const Real lp = probe();
        p.value(r, c) = theta - hi;
        const Real lm = probe();
        p.value(r, c) = theta;
        const Real fd = (lp - lm) / (2.0 * hi);
        const Real g = analytic[pi](r, c);
        const Real scale = std::max(std::abs(g), std::abs(fd));
        const Real err =
            scale > 1e-6 ? std::abs(g - fd) / scale : std::abs(g - fd);
        if (err > report.max_rel_err) {
          report.max_rel_err = err;
          report.worst_param = p.name;
        }
        ++report.checked;
      }
  }
  return report;
}

}  // namespace tim
