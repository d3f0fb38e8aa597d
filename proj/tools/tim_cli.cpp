// Command-line front end: synthetic data generation, training, evaluation,
// detection, robustness analysis, gradient checking and diagnostic dumps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tim/config.hpp"
#include "tim/evaluation.hpp"
#include "tim/io.hpp"
#include "tim/parallel.hpp"
#include "tim/synthetic.hpp"
#include "tim/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tim;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool paper_scale = false;
  std::string mode;  // "", "recognition", "detection"
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON config file");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "random seed")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_flag("--paper-scale", args.paper_scale,
                "full-size model profile (512-D, 4 layers, 8 heads)");
  cmd->add_option("--mode", args.mode, "recognition|detection");
}

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig base;
  apply_desk_profile(base.model);
  RunConfig cfg = args.config_path.empty()
                      ? base
                      : load_run_config(args.config_path, base);
  if (!args.mode.empty()) {
    if (args.mode == "recognition")
      cfg.train.mode = TrainMode::kRecognition;
    else if (args.mode == "detection")
      cfg.train.mode = TrainMode::kDetection;
    else
      throw std::invalid_argument("--mode must be recognition or detection");
  }
  cfg.model.detection = cfg.train.mode == TrainMode::kDetection;
  if (args.paper_scale) apply_paper_profile(cfg.model);
  if (args.seed_set) cfg.train.seed = args.seed;
  return cfg;
}

void ensure_out(const std::string& dir) { fs::create_directories(dir); }

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << j.dump(2) << "\n";
}

/// CSV plus a sidecar echoing the effective config (stdout gets no sidecar).
void write_csv_with_config(const std::string& out_file,
                           const std::string& csv, const RunConfig& cfg) {
  if (out_file.empty() || out_file == "-") {
    std::cout << csv;
    return;
  }
  std::ofstream out(out_file);
  if (!out) throw std::runtime_error("cannot write " + out_file);
  out << csv;
  write_json(out_file + ".config.json",
             json{{"config", run_config_to_json(cfg)}});
}

std::vector<const VideoData*> all_videos(const Dataset& data) {
  std::vector<const VideoData*> v;
  for (const auto& video : data.videos) v.push_back(&video);
  return v;
}

/// Deterministic split: the last round(val_fraction * n) videos validate.
void split_videos(const Dataset& data, double val_fraction,
                  std::vector<const VideoData*>& train_videos,
                  std::vector<const VideoData*>& val_videos) {
  const std::size_t n = data.videos.size();
  std::size_t n_val =
      static_cast<std::size_t>(val_fraction * static_cast<double>(n) + 0.5);
  if (val_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;
  if (n_val >= n) n_val = n > 1 ? n - 1 : 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i + n_val < n)
      train_videos.push_back(&data.videos[i]);
    else
      val_videos.push_back(&data.videos[i]);
  }
}

/// Fit the config's schema to the dataset when the config does not pin one.
void adopt_schema(RunConfig& cfg, const Dataset& data) {
  if (!cfg.schema_from_config) cfg.model.schema = data.schema;
  cfg.model.schema.validate();
}

DetectionTask resolve_task(const RunConfig& cfg, const Schema& schema) {
  DetectionTask task;
  task.modality = schema.modality_index(cfg.detect_modality);
  if (task.modality < 0)
    throw std::invalid_argument("detect_modality names an unknown modality");
  if (cfg.detect_label_set.empty()) {
    task.label_set = 0;
  } else {
    task.label_set = schema.set_index(task.modality, cfg.detect_label_set);
    if (task.label_set < 0)
      throw std::invalid_argument("detect_label_set not found");
  }
  return task;
}

json metrics_json(const RecognitionReport& report) {
  json sets = json::array();
  for (const auto& s : report.sets) {
    sets.push_back({{"modality", s.modality},
                    {"set", s.set_name},
                    {"top1", s.top1},
                    {"pca", s.pca},
                    {"top1_short", s.top1_short},
                    {"top1_long", s.top1_long},
                    {"count", s.count},
                    {"count_short", s.count_short},
                    {"count_long", s.count_long}});
  }
  return sets;
}

int cmd_synth(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  const std::uint64_t seed = args.seed_set ? args.seed : cfg.train.seed;
  auto result = generate_synthetic(cfg.synth, seed);
  ensure_out(args.out_dir);
  io::write_dataset(args.out_dir, result.dataset);
  json summary = {{"videos", result.dataset.videos.size()},
                  {"events", result.dataset.annotations.events.size()},
                  {"cued_visual_classes", result.cued_visual_classes},
                  {"seed", seed},
                  {"config", run_config_to_json(cfg)}};
  write_json((fs::path(args.out_dir) / "synth_summary.json").string(),
             summary);
  std::cout << "wrote " << result.dataset.videos.size() << " videos, "
            << result.dataset.annotations.events.size() << " events to "
            << args.out_dir << "\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_dir) {
  RunConfig cfg = resolve_config(args);
  Dataset data = io::read_dataset(data_dir);
  adopt_schema(cfg, data);

  std::vector<const VideoData*> train_videos, val_videos;
  split_videos(data, cfg.val_fraction, train_videos, val_videos);

  Rng init(cfg.train.seed);
  TimModel model(cfg.model, init);
  TrainConfig tc = cfg.train_for(cfg.model.schema);

  ensure_out(args.out_dir);
  std::ofstream log((fs::path(args.out_dir) / "train_log.jsonl").string());
  TrainHooks hooks;
  hooks.step_log = &log;

  TrainResult result;
  if (tc.mode == TrainMode::kDetection) {
    DetectionTask task = resolve_task(cfg, cfg.model.schema);
    result = train(model, data, train_videos, val_videos, cfg.window, tc,
                   &cfg.pyramid, &task, hooks);
  } else {
    result = train(model, data, train_videos, val_videos, cfg.window, tc,
                   nullptr, nullptr, hooks);
  }

  io::save_checkpoint((fs::path(args.out_dir) / "model.timc").string(),
                      model);
  json epochs = json::array();
  for (const auto& e : result.epochs) {
    json je = {{"epoch", e.epoch},
               {"train_loss", e.train_loss},
               {"selection_metric", e.selection_metric}};
    for (const auto& [k, v] : e.values) je[k] = v;
    epochs.push_back(je);
  }
  write_json((fs::path(args.out_dir) / "epochs.json").string(),
             json{{"best_epoch", result.best_epoch},
                  {"epochs", epochs},
                  {"config", run_config_to_json(cfg)}});
  std::cout << "trained " << result.epochs.size() << " epochs; best epoch "
            << result.best_epoch << "; checkpoint at "
            << (fs::path(args.out_dir) / "model.timc").string() << "\n";
  return 0;
}

int cmd_evaluate(const CommonArgs& args, const std::string& data_dir,
                 const std::string& checkpoint,
                 const std::string& detections_path, bool eval_train_split) {
  RunConfig cfg = resolve_config(args);
  Dataset data = io::read_dataset(data_dir);
  TimModel model = io::load_checkpoint(checkpoint);

  std::vector<const VideoData*> train_videos, val_videos;
  split_videos(data, cfg.val_fraction, train_videos, val_videos);
  const auto& videos = eval_train_split ? train_videos : val_videos;
  if (videos.empty()) throw std::runtime_error("no videos in this split");

  EvalOptions opts;
  opts.threads = worker_threads();
  auto report = evaluate_recognition(model, data, videos, cfg.window, opts);

  ensure_out(args.out_dir);
  json out = {{"metrics", metrics_json(report)},
              {"config", run_config_to_json(cfg)}};

  std::ostringstream csv;
  csv << "modality,set,top1,pca,top1_short,top1_long,count\n";
  for (const auto& s : report.sets) {
    csv << s.modality << "," << s.set_name << "," << s.top1 << "," << s.pca
        << "," << s.top1_short << "," << s.top1_long << "," << s.count
        << "\n";
    std::cout << "top1 " << s.modality << "/" << s.set_name << " = " << s.top1
              << "  pca = " << s.pca << "  (n=" << s.count << ")\n";
  }

  if (!detections_path.empty()) {
    auto dets = io::read_detections_jsonl(detections_path);
    DetectionTask task = resolve_task(cfg, model.cfg.schema);
    const std::string set_name =
        model.cfg.schema.label_sets[static_cast<std::size_t>(task.modality)]
                                   [static_cast<std::size_t>(task.label_set)]
                                       .name;
    std::vector<GroundTruthInstance> gts;
    for (const VideoData* v : videos)
      for (int ei : v->event_indices) {
        const Event& ev =
            data.annotations.events[static_cast<std::size_t>(ei)];
        auto it = ev.labels.find(set_name);
        if (it == ev.labels.end()) continue;
        gts.push_back(GroundTruthInstance{ev.video, it->second, ev.t});
      }
    auto ap = detection_map(dets, gts);
    json ap_json = {{"average", ap.average}};
    for (std::size_t i = 0; i < ap.thresholds.size(); ++i) {
      std::ostringstream key;
      key << "ap@" << ap.thresholds[i];
      ap_json[key.str()] = ap.ap[i];
      std::cout << "mAP@" << ap.thresholds[i] << " = " << ap.ap[i] << "\n";
    }
    std::cout << "mAP avg = " << ap.average << "\n";
    out["detection_map"] = ap_json;
  }

  write_json((fs::path(args.out_dir) / "metrics.json").string(), out);
  std::ofstream csv_file((fs::path(args.out_dir) / "metrics.csv").string());
  csv_file << csv.str();
  return 0;
}

int cmd_detect(const CommonArgs& args, const std::string& data_dir,
               const std::string& checkpoint, const std::string& split) {
  RunConfig cfg = resolve_config(args);
  Dataset data = io::read_dataset(data_dir);
  TimModel model = io::load_checkpoint(checkpoint);
  if (!model.cfg.detection)
    throw std::runtime_error("checkpoint was not trained for detection");

  std::vector<const VideoData*> train_videos, val_videos;
  split_videos(data, cfg.val_fraction, train_videos, val_videos);
  std::vector<const VideoData*> videos;
  if (split == "all")
    videos = all_videos(data);
  else if (split == "train")
    videos = train_videos;
  else if (split == "val")
    videos = val_videos;
  else
    throw std::invalid_argument("--split must be all, train or val");

  DetectionTask task = resolve_task(cfg, model.cfg.schema);
  auto dets = run_detection(model, data, videos, cfg.window, cfg.pyramid,
                            task, worker_threads());
  ensure_out(args.out_dir);
  io::write_detections_jsonl(
      (fs::path(args.out_dir) / "detections.jsonl").string(), dets);
  write_json((fs::path(args.out_dir) / "detect_summary.json").string(),
             json{{"detections", dets.size()},
                  {"videos", videos.size()},
                  {"config", run_config_to_json(cfg)}});
  std::cout << "wrote " << dets.size() << " detections for " << videos.size()
            << " videos\n";
  return 0;
}

int cmd_analyze_shift(const CommonArgs& args, const std::string& data_dir,
                      const std::string& checkpoint,
                      std::vector<double> offsets,
                      std::vector<double> scales) {
  RunConfig cfg = resolve_config(args);
  Dataset data = io::read_dataset(data_dir);
  TimModel model = io::load_checkpoint(checkpoint);

  std::vector<const VideoData*> train_videos, val_videos;
  split_videos(data, cfg.val_fraction, train_videos, val_videos);
  if (val_videos.empty()) throw std::runtime_error("no validation videos");

  if (offsets.empty()) offsets = {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5};
  if (scales.empty()) scales = {0.5, 0.75, 1.0, 1.25, 1.5};

  auto points = shift_scale_analysis(model, data, val_videos, cfg.window,
                                     offsets, scales, worker_threads());

  ensure_out(args.out_dir);
  std::ostringstream csv;
  csv << "kind,value,modality,set,top1,top1_short,top1_long\n";
  json rows = json::array();
  for (const auto& p : points) {
    for (const auto& s : p.sets) {
      csv << p.kind << "," << p.value << "," << s.modality << ","
          << s.set_name << "," << s.top1 << "," << s.top1_short << ","
          << s.top1_long << "\n";
      rows.push_back({{"kind", p.kind},
                      {"value", p.value},
                      {"modality", s.modality},
                      {"set", s.set_name},
                      {"top1", s.top1},
                      {"top1_short", s.top1_short},
                      {"top1_long", s.top1_long}});
    }
  }
  std::ofstream csv_file((fs::path(args.out_dir) / "shift_scale.csv").string());
  csv_file << csv.str();
  write_json((fs::path(args.out_dir) / "shift_scale.json").string(),
             json{{"rows", rows}, {"config", run_config_to_json(cfg)}});
  std::cout << "wrote " << points.size() << " analysis points\n";
  return 0;
}

int cmd_grad_check(const CommonArgs& args) {
  RunConfig cfg = resolve_config(args);
  // fixed tiny fragment: gradient verification is meant to run in seconds
  SynthConfig synth;
  synth.videos = 1;
  synth.video_length_s = 12.0;
  synth.visual_classes = 3;
  synth.audio_classes = 3;
  synth.visual_feature_dim = 6;
  synth.audio_feature_dim = 5;
  synth.event_rate_hz = 0.3;
  synth.min_duration_s = 1.0;
  synth.max_duration_s = 3.0;
  synth.noise_sigma = 0.1;
  auto data = generate_synthetic(synth, cfg.train.seed + 1);

  ModelConfig mc;
  mc.embed_dim = 16;
  mc.encoder_layers = 2;
  mc.attention_heads = 2;
  mc.time_mlp_hidden = 8;
  mc.td_head_hidden = 8;
  mc.encoder_dropout = 0.1;
  mc.channel_dropout_input = 0.2;
  mc.schema = data.dataset.schema;
  Rng init(cfg.train.seed);
  TimModel model(mc, init);

  WindowSpec spec;
  spec.window_s = 12.0;
  spec.window_stride_s = 12.0;
  spec.features_per_modality = 6;
  spec.feature_stride_s = 2.0;
  WindowSample window =
      make_window_sample(data.dataset, data.dataset.videos[0], 0.0, spec);
  if (window.queries.empty()) {
    Query q;
    q.t = {0.2, 0.5};
    q.modality = 0;
    q.label_set = 0;
    q.target = 1;
    window.queries.push_back(q);
  }

  auto params = model.params();
  LossWeights w = LossWeights::defaults_for(mc.schema);
  const std::uint64_t fwd_seed = cfg.train.seed + 2;
  auto loss_value = [&](bool with_grad) {
    Rng rng(fwd_seed);  // fixed masks and pairs on every call
    nn::Tape tape;
    auto fwd = model.forward(tape, window, /*train=*/true, rng);
    auto terms = build_recognition_terms(model, fwd, window,
                                         PairSampling::kCrossModal, rng);
    nn::Var total;
    for (std::size_t m = 0; m < terms.ce_sum.size(); ++m) {
      if (!terms.ce_sum[m].valid()) continue;
      nn::Var t = ad::scalar_mul(
          terms.ce_sum[m], w.modality[m] / std::max(1, terms.ce_count[m]));
      total = total.valid() ? ad::add(total, t) : t;
    }
    if (terms.td_sum.valid()) {
      nn::Var t = ad::scalar_mul(terms.td_sum, w.td);
      total = total.valid() ? ad::add(total, t) : t;
    }
    if (with_grad) tape.backward(total);
    return total.val()(0, 0);
  };
  auto loss_fn = [&]() {
    for (auto* p : params) p->zero_grad();
    return loss_value(true);
  };
  auto value_fn = [&]() { return loss_value(false); };

  auto report = check_gradients(params, loss_fn, 1e-5, value_fn);
  std::cout << "checked " << report.checked << " parameters; max rel err "
            << report.max_rel_err << " (worst: " << report.worst_param
            << ")\n";
  const bool ok = report.max_rel_err < 1e-4;
  std::cout << (ok ? "PASS" : "FAIL") << "\n";
  return ok ? 0 : 1;
}

int cmd_inspect_encodings(const CommonArgs& args,
                          const std::string& checkpoint, int grid,
                          const std::string& out_file) {
  std::ostringstream csv;
  auto emit = [&](const IntervalEncoder& enc, int dim) {
    csv << "interval_start,interval_end";
    for (int d = 0; d < dim; ++d) csv << ",dim_" << d;
    csv << "\n";
    for (int i = 0; i <= grid; ++i)
      for (int j = i; j <= grid; ++j) {
        const double s = static_cast<double>(i) / grid;
        const double e = static_cast<double>(j) / grid;
        Vec v = enc.encode_one(NormalizedInterval{s, e});
        csv << s << "," << e;
        for (Index d = 0; d < v.size(); ++d) csv << "," << v(d);
        csv << "\n";
      }
  };

  RunConfig cfg = resolve_config(args);
  if (!checkpoint.empty()) {
    TimModel model = io::load_checkpoint(checkpoint);
    emit(model.interval_enc, model.cfg.embed_dim);
  } else {
    Rng rng(cfg.train.seed);
    IntervalEncoder enc(cfg.model.interval_variant, cfg.model.embed_dim,
                        cfg.model.time_mlp_hidden, rng);
    emit(enc, cfg.model.embed_dim);
  }
  write_csv_with_config(out_file, csv.str(), cfg);
  return 0;
}

int cmd_dump_attention(const CommonArgs& args, const std::string& data_dir,
                       const std::string& checkpoint,
                       const std::string& video_id, double window_start,
                       const std::string& out_file) {
  RunConfig cfg = resolve_config(args);
  Dataset data = io::read_dataset(data_dir);
  TimModel model = io::load_checkpoint(checkpoint);
  const VideoData* video = data.find_video(video_id);
  if (!video) throw std::runtime_error("video " + video_id + " not found");

  WindowSample window =
      make_window_sample(data, *video, window_start, cfg.window);
  if (window.queries.empty())
    throw std::runtime_error("window has no queries to attend from");

  nn::Tape tape;
  Rng rng(0);
  auto fwd = model.forward(tape, window, /*train=*/false, rng,
                           /*want_attention=*/true);

  std::vector<const Query*> valid;
  for (const auto& q : window.queries)
    if (q.valid) valid.push_back(&q);
  std::vector<int> row_to_query;
  for (const auto& g : fwd.groups)
    for (int qi : g.query_indices) row_to_query.push_back(qi);

  std::ostringstream csv;
  csv << "layer,head,query,query_start,query_end,key,key_start,key_end,"
         "weight\n";
  for (std::size_t layer = 0; layer < fwd.attention.query_attention.size();
       ++layer) {
    const auto& heads = fwd.attention.query_attention[layer];
    for (std::size_t head = 0; head < heads.size(); ++head) {
      const Mat& rows = heads[head];
      for (Index r = 0; r < rows.rows(); ++r) {
        const std::size_t qi = static_cast<std::size_t>(
            row_to_query[static_cast<std::size_t>(r)]);
        const Query& q = *valid[qi];
        for (Index k = 0; k < rows.cols(); ++k) {
          const bool self = k + 1 == rows.cols();
          const NormalizedInterval key_t =
              self ? q.t : fwd.feature_times[static_cast<std::size_t>(k)];
          csv << layer << "," << head << "," << qi << "," << q.t.start << ","
              << q.t.end << "," << (self ? -1 : static_cast<int>(k)) << ","
              << key_t.start << "," << key_t.end << "," << rows(r, k) << "\n";
        }
      }
    }
  }
  write_csv_with_config(out_file, csv.str(), cfg);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Interval-queried audio-visual transformer toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, checkpoint, detections_path, split = "val";
  std::string video_id, out_file;
  double window_start = 0.0;
  int grid = 16;
  bool eval_train_split = false;
  std::vector<double> offsets, scales;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, args);

  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, args);
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();

  auto* eval_cmd =
      app.add_subcommand("evaluate", "recognition metrics (and mAP)");
  add_common(eval_cmd, args);
  eval_cmd->add_option("--data", data_dir)->required();
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--detections", detections_path,
                       "detections JSONL for mAP");
  eval_cmd->add_flag("--train-split", eval_train_split,
                     "evaluate the training split instead of validation");

  auto* detect_cmd = app.add_subcommand("detect", "run detection inference");
  add_common(detect_cmd, args);
  detect_cmd->add_option("--data", data_dir)->required();
  detect_cmd->add_option("--checkpoint", checkpoint)->required();
  detect_cmd->add_option("--split", split, "all|train|val");

  auto* shift_cmd =
      app.add_subcommand("analyze-shift", "query shift/scale robustness");
  add_common(shift_cmd, args);
  shift_cmd->add_option("--data", data_dir)->required();
  shift_cmd->add_option("--checkpoint", checkpoint)->required();
  shift_cmd->add_option("--offsets", offsets, "shift offsets in seconds");
  shift_cmd->add_option("--scales", scales, "scale factors");

  auto* grad_cmd =
      app.add_subcommand("grad-check", "verify gradients on a tiny model");
  add_common(grad_cmd, args);

  auto* inspect_cmd = app.add_subcommand(
      "inspect-encodings", "emit interval encodings over a grid as CSV");
  add_common(inspect_cmd, args);
  inspect_cmd->add_option("--checkpoint", checkpoint,
                          "read the encoder from a checkpoint");
  inspect_cmd->add_option("--grid", grid, "grid steps per unit interval");
  inspect_cmd->add_option("--csv", out_file, "output file (- for stdout)");

  auto* attn_cmd = app.add_subcommand(
      "dump-attention", "emit per-layer/head attention rows as CSV");
  add_common(attn_cmd, args);
  attn_cmd->add_option("--data", data_dir)->required();
  attn_cmd->add_option("--checkpoint", checkpoint)->required();
  attn_cmd->add_option("--video", video_id)->required();
  attn_cmd->add_option("--window", window_start, "window start in seconds");
  attn_cmd->add_option("--csv", out_file, "output file (- for stdout)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(args);
    if (train_cmd->parsed()) return cmd_train(args, data_dir);
    if (eval_cmd->parsed())
      return cmd_evaluate(args, data_dir, checkpoint, detections_path,
                          eval_train_split);
    if (detect_cmd->parsed())
      return cmd_detect(args, data_dir, checkpoint, split);
    if (shift_cmd->parsed())
      return cmd_analyze_shift(args, data_dir, checkpoint, offsets, scales);
    if (grad_cmd->parsed()) return cmd_grad_check(args);
    if (inspect_cmd->parsed())
      return cmd_inspect_encodings(args, checkpoint, grid, out_file);
    if (attn_cmd->parsed())
      return cmd_dump_attention(args, data_dir, checkpoint, video_id,
                                window_start, out_file);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
