#include "tim/config.hpp"

#include <fstream>
#include <set>
#include <stdexcept>

namespace tim {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object())
    throw std::invalid_argument(context + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw std::invalid_argument("unknown key \"" + it.key() + "\" in " +
                                  context);
}

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

void apply_desk_profile(ModelConfig& cfg) {
  cfg.embed_dim = 64;
  cfg.encoder_layers = 2;
  cfg.attention_heads = 4;
  cfg.time_mlp_hidden = 128;
  cfg.td_head_hidden = 256;
}

void apply_paper_profile(ModelConfig& cfg) {
  cfg.embed_dim = 512;
  cfg.encoder_layers = cfg.detection ? 6 : 4;
  cfg.attention_heads = 8;
  cfg.time_mlp_hidden = 512;
  cfg.td_head_hidden = 1024;
}

Schema schema_from_json(const json& j) {
  check_keys(j, {"modalities"}, "schema");
  Schema s;
  for (const auto& m : j.at("modalities")) {
    check_keys(m, {"name", "feature_dim", "label_sets"}, "schema modality");
    s.modalities.push_back(m.at("name").get<std::string>());
    s.feature_dims.push_back(m.at("feature_dim").get<int>());
    std::vector<LabelSetSpec> sets;
    for (const auto& ls : m.at("label_sets")) {
      check_keys(ls, {"name", "classes"}, "label set");
      sets.push_back(LabelSetSpec{ls.at("name").get<std::string>(),
                                  ls.at("classes").get<int>()});
    }
    s.label_sets.push_back(std::move(sets));
  }
  s.validate();
  return s;
}

json schema_to_json(const Schema& schema) {
  json mods = json::array();
  for (std::size_t m = 0; m < schema.modalities.size(); ++m) {
    json sets = json::array();
    for (const auto& ls : schema.label_sets[m])
      sets.push_back({{"name", ls.name}, {"classes", ls.classes}});
    mods.push_back({{"name", schema.modalities[m]},
                    {"feature_dim", schema.feature_dims[m]},
                    {"label_sets", sets}});
  }
  return json{{"modalities", mods}};
}

ModelConfig model_config_from_json(const json& j, const ModelConfig& base) {
  check_keys(j,
             {"embed_dim", "encoder_layers", "attention_heads",
              "encoder_dropout", "channel_dropout_input", "time_mlp_hidden",
              "td_head_hidden", "interval_variant", "detection", "schema"},
             "model");
  ModelConfig cfg = base;
  read_field(j, "embed_dim", cfg.embed_dim);
  read_field(j, "encoder_layers", cfg.encoder_layers);
  read_field(j, "attention_heads", cfg.attention_heads);
  read_field(j, "encoder_dropout", cfg.encoder_dropout);
  read_field(j, "channel_dropout_input", cfg.channel_dropout_input);
  read_field(j, "time_mlp_hidden", cfg.time_mlp_hidden);
  read_field(j, "td_head_hidden", cfg.td_head_hidden);
  read_field(j, "detection", cfg.detection);
  if (j.contains("interval_variant"))
    cfg.interval_variant =
        interval_variant_from_string(j.at("interval_variant"));
  if (j.contains("schema")) cfg.schema = schema_from_json(j.at("schema"));
  return cfg;
}

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"embed_dim", cfg.embed_dim},
              {"encoder_layers", cfg.encoder_layers},
              {"attention_heads", cfg.attention_heads},
              {"encoder_dropout", cfg.encoder_dropout},
              {"channel_dropout_input", cfg.channel_dropout_input},
              {"time_mlp_hidden", cfg.time_mlp_hidden},
              {"td_head_hidden", cfg.td_head_hidden},
              {"interval_variant", to_string(cfg.interval_variant)},
              {"detection", cfg.detection},
              {"schema", schema_to_json(cfg.schema)}};
}

namespace {

WindowSpec window_from_json(const json& j, const WindowSpec& base) {
  check_keys(j,
             {"window_s", "window_stride_s", "features_per_modality",
              "feature_stride_s", "overlap_delta_s"},
             "window");
  WindowSpec w = base;
  read_field(j, "window_s", w.window_s);
  read_field(j, "window_stride_s", w.window_stride_s);
  read_field(j, "features_per_modality", w.features_per_modality);
  read_field(j, "feature_stride_s", w.feature_stride_s);
  read_field(j, "overlap_delta_s", w.overlap_delta_s);
  return w;
}

TrainConfig train_from_json(const json& j, const TrainConfig& base,
                            std::map<std::string, double>& named_weights) {
  check_keys(j,
             {"epochs", "batch_size", "weight_decay", "target_lr",
              "warmup_epochs", "warmup_start_lr", "seed", "mode",
              "td_normalize", "td_sampling", "focal_gamma", "focal_alpha",
              "det_iou_threshold", "beta1", "beta2", "adam_eps",
              "loss_weights"},
             "train");
  TrainConfig t = base;
  read_field(j, "epochs", t.epochs);
  read_field(j, "batch_size", t.batch_size);
  read_field(j, "weight_decay", t.weight_decay);
  read_field(j, "target_lr", t.target_lr);
  read_field(j, "warmup_epochs", t.warmup_epochs);
  read_field(j, "warmup_start_lr", t.warmup_start_lr);
  read_field(j, "seed", t.seed);
  read_field(j, "focal_gamma", t.focal_gamma);
  read_field(j, "focal_alpha", t.focal_alpha);
  read_field(j, "det_iou_threshold", t.det_iou_threshold);
  read_field(j, "beta1", t.beta1);
  read_field(j, "beta2", t.beta2);
  read_field(j, "adam_eps", t.adam_eps);
  read_field(j, "td_normalize", t.td_normalize);
  if (j.contains("mode")) {
    const std::string m = j.at("mode").get<std::string>();
    if (m == "recognition")
      t.mode = TrainMode::kRecognition;
    else if (m == "detection")
      t.mode = TrainMode::kDetection;
    else
      throw std::invalid_argument("mode must be recognition or detection");
  }
  if (j.contains("td_sampling")) {
    const std::string m = j.at("td_sampling").get<std::string>();
    if (m == "cross-modal")
      t.td_sampling = PairSampling::kCrossModal;
    else if (m == "within-modal")
      t.td_sampling = PairSampling::kWithinModal;
    else
      throw std::invalid_argument("td_sampling must be cross- or within-modal");
  }
  if (j.contains("loss_weights")) {
    const json& lw = j.at("loss_weights");
    check_keys(lw, {"modality", "td", "det_reg"}, "loss_weights");
    read_field(lw, "td", t.weights.td);
    read_field(lw, "det_reg", t.weights.det_reg);
    if (lw.contains("modality"))
      for (auto it = lw.at("modality").begin(); it != lw.at("modality").end();
           ++it)
        named_weights[it.key()] = it.value().get<double>();
  }
  return t;
}

PyramidConfig pyramid_from_json(const json& j, const PyramidConfig& base) {
  check_keys(j,
             {"base_fraction", "growth", "level_stride_fraction",
              "confidence_threshold", "nms_sigma", "nms_score_floor"},
             "pyramid");
  PyramidConfig p = base;
  read_field(j, "base_fraction", p.base_fraction);
  read_field(j, "growth", p.growth);
  read_field(j, "level_stride_fraction", p.level_stride_fraction);
  read_field(j, "confidence_threshold", p.confidence_threshold);
  read_field(j, "nms_sigma", p.nms_sigma);
  read_field(j, "nms_score_floor", p.nms_score_floor);
  return p;
}

SynthConfig synth_from_json(const json& j, const SynthConfig& base) {
  check_keys(j,
             {"videos", "video_length_s", "visual_classes", "audio_classes",
              "visual_feature_dim", "audio_feature_dim", "feature_stride_s",
              "feature_span_s", "event_rate_hz", "min_duration_s",
              "max_duration_s", "noise_sigma", "cue_fraction",
              "non_overlapping", "min_gap_s", "snap_to_grid_s"},
             "synth");
  SynthConfig s = base;
  read_field(j, "videos", s.videos);
  read_field(j, "video_length_s", s.video_length_s);
  read_field(j, "visual_classes", s.visual_classes);
  read_field(j, "audio_classes", s.audio_classes);
  read_field(j, "visual_feature_dim", s.visual_feature_dim);
  read_field(j, "audio_feature_dim", s.audio_feature_dim);
  read_field(j, "feature_stride_s", s.feature_stride_s);
  read_field(j, "feature_span_s", s.feature_span_s);
  read_field(j, "event_rate_hz", s.event_rate_hz);
  read_field(j, "min_duration_s", s.min_duration_s);
  read_field(j, "max_duration_s", s.max_duration_s);
  read_field(j, "noise_sigma", s.noise_sigma);
  read_field(j, "cue_fraction", s.cue_fraction);
  read_field(j, "non_overlapping", s.non_overlapping);
  read_field(j, "min_gap_s", s.min_gap_s);
  read_field(j, "snap_to_grid_s", s.snap_to_grid_s);
  return s;
}

}  // namespace

RunConfig parse_run_config(const json& j, const RunConfig& base) {
  check_keys(j,
             {"model", "window", "train", "pyramid", "synth", "val_fraction",
              "detect_modality", "detect_label_set"},
             "config");
  RunConfig cfg = base;
  if (j.contains("model")) {
    cfg.model = model_config_from_json(j.at("model"), base.model);
    cfg.schema_from_config =
        j.at("model").contains("schema") || base.schema_from_config;
  }
  if (j.contains("window"))
    cfg.window = window_from_json(j.at("window"), base.window);
  if (j.contains("pyramid"))
    cfg.pyramid = pyramid_from_json(j.at("pyramid"), base.pyramid);
  if (j.contains("synth"))
    cfg.synth = synth_from_json(j.at("synth"), base.synth);
  read_field(j, "val_fraction", cfg.val_fraction);
  read_field(j, "detect_modality", cfg.detect_modality);
  read_field(j, "detect_label_set", cfg.detect_label_set);
  if (j.contains("train"))
    cfg.train =
        train_from_json(j.at("train"), base.train, cfg.modality_loss_weights);
  return cfg;
}

TrainConfig RunConfig::train_for(const Schema& schema) const {
  TrainConfig t = train;
  const LossWeights defaults = LossWeights::defaults_for(schema);
  t.weights.modality = defaults.modality;
  for (const auto& [name, w] : modality_loss_weights) {
    const int m = schema.modality_index(name);
    if (m < 0)
      throw std::invalid_argument("loss weight names unknown modality " +
                                  name);
    t.weights.modality[static_cast<std::size_t>(m)] = w;
  }
  return t;
}

RunConfig load_run_config(const std::string& path, const RunConfig& base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  json j;
  in >> j;
  return parse_run_config(j, base);
}

json run_config_to_json(const RunConfig& cfg) {
  json j;
  j["model"] = model_config_to_json(cfg.model);
  j["window"] = {{"window_s", cfg.window.window_s},
                 {"window_stride_s", cfg.window.window_stride_s},
                 {"features_per_modality", cfg.window.features_per_modality},
                 {"feature_stride_s", cfg.window.feature_stride_s},
                 {"overlap_delta_s", cfg.window.overlap_delta_s}};
  json lw_mod = json::object();
  for (const auto& [name, w] : cfg.modality_loss_weights) lw_mod[name] = w;
  j["train"] = {
      {"epochs", cfg.train.epochs},
      {"batch_size", cfg.train.batch_size},
      {"weight_decay", cfg.train.weight_decay},
      {"target_lr", cfg.train.target_lr},
      {"warmup_epochs", cfg.train.warmup_epochs},
      {"warmup_start_lr", cfg.train.warmup_start_lr},
      {"seed", cfg.train.seed},
      {"mode",
       cfg.train.mode == TrainMode::kDetection ? "detection" : "recognition"},
      {"td_normalize", cfg.train.td_normalize},
      {"td_sampling", cfg.train.td_sampling == PairSampling::kCrossModal
                          ? "cross-modal"
                          : "within-modal"},
      {"focal_gamma", cfg.train.focal_gamma},
      {"focal_alpha", cfg.train.focal_alpha},
      {"det_iou_threshold", cfg.train.det_iou_threshold},
      {"beta1", cfg.train.beta1},
      {"beta2", cfg.train.beta2},
      {"adam_eps", cfg.train.adam_eps},
      {"loss_weights",
       {{"modality", lw_mod},
        {"td", cfg.train.weights.td},
        {"det_reg", cfg.train.weights.det_reg}}}};
  j["pyramid"] = {{"base_fraction", cfg.pyramid.base_fraction},
                  {"growth", cfg.pyramid.growth},
                  {"level_stride_fraction", cfg.pyramid.level_stride_fraction},
                  {"confidence_threshold", cfg.pyramid.confidence_threshold},
                  {"nms_sigma", cfg.pyramid.nms_sigma},
                  {"nms_score_floor", cfg.pyramid.nms_score_floor}};
  j["synth"] = {{"videos", cfg.synth.videos},
                {"video_length_s", cfg.synth.video_length_s},
                {"visual_classes", cfg.synth.visual_classes},
                {"audio_classes", cfg.synth.audio_classes},
                {"visual_feature_dim", cfg.synth.visual_feature_dim},
                {"audio_feature_dim", cfg.synth.audio_feature_dim},
                {"feature_stride_s", cfg.synth.feature_stride_s},
                {"feature_span_s", cfg.synth.feature_span_s},
                {"event_rate_hz", cfg.synth.event_rate_hz},
                {"min_duration_s", cfg.synth.min_duration_s},
                {"max_duration_s", cfg.synth.max_duration_s},
                {"noise_sigma", cfg.synth.noise_sigma},
                {"cue_fraction", cfg.synth.cue_fraction},
                {"non_overlapping", cfg.synth.non_overlapping},
                {"min_gap_s", cfg.synth.min_gap_s},
                {"snap_to_grid_s", cfg.synth.snap_to_grid_s}};
  j["val_fraction"] = cfg.val_fraction;
  j["detect_modality"] = cfg.detect_modality;
  j["detect_label_set"] = cfg.detect_label_set;
  return j;
}

}  // namespace tim
