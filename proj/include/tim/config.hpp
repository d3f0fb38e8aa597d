#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "tim/detection.hpp"
#include "tim/model.hpp"
#include "tim/synthetic.hpp"
#include "tim/training.hpp"

namespace tim {

/// Everything a run needs, merged from defaults, an optional JSON config
/// file and command-line overrides. Unknown keys are rejected.
struct RunConfig {
  ModelConfig model;  // paper-scale defaults; schema may come from data
  bool schema_from_config = false;
  WindowSpec window;
  TrainConfig train;  // weights resolved per schema via train_for()
  std::map<std::string, double> modality_loss_weights;  // named overrides
  PyramidConfig pyramid;
  SynthConfig synth;
  double val_fraction = 0.2;
  std::string detect_modality = "visual";
  std::string detect_label_set;  // empty: first set of the modality

  /// The train config with loss weights aligned to the given schema:
  /// defaults (1.0, audio 0.01) overridden by any named weights.
  TrainConfig train_for(const Schema& schema) const;
};

/// CI-sized model profile (embed 64, 2 layers, 4 heads, slim MLPs).
void apply_desk_profile(ModelConfig& cfg);
/// Full-size profile (embed 512, 4 layers, 8 heads; 6 layers in
/// detection mode).
void apply_paper_profile(ModelConfig& cfg);

/// Fields present in the JSON override the base; everything else keeps
/// the base value. Unknown keys raise invalid_argument.
RunConfig parse_run_config(const nlohmann::json& j,
                           const RunConfig& base = RunConfig{});
RunConfig load_run_config(const std::string& path,
                          const RunConfig& base = RunConfig{});

nlohmann::json run_config_to_json(const RunConfig& cfg);
nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const ModelConfig& base = ModelConfig{});
nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);

}  // namespace tim
