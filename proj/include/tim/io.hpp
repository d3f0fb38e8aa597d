#pragma once

#include <string>
#include <vector>

#include "tim/detection.hpp"
#include "tim/model.hpp"
#include "tim/windowing.hpp"

namespace tim::io {

/// Binary feature file, little-endian: magic "TIMF", u32 version = 1,
/// u32 feature_dim, u32 count, then count records of
/// (f64 start_s, f64 end_s, feature_dim x f32).
void write_feature_file(const std::string& path, const FeatureStream& stream);
FeatureStream read_feature_file(const std::string& path,
                                const std::string& video,
                                const std::string& modality);

/// One event per line:
/// {"video": ..., "modality": ..., "start": ..., "end": ..., "labels": {...}}
void write_annotations_jsonl(const std::string& path,
                             const AnnotationSet& annotations);
AnnotationSet read_annotations_jsonl(const std::string& path);

void write_detections_jsonl(const std::string& path,
                            const std::vector<Detection>& dets);
std::vector<Detection> read_detections_jsonl(const std::string& path);

/// Dataset directory: manifest.json (video id -> {length_s, features}),
/// schema.json, annotations.jsonl and one feature file per stream.
void write_dataset(const std::string& dir, const Dataset& data);
Dataset read_dataset(const std::string& dir);

/// Versioned checkpoint: magic "TIMC", u32 version, u64 length-prefixed
/// config JSON, then named f64 tensors.
void save_checkpoint(const std::string& path, TimModel& model);
TimModel load_checkpoint(const std::string& path);

}  // namespace tim::io
