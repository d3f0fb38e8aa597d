#include "tim/io.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "tim/config.hpp"

namespace tim::io {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("unexpected end of file");
  return v;
}

void write_magic(std::ostream& out, const char magic[4]) {
  out.write(magic, 4);
}

void expect_magic(std::istream& in, const char magic[4],
                  const std::string& what) {
  char buf[4];
  in.read(buf, 4);
  if (!in || std::memcmp(buf, magic, 4) != 0)
    throw std::runtime_error("bad magic in " + what);
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw std::runtime_error("cannot write " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureStream& stream) {
  auto out = open_out(path, true);
  write_magic(out, "TIMF");
  write_raw<std::uint32_t>(out, 1);
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(stream.dim()));
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(stream.count()));
  for (Index i = 0; i < stream.count(); ++i) {
    write_raw<double>(out, stream.times[static_cast<std::size_t>(i)].start_s);
    write_raw<double>(out, stream.times[static_cast<std::size_t>(i)].end_s);
    for (Index j = 0; j < stream.dim(); ++j)
      write_raw<float>(out, static_cast<float>(stream.features(i, j)));
  }
}

FeatureStream read_feature_file(const std::string& path,
                                const std::string& video,
                                const std::string& modality) {
  auto in = open_in(path, true);
  expect_magic(in, "TIMF", path);
  const auto version = read_raw<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("unsupported feature file version in " + path);
  const auto dim = read_raw<std::uint32_t>(in);
  const auto count = read_raw<std::uint32_t>(in);
  FeatureStream s;
  s.video = video;
  s.modality = modality;
  s.features = Mat(count, dim);
  s.times.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    s.times[i].start_s = read_raw<double>(in);
    s.times[i].end_s = read_raw<double>(in);
    if (i > 0 && s.times[i].start_s < s.times[i - 1].start_s)
      throw std::runtime_error("feature intervals out of order in " + path);
    for (std::uint32_t j = 0; j < dim; ++j)
      s.features(i, j) = static_cast<Real>(read_raw<float>(in));
  }
  return s;
}

void write_annotations_jsonl(const std::string& path,
                             const AnnotationSet& annotations) {
  auto out = open_out(path, false);
  for (const auto& ev : annotations.events) {
    json labels;
    for (const auto& [k, v] : ev.labels) labels[k] = v;
    json line = {{"video", ev.video},
                 {"modality", ev.modality},
                 {"start", ev.t.start_s},
                 {"end", ev.t.end_s},
                 {"labels", labels}};
    out << line.dump() << "\n";
  }
}

AnnotationSet read_annotations_jsonl(const std::string& path) {
  auto in = open_in(path, false);
  AnnotationSet set;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Event ev;
    ev.video = j.at("video").get<std::string>();
    ev.modality = j.at("modality").get<std::string>();
    ev.t = make_interval(j.at("start").get<double>(),
                         j.at("end").get<double>());
    for (auto it = j.at("labels").begin(); it != j.at("labels").end(); ++it)
      ev.labels[it.key()] = it.value().get<int>();
    set.events.push_back(std::move(ev));
  }
  return set;
}

void write_detections_jsonl(const std::string& path,
                            const std::vector<Detection>& dets) {
  auto out = open_out(path, false);
  for (const auto& d : dets) {
    json line = {{"video", d.video},   {"label_set", d.label_set},
                 {"class", d.cls},     {"start", d.t.start_s},
                 {"end", d.t.end_s},   {"score", d.score}};
    out << line.dump() << "\n";
  }
}

std::vector<Detection> read_detections_jsonl(const std::string& path) {
  auto in = open_in(path, false);
  std::vector<Detection> dets;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json j = json::parse(line);
    Detection d;
    d.video = j.at("video").get<std::string>();
    d.label_set = j.at("label_set").get<std::string>();
    d.cls = j.at("class").get<int>();
    d.t.start_s = j.at("start").get<double>();
    d.t.end_s = j.at("end").get<double>();
    d.score = j.at("score").get<double>();
    dets.push_back(std::move(d));
  }
  return dets;
}

void write_dataset(const std::string& dir, const Dataset& data) {
  fs::create_directories(fs::path(dir) / "features");
  json manifest = json::object();
  json order = json::array();
  for (const auto& video : data.videos) {
    json features = json::object();
    for (std::size_t m = 0; m < data.schema.modalities.size(); ++m) {
      const std::string rel = "features/" + video.id + "_" +
                              data.schema.modalities[m] + ".timf";
      write_feature_file((fs::path(dir) / rel).string(), video.streams[m]);
      features[data.schema.modalities[m]] = rel;
    }
    manifest[video.id] = {{"length_s", video.length_s},
                          {"features", features}};
    order.push_back(video.id);
  }
  open_out((fs::path(dir) / "manifest.json").string(), false)
      << manifest.dump(2) << "\n";
  json schema = schema_to_json(data.schema);
  schema["video_order"] = order;
  open_out((fs::path(dir) / "schema.json").string(), false)
      << schema.dump(2) << "\n";
  write_annotations_jsonl((fs::path(dir) / "annotations.jsonl").string(),
                          data.annotations);
}

Dataset read_dataset(const std::string& dir) {
  json schema_j;
  open_in((fs::path(dir) / "schema.json").string(), false) >> schema_j;
  json order = json::array();
  if (schema_j.contains("video_order")) {
    order = schema_j.at("video_order");
    schema_j.erase("video_order");
  }
  Dataset data;
  data.schema = schema_from_json(schema_j);

  json manifest;
  open_in((fs::path(dir) / "manifest.json").string(), false) >> manifest;
  data.annotations =
      read_annotations_jsonl((fs::path(dir) / "annotations.jsonl").string());

  std::vector<std::string> ids;
  if (!order.empty()) {
    for (const auto& id : order) ids.push_back(id.get<std::string>());
  } else {
    for (auto it = manifest.begin(); it != manifest.end(); ++it)
      ids.push_back(it.key());
  }

  std::map<std::string, std::vector<int>> events_by_video;
  for (std::size_t e = 0; e < data.annotations.events.size(); ++e)
    events_by_video[data.annotations.events[e].video].push_back(
        static_cast<int>(e));

  for (const auto& id : ids) {
    if (!manifest.contains(id))
      throw std::runtime_error("video " + id + " missing from manifest");
    const json& entry = manifest.at(id);
    VideoData video;
    video.id = id;
    video.length_s = entry.at("length_s").get<double>();
    for (std::size_t m = 0; m < data.schema.modalities.size(); ++m) {
      const std::string& mod = data.schema.modalities[m];
      const std::string rel =
          entry.at("features").at(mod).get<std::string>();
      video.streams.push_back(read_feature_file(
          (fs::path(dir) / rel).string(), id, mod));
    }
    auto it = events_by_video.find(id);
    if (it != events_by_video.end()) video.event_indices = it->second;
    data.videos.push_back(std::move(video));
  }
  return data;
}

void save_checkpoint(const std::string& path, TimModel& model) {
  auto out = open_out(path, true);
  write_magic(out, "TIMC");
  write_raw<std::uint32_t>(out, 1);
  const std::string header =
      json{{"model", model_config_to_json(model.cfg)}}.dump();
  write_raw<std::uint64_t>(out, header.size());
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  auto params = model.params();
  write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) {
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(p->name.size()));
    out.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.rows()));
    write_raw<std::uint64_t>(out, static_cast<std::uint64_t>(p->value.cols()));
    for (Index r = 0; r < p->value.rows(); ++r)
      for (Index c = 0; c < p->value.cols(); ++c)
        write_raw<double>(out, p->value(r, c));
  }
}

TimModel load_checkpoint(const std::string& path) {
  auto in = open_in(path, true);
  expect_magic(in, "TIMC", path);
  const auto version = read_raw<std::uint32_t>(in);
  if (version != 1)
    throw std::runtime_error("unsupported checkpoint version in " + path);
  const auto header_len = read_raw<std::uint64_t>(in);
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw std::runtime_error("truncated checkpoint header");
  json j = json::parse(header);
  ModelConfig cfg = model_config_from_json(j.at("model"));

  Rng rng(0);
  TimModel model(cfg, rng);
  std::map<std::string, nn::Parameter*> by_name;
  for (auto* p : model.params()) by_name[p->name] = p;

  const auto count = read_raw<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_raw<std::uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = read_raw<std::uint64_t>(in);
    const auto cols = read_raw<std::uint64_t>(in);
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::runtime_error("checkpoint tensor " + name +
                               " does not match the model");
    nn::Parameter& p = *it->second;
    if (p.value.rows() != static_cast<Index>(rows) ||
        p.value.cols() != static_cast<Index>(cols))
      throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                               std::to_string(rows) + "x" +
                               std::to_string(cols));
    for (std::uint64_t r = 0; r < rows; ++r)
      for (std::uint64_t c = 0; c < cols; ++c)
        p.value(static_cast<Index>(r), static_cast<Index>(c)) =
            read_raw<double>(in);
  }
  return model;
}

}  // namespace tim::io
