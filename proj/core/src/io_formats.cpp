#include "dtpn/io_formats.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "dtpn/error.hpp"

namespace dtpn {

long Corpus::find(const std::string& id) const {
  for (std::size_t i = 0; i < videos.size(); ++i) {
    if (videos[i].meta.id == id) return static_cast<long>(i);
  }
  return -1;
}

namespace io {
namespace {

using nlohmann::json;

std::string line_context(std::string_view text, std::size_t byte) {
  std::size_t line = 1, col = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i) {
    if (text[i] == '\n') {
      ++line;
      col = 1;
    } else {
      ++col;
    }
  }
  std::ostringstream os;
  os << "line " << line << ", column " << col;
  return os.str();
}

json parse_json(std::string_view text, const char* what) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(std::string(what) + ": malformed JSON at " + line_context(text, e.byte) + ": " +
                     e.what());
  }
}

const json& require(const json& obj, const char* key, const std::string& where) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw ValidationError(where + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

double require_number(const json& obj, const char* key, const std::string& where) {
  const json& v = require(obj, key, where);
  if (!v.is_number()) throw ValidationError(where + ": field '" + key + "' must be a number");
  return v.get<double>();
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::size_t level_rows(std::uint32_t base, std::uint32_t s) { return std::size_t{base} << s; }

// Detection segments are emitted at microsecond resolution so that re-reading and
// re-writing a file reproduces it byte for byte.
double to_seconds(double normalized, double duration) {
  return std::round(normalized * duration * 1e6) / 1e6;
}

}  // namespace

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

Corpus parse_corpus(std::string_view json_text) {
  const json doc = parse_json(json_text, "annotation file");
  if (!doc.is_object()) throw ValidationError("annotation file: top level must be an object");

  Corpus corpus;
  const json& labels = require(doc, "labels", "annotation file");
  if (!labels.is_array() || labels.empty()) {
    throw ValidationError("annotation file: 'labels' must be a non-empty array");
  }
  std::map<std::string, int> label_index;
  for (const json& l : labels) {
    if (!l.is_string()) throw ValidationError("annotation file: label names must be strings");
    auto name = l.get<std::string>();
    if (!label_index.emplace(name, static_cast<int>(corpus.labels.size())).second) {
      throw ValidationError("annotation file: duplicate label '" + name + "'");
    }
    corpus.labels.push_back(std::move(name));
  }

  const json& videos = require(doc, "videos", "annotation file");
  if (!videos.is_array()) throw ValidationError("annotation file: 'videos' must be an array");
  std::set<std::string> seen;
  for (const json& v : videos) {
    const json& id_field = require(v, "id", "video");
    if (!id_field.is_string()) throw ValidationError("video: 'id' must be a string");
    VideoRecord rec;
    rec.meta.id = id_field.get<std::string>();
    const std::string where = "video '" + rec.meta.id + "'";
    if (!seen.insert(rec.meta.id).second) throw ValidationError(where + ": duplicate id");

    rec.meta.duration_s = require_number(v, "duration", where);
    rec.meta.fps = require_number(v, "fps", where);
    const json& nf = require(v, "num_frames", where);
    if (!nf.is_number_integer()) throw ValidationError(where + ": 'num_frames' must be an integer");
    rec.meta.num_frames = nf.get<long>();
    if (!(rec.meta.duration_s > 0.0) || !std::isfinite(rec.meta.duration_s)) {
      throw ValidationError(where + ": duration must be positive");
    }
    if (!(rec.meta.fps > 0.0) || !std::isfinite(rec.meta.fps)) {
      throw ValidationError(where + ": fps must be positive");
    }
    if (rec.meta.num_frames < 1) throw ValidationError(where + ": num_frames must be positive");
    if (std::abs(static_cast<double>(rec.meta.num_frames) - rec.meta.duration_s * rec.meta.fps) >
        rec.meta.fps) {
      throw ValidationError(where + ": num_frames inconsistent with duration * fps");
    }

    if (v.contains("annotations")) {
      const json& anns = v.at("annotations");
      if (!anns.is_array()) throw ValidationError(where + ": 'annotations' must be an array");
      for (const json& a : anns) {
        const json& label = require(a, "label", where);
        if (!label.is_string()) throw ValidationError(where + ": annotation label must be a string");
        auto it = label_index.find(label.get<std::string>());
        if (it == label_index.end()) {
          throw ValidationError(where + ": unknown label '" + label.get<std::string>() + "'");
        }
        const json& seg = require(a, "segment", where);
        if (!seg.is_array() || seg.size() != 2 || !seg[0].is_number() || !seg[1].is_number()) {
          throw ValidationError(where + ": segment must be [start_s, end_s]");
        }
        const double s = seg[0].get<double>();
        const double e = seg[1].get<double>();
        if (!(s >= 0.0) || !(e <= rec.meta.duration_s)) {
          throw ValidationError(where + ": segment outside [0, duration]");
        }
        if (!(s < e)) throw ValidationError(where + ": segment start >= end");
        rec.segments.push_back({it->second, s / rec.meta.duration_s, e / rec.meta.duration_s});
      }
    }
    corpus.videos.push_back(std::move(rec));
  }
  return corpus;
}

Corpus load_corpus(const std::filesystem::path& path) { return parse_corpus(read_file(path)); }

std::string corpus_to_json(const Corpus& corpus) {
  json doc;
  doc["labels"] = corpus.labels;
  doc["videos"] = json::array();
  for (const auto& rec : corpus.videos) {
    json v;
    v["id"] = rec.meta.id;
    v["duration"] = rec.meta.duration_s;
    v["fps"] = rec.meta.fps;
    v["num_frames"] = rec.meta.num_frames;
    v["annotations"] = json::array();
    for (const auto& g : rec.segments) {
      v["annotations"].push_back(
          {{"label", corpus.labels.at(static_cast<std::size_t>(g.label_index))},
           {"segment", {g.start * rec.meta.duration_s, g.end * rec.meta.duration_s}}});
    }
    doc["videos"].push_back(std::move(v));
  }
  return doc.dump(2);
}

void save_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  write_file(path, corpus_to_json(corpus));
}

void validate_pyramid(const PyramidFeature& pyramid) {
  if (pyramid.levels.empty()) throw ShapeError("pyramid has no levels");
  const std::size_t base = pyramid.base_scale();
  const std::size_t d = pyramid.dim();
  if (base == 0 || d == 0) throw ShapeError("pyramid base scale and dimension must be positive");
  for (std::size_t s = 0; s < pyramid.levels.size(); ++s) {
    const auto& lvl = pyramid.levels[s];
    if (lvl.rows != (base << s) || lvl.cols != d || lvl.data.size() != lvl.rows * lvl.cols) {
      std::ostringstream os;
      os << "pyramid level " << s + 1 << " has shape (" << lvl.rows << "x" << lvl.cols
         << "), expected (" << (base << s) << "x" << d << ")";
      throw ShapeError(os.str());
    }
  }
}

std::string encode_features(const PyramidFeature& pyramid) {
  validate_pyramid(pyramid);
  std::string out(kFeatureMagic, 4);
  put_u32(out, kFeatureVersion);
  put_u32(out, static_cast<std::uint32_t>(pyramid.dim()));
  put_u32(out, static_cast<std::uint32_t>(pyramid.num_scales()));
  put_u32(out, static_cast<std::uint32_t>(pyramid.base_scale()));
  for (const auto& lvl : pyramid.levels) {
    for (float f : lvl.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  }
  return out;
}

namespace {

FeatureHeader decode_header(std::string_view bytes) {
  if (bytes.size() < 20) throw ParseError("feature file truncated: header incomplete");
  if (std::memcmp(bytes.data(), kFeatureMagic, 4) != 0) throw ParseError("feature file: bad magic");
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kFeatureVersion) {
    throw ParseError("feature file: unsupported version " + std::to_string(version));
  }
  FeatureHeader h{get_u32(bytes, 8), get_u32(bytes, 12), get_u32(bytes, 16)};
  if (h.dim == 0 || h.scales == 0 || h.base_scale == 0 || h.scales > 24) {
    throw ParseError("feature file: invalid header");
  }
  return h;
}

}  // namespace

PyramidFeature decode_features(std::string_view bytes) {
  const FeatureHeader h = decode_header(bytes);
  std::size_t floats = 0;
  for (std::uint32_t s = 0; s < h.scales; ++s) floats += level_rows(h.base_scale, s) * h.dim;
  const std::size_t expected = 20 + 4 * floats;
  if (bytes.size() < expected) {
    throw ParseError("feature file truncated: expected " + std::to_string(expected) + " bytes, got " +
                     std::to_string(bytes.size()));
  }
  if (bytes.size() != expected) {
    throw ParseError("feature file: payload size " + std::to_string(bytes.size()) +
                     " does not match header (" + std::to_string(expected) + ")");
  }
  PyramidFeature p;
  std::size_t off = 20;
  for (std::uint32_t s = 0; s < h.scales; ++s) {
    FeatureMatrix m(level_rows(h.base_scale, s), h.dim);
    for (float& f : m.data) {
      f = std::bit_cast<float>(get_u32(bytes, off));
      off += 4;
    }
    p.levels.push_back(std::move(m));
  }
  return p;
}

void write_features(const std::filesystem::path& path, const PyramidFeature& pyramid) {
  write_file(path, encode_features(pyramid));
}

PyramidFeature read_features(const std::filesystem::path& path) {
  try {
    return decode_features(read_file(path));
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

FeatureHeader read_feature_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string buf(20, '\0');
  in.read(buf.data(), 20);
  buf.resize(static_cast<std::size_t>(in.gcount()));
  try {
    return decode_header(buf);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string detections_to_json(const DetectionResults& results, const Corpus& corpus) {
  json doc;
  doc["version"] = std::string(kDetectionVersion);
  doc["results"] = json::object();
  for (const auto& [id, dets] : results) {
    const long vi = corpus.find(id);
    if (vi < 0) throw ValidationError("detections reference unknown video id '" + id + "'");
    const double dur = corpus.videos[static_cast<std::size_t>(vi)].meta.duration_s;
    std::vector<Detection> sorted = dets;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Detection& a, const Detection& b) { return a.score > b.score; });
    json list = json::array();
    for (const auto& d : sorted) {
      if (d.label_index < 0 || d.label_index >= corpus.num_classes()) {
        throw ValidationError("video '" + id + "': detection label index out of range");
      }
      if (!(d.score >= 0.0 && d.score <= 1.0)) {
        throw ValidationError("video '" + id + "': detection score outside [0,1]");
      }
      list.push_back({{"label", corpus.labels[static_cast<std::size_t>(d.label_index)]},
                      {"score", d.score},
                      {"segment", {to_seconds(d.start, dur), to_seconds(d.end, dur)}}});
    }
    doc["results"][id] = std::move(list);
  }
  return doc.dump(2);
}

void write_detections(const std::filesystem::path& path, const DetectionResults& results,
                      const Corpus& corpus) {
  write_file(path, detections_to_json(results, corpus));
}

DetectionResults parse_detections(std::string_view json_text, const Corpus& corpus) {
  const json doc = parse_json(json_text, "detection file");
  const json& res = require(doc, "results", "detection file");
  if (!res.is_object()) throw ValidationError("detection file: 'results' must be an object");
  std::map<std::string, int> label_index;
  for (std::size_t i = 0; i < corpus.labels.size(); ++i) {
    label_index[corpus.labels[i]] = static_cast<int>(i);
  }
  DetectionResults out;
  for (const auto& [id, list] : res.items()) {
    const long vi = corpus.find(id);
    if (vi < 0) throw ValidationError("detection file: unknown video id '" + id + "'");
    const double dur = corpus.videos[static_cast<std::size_t>(vi)].meta.duration_s;
    const std::string where = "detections for '" + id + "'";
    if (!list.is_array()) throw ValidationError(where + ": must be an array");
    auto& dets = out[id];
    for (const json& item : list) {
      const json& label = require(item, "label", where);
      auto it = label.is_string() ? label_index.find(label.get<std::string>()) : label_index.end();
      if (it == label_index.end()) throw ValidationError(where + ": unknown label");
      const double score = require_number(item, "score", where);
      const json& seg = require(item, "segment", where);
      if (!seg.is_array() || seg.size() != 2 || !seg[0].is_number() || !seg[1].is_number()) {
        throw ValidationError(where + ": segment must be [start_s, end_s]");
      }
      dets.push_back({seg[0].get<double>() / dur, seg[1].get<double>() / dur, it->second, score});
    }
  }
  return out;
}

DetectionResults read_detections(const std::filesystem::path& path, const Corpus& corpus) {
  return parse_detections(read_file(path), corpus);
}

}  // namespace io
}  // namespace dtpn
