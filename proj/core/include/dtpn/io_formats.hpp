#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dtpn/types.hpp"

namespace dtpn::io {

/// video id -> detections in normalized time.
using DetectionResults = std::map<std::string, std::vector<Detection>>;

inline constexpr char kFeatureMagic[4] = {'D', 'T', 'P', 'F'};
inline constexpr std::uint32_t kFeatureVersion = 1;
inline constexpr std::string_view kDetectionVersion = "dtpn-1";

/// Parses and validates an annotation document. Segments are normalized by
/// each video's duration. Throws ParseError (with line:column) or ValidationError.
Corpus parse_corpus(std::string_view json_text);
Corpus load_corpus(const std::filesystem::path& path);

/// Serializes a corpus back to the annotation schema (segments in seconds).
std::string corpus_to_json(const Corpus& corpus);
void save_corpus(const std::filesystem::path& path, const Corpus& corpus);

/// Checks the K_s = 2^(s-1) K_1 level arithmetic; throws ShapeError.
void validate_pyramid(const PyramidFeature& pyramid);

struct FeatureHeader {
  std::uint32_t dim = 0;
  std::uint32_t scales = 0;
  std::uint32_t base_scale = 0;

  friend bool operator==(const FeatureHeader&, const FeatureHeader&) = default;
};

void write_features(const std::filesystem::path& path, const PyramidFeature& pyramid);
PyramidFeature read_features(const std::filesystem::path& path);
FeatureHeader read_feature_header(const std::filesystem::path& path);

std::string encode_features(const PyramidFeature& pyramid);
PyramidFeature decode_features(std::string_view bytes);

/// Detection JSON, segments de-normalized to seconds, each list sorted by
/// descending score. Throws ValidationError for ids absent from `corpus`.
std::string detections_to_json(const DetectionResults& results, const Corpus& corpus);
void write_detections(const std::filesystem::path& path, const DetectionResults& results,
                      const Corpus& corpus);
DetectionResults parse_detections(std::string_view json_text, const Corpus& corpus);
DetectionResults read_detections(const std::filesystem::path& path, const Corpus& corpus);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace dtpn::io
