#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace dtpn {

/// Half-open temporal span in normalized video time.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  double center() const { return 0.5 * (start + end); }
  bool empty() const { return !(start < end); }

  friend bool operator==(const Interval&, const Interval&) = default;
};

struct GroundTruthSegment {
  int label_index = 0;
  double start = 0.0;
  double end = 0.0;

  Interval interval() const { return {start, end}; }
  friend bool operator==(const GroundTruthSegment&, const GroundTruthSegment&) = default;
};

struct Detection {
  double start = 0.0;
  double end = 0.0;
  int label_index = 0;
  double score = 0.0;

  Interval interval() const { return {start, end}; }
  friend bool operator==(const Detection&, const Detection&) = default;
};

struct VideoMeta {
  std::string id;
  double duration_s = 0.0;
  double fps = 0.0;
  long num_frames = 0;
};

struct VideoRecord {
  VideoMeta meta;
  std::vector<GroundTruthSegment> segments;
};

struct Corpus {
  std::vector<std::string> labels;
  std::vector<VideoRecord> videos;

  int num_classes() const { return static_cast<int>(labels.size()); }
  /// Index into `videos`, or -1.
  long find(const std::string& id) const;
};

/// Dense row-major (time x channel) float matrix.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  FeatureMatrix() = default;
  FeatureMatrix(std::size_t r, std::size_t c, float fill = 0.0f) : rows(r), cols(c), data(r * c, fill) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<float> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  friend bool operator==(const FeatureMatrix&, const FeatureMatrix&) = default;
};

/// Multi-rate feature pyramid: level s holds K_1 * 2^s rows (0-based s), all sharing d.
struct PyramidFeature {
  std::vector<FeatureMatrix> levels;

  std::size_t num_scales() const { return levels.size(); }
  std::size_t base_scale() const { return levels.empty() ? 0 : levels.front().rows; }
  std::size_t dim() const { return levels.empty() ? 0 : levels.front().cols; }

  friend bool operator==(const PyramidFeature&, const PyramidFeature&) = default;
};

}  // namespace dtpn
