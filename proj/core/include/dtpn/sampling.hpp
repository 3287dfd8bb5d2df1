#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "dtpn/types.hpp"

namespace dtpn {

struct SamplingConfig {
  int scales = 5;       // S
  int base_scale = 16;  // K_1, power of two
  int window = 8;       // w, frames per snippet

  /// Segment count of 1-based scale s: 2^(s-1) * K_1.
  long segments_at(int s) const { return static_cast<long>(base_scale) << (s - 1); }
  long total_snippets() const { return static_cast<long>(base_scale) * ((1L << scales) - 1); }
  /// Throws ConfigError.
  void validate() const;
};

struct SnippetPlan {
  int scale = 1;    // 1-based
  long segment = 1; // 1-based
  long first = 0;   // segment covers frames [first, last)
  long last = 0;
  std::vector<long> frame_indices;
};

/// Per scale, K_s segments tiling [0, F); w indices per segment by rounded
/// endpoint-inclusive linear spacing. Short segments repeat indices.
std::vector<SnippetPlan> plan_snippets(long num_frames, const SamplingConfig& cfg);

/// Frame indices for one segment [first, first + length).
std::vector<long> snippet_indices(long first, long length, int window);

/// Features per second at scale K_s for a video of F frames decoded at `fps`.
double feature_rate(double fps, long segments, long num_frames);

/// Decoded frame records, row-major (frame x frame_dim).
struct FrameSequence {
  long num_frames = 0;
  int frame_dim = 0;
  std::vector<float> data;

  std::span<const float> frame(long i) const {
    return {data.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(frame_dim),
            static_cast<std::size_t>(frame_dim)};
  }
};

/// Reads either a raw float32 little-endian file of F x frame_dim rows, or a
/// directory whose regular files (sorted by name) each hold one frame record.
FrameSequence load_frames(const std::filesystem::path& path, int frame_dim);
void save_frames(const std::filesystem::path& path, const FrameSequence& frames);

using Snippet = std::vector<std::span<const float>>;

/// Snippet embedder standing in for the video ConvNet. Implementations must be
/// deterministic and safe to call concurrently.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual int dim() const = 0;
  virtual std::vector<float> embed(const Snippet& snippet) const = 0;
};

/// tanh(W * mean(snippet) + b) with W, b drawn from a seeded generator.
class SyntheticBackbone final : public Backbone {
 public:
  SyntheticBackbone(std::uint64_t seed, int frame_dim, int out_dim);

  int dim() const override { return out_dim_; }
  int frame_dim() const { return frame_dim_; }
  std::vector<float> embed(const Snippet& snippet) const override;

 private:
  int frame_dim_;
  int out_dim_;
  std::vector<float> weight_;  // out_dim x frame_dim
  std::vector<float> bias_;
};

std::unique_ptr<Backbone> synthetic_backbone(std::uint64_t seed, int frame_dim, int out_dim);

/// Embeds every planned snippet. Rows of level s follow segment order.
PyramidFeature extract_pyramid(const FrameSequence& frames, const SamplingConfig& cfg,
                               const Backbone& backbone, int jobs = 1);

/// Feature-file pass-through; throws ConfigError when the header disagrees with cfg.
PyramidFeature extract_pyramid(const std::filesystem::path& feature_file, const SamplingConfig& cfg);

/// Time reversal of every level together with the matching label reflection.
std::pair<PyramidFeature, std::vector<GroundTruthSegment>> temporal_flip(
    const PyramidFeature& pyramid, const std::vector<GroundTruthSegment>& gts);

}  // namespace dtpn
