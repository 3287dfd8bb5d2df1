#include "dtpn/sampling.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <string>

#include "dtpn/error.hpp"
#include "dtpn/io_formats.hpp"
#include "dtpn/parallel.hpp"
#include "dtpn/rng.hpp"

namespace dtpn {

void SamplingConfig::validate() const {
  if (scales < 1 || scales > 16) throw ConfigError("sampling: scale count must be in [1,16]");
  if (base_scale < 1 || !std::has_single_bit(static_cast<unsigned>(base_scale))) {
    throw ConfigError("sampling: base scale K_1 must be a positive power of two");
  }
  if (window < 1) throw ConfigError("sampling: snippet window must be >= 1");
}

std::vector<long> snippet_indices(long first, long length, int window) {
  std::vector<long> idx(static_cast<std::size_t>(window), first);
  if (length <= 1 || window == 1) return idx;
  // round(j * (n-1) / (w-1)) in exact integer arithmetic
  const long span = length - 1;
  const long denom = window - 1;
  for (long j = 0; j < window; ++j) {
    idx[static_cast<std::size_t>(j)] = first + (2 * j * span + denom) / (2 * denom);
  }
  return idx;
}

std::vector<SnippetPlan> plan_snippets(long num_frames, const SamplingConfig& cfg) {
  cfg.validate();
  if (num_frames < 1) throw ValidationError("plan_snippets: frame count must be >= 1");
  std::vector<SnippetPlan> plans;
  plans.reserve(static_cast<std::size_t>(cfg.total_snippets()));
  for (int s = 1; s <= cfg.scales; ++s) {
    const long k = cfg.segments_at(s);
    for (long i = 1; i <= k; ++i) {
      SnippetPlan p;
      p.scale = s;
      p.segment = i;
      p.first = (i - 1) * num_frames / k;
      p.last = i * num_frames / k;
      // Empty segments (F < K_s) reuse the nearest existing frame.
      const long anchor = std::min(p.first, num_frames - 1);
      p.frame_indices = snippet_indices(anchor, p.last - p.first, cfg.window);
      plans.push_back(std::move(p));
    }
  }
  return plans;
}

double feature_rate(double fps, long segments, long num_frames) {
  return fps * static_cast<double>(segments) / static_cast<double>(num_frames);
}

FrameSequence load_frames(const std::filesystem::path& path, int frame_dim) {
  namespace fs = std::filesystem;
  if (frame_dim < 1) throw ConfigError("frame_dim must be positive");
  const std::size_t record = 4 * static_cast<std::size_t>(frame_dim);
  std::string bytes;
  if (fs::is_directory(path)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(path)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::string one = io::read_file(f);
      if (one.size() != record) {
        throw ValidationError(f.string() + ": frame record size " + std::to_string(one.size()) +
                              " != " + std::to_string(record));
      }
      bytes += one;
    }
  } else if (fs::is_regular_file(path)) {
    bytes = io::read_file(path);
  } else {
    throw IoError("frame source not found: " + path.string());
  }
  if (bytes.empty() || bytes.size() % record != 0) {
    throw ValidationError(path.string() + ": size is not a positive multiple of frame_dim floats");
  }
  FrameSequence seq;
  seq.frame_dim = frame_dim;
  seq.num_frames = static_cast<long>(bytes.size() / record);
  seq.data.resize(bytes.size() / 4);
  for (std::size_t i = 0; i < seq.data.size(); ++i) {
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    }
    seq.data[i] = std::bit_cast<float>(v);
  }
  return seq;
}

void save_frames(const std::filesystem::path& path, const FrameSequence& frames) {
  std::string bytes;
  bytes.reserve(frames.data.size() * 4);
  for (float f : frames.data) {
    const auto v = std::bit_cast<std::uint32_t>(f);
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((v >> (8 * b)) & 0xFFu));
  }
  io::write_file(path, bytes);
}

SyntheticBackbone::SyntheticBackbone(std::uint64_t seed, int frame_dim, int out_dim)
    : frame_dim_(frame_dim), out_dim_(out_dim) {
  if (frame_dim < 1 || out_dim < 1) throw ConfigError("backbone dimensions must be positive");
  Rng rng(seed);
  const double scale = 1.0 / std::sqrt(static_cast<double>(frame_dim));
  weight_.resize(static_cast<std::size_t>(out_dim) * static_cast<std::size_t>(frame_dim));
  for (float& w : weight_) w = static_cast<float>(rng.normal() * scale);
  bias_.resize(static_cast<std::size_t>(out_dim));
  for (float& b : bias_) b = static_cast<float>(rng.uniform(-0.1, 0.1));
}

std::vector<float> SyntheticBackbone::embed(const Snippet& snippet) const {
  std::vector<double> mean(static_cast<std::size_t>(frame_dim_), 0.0);
  for (const auto& frame : snippet) {
    if (frame.size() != mean.size()) throw ShapeError("backbone: frame record dimension mismatch");
    for (std::size_t c = 0; c < mean.size(); ++c) mean[c] += frame[c];
  }
  if (!snippet.empty()) {
    for (double& m : mean) m /= static_cast<double>(snippet.size());
  }
  std::vector<float> out(static_cast<std::size_t>(out_dim_));
  for (std::size_t o = 0; o < out.size(); ++o) {
    double acc = bias_[o];
    const float* w = weight_.data() + o * mean.size();
    for (std::size_t c = 0; c < mean.size(); ++c) acc += w[c] * mean[c];
    out[o] = static_cast<float>(std::tanh(acc));
  }
  return out;
}

std::unique_ptr<Backbone> synthetic_backbone(std::uint64_t seed, int frame_dim, int out_dim) {
  return std::make_unique<SyntheticBackbone>(seed, frame_dim, out_dim);
}

PyramidFeature extract_pyramid(const FrameSequence& frames, const SamplingConfig& cfg,
                               const Backbone& backbone, int jobs) {
  const auto plans = plan_snippets(frames.num_frames, cfg);
  const auto d = static_cast<std::size_t>(backbone.dim());
  PyramidFeature pyramid;
  std::vector<std::size_t> level_offset;
  std::size_t offset = 0;
  for (int s = 1; s <= cfg.scales; ++s) {
    pyramid.levels.emplace_back(static_cast<std::size_t>(cfg.segments_at(s)), d);
    level_offset.push_back(offset);
    offset += static_cast<std::size_t>(cfg.segments_at(s));
  }
  parallel_for(plans.size(), jobs, [&](std::size_t k) {
    const SnippetPlan& p = plans[k];
    Snippet snippet;
    snippet.reserve(p.frame_indices.size());
    for (long f : p.frame_indices) snippet.push_back(frames.frame(f));
    const auto v = backbone.embed(snippet);
    if (v.size() != d) throw ShapeError("backbone returned a vector of the wrong dimension");
    auto row = pyramid.levels[static_cast<std::size_t>(p.scale - 1)].row(
        static_cast<std::size_t>(p.segment - 1));
    std::copy(v.begin(), v.end(), row.begin());
  });
  return pyramid;
}

PyramidFeature extract_pyramid(const std::filesystem::path& feature_file, const SamplingConfig& cfg) {
  cfg.validate();
  PyramidFeature p = io::read_features(feature_file);
  if (p.num_scales() != static_cast<std::size_t>(cfg.scales) ||
      p.base_scale() != static_cast<std::size_t>(cfg.base_scale)) {
    throw ConfigError(feature_file.string() + ": header (S=" + std::to_string(p.num_scales()) +
                      ", K_1=" + std::to_string(p.base_scale()) + ") does not match config (S=" +
                      std::to_string(cfg.scales) + ", K_1=" + std::to_string(cfg.base_scale) + ")");
  }
  return p;
}

std::pair<PyramidFeature, std::vector<GroundTruthSegment>> temporal_flip(
    const PyramidFeature& pyramid, const std::vector<GroundTruthSegment>& gts) {
  PyramidFeature flipped = pyramid;
  for (auto& lvl : flipped.levels) {
    for (std::size_t r = 0; r < lvl.rows / 2; ++r) {
      std::swap_ranges(lvl.row(r).begin(), lvl.row(r).end(), lvl.row(lvl.rows - 1 - r).begin());
    }
  }
  std::vector<GroundTruthSegment> out;
  out.reserve(gts.size());
  for (const auto& g : gts) out.push_back({g.label_index, 1.0 - g.end, 1.0 - g.start});
  return {std::move(flipped), std::move(out)};
}

}  // namespace dtpn
