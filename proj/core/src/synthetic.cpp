#include "dtpn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "dtpn/error.hpp"
#include "dtpn/rng.hpp"

namespace dtpn {

std::vector<TrainingSample> SyntheticCorpus::samples() const {
  std::vector<TrainingSample> out;
  out.reserve(pyramids.size());
  for (std::size_t i = 0; i < pyramids.size(); ++i) out.push_back({pyramids[i], corpus.videos[i].segments});
  return out;
}

SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, int n_videos, int num_classes, int max_instances,
                                      const SyntheticOptions& opts, int jobs) {
  if (num_classes < 2) throw ValidationError("synthetic corpus needs at least two classes");
  if (n_videos < 1 || max_instances < 1) throw ValidationError("synthetic corpus needs videos and instances");
  opts.sampling.validate();

  Rng rng(seed);
  const auto fd = static_cast<std::size_t>(opts.frame_dim);
  std::vector<std::vector<float>> prototypes(static_cast<std::size_t>(num_classes), std::vector<float>(fd));
  for (auto& p : prototypes) {
    double norm = 0.0;
    std::vector<double> raw(fd);
    for (auto& r : raw) {
      r = rng.normal();
      norm += r * r;
    }
    norm = std::sqrt(norm);
    for (std::size_t c = 0; c < fd; ++c) p[c] = static_cast<float>(raw[c] / norm * opts.pattern_norm);
  }

  SyntheticCorpus out;
  for (int c = 0; c < num_classes; ++c) out.corpus.labels.push_back("action_" + std::to_string(c));

  for (int v = 0; v < n_videos; ++v) {
    VideoRecord rec;
    char id[32];
    std::snprintf(id, sizeof id, "video_%04d", v);
    rec.meta.id = id;
    rec.meta.fps = opts.fps;
    rec.meta.duration_s = std::round(rng.uniform(opts.min_duration_s, opts.max_duration_s));
    rec.meta.num_frames = static_cast<long>(std::lround(rec.meta.duration_s * opts.fps));

    const int wanted = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_instances)));
    for (int k = 0; k < wanted; ++k) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double len = rng.uniform(opts.min_length, opts.max_length);
        const double start = rng.uniform(0.0, 1.0 - len);
        const Interval cand{start, start + len};
        const bool clash = std::any_of(rec.segments.begin(), rec.segments.end(), [&](const GroundTruthSegment& g) {
          return cand.start < g.end && g.start < cand.end;
        });
        if (clash) continue;
        rec.segments.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes))), cand.start,
                                cand.end});
        break;
      }
    }
    std::sort(rec.segments.begin(), rec.segments.end(),
              [](const GroundTruthSegment& a, const GroundTruthSegment& b) { return a.start < b.start; });

    FrameSequence frames;
    frames.num_frames = rec.meta.num_frames;
    frames.frame_dim = opts.frame_dim;
    frames.data.resize(static_cast<std::size_t>(frames.num_frames) * fd);
    const double nf = static_cast<double>(frames.num_frames);
    for (long f = 0; f < frames.num_frames; ++f) {
      const double t = (static_cast<double>(f) + 0.5) / nf;
      const std::vector<float>* proto = nullptr;
      for (const auto& g : rec.segments) {
        if (t >= g.start && t < g.end) proto = &prototypes[static_cast<std::size_t>(g.label_index)];
      }
      float* row = frames.data.data() + static_cast<std::size_t>(f) * fd;
      for (std::size_t c = 0; c < fd; ++c) {
        row[c] = static_cast<float>(rng.normal() * opts.noise) + (proto ? (*proto)[c] : 0.0f);
      }
    }
    out.corpus.videos.push_back(std::move(rec));
    out.frames.push_back(std::move(frames));
  }

  const SyntheticBackbone backbone(opts.backbone_seed, opts.frame_dim, opts.feature_dim);
  out.pyramids.resize(out.frames.size());
  for (std::size_t v = 0; v < out.frames.size(); ++v) {
    out.pyramids[v] = extract_pyramid(out.frames[v], opts.sampling, backbone, jobs);
  }
  return out;
}

}  // namespace dtpn
