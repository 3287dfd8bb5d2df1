#pragma once

#include <cstdint>
#include <vector>

#include "dtpn/sampling.hpp"
#include "dtpn/train.hpp"
#include "dtpn/types.hpp"

namespace dtpn {

struct SyntheticOptions {
  int feature_dim = 32;     // d
  int frame_dim = 16;
  double fps = 30.0;
  double min_duration_s = 60.0;
  double max_duration_s = 180.0;
  double min_length = 1.0 / 16.0;  // normalized instance length bounds
  double max_length = 0.5;
  double pattern_norm = 3.0;       // class prototype magnitude in frame space
  double noise = 0.5;              // per-component frame noise
  std::uint64_t backbone_seed = 1;
  SamplingConfig sampling{};
};

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<FrameSequence> frames;     // aligned with corpus.videos
  std::vector<PyramidFeature> pyramids;  // extracted with SyntheticBackbone(backbone_seed)

  std::vector<TrainingSample> samples() const;
};

/// Videos of random duration whose frames carry a class prototype inside
/// randomly placed, non-overlapping instances and noise elsewhere. Each video
/// has between 1 and max_instances instances. Deterministic per seed.
SyntheticCorpus make_synthetic_corpus(std::uint64_t seed, int n_videos, int num_classes, int max_instances,
                                      const SyntheticOptions& opts = {}, int jobs = 1);

}  // namespace dtpn
