#pragma once

// Reference implementations used by both the unit tests and the acceptance binary.
// Written deliberately naively; they share nothing with core beyond the data types.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dtpn/io_formats.hpp"
#include "dtpn/rng.hpp"
#include "dtpn/types.hpp"

namespace dtpn::testing {

inline double naive_overlap(double a0, double a1, double b0, double b1) {
  const double inter = std::min(a1, b1) - std::max(a0, b0);
  if (inter <= 0.0) return 0.0;
  return inter / (std::max(a1, b1) - std::min(a0, b0));
}

// O(n^2): repeatedly pick the best remaining candidate by the stated order, keep it
// unless some kept same-class detection overlaps it at or above the threshold.
inline std::vector<Detection> reference_nms(std::vector<Detection> pool, double threshold, std::size_t top_k) {
  auto better = [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.start != b.start) return a.start < b.start;
    return a.label_index < b.label_index;
  };
  std::vector<Detection> kept;
  while (!pool.empty() && kept.size() < top_k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < pool.size(); ++i) {
      if (better(pool[i], pool[best])) best = i;
    }
    const Detection d = pool[best];
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(best));
    bool ok = true;
    for (const auto& k : kept) {
      if (k.label_index == d.label_index && naive_overlap(k.start, k.end, d.start, d.end) >= threshold) ok = false;
    }
    if (ok) kept.push_back(d);
  }
  return kept;
}

// Scores and starts come from small grids so ties actually happen.
inline std::vector<Detection> random_detections(Rng& rng, std::size_t n, int classes) {
  std::vector<Detection> out;
  for (std::size_t i = 0; i < n; ++i) {
    Detection d;
    d.start = static_cast<double>(rng.below(40)) / 40.0;
    d.end = std::min(1.0, d.start + static_cast<double>(1 + rng.below(20)) / 40.0);
    d.label_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    d.score = static_cast<double>(1 + rng.below(50)) / 50.0;
    out.push_back(d);
  }
  return out;
}

// Small corpus plus detections that partly overlap the ground truth, on a coarse
// grid so equal scores and equal starts occur.
struct EvalInstance {
  Corpus corpus;
  io::DetectionResults results;
};

inline EvalInstance random_eval_instance(Rng& rng) {
  EvalInstance inst;
  const int classes = 1 + static_cast<int>(rng.below(3));
  for (int c = 0; c < classes; ++c) inst.corpus.labels.push_back("c" + std::to_string(c));
  const int videos = 1 + static_cast<int>(rng.below(4));
  for (int v = 0; v < videos; ++v) {
    VideoRecord rec;
    rec.meta = {"v" + std::to_string(v), 100.0, 30.0, 3000};
    const int n = static_cast<int>(rng.below(4));
    for (int g = 0; g < n; ++g) {
      const double s = static_cast<double>(rng.below(16)) / 20.0;
      const double len = static_cast<double>(1 + rng.below(4)) / 20.0;
      rec.segments.push_back({static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))), s, s + len});
    }
    std::vector<Detection> dets;
    const int nd = static_cast<int>(rng.below(12));
    for (int d = 0; d < nd; ++d) {
      Detection det;
      if (!rec.segments.empty() && rng.bernoulli(0.6)) {
        const auto& g = rec.segments[rng.below(rec.segments.size())];
        det.start = std::max(0.0, g.start + static_cast<double>(static_cast<int>(rng.below(5)) - 2) / 100.0);
        det.end = std::min(1.0, g.end + static_cast<double>(static_cast<int>(rng.below(5)) - 2) / 100.0);
        det.label_index = rng.bernoulli(0.8) ? g.label_index : static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
      } else {
        det.start = static_cast<double>(rng.below(18)) / 20.0;
        det.end = det.start + static_cast<double>(1 + rng.below(2)) / 20.0;
        det.label_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
      }
      det.score = static_cast<double>(1 + rng.below(10)) / 10.0;
      dets.push_back(det);
    }
    inst.results[rec.meta.id] = dets;
    inst.corpus.videos.push_back(std::move(rec));
  }
  return inst;
}

}  // namespace dtpn::testing
