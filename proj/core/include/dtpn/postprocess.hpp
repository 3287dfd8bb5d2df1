#pragma once

#include <optional>
#include <vector>

#include "dtpn/model.hpp"
#include "dtpn/types.hpp"

namespace dtpn {

/// Temporal intersection over union; 0 for disjoint or touching spans.
double tiou(const Interval& x, const Interval& y);

/// Center shifted by dc * anchor length, length scaled by exp(dl), clipped to
/// [0,1]. Returns nullopt when clipping leaves nothing.
std::optional<Interval> decode_offsets(const Anchor& a, double center_offset, double length_offset);
/// decode_offsets without clipping.
Interval decode_offsets_unclipped(const Anchor& a, double center_offset, double length_offset);

struct Offsets {
  double center = 0.0;
  double length = 0.0;
};

/// Inverse of decode_offsets_unclipped. Throws ValidationError on a zero-length target.
Offsets encode_offsets(const Anchor& a, const Interval& g);

/// sigmoid(c_act) * softmax(class logits)[label].
double score_detection(const AnchorPrediction& p, int label);

struct NmsConfig {
  double threshold = 0.5;
  std::size_t top_k = 100;
  double score_floor = 0.005;
};

/// Descending score, then earlier start, then smaller label.
bool detection_order(const Detection& a, const Detection& b);

/// Class-wise greedy suppression: a detection survives iff its tIoU with every
/// kept detection of its class is below the threshold. Output in detection_order.
std::vector<Detection> temporal_nms(std::vector<Detection> dets, double threshold, std::size_t top_k);

/// Scores every (anchor, class) pair, drops those below the floor or with an
/// empty span, then applies temporal_nms.
std::vector<Detection> decode_detections(const std::vector<Anchor>& anchors,
                                         const std::vector<AnchorPrediction>& preds, const NmsConfig& nms);

std::vector<Detection> detect_video(const PyramidFeature& pyramid, const Model& model, const NmsConfig& nms);

}  // namespace dtpn
