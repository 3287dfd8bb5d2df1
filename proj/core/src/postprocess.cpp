#include "dtpn/postprocess.hpp"

#include <algorithm>
#include <cmath>

#include "dtpn/error.hpp"
#include "dtpn/tensor.hpp"

namespace dtpn {

double tiou(const Interval& x, const Interval& y) {
  const double inter = std::min(x.end, y.end) - std::max(x.start, y.start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(x.end, y.end) - std::min(x.start, y.start);
  return uni > 0.0 ? inter / uni : 0.0;
}

Interval decode_offsets_unclipped(const Anchor& a, double center_offset, double length_offset) {
  const double center = a.center + center_offset * a.length;
  const double length = a.length * std::exp(length_offset);
  return {center - 0.5 * length, center + 0.5 * length};
}

std::optional<Interval> decode_offsets(const Anchor& a, double center_offset, double length_offset) {
  Interval iv = decode_offsets_unclipped(a, center_offset, length_offset);
  iv.start = std::clamp(iv.start, 0.0, 1.0);
  iv.end = std::clamp(iv.end, 0.0, 1.0);
  if (!(iv.start < iv.end)) return std::nullopt;
  return iv;
}

Offsets encode_offsets(const Anchor& a, const Interval& g) {
  if (!(g.length() > 0.0)) throw ValidationError("encode_offsets: target interval has zero length");
  return {(g.center() - a.center) / a.length, std::log(g.length() / a.length)};
}

double score_detection(const AnchorPrediction& p, int label) {
  const auto probs = softmax<double>(p.class_logits);
  return sigmoid(p.act_logit) * probs.at(static_cast<std::size_t>(label));
}

bool detection_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.start != b.start) return a.start < b.start;
  return a.label_index < b.label_index;
}

std::vector<Detection> temporal_nms(std::vector<Detection> dets, double threshold, std::size_t top_k) {
  std::stable_sort(dets.begin(), dets.end(), detection_order);
  std::vector<Detection> kept;
  for (const auto& d : dets) {
    if (kept.size() >= top_k) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return k.label_index == d.label_index && tiou(k.interval(), d.interval()) >= threshold;
    });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> decode_detections(const std::vector<Anchor>& anchors,
                                         const std::vector<AnchorPrediction>& preds, const NmsConfig& nms) {
  if (anchors.size() != preds.size()) throw ShapeError("decode_detections: anchors and predictions misaligned");
  std::vector<Detection> candidates;
  for (std::size_t a = 0; a < anchors.size(); ++a) {
    const auto& p = preds[a];
    const auto span = decode_offsets(anchors[a], p.center_offset, p.length_offset);
    if (!span) continue;
    const double act = sigmoid(p.act_logit);
    const auto probs = softmax<double>(p.class_logits);
    for (std::size_t m = 0; m < probs.size(); ++m) {
      const double score = act * probs[m];
      if (!(score >= nms.score_floor)) continue;
      candidates.push_back({span->start, span->end, static_cast<int>(m), score});
    }
  }
  return temporal_nms(std::move(candidates), nms.threshold, nms.top_k);
}

std::vector<Detection> detect_video(const PyramidFeature& pyramid, const Model& model, const NmsConfig& nms) {
  const auto state = model.forward(pyramid);
  return decode_detections(layout_anchors(model.config()), model.predictions(state), nms);
}

}  // namespace dtpn
