#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dtpn/model.hpp"
#include "dtpn/postprocess.hpp"
#include "dtpn/types.hpp"

namespace dtpn {

struct TrainConfig {
  int epochs_hi = 12;
  int epochs_lo = 8;
  double lr_hi = 1e-4;
  double lr_lo = 1e-5;
  double match_threshold = 0.5;
  double neg_pos_ratio = 3.0;
  double lambda_cls = 1.0;
  double lambda_loc = 1.0;
  double lambda_act = 1.0;
  int batch_size = 1;
  std::uint64_t seed = 0;
  double flip_probability = 0.5;

  int total_epochs() const { return epochs_hi + epochs_lo; }
  /// 0-based epoch -> step size.
  double learning_rate(int epoch) const { return epoch < epochs_hi ? lr_hi : lr_lo; }
  /// Throws ConfigError.
  void validate() const;
};

enum class Assignment { Negative, Positive, Ignored };

struct MatchResult {
  std::vector<Assignment> assignment;  // per anchor
  std::vector<int> gt_index;           // per anchor, -1 unless positive
  std::vector<int> label;              // per anchor, -1 unless positive
  std::vector<Offsets> target;         // per anchor, meaningful for positives

  std::size_t num_positive() const;
};

/// Bipartite claim of each ground truth's best anchor, then threshold matching
/// of the remaining anchors, everything else negative.
MatchResult match_anchors(const std::vector<Anchor>& anchors, const std::vector<GroundTruthSegment>& gts,
                          double match_threshold);

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;  // already divided by max(1, N_pos) and weighted
  double localization = 0.0;
  double actionness = 0.0;
  std::size_t positives = 0;
  std::size_t hard_negatives = 0;
};

/// Multi-task loss over raw head maps. Adds d(total)/d(head) * grad_scale into heads[*].grad.
template <typename Scalar>
LossBreakdown multitask_loss(FeatureMaps<Scalar>& heads, const MatchResult& match, const TrainConfig& cfg,
                             int num_classes, Scalar grad_scale = Scalar(1));

struct TrainingSample {
  PyramidFeature pyramid;
  std::vector<GroundTruthSegment> gts;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // mean per-sample loss per epoch
};

using EpochCallback = std::function<void(int epoch, double mean_loss, double learning_rate)>;

/// Adam over per-video batches, flip augmentation, seeded shuffling. Throws
/// NumericalError (with the batch id) on a non-finite loss.
TrainResult train(const std::vector<TrainingSample>& samples, Model& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

/// Detects on every sample and returns mAP at one threshold against its own labels.
double train_map(const std::vector<TrainingSample>& samples, const Model& model, int num_classes,
                 double tiou_threshold = 0.5, const NmsConfig& nms = {});

}  // namespace dtpn
