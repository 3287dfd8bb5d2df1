#pragma once

#include <string>
#include <vector>

#include "dtpn/io_formats.hpp"
#include "dtpn/types.hpp"

namespace dtpn {

/// One detection of a single class, tagged with its video.
struct ClassDetection {
  std::string video;
  Interval span;
  double score = 0.0;
};

struct ClassGroundTruth {
  std::string video;
  Interval span;
};

struct PrPoint {
  double precision = 0.0;
  double recall = 0.0;
};

struct ApResult {
  double ap = 0.0;
  bool no_ground_truth = false;
  std::vector<PrPoint> curve;  // one point per ranked detection
};

/// Non-interpolated step-wise AP. Detections are ranked by descending score
/// (ties: earlier start, then video id); each is matched to the unmatched
/// ground truth of its video with the highest tIoU, if that tIoU >= threshold.
ApResult average_precision(std::vector<ClassDetection> dets, const std::vector<ClassGroundTruth>& gts,
                           double threshold);

/// 0.50, 0.55, ..., 0.95.
std::vector<double> default_thresholds();

struct EvalReport {
  std::vector<std::string> labels;
  std::vector<double> thresholds;
  std::vector<double> map;                      // per threshold
  double average_map = 0.0;
  std::vector<bool> class_has_gt;               // per class
  std::vector<std::vector<double>> class_ap;    // [class][threshold]
  std::vector<std::vector<std::vector<PrPoint>>> curves;  // [class][threshold]

  double map_at(double threshold) const;
};

/// mAP per threshold over classes that have ground truth, then the mean over
/// thresholds. Throws ValidationError for ids absent from the corpus.
EvalReport evaluate(const io::DetectionResults& results, const Corpus& corpus,
                    const std::vector<double>& thresholds = default_thresholds(), int jobs = 1);

/// Independent brute-force evaluator for small instances; shares no code with evaluate().
EvalReport oracle_evaluate(const io::DetectionResults& results, const Corpus& corpus,
                           const std::vector<double>& thresholds = default_thresholds());

std::string report_to_json(const EvalReport& report);
std::string report_to_table(const EvalReport& report);
/// label,threshold,rank,precision,recall
std::string report_curves_csv(const EvalReport& report);

}  // namespace dtpn
