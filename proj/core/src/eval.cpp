#include "dtpn/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string_view>

#include <json.hpp>

#include "dtpn/error.hpp"
#include "dtpn/parallel.hpp"
#include "dtpn/postprocess.hpp"

namespace dtpn {

ApResult average_precision(std::vector<ClassDetection> dets, const std::vector<ClassGroundTruth>& gts,
                           double threshold) {
  ApResult res;
  if (gts.empty()) {
    res.no_ground_truth = true;
    return res;
  }
  std::stable_sort(dets.begin(), dets.end(), [](const ClassDetection& a, const ClassDetection& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.span.start != b.span.start) return a.span.start < b.span.start;
    return a.video < b.video;
  });

  std::map<std::string_view, std::vector<std::size_t>> by_video;
  for (std::size_t g = 0; g < gts.size(); ++g) by_video[gts[g].video].push_back(g);
  static const std::vector<std::size_t> kNone;

  std::vector<bool> used(gts.size(), false);
  const double total = static_cast<double>(gts.size());
  std::size_t tp = 0;
  double prev_recall = 0.0;
  res.curve.reserve(dets.size());
  for (std::size_t k = 0; k < dets.size(); ++k) {
    long best = -1;
    double best_iou = threshold;
    const auto it = by_video.find(dets[k].video);
    for (std::size_t g : it == by_video.end() ? kNone : it->second) {
      if (used[g]) continue;
      const double iou = tiou(dets[k].span, gts[g].span);
      if (iou >= best_iou && (best < 0 || iou > best_iou)) {
        best = static_cast<long>(g);
        best_iou = iou;
      }
    }
    if (best >= 0) {
      used[static_cast<std::size_t>(best)] = true;
      ++tp;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(k + 1);
    const double recall = static_cast<double>(tp) / total;
    if (best >= 0) res.ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    res.curve.push_back({precision, recall});
  }
  return res;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50.0 + 5.0 * k) / 100.0);
  return t;
}

double EvalReport::map_at(double threshold) const {
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::abs(thresholds[i] - threshold) < 1e-12) return map[i];
  }
  throw ValidationError("threshold not present in report");
}

namespace {

void check_ids(const io::DetectionResults& results, const Corpus& corpus) {
  for (const auto& [id, _] : results) {
    if (corpus.find(id) < 0) throw ValidationError("results reference unknown video id '" + id + "'");
  }
}

void finish_report(EvalReport& r) {
  const std::size_t nt = r.thresholds.size();
  r.map.assign(nt, 0.0);
  std::size_t counted = 0;
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    if (!r.class_has_gt[c]) continue;
    ++counted;
    for (std::size_t t = 0; t < nt; ++t) r.map[t] += r.class_ap[c][t];
  }
  for (double& m : r.map) m = counted ? m / static_cast<double>(counted) : 0.0;
  r.average_map = 0.0;
  for (double m : r.map) r.average_map += m;
  if (nt) r.average_map /= static_cast<double>(nt);
}

}  // namespace

EvalReport evaluate(const io::DetectionResults& results, const Corpus& corpus,
                    const std::vector<double>& thresholds, int jobs) {
  check_ids(results, corpus);
  const auto m = static_cast<std::size_t>(corpus.num_classes());
  std::vector<std::vector<ClassDetection>> dets(m);
  std::vector<std::vector<ClassGroundTruth>> gts(m);
  for (const auto& [id, list] : results) {
    for (const auto& d : list) {
      if (d.label_index < 0 || static_cast<std::size_t>(d.label_index) >= m) {
        throw ValidationError("video '" + id + "': detection label out of range");
      }
      dets[static_cast<std::size_t>(d.label_index)].push_back({id, d.interval(), d.score});
    }
  }
  for (const auto& v : corpus.videos) {
    for (const auto& g : v.segments) gts[static_cast<std::size_t>(g.label_index)].push_back({v.meta.id, g.interval()});
  }

  EvalReport r;
  r.labels = corpus.labels;
  r.thresholds = thresholds;
  r.class_has_gt.assign(m, false);
  r.class_ap.assign(m, std::vector<double>(thresholds.size(), 0.0));
  r.curves.assign(m, std::vector<std::vector<PrPoint>>(thresholds.size()));
  for (std::size_t c = 0; c < m; ++c) r.class_has_gt[c] = !gts[c].empty();

  parallel_for(m * thresholds.size(), jobs, [&](std::size_t job) {
    const std::size_t c = job / thresholds.size();
    const std::size_t t = job % thresholds.size();
    ApResult ap = average_precision(dets[c], gts[c], thresholds[t]);
    r.class_ap[c][t] = ap.ap;
    r.curves[c][t] = std::move(ap.curve);
  });
  finish_report(r);
  return r;
}

// ---------------------------------------------------------------------------
// Reference evaluator. Written independently of average_precision(): it builds
// the whole overlap table up front, derives the match sequence from it, and
// sums precision over recall increments directly.

namespace {

double oracle_overlap(double a0, double a1, double b0, double b1) {
  const double lo = a0 > b0 ? a0 : b0;
  const double hi = a1 < b1 ? a1 : b1;
  if (!(hi > lo)) return 0.0;
  const double span = (a1 > b1 ? a1 : b1) - (a0 < b0 ? a0 : b0);
  return (hi - lo) / span;
}

struct OracleDet {
  std::string video;
  double start, end, score;
};

struct OracleGt {
  std::string video;
  double start, end;
};

bool oracle_before(const OracleDet& a, const OracleDet& b) {
  if (a.score > b.score) return true;
  if (a.score < b.score) return false;
  if (a.start < b.start) return true;
  if (a.start > b.start) return false;
  return a.video < b.video;
}

double oracle_ap(std::vector<OracleDet> dets, const std::vector<OracleGt>& gts, double tau) {
  if (gts.empty()) return 0.0;
  // Insertion sort keeps equal keys in input order.
  for (std::size_t i = 1; i < dets.size(); ++i) {
    for (std::size_t j = i; j > 0 && oracle_before(dets[j], dets[j - 1]); --j) std::swap(dets[j], dets[j - 1]);
  }
  std::vector<std::vector<double>> overlap(dets.size(), std::vector<double>(gts.size(), 0.0));
  for (std::size_t i = 0; i < dets.size(); ++i) {
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (dets[i].video == gts[g].video) {
        overlap[i][g] = oracle_overlap(dets[i].start, dets[i].end, gts[g].start, gts[g].end);
      }
    }
  }
  std::vector<int> hit(dets.size(), 0);
  std::vector<int> taken(gts.size(), 0);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    std::size_t pick = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g] || overlap[i][g] < tau) continue;
      if (pick == gts.size() || overlap[i][g] > overlap[i][pick]) pick = g;
    }
    if (pick < gts.size()) {
      taken[pick] = 1;
      hit[i] = 1;
    }
  }
  double sum = 0.0;
  for (std::size_t k = 0; k < dets.size(); ++k) {
    if (!hit[k]) continue;
    double tps = 0.0;
    for (std::size_t i = 0; i <= k; ++i) tps += hit[i];
    sum += (tps / static_cast<double>(k + 1)) * (1.0 / static_cast<double>(gts.size()));
  }
  return sum;
}

}  // namespace

EvalReport oracle_evaluate(const io::DetectionResults& results, const Corpus& corpus,
                           const std::vector<double>& thresholds) {
  for (const auto& entry : results) {
    bool known = false;
    for (const auto& v : corpus.videos) known = known || v.meta.id == entry.first;
    if (!known) throw ValidationError("oracle: unknown video id '" + entry.first + "'");
  }
  EvalReport r;
  r.labels = corpus.labels;
  r.thresholds = thresholds;
  const std::size_t m = corpus.labels.size();
  r.class_has_gt.assign(m, false);
  r.class_ap.assign(m, std::vector<double>(thresholds.size(), 0.0));
  r.curves.assign(m, std::vector<std::vector<PrPoint>>(thresholds.size()));
  for (std::size_t c = 0; c < m; ++c) {
    std::vector<OracleDet> dets;
    std::vector<OracleGt> gts;
    for (const auto& entry : results) {
      for (const auto& d : entry.second) {
        if (d.label_index == static_cast<int>(c)) dets.push_back({entry.first, d.start, d.end, d.score});
      }
    }
    for (const auto& v : corpus.videos) {
      for (const auto& g : v.segments) {
        if (g.label_index == static_cast<int>(c)) gts.push_back({v.meta.id, g.start, g.end});
      }
    }
    r.class_has_gt[c] = !gts.empty();
    for (std::size_t t = 0; t < thresholds.size(); ++t) r.class_ap[c][t] = oracle_ap(dets, gts, thresholds[t]);
  }
  finish_report(r);
  return r;
}

std::string report_to_json(const EvalReport& r) {
  nlohmann::json doc;
  doc["thresholds"] = r.thresholds;
  doc["map"] = r.map;
  doc["average_map"] = r.average_map;
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    classes.push_back({{"label", r.labels[c]}, {"has_ground_truth", static_cast<bool>(r.class_has_gt[c])},
                       {"ap", r.class_ap[c]}});
  }
  doc["classes"] = std::move(classes);
  return doc.dump(2);
}

std::string report_to_table(const EvalReport& r) {
  std::size_t width = 8;
  for (const auto& l : r.labels) width = std::max(width, l.size() + 2);
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::left << std::setw(static_cast<int>(width)) << "tIoU";
  for (double t : r.thresholds) os << std::right << std::setw(8) << std::setprecision(2) << t;
  os << std::right << std::setw(10) << "average" << '\n' << std::setprecision(4);
  auto row = [&](const std::string& name, const std::vector<double>& vals, double avg) {
    os << std::left << std::setw(static_cast<int>(width)) << name;
    for (double v : vals) os << std::right << std::setw(8) << v;
    os << std::right << std::setw(10) << avg << '\n';
  };
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    if (!r.class_has_gt[c]) {
      os << std::left << std::setw(static_cast<int>(width)) << r.labels[c] << "(no ground truth)\n";
      continue;
    }
    double avg = 0.0;
    for (double v : r.class_ap[c]) avg += v;
    row(r.labels[c], r.class_ap[c], r.thresholds.empty() ? 0.0 : avg / static_cast<double>(r.thresholds.size()));
  }
  row("mAP", r.map, r.average_map);
  return os.str();
}

std::string report_curves_csv(const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "label,threshold,rank,precision,recall\n";
  for (std::size_t c = 0; c < r.labels.size(); ++c) {
    for (std::size_t t = 0; t < r.thresholds.size(); ++t) {
      const auto& curve = r.curves[c][t];
      for (std::size_t k = 0; k < curve.size(); ++k) {
        os << r.labels[c] << ',' << r.thresholds[t] << ',' << k + 1 << ',' << curve[k].precision << ','
           << curve[k].recall << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace dtpn
