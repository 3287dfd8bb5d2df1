#include "dtpn/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dtpn/error.hpp"
#include "dtpn/eval.hpp"
#include "dtpn/rng.hpp"
#include "dtpn/sampling.hpp"
#include "dtpn/tensor.hpp"

namespace dtpn {

void TrainConfig::validate() const {
  if (epochs_hi < 0 || epochs_lo < 0 || total_epochs() < 1) throw ConfigError("train: epoch counts must be >= 0 and sum to >= 1");
  if (!(lr_hi > 0.0) || !(lr_lo > 0.0)) throw ConfigError("train: learning rates must be positive");
  if (!(match_threshold > 0.0 && match_threshold <= 1.0)) throw ConfigError("train: match threshold must be in (0,1]");
  if (!(neg_pos_ratio >= 1.0)) throw ConfigError("train: negative/positive ratio must be >= 1");
  if (lambda_cls < 0.0 || lambda_loc < 0.0 || lambda_act < 0.0) throw ConfigError("train: loss weights must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (!(flip_probability >= 0.0 && flip_probability <= 1.0)) throw ConfigError("train: flip probability must be in [0,1]");
}

std::size_t MatchResult::num_positive() const {
  return static_cast<std::size_t>(std::count(assignment.begin(), assignment.end(), Assignment::Positive));
}

MatchResult match_anchors(const std::vector<Anchor>& anchors, const std::vector<GroundTruthSegment>& gts,
                          double match_threshold) {
  const std::size_t na = anchors.size();
  const std::size_t ng = gts.size();
  MatchResult m;
  m.assignment.assign(na, Assignment::Negative);
  m.gt_index.assign(na, -1);
  m.label.assign(na, -1);
  m.target.assign(na, {});

  std::vector<std::vector<double>> overlap(ng, std::vector<double>(na));
  for (std::size_t g = 0; g < ng; ++g) {
    for (std::size_t a = 0; a < na; ++a) overlap[g][a] = tiou(anchors[a].interval(), gts[g].interval());
  }

  auto assign = [&](std::size_t a, std::size_t g) {
    m.assignment[a] = Assignment::Positive;
    m.gt_index[a] = static_cast<int>(g);
    m.label[a] = gts[g].label_index;
    m.target[a] = encode_offsets(anchors[a], gts[g].interval());
  };

  // Bipartite stage: repeatedly take the best remaining (gt, anchor) pair.
  // Ties prefer the lower anchor index, i.e. lower level, then lower cell.
  std::vector<bool> gt_done(ng, false);
  for (std::size_t round = 0; round < std::min(ng, na); ++round) {
    long bg = -1, ba = -1;
    double best = -1.0;
    for (std::size_t a = 0; a < na; ++a) {
      if (m.assignment[a] == Assignment::Positive) continue;
      for (std::size_t g = 0; g < ng; ++g) {
        if (gt_done[g]) continue;
        if (overlap[g][a] > best) {
          best = overlap[g][a];
          bg = static_cast<long>(g);
          ba = static_cast<long>(a);
        }
      }
    }
    if (bg < 0) break;
    gt_done[static_cast<std::size_t>(bg)] = true;
    assign(static_cast<std::size_t>(ba), static_cast<std::size_t>(bg));
  }

  for (std::size_t a = 0; a < na; ++a) {
    if (m.assignment[a] == Assignment::Positive) continue;
    long bg = -1;
    double best = -1.0;
    for (std::size_t g = 0; g < ng; ++g) {
      if (overlap[g][a] > best) {
        best = overlap[g][a];
        bg = static_cast<long>(g);
      }
    }
    if (bg >= 0 && best >= match_threshold) assign(a, static_cast<std::size_t>(bg));
  }
  return m;
}

template <typename Scalar>
LossBreakdown multitask_loss(FeatureMaps<Scalar>& heads, const MatchResult& match, const TrainConfig& cfg,
                             int num_classes, Scalar grad_scale) {
  const auto m = static_cast<std::size_t>(num_classes);
  struct Cell {
    Grad2<Scalar>* map;
    std::size_t step;
  };
  std::vector<Cell> cells;
  for (auto& h : heads) {
    if (h.channels != m + 3) throw ShapeError("multitask_loss: head map has the wrong channel count");
    for (std::size_t j = 0; j < h.steps; ++j) cells.push_back({&h, j});
  }
  if (cells.size() != match.assignment.size()) throw ShapeError("multitask_loss: predictions misaligned with anchors");

  LossBreakdown out;
  std::vector<std::size_t> negatives;
  for (std::size_t a = 0; a < cells.size(); ++a) {
    if (match.assignment[a] == Assignment::Positive) {
      ++out.positives;
    } else if (match.assignment[a] == Assignment::Negative) {
      negatives.push_back(a);
    }
  }
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(1, out.positives));
  const auto s_cls = static_cast<Scalar>(cfg.lambda_cls * norm) * grad_scale;
  const auto s_loc = static_cast<Scalar>(cfg.lambda_loc * norm) * grad_scale;
  const auto s_act = static_cast<Scalar>(cfg.lambda_act * norm) * grad_scale;

  // Hard negatives: highest actionness first, ties to the lower anchor index.
  const auto act_of = [&](std::size_t a) { return cells[a].map->at(cells[a].step, 0); };
  const auto quota = static_cast<std::size_t>(
      std::floor(cfg.neg_pos_ratio * static_cast<double>(std::max<std::size_t>(1, out.positives))));
  const std::size_t keep = std::min(quota, negatives.size());
  std::partial_sort(negatives.begin(), negatives.begin() + static_cast<long>(keep), negatives.end(),
                    [&](std::size_t x, std::size_t y) {
                      const Scalar ax = act_of(x), ay = act_of(y);
                      return ax != ay ? ax > ay : x < y;
                    });
  negatives.resize(keep);
  out.hard_negatives = keep;

  double cls = 0.0, loc = 0.0, act = 0.0;
  for (std::size_t a = 0; a < cells.size(); ++a) {
    if (match.assignment[a] != Assignment::Positive) continue;
    Grad2<Scalar>& h = *cells[a].map;
    const std::size_t row = cells[a].step * h.channels;
    Scalar* v = h.value.data() + row;
    Scalar* g = h.grad.data() + row;

    cls += static_cast<double>(cross_entropy<Scalar>({v + 1, m}, static_cast<std::size_t>(match.label[a]),
                                                     {g + 1, m}, s_cls));
    const Scalar target[2] = {static_cast<Scalar>(match.target[a].center),
                              static_cast<Scalar>(match.target[a].length)};
    loc += static_cast<double>(smooth_l1<Scalar>({v + m + 1, 2}, target, {g + m + 1, 2}, s_loc));
    act += static_cast<double>(binary_cross_entropy(v[0], Scalar(1)));
    g[0] += s_act * binary_cross_entropy_grad(v[0], Scalar(1));
  }
  for (std::size_t a : negatives) {
    Grad2<Scalar>& h = *cells[a].map;
    const std::size_t row = cells[a].step * h.channels;
    act += static_cast<double>(binary_cross_entropy(h.value[row], Scalar(0)));
    h.grad[row] += s_act * binary_cross_entropy_grad(h.value[row], Scalar(0));
  }

  out.classification = cfg.lambda_cls * norm * cls;
  out.localization = cfg.lambda_loc * norm * loc;
  out.actionness = cfg.lambda_act * norm * act;
  out.total = out.classification + out.localization + out.actionness;
  return out;
}

template LossBreakdown multitask_loss<float>(FeatureMaps<float>&, const MatchResult&, const TrainConfig&, int, float);
template LossBreakdown multitask_loss<double>(FeatureMaps<double>&, const MatchResult&, const TrainConfig&, int,
                                              double);

namespace {

class Adam {
 public:
  explicit Adam(Model& model) {
    for (auto& p : model.parameters()) {
      first_.emplace_back(p.value->size(), 0.0f);
      second_.emplace_back(p.value->size(), 0.0f);
    }
  }

  void step(Model& model, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& w = *params[i].value;
      const auto& g = *params[i].grad;
      auto& m1 = first_[i];
      auto& m2 = second_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = g[k];
        const double a = kBeta1 * m1[k] + (1.0 - kBeta1) * gk;
        const double b = kBeta2 * m2[k] + (1.0 - kBeta2) * gk * gk;
        m1[k] = static_cast<float>(a);
        m2[k] = static_cast<float>(b);
        w[k] = static_cast<float>(w[k] - lr * (a / c1) / (std::sqrt(b / c2) + kEps));
      }
    }
  }

 private:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  long t_ = 0;
};

}  // namespace

TrainResult train(const std::vector<TrainingSample>& samples, Model& model, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (samples.empty()) throw ValidationError("train: no training samples");
  for (const auto& s : samples) model.check_input(s.pyramid);

  const auto anchors = layout_anchors(model.config());
  const int num_classes = model.config().num_classes;
  Rng rng(cfg.seed);
  Adam adam(model);
  TrainResult result;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  long batch_id = 0;

  for (int epoch = 0; epoch < cfg.total_epochs(); ++epoch) {
    const double lr = cfg.learning_rate(epoch);
    rng.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), begin + static_cast<std::size_t>(cfg.batch_size));
      const float scale = 1.0f / static_cast<float>(end - begin);
      model.zero_grad();
      for (std::size_t k = begin; k < end; ++k) {
        const TrainingSample& sample = samples[order[k]];
        const bool flip = rng.bernoulli(cfg.flip_probability);
        ForwardState<float> st;
        MatchResult match;
        if (flip) {
          auto [pyr, gts] = temporal_flip(sample.pyramid, sample.gts);
          st = model.forward(pyr);
          match = match_anchors(anchors, gts, cfg.match_threshold);
        } else {
          st = model.forward(sample.pyramid);
          match = match_anchors(anchors, sample.gts, cfg.match_threshold);
        }
        const LossBreakdown loss = multitask_loss<float>(st.heads, match, cfg, num_classes, scale);
        if (!std::isfinite(loss.total)) {
          throw NumericalError("non-finite loss in batch " + std::to_string(batch_id), batch_id);
        }
        model.backward(st);
        epoch_loss += loss.total;
      }
      adam.step(model, lr);
      ++batch_id;
    }
    epoch_loss /= static_cast<double>(samples.size());
    result.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss, lr);
  }
  return result;
}

double train_map(const std::vector<TrainingSample>& samples, const Model& model, int num_classes,
                 double tiou_threshold, const NmsConfig& nms) {
  Corpus corpus;
  for (int c = 0; c < num_classes; ++c) corpus.labels.push_back("class" + std::to_string(c));
  io::DetectionResults results;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    VideoRecord rec;
    rec.meta = {std::to_string(i), 1.0, 1.0, 1};
    rec.segments = samples[i].gts;
    corpus.videos.push_back(std::move(rec));
    results[std::to_string(i)] = detect_video(samples[i].pyramid, model, nms);
  }
  return evaluate(results, corpus, {tiou_threshold}).map.front();
}

}  // namespace dtpn
