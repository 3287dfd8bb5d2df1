#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtpn/tensor.hpp"
#include "dtpn/types.hpp"

namespace dtpn {

enum class BranchMode : std::uint32_t { Both = 0, ConvOnly = 1, PoolOnly = 2 };

struct ModelConfig {
  int scales = 5;            // S
  int base_scale = 16;       // K_1 = L_1
  int input_dim = 2048;      // d
  int branch_filters = 64;   // per-scale conv filters; d_t = S * branch_filters
  int head_kernel = 3;
  int num_classes = 1;       // M
  BranchMode branches = BranchMode::Both;
  bool local_context = true;
  bool global_context = true;

  /// N = log2(K_1) + 1.
  int depth() const;
  /// L_i for 1-based level i.
  int level_length(int level) const { return base_scale >> (level - 1); }
  int conv_width() const { return scales * branch_filters; }  // d_t
  int pool_width() const { return scales * input_dim; }       // d_p
  int fused_width() const;                                     // d_f
  int enhanced_width() const;
  int head_channels() const { return 1 + num_classes + 2; }
  int num_anchors() const { return 2 * base_scale - 1; }
  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Anchor {
  int level = 1;  // 1-based
  int cell = 0;
  double center = 0.0;
  double length = 0.0;

  Interval interval() const { return {center - 0.5 * length, center + 0.5 * length}; }
};

/// Anchors ordered by (level, cell).
std::vector<Anchor> layout_anchors(const ModelConfig& cfg);

struct AnchorPrediction {
  double act_logit = 0.0;
  std::vector<double> class_logits;
  double center_offset = 0.0;  // delta ct
  double length_offset = 0.0;  // delta lt
};

template <typename Scalar>
using FeatureMaps = std::vector<Grad2<Scalar>>;

/// Every intermediate of one forward pass, kept for the backward pass.
template <typename Scalar>
struct ForwardState {
  std::vector<Grad2<Scalar>> inputs;         // S pyramid levels
  std::vector<Grad2<Scalar>> scale_pre;      // per-scale conv pre-activation
  std::vector<Grad2<Scalar>> scale_act;      // per-scale conv after ReLU
  FeatureMaps<Scalar> conv_pre;              // C_i^t pre-activation (index 0 unused)
  FeatureMaps<Scalar> conv;                  // C_i^t
  std::vector<Grad2<Scalar>> scale_pool;     // per-scale pooled inputs
  std::vector<std::vector<std::size_t>> scale_pool_argmax;
  FeatureMaps<Scalar> pool;                  // C_i^p
  std::vector<std::vector<std::size_t>> pool_argmax;
  FeatureMaps<Scalar> fused;                 // C_i
  std::vector<Grad2<Scalar>> local_ctx;      // repeat2(C_{i+1}) or C_N at the last level
  std::vector<Grad2<Scalar>> global_ctx;     // C_N tiled to L_i
  FeatureMaps<Scalar> enhanced;
  FeatureMaps<Scalar> heads;                 // (L_i x (1 + M + 2)) raw head outputs
};

/// Two-branch temporal pyramid network with context enhancement and per-level heads.
template <typename Scalar>
class TemporalPyramidNet {
 public:
  TemporalPyramidNet() = default;
  explicit TemporalPyramidNet(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  /// Fan-in uniform weights, zero biases.
  void init(std::uint64_t seed);

  /// Throws ConfigError when the pyramid disagrees with the config.
  void check_input(const PyramidFeature& pyramid) const;

  ForwardState<Scalar> forward(const PyramidFeature& pyramid) const;
  ForwardState<Scalar> forward(std::vector<Grad2<Scalar>> inputs) const;

  /// Backpropagates state.heads[*].grad into parameter gradients (accumulating)
  /// and into state.inputs[*].grad.
  void backward(ForwardState<Scalar>& state);

  void zero_grad();

  std::vector<AnchorPrediction> predictions(const ForwardState<Scalar>& state) const;

  /// Parameter blocks in a fixed topological order. Names are stable and used by checkpoints.
  struct ParamRef {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<Scalar>* value;
    std::vector<Scalar>* grad;
  };
  std::vector<ParamRef> parameters();
  std::size_t parameter_count() const;

  template <typename Other>
  TemporalPyramidNet<Other> cast() const;

  // Stage-wise pieces, exposed for tests.
  void conv_branch(ForwardState<Scalar>& st) const;
  void pool_branch(ForwardState<Scalar>& st) const;
  void fuse_branches(ForwardState<Scalar>& st) const;
  void enhance_context(ForwardState<Scalar>& st) const;
  void predict_heads(ForwardState<Scalar>& st) const;

 private:
  template <typename>
  friend class TemporalPyramidNet;

  ModelConfig cfg_;
  std::vector<Conv1D<Scalar>> scale_convs_;  // one per input scale
  std::vector<Conv1D<Scalar>> level_convs_;  // C_{i-1}^t -> C_i^t, i = 2..N
  std::vector<Conv1D<Scalar>> heads_;        // one per level
};

template <typename Scalar>
template <typename Other>
TemporalPyramidNet<Other> TemporalPyramidNet<Scalar>::cast() const {
  TemporalPyramidNet<Other> out(cfg_);
  auto copy = [](const std::vector<Conv1D<Scalar>>& src, std::vector<Conv1D<Other>>& dst) {
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::transform(src[i].weight.begin(), src[i].weight.end(), dst[i].weight.begin(),
                     [](Scalar v) { return static_cast<Other>(v); });
      std::transform(src[i].bias.begin(), src[i].bias.end(), dst[i].bias.begin(),
                     [](Scalar v) { return static_cast<Other>(v); });
    }
  };
  copy(scale_convs_, out.scale_convs_);
  copy(level_convs_, out.level_convs_);
  copy(heads_, out.heads_);
  return out;
}

/// Raw head maps -> one prediction per anchor, aligned with layout_anchors.
template <typename Scalar>
std::vector<AnchorPrediction> head_predictions(const FeatureMaps<Scalar>& heads, int num_classes);

using Model = TemporalPyramidNet<float>;

inline constexpr char kCheckpointMagic[4] = {'D', 'T', 'P', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(Model& model);
Model decode_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, Model& model);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace dtpn
