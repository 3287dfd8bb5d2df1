#include "dtpn/model.hpp"

#include <bit>
#include <sstream>

#include "dtpn/error.hpp"
#include "dtpn/rng.hpp"

namespace dtpn {

int ModelConfig::depth() const { return std::bit_width(static_cast<unsigned>(base_scale)); }

int ModelConfig::fused_width() const {
  switch (branches) {
    case BranchMode::ConvOnly: return conv_width();
    case BranchMode::PoolOnly: return pool_width();
    case BranchMode::Both: break;
  }
  return conv_width() + pool_width();
}

int ModelConfig::enhanced_width() const {
  return fused_width() * (1 + (local_context ? 1 : 0) + (global_context ? 1 : 0));
}

void ModelConfig::validate() const {
  if (scales < 1 || scales > 16) throw ConfigError("model: scale count must be in [1,16]");
  if (base_scale < 1 || !std::has_single_bit(static_cast<unsigned>(base_scale))) {
    throw ConfigError("model: K_1 must be a positive power of two");
  }
  if (input_dim < 1) throw ConfigError("model: input dimension must be positive");
  if (branch_filters < 1) throw ConfigError("model: branch filter count must be positive");
  if (head_kernel < 1) throw ConfigError("model: head kernel must be positive");
  if (num_classes < 1) throw ConfigError("model: class count must be positive");
  if (static_cast<std::uint32_t>(branches) > 2) throw ConfigError("model: unknown branch mode");
}

std::vector<Anchor> layout_anchors(const ModelConfig& cfg) {
  std::vector<Anchor> anchors;
  anchors.reserve(static_cast<std::size_t>(cfg.num_anchors()));
  for (int level = 1; level <= cfg.depth(); ++level) {
    const int len = cfg.level_length(level);
    for (int j = 0; j < len; ++j) {
      anchors.push_back({level, j, (j + 0.5) / len, 1.0 / len});
    }
  }
  return anchors;
}

template <typename Scalar>
TemporalPyramidNet<Scalar>::TemporalPyramidNet(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  const auto d = static_cast<std::size_t>(cfg_.input_dim);
  const auto filters = static_cast<std::size_t>(cfg_.branch_filters);
  const auto dt = static_cast<std::size_t>(cfg_.conv_width());
  if (cfg_.branches != BranchMode::PoolOnly) {
    for (int s = 1; s <= cfg_.scales; ++s) {
      const std::size_t ratio = std::size_t{1} << (s - 1);
      scale_convs_.emplace_back(ratio + 1, ratio, d, filters, Padding::Same);
    }
    for (int i = 2; i <= cfg_.depth(); ++i) level_convs_.emplace_back(3, 2, dt, dt, Padding::Same);
  }
  for (int i = 1; i <= cfg_.depth(); ++i) {
    heads_.emplace_back(static_cast<std::size_t>(cfg_.head_kernel), 1,
                        static_cast<std::size_t>(cfg_.enhanced_width()),
                        static_cast<std::size_t>(cfg_.head_channels()), Padding::Same);
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::init(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& c : scale_convs_) c.init(rng);
  for (auto& c : level_convs_) c.init(rng);
  for (auto& c : heads_) c.init(rng);
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::check_input(const PyramidFeature& pyramid) const {
  std::ostringstream os;
  bool ok = pyramid.num_scales() == static_cast<std::size_t>(cfg_.scales) &&
            pyramid.base_scale() == static_cast<std::size_t>(cfg_.base_scale) &&
            pyramid.dim() == static_cast<std::size_t>(cfg_.input_dim);
  for (std::size_t s = 0; ok && s < pyramid.levels.size(); ++s) {
    const auto& l = pyramid.levels[s];
    ok = l.rows == (pyramid.base_scale() << s) && l.cols == pyramid.dim();
  }
  if (!ok) {
    os << "feature pyramid (S=" << pyramid.num_scales() << ", K_1=" << pyramid.base_scale()
       << ", d=" << pyramid.dim() << ") does not match model (S=" << cfg_.scales
       << ", K_1=" << cfg_.base_scale << ", d=" << cfg_.input_dim << ")";
    throw ConfigError(os.str());
  }
}

template <typename Scalar>
ForwardState<Scalar> TemporalPyramidNet<Scalar>::forward(const PyramidFeature& pyramid) const {
  check_input(pyramid);
  std::vector<Grad2<Scalar>> inputs;
  for (const auto& lvl : pyramid.levels) {
    Grad2<Scalar> x(lvl.rows, lvl.cols);
    std::transform(lvl.data.begin(), lvl.data.end(), x.value.begin(),
                   [](float v) { return static_cast<Scalar>(v); });
    inputs.push_back(std::move(x));
  }
  return forward(std::move(inputs));
}

template <typename Scalar>
ForwardState<Scalar> TemporalPyramidNet<Scalar>::forward(std::vector<Grad2<Scalar>> inputs) const {
  if (inputs.size() != static_cast<std::size_t>(cfg_.scales)) {
    throw ConfigError("model: expected " + std::to_string(cfg_.scales) + " input scales");
  }
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    if (inputs[s].steps != (static_cast<std::size_t>(cfg_.base_scale) << s) ||
        inputs[s].channels != static_cast<std::size_t>(cfg_.input_dim)) {
      throw ShapeError("model: input scale " + std::to_string(s + 1) + " has the wrong shape");
    }
  }
  ForwardState<Scalar> st;
  st.inputs = std::move(inputs);
  if (cfg_.branches != BranchMode::PoolOnly) conv_branch(st);
  if (cfg_.branches != BranchMode::ConvOnly) pool_branch(st);
  fuse_branches(st);
  enhance_context(st);
  predict_heads(st);
  return st;
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::conv_branch(ForwardState<Scalar>& st) const {
  const auto n = static_cast<std::size_t>(cfg_.depth());
  st.scale_pre.clear();
  st.scale_act.clear();
  for (std::size_t s = 0; s < st.inputs.size(); ++s) {
    st.scale_pre.push_back(conv1d_forward(st.inputs[s], scale_convs_[s]));
    st.scale_act.push_back(relu_forward(st.scale_pre.back()));
  }
  std::vector<const Grad2<Scalar>*> parts;
  for (const auto& a : st.scale_act) parts.push_back(&a);
  st.conv_pre.assign(n, {});
  st.conv.assign(n, {});
  st.conv[0] = concat_channels<Scalar>(parts);
  for (std::size_t i = 1; i < n; ++i) {
    st.conv_pre[i] = conv1d_forward(st.conv[i - 1], level_convs_[i - 1]);
    st.conv[i] = relu_forward(st.conv_pre[i]);
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::pool_branch(ForwardState<Scalar>& st) const {
  const auto n = static_cast<std::size_t>(cfg_.depth());
  st.scale_pool.assign(st.inputs.size(), {});
  st.scale_pool_argmax.assign(st.inputs.size(), {});
  for (std::size_t s = 0; s < st.inputs.size(); ++s) {
    const std::size_t window = std::size_t{1} << s;
    st.scale_pool[s] = maxpool1d_forward(st.inputs[s], window, window, st.scale_pool_argmax[s]);
  }
  std::vector<const Grad2<Scalar>*> parts;
  for (const auto& p : st.scale_pool) parts.push_back(&p);
  st.pool.assign(n, {});
  st.pool_argmax.assign(n, {});
  st.pool[0] = concat_channels<Scalar>(parts);
  for (std::size_t i = 1; i < n; ++i) {
    st.pool[i] = maxpool1d_forward(st.pool[i - 1], 2, 2, st.pool_argmax[i]);
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::fuse_branches(ForwardState<Scalar>& st) const {
  const auto n = static_cast<std::size_t>(cfg_.depth());
  st.fused.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<const Grad2<Scalar>*> parts;
    if (cfg_.branches != BranchMode::PoolOnly) parts.push_back(&st.conv[i]);
    if (cfg_.branches != BranchMode::ConvOnly) parts.push_back(&st.pool[i]);
    if (parts.size() == 2 && parts[0]->steps != parts[1]->steps) {
      throw ShapeError("fuse_branches: temporal mismatch at level " + std::to_string(i + 1));
    }
    st.fused[i] = concat_channels<Scalar>(parts);
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::enhance_context(ForwardState<Scalar>& st) const {
  const auto n = st.fused.size();
  st.local_ctx.assign(n, {});
  st.global_ctx.assign(n, {});
  st.enhanced.assign(n, {});
  const auto& last = st.fused[n - 1];
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<const Grad2<Scalar>*> parts{&st.fused[i]};
    if (cfg_.local_context) {
      st.local_ctx[i] = i + 1 < n ? repeat_steps(st.fused[i + 1], 2) : repeat_steps(last, 1);
      parts.push_back(&st.local_ctx[i]);
    }
    if (cfg_.global_context) {
      st.global_ctx[i] = repeat_steps(last, st.fused[i].steps);
      parts.push_back(&st.global_ctx[i]);
    }
    st.enhanced[i] = concat_channels<Scalar>(parts);
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::predict_heads(ForwardState<Scalar>& st) const {
  st.heads.clear();
  for (std::size_t i = 0; i < st.enhanced.size(); ++i) {
    st.heads.push_back(conv1d_forward(st.enhanced[i], heads_[i]));
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::backward(ForwardState<Scalar>& st) {
  const auto n = st.fused.size();
  for (std::size_t i = 0; i < n; ++i) conv1d_backward(st.enhanced[i], heads_[i], st.heads[i]);

  // All context gradients must land in fused[*] before the branches run.
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Grad2<Scalar>*> parts{&st.fused[i]};
    if (cfg_.local_context) parts.push_back(&st.local_ctx[i]);
    if (cfg_.global_context) parts.push_back(&st.global_ctx[i]);
    concat_channels_backward<Scalar>(parts, st.enhanced[i]);
    if (cfg_.local_context) {
      if (i + 1 < n) {
        repeat_steps_backward(st.fused[i + 1], st.local_ctx[i], 2);
      } else {
        repeat_steps_backward(st.fused[n - 1], st.local_ctx[i], 1);
      }
    }
    if (cfg_.global_context) repeat_steps_backward(st.fused[n - 1], st.global_ctx[i], st.fused[i].steps);
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<Grad2<Scalar>*> parts;
    if (cfg_.branches != BranchMode::PoolOnly) parts.push_back(&st.conv[i]);
    if (cfg_.branches != BranchMode::ConvOnly) parts.push_back(&st.pool[i]);
    concat_channels_backward<Scalar>(parts, st.fused[i]);
  }

  if (cfg_.branches != BranchMode::PoolOnly) {
    for (std::size_t i = n - 1; i >= 1; --i) {
      relu_backward(st.conv_pre[i], st.conv[i]);
      conv1d_backward(st.conv[i - 1], level_convs_[i - 1], st.conv_pre[i]);
    }
    std::vector<Grad2<Scalar>*> parts;
    for (auto& a : st.scale_act) parts.push_back(&a);
    concat_channels_backward<Scalar>(parts, st.conv[0]);
    for (std::size_t s = 0; s < st.inputs.size(); ++s) {
      relu_backward(st.scale_pre[s], st.scale_act[s]);
      conv1d_backward(st.inputs[s], scale_convs_[s], st.scale_pre[s]);
    }
  }

  if (cfg_.branches != BranchMode::ConvOnly) {
    for (std::size_t i = n - 1; i >= 1; --i) {
      maxpool1d_backward(st.pool[i - 1], st.pool[i], st.pool_argmax[i]);
    }
    std::vector<Grad2<Scalar>*> parts;
    for (auto& p : st.scale_pool) parts.push_back(&p);
    concat_channels_backward<Scalar>(parts, st.pool[0]);
    for (std::size_t s = 0; s < st.inputs.size(); ++s) {
      maxpool1d_backward(st.inputs[s], st.scale_pool[s], st.scale_pool_argmax[s]);
    }
  }
}

template <typename Scalar>
void TemporalPyramidNet<Scalar>::zero_grad() {
  for (auto& c : scale_convs_) c.zero_grad();
  for (auto& c : level_convs_) c.zero_grad();
  for (auto& c : heads_) c.zero_grad();
}

template <typename Scalar>
std::vector<AnchorPrediction> head_predictions(const FeatureMaps<Scalar>& heads, int num_classes) {
  std::vector<AnchorPrediction> out;
  const auto m = static_cast<std::size_t>(num_classes);
  for (const auto& h : heads) {
    if (h.channels != m + 3) throw ShapeError("head map has the wrong channel count");
    for (std::size_t j = 0; j < h.steps; ++j) {
      AnchorPrediction p;
      p.act_logit = static_cast<double>(h.at(j, 0));
      p.class_logits.resize(m);
      for (std::size_t c = 0; c < m; ++c) p.class_logits[c] = static_cast<double>(h.at(j, 1 + c));
      p.center_offset = static_cast<double>(h.at(j, m + 1));
      p.length_offset = static_cast<double>(h.at(j, m + 2));
      out.push_back(std::move(p));
    }
  }
  return out;
}

template <typename Scalar>
std::vector<AnchorPrediction> TemporalPyramidNet<Scalar>::predictions(const ForwardState<Scalar>& st) const {
  return head_predictions(st.heads, cfg_.num_classes);
}

template <typename Scalar>
auto TemporalPyramidNet<Scalar>::parameters() -> std::vector<ParamRef> {
  std::vector<ParamRef> out;
  auto add = [&](const std::string& prefix, Conv1D<Scalar>& c) {
    out.push_back({prefix + ".weight", {c.kernel, c.in_channels, c.out_channels}, &c.weight, &c.weight_grad});
    out.push_back({prefix + ".bias", {c.out_channels}, &c.bias, &c.bias_grad});
  };
  for (std::size_t s = 0; s < scale_convs_.size(); ++s) add("conv_branch.scale" + std::to_string(s + 1), scale_convs_[s]);
  for (std::size_t i = 0; i < level_convs_.size(); ++i) add("conv_branch.level" + std::to_string(i + 2), level_convs_[i]);
  for (std::size_t i = 0; i < heads_.size(); ++i) add("head.level" + std::to_string(i + 1), heads_[i]);
  return out;
}

template <typename Scalar>
std::size_t TemporalPyramidNet<Scalar>::parameter_count() const {
  std::size_t total = 0;
  for (const auto* group : {&scale_convs_, &level_convs_, &heads_}) {
    for (const auto& c : *group) total += c.weight.size() + c.bias.size();
  }
  return total;
}

template class TemporalPyramidNet<float>;
template class TemporalPyramidNet<double>;
template std::vector<AnchorPrediction> head_predictions<float>(const FeatureMaps<float>&, int);
template std::vector<AnchorPrediction> head_predictions<double>(const FeatureMaps<double>&, int);

}  // namespace dtpn
