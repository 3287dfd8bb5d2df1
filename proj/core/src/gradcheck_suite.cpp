#include "dtpn/gradcheck_suite.hpp"

#include <algorithm>
#include <functional>

#include "dtpn/gradcheck.hpp"
#include "dtpn/model.hpp"
#include "dtpn/rng.hpp"
#include "dtpn/tensor.hpp"
#include "dtpn/train.hpp"

namespace dtpn {

bool GradcheckReport::all_passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradcheckEntry& e) { return e.passed; });
}

namespace {

using G = Grad2<double>;

G random_grad2(Rng& rng, std::size_t t, std::size_t c) {
  G x(t, c);
  for (double& v : x.value) {
    v = rng.uniform(-1.0, 1.0);
    if (std::abs(v) < 0.05) v += v < 0 ? -0.05 : 0.05;  // keep ReLU inputs off the kink
  }
  return x;
}

/// Loss = sum(r * y) over an output; gives y.grad = r.
double project(G& y, const std::vector<double>& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.value.size(); ++i) {
    s += r[i] * y.value[i];
    y.grad[i] = r[i];
  }
  return s;
}

std::vector<double> random_vector(Rng& rng, std::size_t n) {
  std::vector<double> r(n);
  for (double& v : r) v = rng.uniform(-1.0, 1.0);
  return r;
}

// Packs views of several buffers into one parameter vector for the checker.
struct Pack {
  std::vector<std::vector<double>*> values;
  std::vector<std::vector<double>*> grads;

  std::vector<double> flat_values() const {
    std::vector<double> out;
    for (auto* v : values) out.insert(out.end(), v->begin(), v->end());
    return out;
  }
  std::vector<double> flat_grads() const {
    std::vector<double> out;
    for (auto* g : grads) out.insert(out.end(), g->begin(), g->end());
    return out;
  }
  void load(std::span<const double> theta) {
    std::size_t off = 0;
    for (auto* v : values) {
      std::copy_n(theta.begin() + static_cast<long>(off), v->size(), v->begin());
      off += v->size();
    }
  }
  void zero_grads() {
    for (auto* g : grads) std::fill(g->begin(), g->end(), 0.0);
  }
};

GradcheckEntry check(const std::string& name, Pack& pack, const std::function<double()>& loss_and_backward,
                     const GradcheckOptions& opts, std::size_t stride = 1) {
  const auto theta = pack.flat_values();
  pack.zero_grads();
  loss_and_backward();
  const auto analytic = pack.flat_grads();
  auto f = [&](std::span<const double> th) {
    pack.load(th);
    return loss_and_backward();
  };
  const auto res = grad_check(f, theta, analytic, opts.eps, stride);
  pack.load(theta);
  return {name, res.max_relative_error, res.checked, res.max_relative_error < opts.tolerance};
}

GradcheckEntry check_conv(const std::string& name, std::size_t t, std::size_t cin, std::size_t cout, std::size_t k,
                          std::size_t stride, Padding pad, bool with_relu, const GradcheckOptions& opts, Rng& rng) {
  G x = random_grad2(rng, t, cin);
  Conv1D<double> conv(k, stride, cin, cout, pad);
  conv.init(rng);
  for (double& b : conv.bias) b = rng.uniform(-0.2, 0.2);
  const auto r = random_vector(rng, conv_output_length(t, k, stride, pad) * cout);
  Pack pack{{&x.value, &conv.weight, &conv.bias}, {&x.grad, &conv.weight_grad, &conv.bias_grad}};
  auto run = [&] {
    pack.zero_grads();
    G pre = conv1d_forward(x, conv);
    double loss;
    if (with_relu) {
      G act = relu_forward(pre);
      loss = project(act, r);
      relu_backward(pre, act);
    } else {
      loss = project(pre, r);
    }
    conv1d_backward(x, conv, pre);
    if (opts.fault == Fault::ConvBackwardSign) {
      for (double& g : conv.weight_grad) g = -g;
    }
    return loss;
  };
  return check(name, pack, run, opts);
}

}  // namespace

GradcheckReport run_gradcheck_suite(const GradcheckOptions& opts) {
  GradcheckReport report;
  Rng rng(opts.seed);

  report.entries.push_back(check_conv("conv1d same k3 s1", 7, 3, 4, 3, 1, Padding::Same, false, opts, rng));
  report.entries.push_back(check_conv("conv1d same k2 s1", 6, 3, 2, 2, 1, Padding::Same, false, opts, rng));
  report.entries.push_back(check_conv("conv1d same k5 s4", 16, 2, 3, 5, 4, Padding::Same, false, opts, rng));
  report.entries.push_back(check_conv("conv1d valid k3 s2", 9, 2, 3, 3, 2, Padding::Valid, false, opts, rng));
  report.entries.push_back(check_conv("conv1d->relu->sum", 8, 3, 4, 3, 2, Padding::Same, true, opts, rng));

  {
    G x = random_grad2(rng, 9, 3);
    const auto r = random_vector(rng, pool_output_length(9, 2, 2) * 3);
    Pack pack{{&x.value}, {&x.grad}};
    std::vector<std::size_t> argmax;
    auto run = [&] {
      pack.zero_grads();
      G y = maxpool1d_forward(x, 2, 2, argmax);
      const double loss = project(y, r);
      maxpool1d_backward(x, y, argmax);
      return loss;
    };
    report.entries.push_back(check("maxpool1d w2 s2", pack, run, opts));
  }
  {
    G a = random_grad2(rng, 4, 2), b = random_grad2(rng, 4, 3);
    const auto r = random_vector(rng, 4 * 5);
    Pack pack{{&a.value, &b.value}, {&a.grad, &b.grad}};
    auto run = [&] {
      pack.zero_grads();
      std::vector<const G*> in{&a, &b};
      G y = concat_channels<double>(in);
      const double loss = project(y, r);
      std::vector<G*> out{&a, &b};
      concat_channels_backward<double>(out, y);
      return loss;
    };
    report.entries.push_back(check("concat_channels", pack, run, opts));
  }
  {
    G x = random_grad2(rng, 3, 2);
    const auto r = random_vector(rng, 6 * 2);
    Pack pack{{&x.value}, {&x.grad}};
    auto run = [&] {
      pack.zero_grads();
      G y = repeat_steps(x, 2);
      const double loss = project(y, r);
      repeat_steps_backward(x, y, 2);
      return loss;
    };
    report.entries.push_back(check("repeat_steps", pack, run, opts));
  }
  {
    G x = random_grad2(rng, 5, 3);
    const auto r = random_vector(rng, 15);
    Pack pack{{&x.value}, {&x.grad}};
    auto run = [&] {
      pack.zero_grads();
      G y = relu_forward(x);
      const double loss = project(y, r);
      relu_backward(x, y);
      return loss;
    };
    report.entries.push_back(check("relu", pack, run, opts));
  }
  {
    G logits = random_grad2(rng, 4, 5);
    for (double& v : logits.value) v *= 3.0;
    const std::vector<std::size_t> targets{0, 3, 4, 1};
    Pack pack{{&logits.value}, {&logits.grad}};
    auto run = [&] {
      pack.zero_grads();
      return cross_entropy_rows<double>(logits, targets);
    };
    report.entries.push_back(check("softmax cross_entropy", pack, run, opts));
  }
  {
    // Coordinates on both sides of the |u| = 1 switch.
    std::vector<double> pred{0.3, -0.4, 2.5, -3.0, 0.9}, target{0.0, 0.1, 0.2, 0.0, 0.2};
    std::vector<double> grad(pred.size());
    Pack pack{{&pred}, {&grad}};
    auto run = [&] {
      pack.zero_grads();
      return smooth_l1<double>(pred, target, grad);
    };
    report.entries.push_back(check("smooth_l1", pack, run, opts));
  }
  {
    std::vector<double> logits{-4.0, -0.7, 0.2, 1.5, 6.0}, grad(5);
    const double targets[5] = {0, 1, 0, 1, 1};
    Pack pack{{&logits}, {&grad}};
    auto run = [&] {
      pack.zero_grads();
      double loss = 0.0;
      for (std::size_t i = 0; i < logits.size(); ++i) {
        loss += binary_cross_entropy(logits[i], targets[i]);
        grad[i] += binary_cross_entropy_grad(logits[i], targets[i]);
      }
      return loss;
    };
    report.entries.push_back(check("binary_cross_entropy", pack, run, opts));
  }

  {
    ModelConfig cfg;
    cfg.scales = 3;
    cfg.base_scale = 4;
    cfg.input_dim = 6;
    cfg.branch_filters = 4;
    cfg.num_classes = 2;
    TemporalPyramidNet<double> net(cfg);
    net.init(opts.seed + 1);
    std::vector<G> inputs;
    for (int s = 0; s < cfg.scales; ++s) inputs.push_back(random_grad2(rng, static_cast<std::size_t>(4 << s), 6));
    // Two ground truths leave at most five negatives, so the 3:1 hard-negative
    // quota takes all of them and the selection cannot flip under perturbation.
    const std::vector<GroundTruthSegment> gts{{0, 0.05, 0.3}, {1, 0.45, 0.95}};
    TrainConfig tcfg;
    const auto match = match_anchors(layout_anchors(cfg), gts, tcfg.match_threshold);

    Pack pack;
    for (auto& p : net.parameters()) {
      pack.values.push_back(p.value);
      pack.grads.push_back(p.grad);
    }
    std::vector<G> input_holder = inputs;
    auto run = [&] {
      pack.zero_grads();
      auto st = net.forward(input_holder);
      const auto loss = multitask_loss<double>(st.heads, match, tcfg, cfg.num_classes);
      net.backward(st);
      return loss.total;
    };
    report.entries.push_back(check("end-to-end loss (parameters)", pack, run, opts));

    Pack in_pack;
    std::vector<std::vector<double>> in_grads(inputs.size());
    for (std::size_t s = 0; s < input_holder.size(); ++s) {
      in_pack.values.push_back(&input_holder[s].value);
      in_grads[s].assign(input_holder[s].value.size(), 0.0);
      in_pack.grads.push_back(&in_grads[s]);
    }
    auto run_inputs = [&] {
      in_pack.zero_grads();
      auto st = net.forward(input_holder);
      const auto loss = multitask_loss<double>(st.heads, match, tcfg, cfg.num_classes);
      net.backward(st);
      for (std::size_t s = 0; s < st.inputs.size(); ++s) in_grads[s] = st.inputs[s].grad;
      return loss.total;
    };
    report.entries.push_back(check("end-to-end loss (inputs)", in_pack, run_inputs, opts));
  }
  return report;
}

}  // namespace dtpn
