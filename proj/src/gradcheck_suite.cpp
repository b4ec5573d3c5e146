#include "hpcf/gradcheck_suite.hpp"

#include <utility>

#include "hpcf/train.hpp"

namespace hpcf {

namespace {

using Leaves = std::vector<std::pair<std::string, Tensor>>;

/// Frozen random projection so every output element influences the scalar.
Tensor projector(const std::vector<int>& shape, Rng rng) {
  return Tensor::uniform(shape, 0.1, 1.0, rng);
}

GradReport check_unary(const char* name, Rng rng, const std::function<Tensor(const Tensor&)>& op,
                       std::vector<int> in_shape, double lo, double hi,
                       const GradCheckOptions& opt) {
  Rng stream = rng.stream(name);
  Tensor x = Tensor::uniform(in_shape, lo, hi, stream, true);
  Tensor r = projector(op(x).shape(), stream.stream("proj"));
  Leaves leaves{{"input", x}};
  return gradcheck(name, [op, x, r] { return sum(mul(op(x), r)); }, leaves, opt);
}

std::vector<ChangeMap> random_labels(int n, int h, int w, Rng rng) {
  std::vector<ChangeMap> labels(static_cast<std::size_t>(n));
  for (auto& m : labels) {
    m.h = h;
    m.w = w;
    m.labels.resize(static_cast<std::size_t>(h) * w);
    for (auto& v : m.labels) v = rng.bernoulli(0.35) ? 1 : 0;
  }
  return labels;
}

/// Learnable parameters whose name starts with `prefix`.
Leaves collect_params(ParamRegistry& params, const std::string& prefix) {
  Leaves leaves;
  for (auto& e : params.entries()) {
    if (e.learnable && e.name.rfind(prefix, 0) == 0) leaves.emplace_back(e.name, e.value);
  }
  return leaves;
}

std::vector<std::vector<double>> snapshot_stats(const ParamRegistry& params) {
  std::vector<std::vector<double>> snap;
  for (const auto& e : params.entries()) {
    if (!e.learnable) snap.emplace_back(e.value.data().begin(), e.value.data().end());
  }
  return snap;
}

void restore_stats(ParamRegistry& params, const std::vector<std::vector<double>>& snap) {
  std::size_t i = 0;
  for (auto& e : params.entries()) {
    if (e.learnable) continue;
    auto dst = e.value.raw_data();
    std::copy(snap[i].begin(), snap[i].end(), dst.begin());
    ++i;
  }
}

}  // namespace

GradReport model_gradcheck(ChangeDetector& model, const Tensor& t0, const Tensor& t1,
                           const std::vector<ChangeMap>& labels, const GradCheckOptions& opt) {
  const auto stats = snapshot_stats(model.params());
  Leaves leaves{{"image_t0", t0}, {"image_t1", t1}};
  for (auto& e : model.params().entries()) {
    if (e.learnable) leaves.emplace_back(e.name, e.value);
  }
  const LossWeights weights = class_weights(labels);
  auto forward = [&model, t0, t1, &labels, weights] {
    return weighted_ce_loss(model.forward(t0, t1, Mode::kTrain, nullptr), labels, weights);
  };
  GradReport report = gradcheck("model", forward, leaves, opt);
  restore_stats(model.params(), stats);
  model.params().zero_grad();
  return report;
}

std::vector<GradReport> gradcheck_suite(const SuiteOptions& opt) {
  std::vector<GradReport> reports;
  Rng rng(opt.seed);
  GradCheckOptions ops_opt;
  ops_opt.tol = opt.op_tol;
  ops_opt.eps = 1e-5;

  // Elementwise arithmetic.
  {
    Rng s = rng.stream("mul");
    Tensor a = Tensor::uniform({1, 3, 4, 4}, -1.0, 1.0, s, true);
    Tensor b = Tensor::uniform({1, 3, 4, 4}, -1.0, 1.0, s, true);
    Tensor r = projector({1, 3, 4, 4}, s.stream("proj"));
    Leaves leaves{{"a", a}, {"b", b}};
    reports.push_back(gradcheck("elementwise_mul", [a, b, r] { return sum(mul(mul(a, b), r)); },
                                leaves, ops_opt));
  }
  {
    Rng s = rng.stream("addsub");
    Tensor a = Tensor::uniform({2, 2, 3, 3}, -1.0, 1.0, s, true);
    Tensor b = Tensor::uniform({2, 2, 3, 3}, -1.0, 1.0, s, true);
    Tensor r = projector({2, 2, 3, 3}, s.stream("proj"));
    Leaves leaves{{"a", a}, {"b", b}};
    reports.push_back(gradcheck("elementwise_add_sub",
                                [a, b, r] { return sum(mul(add(scale(a, 0.7), sub(a, b)), r)); },
                                leaves, ops_opt));
  }
  {
    Rng s = rng.stream("bcast");
    Tensor a = Tensor::uniform({1, 4, 3, 3}, -1.0, 1.0, s, true);
    Tensor m = Tensor::uniform({1, 1, 3, 3}, 0.1, 0.9, s, true);
    Tensor r = projector({1, 4, 3, 3}, s.stream("proj"));
    Leaves leaves{{"features", a}, {"mask", m}};
    reports.push_back(
        gradcheck("channel_broadcast_mul", [a, m, r] { return sum(mul(mul(a, m), r)); }, leaves,
                  ops_opt));
  }
  reports.push_back(check_unary("reciprocal_safe", rng,
                                [](const Tensor& x) { return reciprocal_safe(x); }, {1, 2, 3, 3},
                                0.4, 1.6, ops_opt));

  // Convolutions: dilated, grouped, strided, biased.
  {
    Rng s = rng.stream("conv");
    ConvSpec spec = ConvSpec::same(4, 4, 3, 3, /*dilation=*/2, /*groups=*/2);
    Tensor x = Tensor::uniform({1, 4, 5, 5}, -1.0, 1.0, s, true);
    Tensor w = Tensor::uniform({4, 2, 3, 3}, -0.5, 0.5, s, true);
    Tensor b = Tensor::uniform({4}, -0.2, 0.2, s, true);
    Tensor r = projector({1, 4, 5, 5}, s.stream("proj"));
    Leaves leaves{{"input", x}, {"weight", w}, {"bias", b}};
    reports.push_back(gradcheck("conv2d_dilated_grouped",
                                [x, w, b, r, spec] { return sum(mul(conv2d(x, w, b, spec), r)); },
                                leaves, ops_opt));
  }
  {
    Rng s = rng.stream("conv_stride");
    ConvSpec spec;
    spec.in_channels = 3;
    spec.out_channels = 2;
    spec.kh = spec.kw = 3;
    spec.stride = 2;
    spec.pad_h = spec.pad_w = 1;
    Tensor x = Tensor::uniform({2, 3, 6, 6}, -1.0, 1.0, s, true);
    Tensor w = Tensor::uniform({2, 3, 3, 3}, -0.5, 0.5, s, true);
    Tensor r = projector({2, 2, 3, 3}, s.stream("proj"));
    Leaves leaves{{"input", x}, {"weight", w}};
    reports.push_back(gradcheck("conv2d_strided",
                                [x, w, r, spec] { return sum(mul(conv2d(x, w, {}, spec), r)); },
                                leaves, ops_opt));
  }

  // Batch norm, both modes.
  {
    Rng s = rng.stream("bn");
    Tensor x = Tensor::uniform({2, 3, 4, 4}, -1.0, 1.0, s, true);
    BNState bn = BNState::create(3);
    {
      Rng gs = s.stream("gamma");
      auto g = bn.gamma.raw_data();
      for (auto& v : g) v = gs.uniform(0.5, 1.5);
    }
    Tensor r = projector({2, 3, 4, 4}, s.stream("proj"));
    Leaves leaves{{"input", x}, {"gamma", bn.gamma}, {"beta", bn.beta}};
    reports.push_back(gradcheck(
        "batch_norm_train", [&, x, r]() mutable { return sum(mul(batch_norm(x, bn, Mode::kTrain), r)); },
        leaves, ops_opt));
    reports.push_back(gradcheck(
        "batch_norm_eval", [&, x, r]() mutable { return sum(mul(batch_norm(x, bn, Mode::kEval), r)); },
        leaves, ops_opt));
  }

  // Kink-avoiding input band for the piecewise-linear ops.
  reports.push_back(check_unary("leaky_relu_pos", rng,
                                [](const Tensor& x) { return leaky_relu(x, 0.01); }, {1, 2, 4, 4},
                                0.2, 1.2, ops_opt));
  reports.push_back(check_unary("leaky_relu_neg", rng,
                                [](const Tensor& x) { return leaky_relu(x, 0.01); }, {1, 2, 4, 4},
                                -1.2, -0.2, ops_opt));
  reports.push_back(check_unary("max_pool2d", rng, [](const Tensor& x) { return max_pool2d(x); },
                                {1, 2, 6, 6}, -1.0, 1.0, ops_opt));
  reports.push_back(check_unary("upsample_bilinear2x", rng,
                                [](const Tensor& x) { return upsample_bilinear2x(x); },
                                {1, 2, 3, 5}, -1.0, 1.0, ops_opt));
  reports.push_back(check_unary("sigmoid", rng, [](const Tensor& x) { return sigmoid(x); },
                                {1, 2, 4, 4}, -2.0, 2.0, ops_opt));
  reports.push_back(check_unary("channel_pool_avg", rng,
                                [](const Tensor& x) { return channel_pool(x, ChannelPool::kAvg); },
                                {1, 5, 4, 4}, -1.0, 1.0, ops_opt));
  reports.push_back(check_unary("channel_pool_max", rng,
                                [](const Tensor& x) { return channel_pool(x, ChannelPool::kMax); },
                                {1, 5, 4, 4}, -1.0, 1.0, ops_opt));

  // Concatenation / slicing / interleaving.
  {
    Rng s = rng.stream("concat");
    Tensor a = Tensor::uniform({1, 2, 3, 3}, -1.0, 1.0, s, true);
    Tensor b = Tensor::uniform({1, 3, 3, 3}, -1.0, 1.0, s, true);
    Tensor r = projector({1, 5, 3, 3}, s.stream("proj"));
    Leaves leaves{{"a", a}, {"b", b}};
    reports.push_back(gradcheck("concat_channels",
                                [a, b, r] {
                                  const std::array<Tensor, 2> parts{a, b};
                                  return sum(mul(concat_channels(parts), r));
                                },
                                leaves, ops_opt));
  }
  reports.push_back(check_unary("slice", rng,
                                [](const Tensor& x) { return slice(x, 2, 1, 2); }, {1, 2, 4, 4},
                                -1.0, 1.0, ops_opt));
  {
    Rng s = rng.stream("cfs");
    Tensor a = Tensor::uniform({1, 3, 3, 3}, -1.0, 1.0, s, true);
    Tensor b = Tensor::uniform({1, 3, 3, 3}, -1.0, 1.0, s, true);
    Tensor r = projector({1, 6, 3, 3}, s.stream("proj"));
    Leaves leaves{{"f_t0", a}, {"f_t1", b}};
    reports.push_back(gradcheck(
        "cfs_interleave", [a, b, r] { return sum(mul(HpcfNet::cfs(a, b), r)); }, leaves, ops_opt));
  }

  // Weighted cross-entropy loss.
  {
    Rng s = rng.stream("wce");
    Tensor logits = Tensor::uniform({2, 2, 3, 3}, -1.5, 1.5, s, true);
    auto labels = random_labels(2, 3, 3, s.stream("labels"));
    const LossWeights weights = class_weights(labels);
    Leaves leaves{{"logits", logits}};
    reports.push_back(gradcheck("weighted_ce_loss",
                                [logits, labels, weights] {
                                  return weighted_ce_loss(logits, labels, weights);
                                },
                                leaves, ops_opt));
  }

  // Sub-modules of the network, exercised through a small instance.
  ModelConfig cfg;
  cfg.width_div = opt.width_div;
  HpcfNet net(cfg, Rng(opt.seed).stream("net"));
  {
    Rng s = rng.stream("pagc");
    const int c = cfg.encoder_width(1);
    Tensor fs = Tensor::uniform({1, 2 * c, 6, 6}, -1.0, 1.0, s, true);
    Tensor r = projector({1, cfg.pagc_reduce(1), 6, 6}, s.stream("proj"));
    Leaves leaves{{"f_s", fs}};
    for (auto& [name, tensor] : collect_params(net.params(), "pagc.l1.")) {
      leaves.emplace_back(name, tensor);
    }
    const auto stats = snapshot_stats(net.params());
    reports.push_back(gradcheck(
        "pagc", [&net, fs, r] { return sum(mul(net.pagc(1, fs, Mode::kTrain), r)); }, leaves,
        ops_opt));
    restore_stats(net.params(), stats);
  }
  {
    Rng s = rng.stream("rsa");
    const int c = cfg.encoder_width(2);
    Tensor f0 = Tensor::uniform({1, c, 5, 5}, -1.0, 1.0, s, true);
    Tensor f1 = Tensor::uniform({1, c, 5, 5}, -1.0, 1.0, s, true);
    Tensor fused = Tensor::uniform({1, 2 * c, 5, 5}, -1.0, 1.0, s, true);
    Tensor r = projector({1, 2 * c, 5, 5}, s.stream("proj"));
    Leaves leaves{{"f_t0", f0}, {"f_t1", f1}, {"fused", fused}};
    for (auto& [name, tensor] : collect_params(net.params(), "rsa.l2.")) {
      leaves.emplace_back(name, tensor);
    }
    reports.push_back(gradcheck("rsa",
                                [&net, f0, f1, fused, r] {
                                  Tensor mask = net.rsa_mask(2, f0, f1);
                                  return sum(mul(HpcfNet::rsa_apply(mask, fused), r));
                                },
                                leaves, ops_opt));
  }
  {
    Rng s = rng.stream("mpfl");
    const int in_ch = cfg.clb_width(2);
    Tensor x = Tensor::uniform({1, in_ch, 6, 6}, -1.0, 1.0, s, true);
    Tensor r = projector({1, cfg.mpfl_width(2), 6, 6}, s.stream("proj"));
    Leaves leaves{{"input", x}};
    for (auto& [name, tensor] : collect_params(net.params(), "mpfl.l2.")) {
      leaves.emplace_back(name, tensor);
    }
    reports.push_back(gradcheck(
        "mpfl", [&net, x, r] { return sum(mul(net.mpfl(2, x, Mode::kTrain), r)); }, leaves,
        ops_opt));
  }

  // End-to-end model.
  {
    Rng s = rng.stream("model");
    Tensor t0 = Tensor::uniform({1, 3, opt.image_size, opt.image_size}, 0.05, 0.95, s, true);
    Tensor t1 = Tensor::uniform({1, 3, opt.image_size, opt.image_size}, 0.05, 0.95, s, true);
    auto labels = random_labels(1, opt.image_size, opt.image_size, s.stream("labels"));
    GradCheckOptions model_opt;
    model_opt.tol = opt.model_tol;
    model_opt.eps = 1e-6;
    model_opt.rel_floor = 1e-3;
    model_opt.max_samples_per_input = opt.model_samples;
    model_opt.sample_seed = opt.seed;
    reports.push_back(model_gradcheck(net, t0, t1, labels, model_opt));
  }

  return reports;
}

}  // namespace hpcf
