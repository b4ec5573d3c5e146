#include "hpcf/model.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

namespace hpcf {

const char* arch_name(ModelArch arch) {
  return arch == ModelArch::kHpcf ? "hpcf" : "early_fusion";
}

ModelArch arch_from_name(const std::string& name) {
  if (name == "hpcf") return ModelArch::kHpcf;
  if (name == "early_fusion") return ModelArch::kEarlyFusion;
  throw ConfigError("unknown model arch '" + name + "' (expected hpcf or early_fusion)");
}

void ModelConfig::validate() const {
  if (width_div < 1) throw ConfigError("width_div must be >= 1");
  for (int level = 1; level <= kLevels; ++level) {
    if (kEncoderWidths[static_cast<std::size_t>(level - 1)] % width_div != 0) {
      throw ConfigError("width_div " + std::to_string(width_div) +
                        " does not divide the base channel counts");
    }
    if (mpfl_enabled(level) && mpfl_width(level) % 4 != 0) {
      throw ConfigError("scaled MPFL channels must stay divisible by 4");
    }
  }
  if (leaky_slope <= 0 || leaky_slope >= 1) throw ConfigError("leaky_slope must be in (0,1)");
  if (bn_eps <= 0) throw ConfigError("bn_eps must be positive");
  if (baseline_width_mult <= 0) throw ConfigError("baseline_width_mult must be positive");
}

int ModelConfig::encoder_width(int level) const {
  return kEncoderWidths[static_cast<std::size_t>(level - 1)] / width_div;
}

int ModelConfig::clb_width(int level) const {
  return kClbWidths[static_cast<std::size_t>(level - 1)] / width_div;
}

int ModelConfig::mpfl_width(int level) const {
  return kMpflWidths[static_cast<std::size_t>(level - 1)] / width_div;
}

int ModelConfig::pagc_reduce(int level) const {
  const int c = encoder_width(level);
  return level == kLevels ? 2 * c : c;
}

int ModelConfig::pcf_channels(int level) const {
  int ch = pagc_reduce(level);
  if (level < kLevels) ch += clb_width(level + 1);
  return ch;
}

int ModelConfig::head_in_channels() const {
  int ch = clb_width(1);
  for (int level = 2; level <= kLevels; ++level) ch += mpfl_width(level);
  return ch;
}

Tensor ParamRegistry::add(std::string name, Tensor value, bool learnable) {
  if (index_.count(name)) throw Error("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.push_back(ParamEntry{std::move(name), value, learnable, {}});
  return value;
}

ParamEntry* ParamRegistry::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : &entries_[it->second];
}

std::size_t ParamRegistry::learnable_scalars() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.learnable) n += e.value.numel();
  }
  return n;
}

void ParamRegistry::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

std::vector<ChangeMap> logits_to_change_maps(const Tensor& logits) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ShapeError("logits must have shape (n,2,h,w)");
  }
  const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto d = logits.data();
  std::vector<ChangeMap> maps(static_cast<std::size_t>(n));
  for (int ni = 0; ni < n; ++ni) {
    ChangeMap& m = maps[static_cast<std::size_t>(ni)];
    m.h = h;
    m.w = w;
    m.labels.resize(plane);
    const double* l0 = d.data() + static_cast<std::size_t>(ni) * 2 * plane;
    const double* l1 = l0 + plane;
    for (std::size_t i = 0; i < plane; ++i) m.labels[i] = l1[i] > l0[i] ? 1 : 0;
  }
  return maps;
}

std::vector<ChangeMap> ChangeDetector::predict_change_map(const Tensor& t0, const Tensor& t1) {
  NoGradGuard off;
  return logits_to_change_maps(forward(t0, t1, Mode::kEval, nullptr));
}

namespace layers {

namespace {

// Xavier-uniform over the kernel's fan-in/fan-out.
Tensor xavier_weight(const ConvSpec& spec, Rng rng) {
  const int icg = spec.in_channels / spec.groups;
  const int ocg = spec.out_channels / spec.groups;
  const double fan_in = static_cast<double>(icg) * spec.kh * spec.kw;
  const double fan_out = static_cast<double>(ocg) * spec.kh * spec.kw;
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  return Tensor::uniform({spec.out_channels, icg, spec.kh, spec.kw}, -limit, limit, rng, true);
}

}  // namespace

ConvLayer ConvLayer::create(ParamRegistry& reg, const std::string& name, const ConvSpec& spec,
                            bool bias, Rng rng) {
  spec.validate();
  ConvLayer layer;
  layer.spec = spec;
  Rng wstream = rng.stream(name + ".w");
  layer.w = reg.add(name + ".w", xavier_weight(spec, wstream));
  if (bias) layer.b = reg.add(name + ".b", Tensor::zeros({spec.out_channels}, true));
  return layer;
}

ClbLayer ClbLayer::create(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch,
                          const ModelConfig& cfg, Rng rng) {
  ClbLayer layer;
  layer.conv = ConvLayer::create(reg, name + ".conv", ConvSpec::same(in_ch, out_ch, 3, 3),
                                 /*bias=*/false, rng);
  layer.bn = BNState::create(out_ch, cfg.bn_momentum, cfg.bn_eps);
  layer.slope = cfg.leaky_slope;
  reg.add(name + ".bn.gamma", layer.bn.gamma);
  reg.add(name + ".bn.beta", layer.bn.beta);
  reg.add(name + ".bn.running_mean", layer.bn.running_mean, /*learnable=*/false);
  reg.add(name + ".bn.running_var", layer.bn.running_var, /*learnable=*/false);
  return layer;
}

}  // namespace layers

namespace {

Tensor concat2(const Tensor& a, const Tensor& b, int axis) {
  const std::array<Tensor, 2> parts{a, b};
  return concat(parts, axis);
}

void check_image(const Tensor& image) {
  if (image.rank() != 4 || image.dim(1) != 3) {
    throw ShapeError("image tensor must have shape (n,3,h,w)");
  }
  if (image.dim(2) % 16 != 0 || image.dim(3) % 16 != 0) {
    throw ShapeError("image height and width must be divisible by 16, got " +
                     std::to_string(image.dim(2)) + "x" + std::to_string(image.dim(3)));
  }
}

void check_pair(const Tensor& t0, const Tensor& t1) {
  check_image(t0);
  check_image(t1);
  if (t0.shape() != t1.shape()) throw ShapeError("paired images must share shape");
}

std::array<std::vector<layers::ClbLayer>, 5> build_encoder(ParamRegistry& reg,
                                                           const ModelConfig& cfg, Rng rng,
                                                           int input_channels,
                                                           const std::string& prefix) {
  std::array<std::vector<layers::ClbLayer>, 5> encoder;
  int in_ch = input_channels;
  for (int level = 1; level <= ModelConfig::kLevels; ++level) {
    const int width = cfg.encoder_width(level);
    const int depth = ModelConfig::kEncoderDepth[static_cast<std::size_t>(level - 1)];
    for (int i = 0; i < depth; ++i) {
      const std::string name =
          prefix + ".b" + std::to_string(level) + ".c" + std::to_string(i + 1);
      encoder[static_cast<std::size_t>(level - 1)].push_back(
          layers::ClbLayer::create(reg, name, in_ch, width, cfg, rng));
      in_ch = width;
    }
  }
  return encoder;
}

}  // namespace

HpcfNet::HpcfNet(const ModelConfig& cfg, Rng rng) : ChangeDetector(cfg) {
  cfg_.arch = ModelArch::kHpcf;
  cfg_.validate();
  encoder_ = build_encoder(params_, cfg_, rng, 3, "enc");

  for (int level = 1; level <= ModelConfig::kLevels; ++level) {
    const std::size_t li = static_cast<std::size_t>(level - 1);
    const int c = cfg_.encoder_width(level);
    const std::string base = "pagc.l" + std::to_string(level);
    PagcLevel& pl = pagc_[li];
    for (int d = 1; d <= 4; ++d) {
      const std::string bname = base + ".d" + std::to_string(d);
      pl.branch[static_cast<std::size_t>(d - 1)] = layers::ConvLayer::create(
          params_, bname, ConvSpec::same(2 * c, c, 3, 3, /*dilation=*/d, /*groups=*/c),
          /*bias=*/false, rng);
      BNState& bn = pl.bn[static_cast<std::size_t>(d - 1)];
      bn = BNState::create(c, cfg_.bn_momentum, cfg_.bn_eps);
      params_.add(bname + ".bn.gamma", bn.gamma);
      params_.add(bname + ".bn.beta", bn.beta);
      params_.add(bname + ".bn.running_mean", bn.running_mean, false);
      params_.add(bname + ".bn.running_var", bn.running_var, false);
    }
    ConvSpec reduce;
    reduce.in_channels = 4 * c;
    reduce.out_channels = cfg_.pagc_reduce(level);
    pl.reduce = layers::ConvLayer::create(params_, base + ".reduce", reduce, /*bias=*/true, rng);

    if (cfg_.rsa_enabled(level)) {
      rsa_[li] = layers::ConvLayer::create(params_, "rsa.l" + std::to_string(level),
                                           ConvSpec::same(2, 1, 3, 3), /*bias=*/true, rng);
    }

    decoder_[li] = layers::ClbLayer::create(params_, "dec.l" + std::to_string(level),
                                            cfg_.pcf_channels(level), cfg_.clb_width(level),
                                            cfg_, rng);

    if (cfg_.mpfl_enabled(level)) {
      const int m4 = cfg_.mpfl_width(level) / 4;
      const std::string mbase = "mpfl.l" + std::to_string(level);
      MpflLevel& ml = mpfl_[li];
      ConvSpec one;
      one.in_channels = cfg_.clb_width(level);
      one.out_channels = m4;
      ml.reduce = layers::ConvLayer::create(params_, mbase + ".reduce", one, true, rng);
      ConvSpec k1;
      k1.in_channels = m4;
      k1.out_channels = m4;
      for (int qidx = 0; qidx < 4; ++qidx) {
        ml.quad[static_cast<std::size_t>(qidx)] = layers::ConvLayer::create(
            params_, mbase + ".quad" + std::to_string(qidx), k1, true, rng);
      }
      for (int i = 0; i < 2; ++i) {
        ml.lr[static_cast<std::size_t>(i)] = layers::ConvLayer::create(
            params_, mbase + ".lr" + std::to_string(i), ConvSpec::same(m4, m4, 3, 1), true, rng);
        ml.tb[static_cast<std::size_t>(i)] = layers::ConvLayer::create(
            params_, mbase + ".tb" + std::to_string(i), ConvSpec::same(m4, m4, 1, 3), true, rng);
      }
      ml.full = layers::ConvLayer::create(params_, mbase + ".full",
                                          ConvSpec::same(m4, m4, 3, 3), true, rng);
    }
  }

  ConvSpec head;
  head.in_channels = cfg_.head_in_channels();
  head.out_channels = 2;
  head_ = layers::ConvLayer::create(params_, "head", head, /*bias=*/true, rng);
}

FeaturePyramid HpcfNet::backbone_forward(const Tensor& image, Mode mode) {
  check_image(image);
  FeaturePyramid pyr;
  Tensor x = image;
  for (int level = 1; level <= ModelConfig::kLevels; ++level) {
    if (level > 1) x = max_pool2d(x);
    for (auto& layer : encoder_[static_cast<std::size_t>(level - 1)]) x = layer.forward(x, mode);
    pyr.levels[static_cast<std::size_t>(level - 1)] = x;
  }
  return pyr;
}

Tensor HpcfNet::cfs(const Tensor& f_t0, const Tensor& f_t1) {
  return interleave_channels(f_t0, f_t1);
}

Tensor HpcfNet::pagc(int level, const Tensor& f_s, Mode mode) {
  if (f_s.dim(1) % 2 != 0) throw ShapeError("pagc: input channel count must be even");
  PagcLevel& pl = pagc_[static_cast<std::size_t>(level - 1)];
  std::array<Tensor, 4> branches;
  for (int d = 0; d < 4; ++d) {
    Tensor x = pl.branch[static_cast<std::size_t>(d)](f_s);
    x = batch_norm(x, pl.bn[static_cast<std::size_t>(d)], mode);
    branches[static_cast<std::size_t>(d)] = leaky_relu(x, cfg_.leaky_slope);
  }
  return pl.reduce(concat_channels(branches));
}

Tensor HpcfNet::pcf(int level, const Tensor& f_t0, const Tensor& f_t1, const Tensor& deeper,
                    Mode mode) {
  if (f_t0.shape() != f_t1.shape()) throw ShapeError("pcf: paired features must share shape");
  Tensor fused = pagc(level, cfs(f_t0, f_t1), mode);
  if (level == ModelConfig::kLevels) {
    if (deeper.defined()) throw ShapeError("pcf: deepest level takes no deeper feature");
    return fused;
  }
  if (!deeper.defined()) throw ShapeError("pcf: levels below the deepest need a deeper feature");
  return concat2(fused, upsample_bilinear2x(deeper), 1);
}

Tensor HpcfNet::rsa_gate(int level, const Tensor& f_t0, const Tensor& f_t1) {
  if (!cfg_.rsa_enabled(level)) throw ShapeError("rsa is disabled at level 1");
  if (f_t0.shape() != f_t1.shape()) throw ShapeError("rsa: paired features must share shape");
  Tensor prod = mul(f_t0, f_t1);
  Tensor pooled =
      concat2(channel_pool(prod, ChannelPool::kAvg), channel_pool(prod, ChannelPool::kMax), 1);
  return sigmoid(rsa_[static_cast<std::size_t>(level - 1)](pooled));
}

Tensor HpcfNet::rsa_mask(int level, const Tensor& f_t0, const Tensor& f_t1) {
  Tensor gate = rsa_gate(level, f_t0, f_t1);
  return sub(Tensor::ones(gate.shape()), gate);
}

Tensor HpcfNet::rsa_apply(const Tensor& mask, const Tensor& fused) {
  return mul(fused, mask);
}

Tensor HpcfNet::mpfl(int level, const Tensor& input, Mode mode) {
  (void)mode;
  if (!cfg_.mpfl_enabled(level)) throw ShapeError("mpfl is disabled at level 1");
  const int h = input.dim(2), w = input.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("mpfl: spatial extents must be even, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  MpflLevel& ml = mpfl_[static_cast<std::size_t>(level - 1)];
  Tensor red = ml.reduce(input);
  const int hh = h / 2, hw = w / 2;

  // Branch 1: quadrants, each with its own 1x1 kernel, re-stitched.
  std::array<Tensor, 4> q;
  for (int r = 0; r < 2; ++r) {
    for (int col = 0; col < 2; ++col) {
      Tensor block = slice(slice(red, 2, r * hh, hh), 3, col * hw, hw);
      q[static_cast<std::size_t>(r * 2 + col)] =
          ml.quad[static_cast<std::size_t>(r * 2 + col)](block);
    }
  }
  Tensor b1 = concat2(concat2(q[0], q[1], 3), concat2(q[2], q[3], 3), 2);

  // Branch 2: left/right halves with 3x1 kernels.
  Tensor b2 = concat2(ml.lr[0](slice(red, 3, 0, hw)), ml.lr[1](slice(red, 3, hw, hw)), 3);

  // Branch 3: top/bottom halves with 1x3 kernels.
  Tensor b3 = concat2(ml.tb[0](slice(red, 2, 0, hh)), ml.tb[1](slice(red, 2, hh, hh)), 2);

  // Branch 4: the whole map with one 3x3 kernel.
  Tensor b4 = ml.full(red);

  const std::array<Tensor, 4> parts{b1, b2, b3, b4};
  return concat_channels(parts);
}

Tensor HpcfNet::forward(const Tensor& t0, const Tensor& t1, Mode mode, ForwardTrace* trace) {
  check_pair(t0, t1);
  FeaturePyramid pyr0 = backbone_forward(t0, mode);
  FeaturePyramid pyr1 = backbone_forward(t1, mode);

  Tensor deeper;
  Tensor d1;
  std::array<Tensor, 5> mpfl_outs;
  for (int level = ModelConfig::kLevels; level >= 1; --level) {
    const std::size_t li = static_cast<std::size_t>(level - 1);
    Tensor fused = pcf(level, pyr0.levels[li], pyr1.levels[li], deeper, mode);
    if (trace) trace->pcf_channels[li] = fused.dim(1);
    if (cfg_.rsa_enabled(level)) {
      Tensor mask = rsa_mask(level, pyr0.levels[li], pyr1.levels[li]);
      fused = rsa_apply(mask, fused);
      if (trace) trace->rsa_applied[li] = true;
    }
    Tensor d = decoder_[li].forward(fused, mode);
    if (trace) trace->clb_channels[li] = d.dim(1);
    if (cfg_.mpfl_enabled(level)) {
      mpfl_outs[li] = mpfl(level, d, mode);
      if (trace) trace->mpfl_channels[li] = mpfl_outs[li].dim(1);
    } else {
      d1 = d;
    }
    deeper = d;
  }

  std::vector<Tensor> parts{d1};
  for (int level = 2; level <= ModelConfig::kLevels; ++level) {
    Tensor u = mpfl_outs[static_cast<std::size_t>(level - 1)];
    for (int k = 1; k < level; ++k) u = upsample_bilinear2x(u);
    parts.push_back(u);
  }
  Tensor head_in = concat_channels(parts);
  if (trace) trace->head_in_channels = head_in.dim(1);
  return head_(head_in);
}

EarlyFusionNet::EarlyFusionNet(const ModelConfig& cfg, Rng rng) : ChangeDetector(cfg) {
  cfg_.arch = ModelArch::kEarlyFusion;
  cfg_.validate();
  encoder_ = build_encoder(params_, cfg_, rng, 6, "enc");
  int in_ch = cfg_.encoder_width(5);
  for (int level = ModelConfig::kLevels; level >= 1; --level) {
    decoder_[static_cast<std::size_t>(level - 1)] = layers::ClbLayer::create(
        params_, "dec.l" + std::to_string(level), in_ch, dec_width(level), cfg_, rng);
    in_ch = dec_width(level);
  }
  ConvSpec head;
  head.in_channels = dec_width(1);
  head.out_channels = 2;
  head_ = layers::ConvLayer::create(params_, "head", head, true, rng);
}

int EarlyFusionNet::dec_width(int level) const {
  const int base = cfg_.clb_width(level);
  const int scaled = static_cast<int>(std::lround(base * cfg_.baseline_width_mult));
  return std::max(scaled, 2);
}

Tensor EarlyFusionNet::forward(const Tensor& t0, const Tensor& t1, Mode mode,
                               ForwardTrace* trace) {
  check_pair(t0, t1);
  Tensor x = concat2(t0, t1, 1);
  for (int level = 1; level <= ModelConfig::kLevels; ++level) {
    if (level > 1) x = max_pool2d(x);
    for (auto& layer : encoder_[static_cast<std::size_t>(level - 1)]) x = layer.forward(x, mode);
  }
  for (int level = ModelConfig::kLevels; level >= 1; --level) {
    if (level < ModelConfig::kLevels) x = upsample_bilinear2x(x);
    x = decoder_[static_cast<std::size_t>(level - 1)].forward(x, mode);
    if (trace) trace->clb_channels[static_cast<std::size_t>(level - 1)] = x.dim(1);
  }
  if (trace) trace->head_in_channels = x.dim(1);
  return head_(x);
}

std::unique_ptr<ChangeDetector> make_model(const ModelConfig& cfg, Rng rng) {
  if (cfg.arch == ModelArch::kHpcf) return std::make_unique<HpcfNet>(cfg, rng);
  return std::make_unique<EarlyFusionNet>(cfg, rng);
}

}  // namespace hpcf
