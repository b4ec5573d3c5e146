#pragma once

#include <array>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hpcf/change_map.hpp"
#include "hpcf/ops.hpp"
#include "hpcf/rng.hpp"
#include "hpcf/tensor.hpp"

namespace hpcf {

enum class ModelArch { kHpcf, kEarlyFusion };

const char* arch_name(ModelArch arch);
ModelArch arch_from_name(const std::string& name);

/// Channel arithmetic for the whole network. Every width is a base value
/// divided by `width_div`, so desk-scale configurations keep the structure of
/// the full-scale one.
struct ModelConfig {
  ModelArch arch = ModelArch::kHpcf;
  int width_div = 1;
  double leaky_slope = 0.01;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  /// Widens the early-fusion decoder so its parameter count matches the full
  /// model's at the same width_div.
  double baseline_width_mult = 1.0;

  static constexpr int kLevels = 5;
  static constexpr std::array<int, 5> kEncoderWidths{64, 128, 256, 512, 512};
  static constexpr std::array<int, 5> kClbWidths{64, 128, 256, 512, 512};
  static constexpr std::array<int, 5> kMpflWidths{0, 64, 128, 256, 256};
  static constexpr std::array<int, 5> kEncoderDepth{2, 2, 3, 3, 3};

  void validate() const;

  // Levels are 1-based (1 = finest resolution).
  int encoder_width(int level) const;
  int clb_width(int level) const;
  int mpfl_width(int level) const;
  /// PAGC 1x1 reduction target: c at levels 1..4 and 2c at level 5.
  int pagc_reduce(int level) const;
  bool rsa_enabled(int level) const { return level >= 2; }
  bool mpfl_enabled(int level) const { return level >= 2; }
  /// Channels of the fused per-level feature handed to the decoder block.
  int pcf_channels(int level) const;
  int head_in_channels() const;
};

/// Per-level feature tensors; index 0 holds level 1 (finest).
struct FeaturePyramid {
  std::array<Tensor, ModelConfig::kLevels> levels;
};

/// Channel counts observed during one forward pass (shape-contract probes).
struct ForwardTrace {
  std::array<int, 5> pcf_channels{};
  std::array<int, 5> clb_channels{};
  std::array<int, 5> mpfl_channels{};
  std::array<bool, 5> rsa_applied{};
  int head_in_channels = 0;
};

struct ParamEntry {
  std::string name;
  Tensor value;
  bool learnable = true;
  std::vector<double> momentum;  // sized lazily by the optimizer
};

/// Named parameter storage in deterministic construction order.
class ParamRegistry {
 public:
  Tensor add(std::string name, Tensor value, bool learnable = true);
  ParamEntry* find(const std::string& name);
  std::vector<ParamEntry>& entries() { return entries_; }
  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::size_t learnable_scalars() const;
  void zero_grad();

 private:
  std::vector<ParamEntry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Tie rule: equal logits predict unchanged.
std::vector<ChangeMap> logits_to_change_maps(const Tensor& logits);

class ChangeDetector {
 public:
  virtual ~ChangeDetector() = default;
  virtual Tensor forward(const Tensor& t0, const Tensor& t1, Mode mode,
                         ForwardTrace* trace = nullptr) = 0;
  std::vector<ChangeMap> predict_change_map(const Tensor& t0, const Tensor& t1);

  ParamRegistry& params() { return params_; }
  const ParamRegistry& params() const { return params_; }
  const ModelConfig& config() const { return cfg_; }

 protected:
  explicit ChangeDetector(const ModelConfig& cfg) : cfg_(cfg) {}
  ModelConfig cfg_;
  ParamRegistry params_;
};

namespace layers {

struct ConvLayer {
  ConvSpec spec;
  Tensor w;
  Tensor b;  // undefined when bias-free
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, spec); }
  static ConvLayer create(ParamRegistry& reg, const std::string& name, const ConvSpec& spec,
                          bool bias, Rng rng);
};

/// Convolution -> leaky ReLU -> batch normalization block.
struct ClbLayer {
  ConvLayer conv;
  BNState bn;
  double slope = 0.01;
  Tensor forward(const Tensor& x, Mode mode) { return batch_norm(leaky_relu(conv(x), slope), bn, mode); }
  static ClbLayer create(ParamRegistry& reg, const std::string& name, int in_ch, int out_ch,
                         const ModelConfig& cfg, Rng rng);
};

}  // namespace layers

/// Siamese encoder + per-level paired-channel fusion, reverse spatial
/// attention, decoder blocks, multi-part feature learning, and the
/// prediction head.
class HpcfNet final : public ChangeDetector {
 public:
  HpcfNet(const ModelConfig& cfg, Rng rng);

  /// One encoder stream; both images of a pair run through the same weights.
  FeaturePyramid backbone_forward(const Tensor& image, Mode mode);

  /// Cross feature stack: t0 channels at even indices, t1 at odd.
  static Tensor cfs(const Tensor& f_t0, const Tensor& f_t1);

  /// Four dilated grouped 3x3 branches (one output channel per channel
  /// pair), concatenated and reduced by a 1x1 convolution.
  Tensor pagc(int level, const Tensor& f_s, Mode mode);

  /// cfs + pagc, concatenated with the upsampled deeper decoder feature.
  /// `deeper` must be undefined at level 5 and defined below it.
  Tensor pcf(int level, const Tensor& f_t0, const Tensor& f_t1, const Tensor& deeper, Mode mode);

  /// sigma(conv3x3([AP, MP] of f_t0 * f_t1)); the mask is 1 - this gate.
  Tensor rsa_gate(int level, const Tensor& f_t0, const Tensor& f_t1);
  Tensor rsa_mask(int level, const Tensor& f_t0, const Tensor& f_t1);
  static Tensor rsa_apply(const Tensor& mask, const Tensor& fused);

  /// Four-branch spatial partition (quadrants / halves / whole) with
  /// per-block independent kernels; h and w must be even.
  Tensor mpfl(int level, const Tensor& input, Mode mode);

  Tensor forward(const Tensor& t0, const Tensor& t1, Mode mode, ForwardTrace* trace) override;

 private:
  struct PagcLevel {
    std::array<layers::ConvLayer, 4> branch;
    std::array<BNState, 4> bn;
    layers::ConvLayer reduce;
  };
  struct MpflLevel {
    layers::ConvLayer reduce;
    std::array<layers::ConvLayer, 4> quad;
    std::array<layers::ConvLayer, 2> lr;
    std::array<layers::ConvLayer, 2> tb;
    layers::ConvLayer full;
  };

  std::array<std::vector<layers::ClbLayer>, 5> encoder_;
  std::array<PagcLevel, 5> pagc_;
  std::array<layers::ConvLayer, 5> rsa_;  // index 0 unused (no RSA at level 1)
  std::array<layers::ClbLayer, 5> decoder_;
  std::array<MpflLevel, 5> mpfl_;  // index 0 unused
  layers::ConvLayer head_;
};

/// Plain-concatenation early fusion: the image pair is stacked to a
/// 6-channel input, encoded once, and decoded from the deepest level only.
class EarlyFusionNet final : public ChangeDetector {
 public:
  EarlyFusionNet(const ModelConfig& cfg, Rng rng);
  Tensor forward(const Tensor& t0, const Tensor& t1, Mode mode, ForwardTrace* trace) override;

 private:
  int dec_width(int level) const;
  std::array<std::vector<layers::ClbLayer>, 5> encoder_;
  std::array<layers::ClbLayer, 5> decoder_;
  layers::ConvLayer head_;
};

std::unique_ptr<ChangeDetector> make_model(const ModelConfig& cfg, Rng rng);

}  // namespace hpcf
