#pragma once

#include <span>

#include "hpcf/tensor.hpp"

namespace hpcf {

enum class Mode { kTrain, kEval };

/// Grouped, dilated 2-D cross-correlation spec. Output channel o in group q
/// reads only the input channels of group q.
struct ConvSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kh = 1;
  int kw = 1;
  int stride = 1;
  int pad_h = 0;
  int pad_w = 0;
  int dilation = 1;
  int groups = 1;

  void validate() const;
  int out_h(int h) const;
  int out_w(int w) const;
  /// pad = dilation * (k - 1) / 2, the size-preserving choice for odd k.
  static ConvSpec same(int in_ch, int out_ch, int kh, int kw, int dilation = 1, int groups = 1);
};

/// bias may be a default-constructed (undefined) tensor for bias-free convs.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec);

struct BNState {
  Tensor gamma;         // learnable per-channel scale
  Tensor beta;          // learnable per-channel shift
  Tensor running_mean;  // eval-mode statistics, updated in train mode
  Tensor running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BNState create(int channels, double momentum = 0.1, double eps = 1e-5);
  int channels() const { return gamma.dim(0); }
};

/// Train mode normalizes with batch statistics and updates the running ones;
/// eval mode normalizes with the running statistics. Affine transform applied
/// in both.
Tensor batch_norm(const Tensor& input, BNState& state, Mode mode);

Tensor leaky_relu(const Tensor& input, double slope);

/// 2x2 window, stride 2. Odd edges are replicated; gradient goes to the
/// first maximal element in row-major window order.
Tensor max_pool2d(const Tensor& input);

/// Doubles both spatial extents, align-corners = false.
Tensor upsample_bilinear2x(const Tensor& input);

/// Numerically stable logistic; output clamped into the open interval (0,1).
Tensor sigmoid(const Tensor& input);

/// Concatenates along `axis` (1 = channels, 2 = height, 3 = width).
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat_channels(std::span<const Tensor> parts);

/// Contiguous sub-range along `axis`; backward scatters into the source slot.
Tensor slice(const Tensor& input, int axis, int start, int len);

enum class ChannelPool { kAvg, kMax };

/// Per-pixel reduction over channels, producing (n,1,h,w).
Tensor channel_pool(const Tensor& input, ChannelPool mode);

/// out[:,2i] = a[:,i], out[:,2i+1] = b[:,i]. Both inputs (n,c,h,w).
Tensor interleave_channels(const Tensor& a, const Tensor& b);

}  // namespace hpcf
