#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "hpcf/ops.hpp"
#include "hpcf/parallel.hpp"

namespace hpcf {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("conv: channel counts must be >= 1");
  if (kh < 1 || kw < 1) throw ShapeError("conv: kernel extents must be >= 1");
  if (stride < 1) throw ShapeError("conv: stride must be >= 1");
  if (dilation < 1) throw ShapeError("conv: dilation must be >= 1");
  if (pad_h < 0 || pad_w < 0) throw ShapeError("conv: padding must be >= 0");
  if (groups < 1) throw ShapeError("conv: groups must be >= 1");
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ShapeError("conv: in_channels and out_channels must be divisible by groups (" +
                     std::to_string(in_channels) + ", " + std::to_string(out_channels) + ", g=" +
                     std::to_string(groups) + ")");
  }
}

int ConvSpec::out_h(int h) const {
  return (h + 2 * pad_h - dilation * (kh - 1) - 1) / stride + 1;
}

int ConvSpec::out_w(int w) const {
  return (w + 2 * pad_w - dilation * (kw - 1) - 1) / stride + 1;
}

ConvSpec ConvSpec::same(int in_ch, int out_ch, int kh, int kw, int dilation, int groups) {
  ConvSpec s;
  s.in_channels = in_ch;
  s.out_channels = out_ch;
  s.kh = kh;
  s.kw = kw;
  s.dilation = dilation;
  s.groups = groups;
  s.pad_h = dilation * (kh - 1) / 2;
  s.pad_w = dilation * (kw - 1) / 2;
  return s;
}

namespace {

struct ConvDims {
  int n, ic, h, w, oc, oh, ow;
  int icg, ocg;  // channels per group on each side
};

ConvDims conv_dims(const Tensor& input, const Tensor& weight, const Tensor& bias,
                   const ConvSpec& spec) {
  spec.validate();
  if (input.rank() != 4) throw ShapeError("conv: input must be rank 4");
  ConvDims d{};
  d.n = input.dim(0);
  d.ic = input.dim(1);
  d.h = input.dim(2);
  d.w = input.dim(3);
  if (d.ic != spec.in_channels) {
    throw ShapeError("conv: input has " + std::to_string(d.ic) + " channels, spec expects " +
                     std::to_string(spec.in_channels));
  }
  d.icg = spec.in_channels / spec.groups;
  d.ocg = spec.out_channels / spec.groups;
  const std::vector<int> expect_w{spec.out_channels, d.icg, spec.kh, spec.kw};
  if (weight.shape() != expect_w) throw ShapeError("conv: weight shape mismatch");
  if (bias.defined() && bias.shape() != std::vector<int>{spec.out_channels}) {
    throw ShapeError("conv: bias shape mismatch");
  }
  d.oc = spec.out_channels;
  d.oh = spec.out_h(d.h);
  d.ow = spec.out_w(d.w);
  if (d.oh < 1 || d.ow < 1) throw ShapeError("conv: non-positive output size");
  return d;
}

void conv_forward(const double* in, const double* wt, const double* bias, double* out,
                  const ConvDims& d, const ConvSpec& s) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.oh) * d.ow;
  parallel_for(0, static_cast<std::int64_t>(d.n) * d.oc, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t job = lo; job < hi; ++job) {
      const int n = static_cast<int>(job / d.oc);
      const int oc = static_cast<int>(job % d.oc);
      const int q = oc / d.ocg;
      double* op = out + (static_cast<std::size_t>(n) * d.oc + oc) * out_plane;
      const double bv = bias ? bias[oc] : 0.0;
      std::fill(op, op + out_plane, bv);
      for (int icg_i = 0; icg_i < d.icg; ++icg_i) {
        const int ic = q * d.icg + icg_i;
        const double* ip = in + (static_cast<std::size_t>(n) * d.ic + ic) * in_plane;
        const double* wp =
            wt + (static_cast<std::size_t>(oc) * d.icg + icg_i) * s.kh * s.kw;
        for (int kh_i = 0; kh_i < s.kh; ++kh_i) {
          for (int kw_i = 0; kw_i < s.kw; ++kw_i) {
            const double wv = wp[kh_i * s.kw + kw_i];
            if (wv == 0.0) continue;
            const int off_w = kw_i * s.dilation - s.pad_w;
            if (s.stride == 1) {
              const int ow_lo = std::max(0, -off_w);
              const int ow_hi = std::min(d.ow, d.w - off_w);
              for (int oh = 0; oh < d.oh; ++oh) {
                const int ih = oh + kh_i * s.dilation - s.pad_h;
                if (ih < 0 || ih >= d.h) continue;
                const double* irow = ip + static_cast<std::size_t>(ih) * d.w + off_w;
                double* orow = op + static_cast<std::size_t>(oh) * d.ow;
                for (int ow = ow_lo; ow < ow_hi; ++ow) orow[ow] += wv * irow[ow];
              }
            } else {
              for (int oh = 0; oh < d.oh; ++oh) {
                const int ih = oh * s.stride + kh_i * s.dilation - s.pad_h;
                if (ih < 0 || ih >= d.h) continue;
                const double* irow = ip + static_cast<std::size_t>(ih) * d.w;
                double* orow = op + static_cast<std::size_t>(oh) * d.ow;
                for (int ow = 0; ow < d.ow; ++ow) {
                  const int iw = ow * s.stride + off_w;
                  if (iw >= 0 && iw < d.w) orow[ow] += wv * irow[iw];
                }
              }
            }
          }
        }
      }
    }
  });
}

void conv_grad_input(const double* g, const double* wt, double* gin, const ConvDims& d,
                     const ConvSpec& s) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.oh) * d.ow;
  parallel_for(0, static_cast<std::int64_t>(d.n) * d.ic, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t job = lo; job < hi; ++job) {
      const int n = static_cast<int>(job / d.ic);
      const int ic = static_cast<int>(job % d.ic);
      const int q = ic / d.icg;
      const int icg_i = ic % d.icg;
      double* gp = gin + (static_cast<std::size_t>(n) * d.ic + ic) * in_plane;
      for (int oc = q * d.ocg; oc < (q + 1) * d.ocg; ++oc) {
        const double* grow0 = g + (static_cast<std::size_t>(n) * d.oc + oc) * out_plane;
        const double* wp =
            wt + (static_cast<std::size_t>(oc) * d.icg + icg_i) * s.kh * s.kw;
        for (int kh_i = 0; kh_i < s.kh; ++kh_i) {
          for (int kw_i = 0; kw_i < s.kw; ++kw_i) {
            const double wv = wp[kh_i * s.kw + kw_i];
            if (wv == 0.0) continue;
            const int off_w = kw_i * s.dilation - s.pad_w;
            if (s.stride == 1) {
              const int ow_lo = std::max(0, -off_w);
              const int ow_hi = std::min(d.ow, d.w - off_w);
              for (int oh = 0; oh < d.oh; ++oh) {
                const int ih = oh + kh_i * s.dilation - s.pad_h;
                if (ih < 0 || ih >= d.h) continue;
                double* girow = gp + static_cast<std::size_t>(ih) * d.w + off_w;
                const double* grow = grow0 + static_cast<std::size_t>(oh) * d.ow;
                for (int ow = ow_lo; ow < ow_hi; ++ow) girow[ow] += wv * grow[ow];
              }
            } else {
              for (int oh = 0; oh < d.oh; ++oh) {
                const int ih = oh * s.stride + kh_i * s.dilation - s.pad_h;
                if (ih < 0 || ih >= d.h) continue;
                double* girow = gp + static_cast<std::size_t>(ih) * d.w;
                const double* grow = grow0 + static_cast<std::size_t>(oh) * d.ow;
                for (int ow = 0; ow < d.ow; ++ow) {
                  const int iw = ow * s.stride + off_w;
                  if (iw >= 0 && iw < d.w) girow[iw] += wv * grow[ow];
                }
              }
            }
          }
        }
      }
    }
  });
}

void conv_grad_weight(const double* g, const double* in, double* gw, const ConvDims& d,
                      const ConvSpec& s) {
  const std::size_t in_plane = static_cast<std::size_t>(d.h) * d.w;
  const std::size_t out_plane = static_cast<std::size_t>(d.oh) * d.ow;
  parallel_for(0, d.oc, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t oc = lo; oc < hi; ++oc) {
      const int q = static_cast<int>(oc) / d.ocg;
      for (int icg_i = 0; icg_i < d.icg; ++icg_i) {
        const int ic = q * d.icg + icg_i;
        double* gwp = gw + (static_cast<std::size_t>(oc) * d.icg + icg_i) * s.kh * s.kw;
        for (int kh_i = 0; kh_i < s.kh; ++kh_i) {
          for (int kw_i = 0; kw_i < s.kw; ++kw_i) {
            const int off_w = kw_i * s.dilation - s.pad_w;
            double acc = 0.0;
            for (int n = 0; n < d.n; ++n) {
              const double* gp = g + (static_cast<std::size_t>(n) * d.oc + oc) * out_plane;
              const double* ip = in + (static_cast<std::size_t>(n) * d.ic + ic) * in_plane;
              if (s.stride == 1) {
                const int ow_lo = std::max(0, -off_w);
                const int ow_hi = std::min(d.ow, d.w - off_w);
                for (int oh = 0; oh < d.oh; ++oh) {
                  const int ih = oh + kh_i * s.dilation - s.pad_h;
                  if (ih < 0 || ih >= d.h) continue;
                  const double* irow = ip + static_cast<std::size_t>(ih) * d.w + off_w;
                  const double* grow = gp + static_cast<std::size_t>(oh) * d.ow;
                  for (int ow = ow_lo; ow < ow_hi; ++ow) acc += grow[ow] * irow[ow];
                }
              } else {
                for (int oh = 0; oh < d.oh; ++oh) {
                  const int ih = oh * s.stride + kh_i * s.dilation - s.pad_h;
                  if (ih < 0 || ih >= d.h) continue;
                  const double* irow = ip + static_cast<std::size_t>(ih) * d.w;
                  const double* grow = gp + static_cast<std::size_t>(oh) * d.ow;
                  for (int ow = 0; ow < d.ow; ++ow) {
                    const int iw = ow * s.stride + off_w;
                    if (iw >= 0 && iw < d.w) acc += grow[ow] * irow[iw];
                  }
                }
              }
            }
            gwp[kh_i * s.kw + kw_i] += acc;
          }
        }
      }
    }
  });
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
              const ConvSpec& spec) {
  const ConvDims d = conv_dims(input, weight, bias, spec);
  std::vector<double> out(static_cast<std::size_t>(d.n) * d.oc * d.oh * d.ow);
  conv_forward(input.data().data(), weight.data().data(),
               bias.defined() ? bias.data().data() : nullptr, out.data(), d, spec);

  std::vector<Tensor> inputs{input, weight};
  const bool has_bias = bias.defined();
  if (has_bias) inputs.push_back(bias);
  return Tensor::make_op(
      "conv2d", {d.n, d.oc, d.oh, d.ow}, std::move(out), std::move(inputs),
      [d, spec, has_bias](std::span<const double> g, GradSink& sink) {
        if (sink.needs(0)) {
          conv_grad_input(g.data(), sink.input_data(1).data(), sink.grad(0).data(), d, spec);
        }
        if (sink.needs(1)) {
          conv_grad_weight(g.data(), sink.input_data(0).data(), sink.grad(1).data(), d, spec);
        }
        if (has_bias && sink.needs(2)) {
          auto gb = sink.grad(2);
          const std::size_t out_plane = static_cast<std::size_t>(d.oh) * d.ow;
          for (int n = 0; n < d.n; ++n) {
            for (int oc = 0; oc < d.oc; ++oc) {
              const double* gp = g.data() + (static_cast<std::size_t>(n) * d.oc + oc) * out_plane;
              double acc = 0.0;
              for (std::size_t i = 0; i < out_plane; ++i) acc += gp[i];
              gb[oc] += acc;
            }
          }
        }
      });
}

}  // namespace hpcf
