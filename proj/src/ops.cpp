#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "hpcf/ops.hpp"

namespace hpcf {

namespace {

void require_rank4(const Tensor& t, const char* who) {
  if (t.rank() != 4) throw ShapeError(std::string(who) + ": input must be rank 4");
}

}  // namespace

BNState BNState::create(int channels, double momentum, double eps) {
  if (channels < 1) throw ShapeError("batch_norm: channels must be >= 1");
  if (eps <= 0) throw ShapeError("batch_norm: eps must be positive");
  BNState s;
  s.gamma = Tensor::ones({channels}, true);
  s.beta = Tensor::zeros({channels}, true);
  s.running_mean = Tensor::zeros({channels});
  s.running_var = Tensor::ones({channels});
  s.momentum = momentum;
  s.eps = eps;
  return s;
}

Tensor batch_norm(const Tensor& input, BNState& state, Mode mode) {
  require_rank4(input, "batch_norm");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (c != state.channels()) {
    throw ShapeError("batch_norm: input has " + std::to_string(c) + " channels, state has " +
                     std::to_string(state.channels()));
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t m = static_cast<std::size_t>(n) * plane;  // samples per channel
  const auto x = input.data();
  const auto gam = state.gamma.data();
  const auto bet = state.beta.data();

  std::vector<double> mean(c), invstd(c);
  if (mode == Mode::kTrain) {
    auto rm = state.running_mean.raw_data();
    auto rv = state.running_var.raw_data();
    for (int ci = 0; ci < c; ++ci) {
      double s = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* row = x.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) s += row[i];
      }
      const double mu = s / static_cast<double>(m);
      double ss = 0.0;
      for (int ni = 0; ni < n; ++ni) {
        const double* row = x.data() + (static_cast<std::size_t>(ni) * c + ci) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const double dv = row[i] - mu;
          ss += dv * dv;
        }
      }
      const double var = ss / static_cast<double>(m);  // biased, used for normalization
      mean[ci] = mu;
      invstd[ci] = 1.0 / std::sqrt(var + state.eps);
      const double var_running =
          m > 1 ? ss / static_cast<double>(m - 1) : var;  // unbiased when defined
      rm[ci] = (1.0 - state.momentum) * rm[ci] + state.momentum * mu;
      rv[ci] = (1.0 - state.momentum) * rv[ci] + state.momentum * var_running;
    }
  } else {
    const auto rm = state.running_mean.data();
    const auto rv = state.running_var.data();
    for (int ci = 0; ci < c; ++ci) {
      mean[ci] = rm[ci];
      invstd[ci] = 1.0 / std::sqrt(rv[ci] + state.eps);
    }
  }

  std::vector<double> out(input.numel());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
      const double mu = mean[ci], is = invstd[ci], ga = gam[ci], be = bet[ci];
      for (std::size_t i = 0; i < plane; ++i) out[base + i] = (x[base + i] - mu) * is * ga + be;
    }
  }

  const bool train = mode == Mode::kTrain;
  return Tensor::make_op(
      "batch_norm", input.shape(), std::move(out), {input, state.gamma, state.beta},
      [n, c, plane, m, mean, invstd, train](std::span<const double> g, GradSink& sink) {
        const auto x = sink.input_data(0);
        const auto gam = sink.input_data(1);
        for (int ci = 0; ci < c; ++ci) {
          const double mu = mean[ci], is = invstd[ci];
          double sg = 0.0, sgx = 0.0;
          for (int ni = 0; ni < n; ++ni) {
            const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
            for (std::size_t i = 0; i < plane; ++i) {
              const double gv = g[base + i];
              sg += gv;
              sgx += gv * (x[base + i] - mu) * is;
            }
          }
          if (sink.needs(1)) sink.grad(1)[ci] += sgx;
          if (sink.needs(2)) sink.grad(2)[ci] += sg;
          if (sink.needs(0)) {
            auto gx = sink.grad(0);
            const double ga_is = gam[ci] * is;
            if (train) {
              const double inv_m = 1.0 / static_cast<double>(m);
              for (int ni = 0; ni < n; ++ni) {
                const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) {
                  const double xh = (x[base + i] - mu) * is;
                  gx[base + i] += ga_is * (g[base + i] - sg * inv_m - xh * sgx * inv_m);
                }
              }
            } else {
              for (int ni = 0; ni < n; ++ni) {
                const std::size_t base = (static_cast<std::size_t>(ni) * c + ci) * plane;
                for (std::size_t i = 0; i < plane; ++i) gx[base + i] += ga_is * g[base + i];
              }
            }
          }
        }
      });
}

Tensor leaky_relu(const Tensor& input, double slope) {
  std::vector<double> out(input.numel());
  const auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] >= 0.0 ? x[i] : slope * x[i];
  return Tensor::make_op("leaky_relu", input.shape(), std::move(out), {input},
                         [slope](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           const auto x = sink.input_data(0);
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[i] += x[i] >= 0.0 ? g[i] : slope * g[i];
                         });
}

Tensor max_pool2d(const Tensor& input) {
  require_rank4(input, "max_pool2d");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = (h + 1) / 2, ow = (w + 1) / 2;  // odd edges replicate
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(n) * c * out_plane);
  std::vector<std::int32_t> argmax(out.size());
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t ibase = (static_cast<std::size_t>(ni) * c + ci) * plane;
      const std::size_t obase = (static_cast<std::size_t>(ni) * c + ci) * out_plane;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          double best = -std::numeric_limits<double>::infinity();
          std::int32_t best_idx = 0;
          // Row-major window order; first occurrence wins ties.
          for (int r = 0; r < 2; ++r) {
            const int iy = std::min(oy * 2 + r, h - 1);
            for (int s = 0; s < 2; ++s) {
              const int ix = std::min(ox * 2 + s, w - 1);
              const double v = x[ibase + static_cast<std::size_t>(iy) * w + ix];
              if (v > best) {
                best = v;
                best_idx = static_cast<std::int32_t>(iy * w + ix);
              }
            }
          }
          out[obase + static_cast<std::size_t>(oy) * ow + ox] = best;
          argmax[obase + static_cast<std::size_t>(oy) * ow + ox] = best_idx;
        }
      }
    }
  }
  return Tensor::make_op(
      "max_pool2d", {n, c, oh, ow}, std::move(out), {input},
      [n, c, plane, out_plane, argmax](std::span<const double> g, GradSink& sink) {
        if (!sink.needs(0)) return;
        auto gx = sink.grad(0);
        const std::size_t planes = static_cast<std::size_t>(n) * c;
        for (std::size_t p = 0; p < planes; ++p) {
          const std::size_t ibase = p * plane;
          const std::size_t obase = p * out_plane;
          for (std::size_t i = 0; i < out_plane; ++i) {
            gx[ibase + static_cast<std::size_t>(argmax[obase + i])] += g[obase + i];
          }
        }
      });
}

namespace {

struct LerpTap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

// align-corners = false: source = (o + 0.5) / 2 - 0.5, edges clamped.
std::vector<LerpTap> bilinear_taps(int in_extent) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(in_extent) * 2);
  for (int o = 0; o < in_extent * 2; ++o) {
    const double src = (o + 0.5) / 2.0 - 0.5;
    const double f = std::floor(src);
    const double frac = src - f;
    const int i0 = std::clamp(static_cast<int>(f), 0, in_extent - 1);
    const int i1 = std::clamp(static_cast<int>(f) + 1, 0, in_extent - 1);
    taps[o] = {i0, i1, frac};
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear2x(const Tensor& input) {
  require_rank4(input, "upsample_bilinear2x");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int oh = h * 2, ow = w * 2;
  const auto ytaps = bilinear_taps(h);
  const auto xtaps = bilinear_taps(w);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(n) * c * out_plane);
  const std::size_t planes = static_cast<std::size_t>(n) * c;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* ip = x.data() + p * plane;
    double* op = out.data() + p * out_plane;
    for (int oy = 0; oy < oh; ++oy) {
      const auto& ty = ytaps[oy];
      const double* row0 = ip + static_cast<std::size_t>(ty.i0) * w;
      const double* row1 = ip + static_cast<std::size_t>(ty.i1) * w;
      double* orow = op + static_cast<std::size_t>(oy) * ow;
      for (int ox = 0; ox < ow; ++ox) {
        const auto& tx = xtaps[ox];
        const double top = row0[tx.i0] * (1.0 - tx.w1) + row0[tx.i1] * tx.w1;
        const double bot = row1[tx.i0] * (1.0 - tx.w1) + row1[tx.i1] * tx.w1;
        orow[ox] = top * (1.0 - ty.w1) + bot * ty.w1;
      }
    }
  }
  return Tensor::make_op(
      "upsample_bilinear2x", {n, c, oh, ow}, std::move(out), {input},
      [planes, plane, out_plane, w, ow, oh, ytaps, xtaps](std::span<const double> g,
                                                          GradSink& sink) {
        if (!sink.needs(0)) return;
        auto gx = sink.grad(0);
        for (std::size_t p = 0; p < planes; ++p) {
          double* gp = gx.data() + p * plane;
          const double* gop = g.data() + p * out_plane;
          for (int oy = 0; oy < oh; ++oy) {
            const auto& ty = ytaps[oy];
            for (int ox = 0; ox < ow; ++ox) {
              const auto& tx = xtaps[ox];
              const double gv = gop[static_cast<std::size_t>(oy) * ow + ox];
              gp[static_cast<std::size_t>(ty.i0) * w + tx.i0] += gv * (1.0 - ty.w1) * (1.0 - tx.w1);
              gp[static_cast<std::size_t>(ty.i0) * w + tx.i1] += gv * (1.0 - ty.w1) * tx.w1;
              gp[static_cast<std::size_t>(ty.i1) * w + tx.i0] += gv * ty.w1 * (1.0 - tx.w1);
              gp[static_cast<std::size_t>(ty.i1) * w + tx.i1] += gv * ty.w1 * tx.w1;
            }
          }
        }
      });
}

Tensor sigmoid(const Tensor& input) {
  // Clamp keeps the output strictly inside (0,1) even for saturating inputs.
  static const double kHi = std::nextafter(1.0, 0.0);
  static const double kLo = std::numeric_limits<double>::min();
  std::vector<double> out(input.numel());
  const auto x = input.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    double s;
    if (v >= 0.0) {
      s = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      s = e / (1.0 + e);
    }
    out[i] = std::clamp(s, kLo, kHi);
  }
  auto saved = out;  // backward reads the activations
  return Tensor::make_op("sigmoid", input.shape(), std::move(out), {input},
                         [saved = std::move(saved)](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           auto gx = sink.grad(0);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                             const double s = saved[i];
                             gx[i] += g[i] * s * (1.0 - s);
                           }
                         });
}

namespace {

struct AxisView {
  std::size_t outer, axis, inner;
};

AxisView axis_view(const std::vector<int>& shape, int axis) {
  AxisView v{1, static_cast<std::size_t>(shape[static_cast<std::size_t>(axis)]), 1};
  for (int i = 0; i < axis; ++i) v.outer *= static_cast<std::size_t>(shape[static_cast<std::size_t>(i)]);
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    v.inner *= static_cast<std::size_t>(shape[i]);
  return v;
}

}  // namespace

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: at least one part required");
  if (axis < 1 || axis > 3) throw ShapeError("concat: axis must be 1, 2 or 3");
  const auto& first = parts.front().shape();
  if (first.size() != 4) throw ShapeError("concat: parts must be rank 4");
  std::vector<int> out_shape = first;
  int total = first[static_cast<std::size_t>(axis)];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const auto& s = parts[p].shape();
    if (s.size() != 4) throw ShapeError("concat: parts must be rank 4");
    for (int i = 0; i < 4; ++i) {
      if (i != axis && s[static_cast<std::size_t>(i)] != first[static_cast<std::size_t>(i)]) {
        throw ShapeError("concat: part extents differ outside the concat axis");
      }
    }
    total += s[static_cast<std::size_t>(axis)];
  }
  out_shape[static_cast<std::size_t>(axis)] = total;

  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(ov.outer * ov.axis * ov.inner);
  std::vector<std::size_t> offsets(parts.size());
  std::size_t axis_off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    offsets[p] = axis_off;
    const AxisView pv = axis_view(parts[p].shape(), axis);
    const auto pd = parts[p].data();
    for (std::size_t o = 0; o < pv.outer; ++o) {
      const double* src = pd.data() + o * pv.axis * pv.inner;
      double* dst = out.data() + (o * ov.axis + axis_off) * ov.inner;
      std::copy(src, src + pv.axis * pv.inner, dst);
    }
    axis_off += pv.axis;
  }

  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return Tensor::make_op(
      "concat", out_shape, std::move(out), std::move(inputs),
      [axis, ov, offsets](std::span<const double> g, GradSink& sink) {
        for (std::size_t p = 0; p < sink.inputs(); ++p) {
          if (!sink.needs(p)) continue;
          const AxisView pv = axis_view(sink.input_shape(p), axis);
          auto gp = sink.grad(p);
          for (std::size_t o = 0; o < pv.outer; ++o) {
            const double* src = g.data() + (o * ov.axis + offsets[p]) * ov.inner;
            double* dst = gp.data() + o * pv.axis * pv.inner;
            for (std::size_t i = 0; i < pv.axis * pv.inner; ++i) dst[i] += src[i];
          }
        }
      });
}

Tensor concat_channels(std::span<const Tensor> parts) { return concat(parts, 1); }

Tensor slice(const Tensor& input, int axis, int start, int len) {
  if (axis < 1 || axis > 3) throw ShapeError("slice: axis must be 1, 2 or 3");
  require_rank4(input, "slice");
  const int extent = input.dim(axis);
  if (start < 0 || len < 1 || start + len > extent) throw ShapeError("slice: range out of bounds");
  std::vector<int> out_shape = input.shape();
  out_shape[static_cast<std::size_t>(axis)] = len;
  const AxisView iv = axis_view(input.shape(), axis);
  const AxisView ov = axis_view(out_shape, axis);
  std::vector<double> out(ov.outer * ov.axis * ov.inner);
  const auto x = input.data();
  for (std::size_t o = 0; o < iv.outer; ++o) {
    const double* src = x.data() + (o * iv.axis + static_cast<std::size_t>(start)) * iv.inner;
    double* dst = out.data() + o * ov.axis * ov.inner;
    std::copy(src, src + ov.axis * ov.inner, dst);
  }
  return Tensor::make_op("slice", out_shape, std::move(out), {input},
                         [iv, ov, start](std::span<const double> g, GradSink& sink) {
                           if (!sink.needs(0)) return;
                           auto gx = sink.grad(0);
                           for (std::size_t o = 0; o < iv.outer; ++o) {
                             double* dst = gx.data() +
                                           (o * iv.axis + static_cast<std::size_t>(start)) * iv.inner;
                             const double* src = g.data() + o * ov.axis * ov.inner;
                             for (std::size_t i = 0; i < ov.axis * ov.inner; ++i) dst[i] += src[i];
                           }
                         });
}

Tensor channel_pool(const Tensor& input, ChannelPool mode) {
  require_rank4(input, "channel_pool");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto x = input.data();
  std::vector<double> out(static_cast<std::size_t>(n) * plane);
  std::vector<std::int32_t> argc;
  if (mode == ChannelPool::kMax) argc.assign(out.size(), 0);
  for (int ni = 0; ni < n; ++ni) {
    const std::size_t nbase = static_cast<std::size_t>(ni) * c * plane;
    double* orow = out.data() + static_cast<std::size_t>(ni) * plane;
    if (mode == ChannelPool::kAvg) {
      for (std::size_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (int ci = 0; ci < c; ++ci) s += x[nbase + static_cast<std::size_t>(ci) * plane + i];
        orow[i] = s / c;
      }
    } else {
      for (std::size_t i = 0; i < plane; ++i) {
        double best = x[nbase + i];
        std::int32_t bc = 0;
        for (int ci = 1; ci < c; ++ci) {
          const double v = x[nbase + static_cast<std::size_t>(ci) * plane + i];
          if (v > best) {
            best = v;
            bc = ci;
          }
        }
        orow[i] = best;
        argc[static_cast<std::size_t>(ni) * plane + i] = bc;
      }
    }
  }
  const bool is_avg = mode == ChannelPool::kAvg;
  return Tensor::make_op(
      "channel_pool", {n, 1, h, w}, std::move(out), {input},
      [n, c, plane, is_avg, argc = std::move(argc)](std::span<const double> g, GradSink& sink) {
        if (!sink.needs(0)) return;
        auto gx = sink.grad(0);
        for (int ni = 0; ni < n; ++ni) {
          const std::size_t nbase = static_cast<std::size_t>(ni) * c * plane;
          const double* grow = g.data() + static_cast<std::size_t>(ni) * plane;
          if (is_avg) {
            const double inv_c = 1.0 / c;
            for (int ci = 0; ci < c; ++ci) {
              double* gp = gx.data() + nbase + static_cast<std::size_t>(ci) * plane;
              for (std::size_t i = 0; i < plane; ++i) gp[i] += grow[i] * inv_c;
            }
          } else {
            for (std::size_t i = 0; i < plane; ++i) {
              const std::size_t ci =
                  static_cast<std::size_t>(argc[static_cast<std::size_t>(ni) * plane + i]);
              gx[nbase + ci * plane + i] += grow[i];
            }
          }
        }
      });
}

Tensor interleave_channels(const Tensor& a, const Tensor& b) {
  require_rank4(a, "interleave_channels");
  if (a.shape() != b.shape()) throw ShapeError("interleave_channels: shapes must match");
  const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const auto ad = a.data();
  const auto bd = b.data();
  std::vector<double> out(a.numel() * 2);
  for (int ni = 0; ni < n; ++ni) {
    for (int ci = 0; ci < c; ++ci) {
      const std::size_t src = (static_cast<std::size_t>(ni) * c + ci) * plane;
      const std::size_t dst = (static_cast<std::size_t>(ni) * 2 * c + 2 * ci) * plane;
      std::copy(ad.begin() + src, ad.begin() + src + plane, out.begin() + dst);
      std::copy(bd.begin() + src, bd.begin() + src + plane, out.begin() + dst + plane);
    }
  }
  return Tensor::make_op(
      "interleave_channels", {n, 2 * c, h, w}, std::move(out), {a, b},
      [n, c, plane](std::span<const double> g, GradSink& sink) {
        for (std::size_t which = 0; which < 2; ++which) {
          if (!sink.needs(which)) continue;
          auto gp = sink.grad(which);
          for (int ni = 0; ni < n; ++ni) {
            for (int ci = 0; ci < c; ++ci) {
              const std::size_t dst = (static_cast<std::size_t>(ni) * c + ci) * plane;
              const std::size_t src =
                  (static_cast<std::size_t>(ni) * 2 * c + 2 * ci + which) * plane;
              for (std::size_t i = 0; i < plane; ++i) gp[dst + i] += g[src + i];
            }
          }
        }
      });
}

}  // namespace hpcf
