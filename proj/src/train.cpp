#include "hpcf/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>

#include "hpcf/checkpoint.hpp"
#include "hpcf/metrics.hpp"

namespace hpcf {

LossWeights class_weights(std::span<const ChangeMap> labels) {
  LossWeights w;
  for (const auto& m : labels) {
    const std::uint64_t changed = m.count_changed();
    w.changed_pixels += changed;
    w.unchanged_pixels += m.labels.size() - changed;
  }
  const std::uint64_t total = w.changed_pixels + w.unchanged_pixels;
  if (total == 0) throw ShapeError("class_weights: at least one pixel required");
  w.w1 = static_cast<double>(w.unchanged_pixels) / static_cast<double>(total);
  w.w0 = static_cast<double>(w.changed_pixels) / static_cast<double>(total);
  return w;
}

Tensor weighted_ce_loss(const Tensor& logits, std::span<const ChangeMap> labels,
                        const LossWeights& weights, double prob_floor) {
  if (logits.rank() != 4 || logits.dim(1) != 2) {
    throw ShapeError("weighted_ce_loss: logits must have shape (n,2,h,w)");
  }
  const int n = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  if (labels.size() != static_cast<std::size_t>(n)) {
    throw ShapeError("weighted_ce_loss: label count does not match batch");
  }
  for (const auto& m : labels) {
    if (m.h != h || m.w != w) throw ShapeError("weighted_ce_loss: label extents mismatch");
  }
  if (weights.w0 < 0 || weights.w1 < 0) throw ShapeError("weighted_ce_loss: negative weight");

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const std::size_t pixels = static_cast<std::size_t>(n) * plane;
  const double inv_pixels = 1.0 / static_cast<double>(pixels);
  const auto x = logits.data();

  // Flatten labels once; the backward rule reuses them.
  std::vector<std::uint8_t> flat(pixels);
  for (int ni = 0; ni < n; ++ni) {
    std::copy(labels[static_cast<std::size_t>(ni)].labels.begin(),
              labels[static_cast<std::size_t>(ni)].labels.end(),
              flat.begin() + static_cast<std::size_t>(ni) * plane);
  }

  double loss = 0.0;
  for (std::size_t ni = 0; ni < static_cast<std::size_t>(n); ++ni) {
    const double* l0 = x.data() + ni * 2 * plane;
    const double* l1 = l0 + plane;
    const std::uint8_t* lab = flat.data() + ni * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      const double m = std::max(l0[i], l1[i]);
      const double z0 = std::exp(l0[i] - m);
      const double z1 = std::exp(l1[i] - m);
      const double py = (lab[i] ? z1 : z0) / (z0 + z1);
      const double wy = lab[i] ? weights.w1 : weights.w0;
      loss -= wy * std::log(std::max(py, prob_floor));
    }
  }
  loss *= inv_pixels;

  const double w0 = weights.w0, w1 = weights.w1;
  return Tensor::make_op(
      "weighted_ce_loss", {1}, {loss}, {logits},
      [n, plane, flat = std::move(flat), w0, w1, inv_pixels](std::span<const double> g,
                                                             GradSink& sink) {
        if (!sink.needs(0)) return;
        const auto x = sink.input_data(0);
        auto gx = sink.grad(0);
        const double scale = g[0] * inv_pixels;
        for (std::size_t ni = 0; ni < static_cast<std::size_t>(n); ++ni) {
          const double* l0 = x.data() + ni * 2 * plane;
          const double* l1 = l0 + plane;
          double* g0 = gx.data() + ni * 2 * plane;
          double* g1 = g0 + plane;
          const std::uint8_t* lab = flat.data() + ni * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double m = std::max(l0[i], l1[i]);
            const double z0 = std::exp(l0[i] - m);
            const double z1 = std::exp(l1[i] - m);
            const double p1 = z1 / (z0 + z1);
            const double wy = lab[i] ? w1 : w0;
            // d(-wy*log p_y)/dlogit_j = wy * (p_j - [j == y])
            const double p0 = 1.0 - p1;
            const double y1 = lab[i] ? 1.0 : 0.0;
            g0[i] += scale * wy * (p0 - (1.0 - y1));
            g1[i] += scale * wy * (p1 - y1);
          }
        }
      });
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (lr <= 0) throw ConfigError("lr must be positive");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
  if (weight_decay < 0) throw ConfigError("weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
  if (stop_at_f1 < 0 || stop_at_f1 > 1) throw ConfigError("stop_at_f1 must be in [0,1]");
}

void sgd_step(ParamRegistry& params, const TrainConfig& cfg) {
  for (auto& e : params.entries()) {
    if (!e.learnable) continue;
    if (!e.value.has_grad()) throw TrainError("sgd_step: no gradient for parameter " + e.name);
    auto p = e.value.raw_data();
    const auto g = e.value.grad();
    if (e.momentum.empty()) e.momentum.assign(p.size(), 0.0);
    for (std::size_t i = 0; i < p.size(); ++i) {
      e.momentum[i] = cfg.momentum * e.momentum[i] + g[i] + cfg.weight_decay * p[i];
      p[i] -= cfg.lr * e.momentum[i];
    }
  }
}

std::pair<Tensor, Tensor> stack_batch(std::span<const LoadedSample> samples,
                                      std::span<const std::size_t> indices) {
  if (indices.empty()) throw ShapeError("stack_batch: empty batch");
  const auto& first = samples[indices[0]];
  const int h = first.t0.dim(1), w = first.t0.dim(2);
  const int b = static_cast<int>(indices.size());
  Tensor t0 = Tensor::zeros({b, 3, h, w});
  Tensor t1 = Tensor::zeros({b, 3, h, w});
  auto d0 = t0.raw_data();
  auto d1 = t1.raw_data();
  const std::size_t sample_elems = static_cast<std::size_t>(3) * h * w;
  for (int bi = 0; bi < b; ++bi) {
    const auto& s = samples[indices[static_cast<std::size_t>(bi)]];
    if (s.t0.dim(1) != h || s.t0.dim(2) != w) {
      throw ShapeError("stack_batch: samples must share spatial extents");
    }
    std::copy(s.t0.data().begin(), s.t0.data().end(),
              d0.begin() + static_cast<std::size_t>(bi) * sample_elems);
    std::copy(s.t1.data().begin(), s.t1.data().end(),
              d1.begin() + static_cast<std::size_t>(bi) * sample_elems);
  }
  return {t0, t1};
}

TrainResult train(ChangeDetector& model, const TrainConfig& cfg,
                  std::span<const LoadedSample> train_set, std::span<const LoadedSample> val_set,
                  const std::filesystem::path& out_dir, std::ostream* progress) {
  cfg.validate();
  if (train_set.empty()) throw ConfigError("train: dataset is empty");
  std::filesystem::create_directories(out_dir);

  TrainResult result;
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng = rng.stream("shuffle.epoch" + std::to_string(epoch));
    shuffle_rng.shuffle(order);

    double loss_sum = 0.0;
    int steps = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::span<const std::size_t> batch_idx{order.data() + start, end - start};
      auto [t0, t1] = stack_batch(train_set, batch_idx);
      std::vector<ChangeMap> labels;
      labels.reserve(batch_idx.size());
      for (std::size_t idx : batch_idx) labels.push_back(train_set[idx].gt);

      const LossWeights weights = class_weights(labels);
      Tensor logits = model.forward(t0, t1, Mode::kTrain, nullptr);
      Tensor loss = weighted_ce_loss(logits, labels, weights);
      loss.backward();
      sgd_step(model.params(), cfg);
      model.params().zero_grad();
      loss_sum += loss.value();
      ++steps;
    }
    result.steps += steps;

    const auto val = val_set.empty() ? train_set : val_set;
    const MetricsReport report = evaluate(model, val, cfg.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_loss = loss_sum / steps;
    rec.val_precision = report.precision;
    rec.val_recall = report.recall;
    rec.val_f1 = report.f_score;
    result.log.push_back(rec);
    if (progress) {
      char line[160];
      std::snprintf(line, sizeof(line),
                    "epoch %4d  loss %.6f  val_p %.4f  val_r %.4f  val_f1 %.4f\n", epoch,
                    rec.mean_loss, rec.val_precision, rec.val_recall, rec.val_f1);
      (*progress) << line << std::flush;
    }

    if (cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_epoch_%04d.hpcf", epoch);
      save_checkpoint(out_dir / name, model);
    }
    if (cfg.stop_at_f1 > 0 && rec.val_f1 >= cfg.stop_at_f1) break;
  }

  result.checkpoint_path = out_dir / "model.hpcf";
  save_checkpoint(result.checkpoint_path, model);

  result.log_path = out_dir / "train_log.tsv";
  std::ofstream log_file(result.log_path);
  if (!log_file) throw IoError("train: cannot write " + result.log_path.string());
  log_file << "epoch\tmean_loss\tval_precision\tval_recall\tval_f1\n";
  char row[160];
  for (const auto& r : result.log) {
    std::snprintf(row, sizeof(row), "%d\t%.17g\t%.17g\t%.17g\t%.17g\n", r.epoch, r.mean_loss,
                  r.val_precision, r.val_recall, r.val_f1);
    log_file << row;
  }
  if (!log_file.good()) throw IoError("train: failed writing the epoch log");
  return result;
}

}  // namespace hpcf
