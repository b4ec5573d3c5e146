#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "hpcf/data.hpp"
#include "hpcf/model.hpp"

namespace hpcf {

/// Per-batch class weights: each class is weighted by the other class's pixel
/// frequency, so the rare class gets the larger weight. w0 + w1 == 1.
struct LossWeights {
  double w0 = 0.5;  // unchanged class
  double w1 = 0.5;  // changed class
  std::uint64_t unchanged_pixels = 0;
  std::uint64_t changed_pixels = 0;
};

LossWeights class_weights(std::span<const ChangeMap> labels);

/// Mean over all pixels of -w_y * log(softmax(logits)_y), natural log,
/// probabilities floored before the log. logits shape (n,2,h,w).
Tensor weighted_ce_loss(const Tensor& logits, std::span<const ChangeMap> labels,
                        const LossWeights& weights, double prob_floor = 1e-12);

struct TrainConfig {
  int batch_size = 8;
  double lr = 1e-2;
  double momentum = 0.95;
  double weight_decay = 1.25e-4;
  int epochs = 200;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;  // additionally save every N epochs; 0 = final only
  double stop_at_f1 = 0.0;   // stop once the validation F1 reaches this; 0 = off

  void validate() const;
};

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
/// Momentum buffers persist across steps. Throws TrainError when a learnable
/// parameter has no gradient.
void sgd_step(ParamRegistry& params, const TrainConfig& cfg);

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double val_precision = 0.0;
  double val_recall = 0.0;
  double val_f1 = 0.0;
};

struct TrainResult {
  std::vector<EpochRecord> log;
  int steps = 0;
  std::filesystem::path checkpoint_path;
  std::filesystem::path log_path;
};

/// Seeded-shuffle mini-batch SGD over `train_set`. Validation runs each epoch
/// on `val_set` (falling back to the training set when empty). Writes the
/// final checkpoint and a TSV epoch log under out_dir; bit-reproducible from
/// (seed, config, data).
TrainResult train(ChangeDetector& model, const TrainConfig& cfg,
                  std::span<const LoadedSample> train_set, std::span<const LoadedSample> val_set,
                  const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

/// Stacks samples [first, first+count) into batch tensors (count,3,h,w).
std::pair<Tensor, Tensor> stack_batch(std::span<const LoadedSample> samples,
                                      std::span<const std::size_t> indices);

}  // namespace hpcf
