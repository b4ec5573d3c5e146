#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "hpcf/change_map.hpp"
#include "hpcf/data.hpp"
#include "hpcf/model.hpp"

namespace hpcf {

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const { return tp + fp + fn + tn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(const ChangeMap& pred, const ChangeMap& gt);

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f_score = 0.0;
  double beta = 1.0;
  ConfusionCounts counts;  // aggregate over all images (micro-averaging)

  struct PerImage {
    std::string id;
    ConfusionCounts counts;
    double precision = 0.0;
    double recall = 0.0;
    double f_score = 0.0;
  };
  std::vector<PerImage> per_image;
};

/// Precision = TP/(TP+FP), Recall = TP/(TP+FN),
/// F = (beta^2+1)*P*R / (beta^2*P + R); every 0/0 is defined as 0.
MetricsReport f_score(const ConfusionCounts& counts, double beta = 1.0);

/// Batched prediction over samples; counts are summed over all images before
/// the aggregate score (micro-averaging), per-image scores also reported.
MetricsReport evaluate(ChangeDetector& model, std::span<const LoadedSample> samples,
                       int batch_size = 8, double beta = 1.0);

/// Structured text: one tab-separated record per image plus the aggregate.
void write_report(const MetricsReport& report, std::ostream& os);
MetricsReport parse_report(std::istream& is);
std::string format_report_table(const MetricsReport& report);

}  // namespace hpcf
