#include "hpcf/metrics.hpp"

#include <cstdio>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace hpcf {

ConfusionCounts confusion(const ChangeMap& pred, const ChangeMap& gt) {
  if (pred.h != gt.h || pred.w != gt.w) throw ShapeError("confusion: map extents differ");
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.labels.size(); ++i) {
    const bool p = pred.labels[i] != 0;
    const bool g = gt.labels[i] != 0;
    if (p && g) ++c.tp;
    else if (p && !g) ++c.fp;
    else if (!p && g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

namespace {

double ratio0(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

MetricsReport f_score(const ConfusionCounts& counts, double beta) {
  if (beta <= 0) throw ShapeError("f_score: beta must be positive");
  MetricsReport r;
  r.beta = beta;
  r.counts = counts;
  r.precision = ratio0(counts.tp, counts.tp + counts.fp);
  r.recall = ratio0(counts.tp, counts.tp + counts.fn);
  const double b2 = beta * beta;
  const double den = b2 * r.precision + r.recall;
  r.f_score = den == 0.0 ? 0.0 : (b2 + 1.0) * r.precision * r.recall / den;
  return r;
}

MetricsReport evaluate(ChangeDetector& model, std::span<const LoadedSample> samples,
                       int batch_size, double beta) {
  if (samples.empty()) throw ConfigError("evaluate: empty split");
  if (batch_size < 1) throw ConfigError("evaluate: batch_size must be >= 1");
  ConfusionCounts total;
  std::vector<MetricsReport::PerImage> per_image;
  per_image.reserve(samples.size());
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < samples.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
    indices.resize(end - start);
    std::iota(indices.begin(), indices.end(), start);
    auto [t0, t1] = stack_batch(samples, indices);
    const auto preds = model.predict_change_map(t0, t1);
    for (std::size_t bi = 0; bi < preds.size(); ++bi) {
      const auto& sample = samples[start + bi];
      MetricsReport::PerImage pi;
      pi.id = sample.id;
      pi.counts = confusion(preds[bi], sample.gt);
      const MetricsReport single = f_score(pi.counts, beta);
      pi.precision = single.precision;
      pi.recall = single.recall;
      pi.f_score = single.f_score;
      total += pi.counts;
      per_image.push_back(std::move(pi));
    }
  }
  MetricsReport report = f_score(total, beta);
  report.per_image = std::move(per_image);
  return report;
}

namespace {

void write_row(std::ostream& os, const std::string& id, const ConfusionCounts& c, double p,
               double r, double f) {
  char row[256];
  std::snprintf(row, sizeof(row), "%s\t%.17g\t%.17g\t%.17g\t%llu\t%llu\t%llu\t%llu\n", id.c_str(),
                p, r, f, static_cast<unsigned long long>(c.tp), static_cast<unsigned long long>(c.fp),
                static_cast<unsigned long long>(c.fn), static_cast<unsigned long long>(c.tn));
  os << row;
}

}  // namespace

void write_report(const MetricsReport& report, std::ostream& os) {
  os << "id\tprecision\trecall\tf_score\ttp\tfp\tfn\ttn\n";
  for (const auto& pi : report.per_image) {
    write_row(os, pi.id, pi.counts, pi.precision, pi.recall, pi.f_score);
  }
  write_row(os, "aggregate", report.counts, report.precision, report.recall, report.f_score);
}

MetricsReport parse_report(std::istream& is) {
  MetricsReport report;
  std::string line;
  if (!std::getline(is, line)) throw IoError("parse_report: empty report");
  bool saw_aggregate = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string id;
    MetricsReport::PerImage pi;
    if (!(ls >> id >> pi.precision >> pi.recall >> pi.f_score >> pi.counts.tp >> pi.counts.fp >>
          pi.counts.fn >> pi.counts.tn)) {
      throw IoError("parse_report: malformed row '" + line + "'");
    }
    if (id == "aggregate") {
      report.precision = pi.precision;
      report.recall = pi.recall;
      report.f_score = pi.f_score;
      report.counts = pi.counts;
      saw_aggregate = true;
    } else {
      pi.id = id;
      report.per_image.push_back(std::move(pi));
    }
  }
  if (!saw_aggregate) throw IoError("parse_report: missing aggregate row");
  return report;
}

std::string format_report_table(const MetricsReport& report) {
  std::ostringstream os;
  char row[160];
  os << "image                 precision   recall  f_score\n";
  for (const auto& pi : report.per_image) {
    std::snprintf(row, sizeof(row), "%-20s  %9.4f %8.4f %8.4f\n", pi.id.c_str(), pi.precision,
                  pi.recall, pi.f_score);
    os << row;
  }
  std::snprintf(row, sizeof(row), "%-20s  %9.4f %8.4f %8.4f   (beta=%g, %llu px)\n", "aggregate",
                report.precision, report.recall, report.f_score, report.beta,
                static_cast<unsigned long long>(report.counts.total()));
  os << row;
  return os.str();
}

}  // namespace hpcf
