#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "renetseg/tensor.hpp"

namespace renetseg {

struct ConfusionCounts {
  std::uint64_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::uint64_t total() const { return tp + tn + fp + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp; tn += o.tn; fp += o.fp; fn += o.fn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

/// Accuracy, sensitivity, specificity, Dice and Jaccard, in that order.
struct MetricsReport {
  double ac = 0, se = 0, sp = 0, di = 0, ja = 0;

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Both masks hold only 0 and 1 and have equal shapes.
ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt);

/// A metric whose denominator is zero is 1.0. Throws for an empty count.
MetricsReport metrics_from_counts(const ConfusionCounts& c);

struct DatasetEvaluation {
  MetricsReport macro;  // unweighted mean of per-image reports
  MetricsReport micro;  // report of the summed counts
  std::vector<MetricsReport> per_image;
  ConfusionCounts pooled;
};

DatasetEvaluation evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs);

/// Plain-text table with columns AC SE SP DI JA.
std::string format_report(const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// One "label.metric=value" line per metric, six decimals.
std::string format_key_values(const std::vector<std::pair<std::string, MetricsReport>>& rows);

/// Shortest of 2 or 3 decimals that represents the value at 3 decimals.
std::string format_metric(double value);

}  // namespace renetseg
