#include "renetseg/metrics.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <sstream>

namespace renetseg {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

constexpr const char* kColumns[] = {"AC", "SE", "SP", "DI", "JA"};

std::array<double, 5> columns(const MetricsReport& r) { return {r.ac, r.se, r.sp, r.di, r.ja}; }

}  // namespace

ConfusionCounts confusion_counts(const Tensor& pred, const Tensor& gt) {
  if (pred.shape() != gt.shape()) {
    fail(Errc::invalid_input, "mask shapes differ: " + shape_string(pred.shape()) + " vs " +
                                  shape_string(gt.shape()));
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const float p = pred[i], g = gt[i];
    if ((p != 0.0f && p != 1.0f) || (g != 0.0f && g != 1.0f)) {
      fail(Errc::invalid_input, "masks must be binary");
    }
    const bool pp = p == 1.0f, gg = g == 1.0f;
    if (pp && gg) ++c.tp;
    else if (pp) ++c.fp;
    else if (gg) ++c.fn;
    else ++c.tn;
  }
  return c;
}

MetricsReport metrics_from_counts(const ConfusionCounts& c) {
  if (c.total() == 0) fail(Errc::invalid_input, "metrics of an empty comparison");
  return {ratio(c.tp + c.tn, c.total()), ratio(c.tp, c.tp + c.fn), ratio(c.tn, c.tn + c.fp),
          ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn), ratio(c.tp, c.tp + c.fp + c.fn)};
}

DatasetEvaluation evaluate_dataset(const std::vector<std::pair<Tensor, Tensor>>& pairs) {
  if (pairs.empty()) fail(Errc::data, "evaluate_dataset: no mask pairs");
  DatasetEvaluation ev;
  for (const auto& [pred, gt] : pairs) {
    const ConfusionCounts c = confusion_counts(pred, gt);
    ev.pooled += c;
    const MetricsReport r = metrics_from_counts(c);
    ev.per_image.push_back(r);
    ev.macro.ac += r.ac;
    ev.macro.se += r.se;
    ev.macro.sp += r.sp;
    ev.macro.di += r.di;
    ev.macro.ja += r.ja;
  }
  const double n = static_cast<double>(pairs.size());
  ev.macro = {ev.macro.ac / n, ev.macro.se / n, ev.macro.sp / n, ev.macro.di / n, ev.macro.ja / n};
  ev.micro = metrics_from_counts(ev.pooled);
  return ev;
}

std::string format_metric(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", value);
  std::string s = buf;
  if (s.back() == '0') s.pop_back();
  return s;
}

std::string format_report(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  std::size_t label_width = 5;
  for (const auto& [label, r] : rows) label_width = std::max(label_width, label.size());
  std::ostringstream out;
  auto pad = [](std::string s, std::size_t width) {
    s.resize(std::max(width, s.size()), ' ');
    return s;
  };
  out << pad("", label_width);
  for (const char* col : kColumns) out << "  " << pad(col, 6);
  out << '\n';
  for (const auto& [label, r] : rows) {
    out << pad(label, label_width);
    for (double v : columns(r)) out << "  " << pad(format_metric(v), 6);
    out << '\n';
  }
  std::string text = out.str(), cleaned;
  std::istringstream lines(text);
  for (std::string line; std::getline(lines, line);) {
    line.erase(line.find_last_not_of(' ') + 1);
    cleaned += line + '\n';
  }
  return cleaned;
}

std::string format_key_values(const std::vector<std::pair<std::string, MetricsReport>>& rows) {
  static constexpr const char* kKeys[] = {"ac", "se", "sp", "di", "ja"};
  std::string out;
  char buf[64];
  for (const auto& [label, r] : rows) {
    const auto values = columns(r);
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.6f", values[i]);
      out += label + "." + kKeys[i] + "=" + buf + "\n";
    }
  }
  return out;
}

}  // namespace renetseg
