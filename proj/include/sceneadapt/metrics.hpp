#pragma once

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

#include "sceneadapt/errors.hpp"
#include "sceneadapt/image.hpp"

namespace sceneadapt {

// counts[i * C + j]: pixels of true class i predicted as class j.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : c_(classes), n_(classes * classes, 0) {}

  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != rows.size()) throw UsageError("confusion matrix must be square");
      for (std::size_t j = 0; j < rows.size(); ++j) cm.n_[i * cm.c_ + j] = rows[i][j];
    }
    return cm;
  }

  std::size_t classes() const { return c_; }
  std::uint64_t operator()(std::size_t truth, std::size_t pred) const { return n_[truth * c_ + pred]; }
  std::uint64_t& operator()(std::size_t truth, std::size_t pred) { return n_[truth * c_ + pred]; }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (const auto v : n_) s += v;
    return s;
  }
  std::uint64_t row_sum(std::size_t i) const {
    std::uint64_t s = 0;
    for (std::size_t j = 0; j < c_; ++j) s += (*this)(i, j);
    return s;
  }
  std::uint64_t col_sum(std::size_t j) const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < c_; ++i) s += (*this)(i, j);
    return s;
  }

  void accumulate(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    if (pred.size() != truth.size())
      throw DataError("prediction has " + std::to_string(pred.size()) + " pixels, ground truth " +
                      std::to_string(truth.size()));
    for (std::size_t k = 0; k < pred.size(); ++k) {
      if (pred[k] >= c_ || truth[k] >= c_)
        throw DataError("class id out of range at pixel " + std::to_string(k) + " (classes=" + std::to_string(c_) + ")");
      ++n_[truth[k] * c_ + pred[k]];
    }
  }
  void accumulate(const LabelMask& pred, const LabelMask& truth) {
    if (pred.width != truth.width || pred.height != truth.height) throw DataError("mask shapes differ");
    accumulate(std::span<const std::uint8_t>(pred.data), std::span<const std::uint8_t>(truth.data));
  }

  void merge(const ConfusionMatrix& other) {
    if (other.c_ != c_) throw UsageError("merging confusion matrices of different class counts");
    for (std::size_t k = 0; k < n_.size(); ++k) n_[k] += other.n_[k];
  }

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t c_;
  std::vector<std::uint64_t> n_;
};

struct ClassMetric {
  double mean = 0.0;
  std::vector<std::optional<double>> per_class;  // nullopt: class excluded from the mean
};

// Mean over classes of n_ii / t_i; classes with no ground-truth pixels are excluded.
inline ClassMetric per_class_accuracy(const ConfusionMatrix& cm) {
  ClassMetric out;
  out.per_class.resize(cm.classes());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t t = cm.row_sum(i);
    if (t == 0) continue;
    out.per_class[i] = static_cast<double>(cm(i, i)) / static_cast<double>(t);
    sum += *out.per_class[i];
    ++counted;
  }
  if (counted == 0) throw DataError("per-class accuracy undefined: no ground-truth pixels");
  out.mean = sum / static_cast<double>(counted);
  return out;
}

// Mean over classes of n_ii / (t_i + sum_j n_ji - n_ii); classes absent from both
// ground truth and prediction are excluded, false-positive-only classes score 0.
inline ClassMetric mean_iou(const ConfusionMatrix& cm) {
  ClassMetric out;
  out.per_class.resize(cm.classes());
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < cm.classes(); ++i) {
    const std::uint64_t uni = cm.row_sum(i) + cm.col_sum(i) - cm(i, i);
    if (uni == 0) continue;
    out.per_class[i] = static_cast<double>(cm(i, i)) / static_cast<double>(uni);
    sum += *out.per_class[i];
    ++counted;
  }
  if (counted == 0) throw DataError("mean IoU undefined: confusion matrix is empty");
  out.mean = sum / static_cast<double>(counted);
  return out;
}

inline std::string format_metric(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

// class,c_acc,m_iou: an "Average" row followed by one row per class.
inline std::string metrics_csv(const std::vector<std::string>& names, const ConfusionMatrix& cm) {
  if (names.size() != cm.classes()) throw UsageError("class name count does not match the confusion matrix");
  const auto acc = per_class_accuracy(cm);
  const auto iou = mean_iou(cm);
  std::string out = "class,c_acc,m_iou\n";
  out += "Average," + format_metric(acc.mean) + "," + format_metric(iou.mean) + "\n";
  for (std::size_t i = 0; i < names.size(); ++i)
    out += names[i] + "," + format_metric(acc.per_class[i]) + "," + format_metric(iou.per_class[i]) + "\n";
  return out;
}

}  // namespace sceneadapt
