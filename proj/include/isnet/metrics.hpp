#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "isnet/tensor.hpp"

namespace isnet {

// K x K pixel counts, rows = ground truth, columns = prediction.
class ConfusionMatrix {
 public:
  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {}

  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t gt, std::size_t pred) const { return counts_[gt * classes_ + pred]; }
  void add(std::size_t gt, std::size_t pred, std::uint64_t n = 1);
  std::uint64_t total() const;
  ConfusionMatrix& merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_ = 0;
  std::vector<std::uint64_t> counts_;
};

// Adds one count per pixel whose ground truth is not the ignore label.
// DimensionError on length mismatch, DataError on out-of-range labels.
void accumulate_confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                          ConfusionMatrix& cm);

struct IouReport {
  std::vector<std::optional<double>> per_class;  // nullopt: absent from gt and prediction
  double mean = 0;
};

// MetricError when every class is absent.
IouReport miou(const ConfusionMatrix& cm);

// "class <k>: <iou>" lines and a final "mIoU: <mean>" line.
std::string format_report(const IouReport& report);
// class_id<TAB>iou rows, then mIoU<TAB>value. Absent classes print "nan".
std::string format_report_tsv(const IouReport& report);

// Per-pixel argmax over the class axis of [B,K,H,W] or [K,H,W] logits, ties
// to the smaller index.
template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits);

}  // namespace isnet
