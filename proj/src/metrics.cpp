#include "isnet/metrics.hpp"

#include <cstdio>
#include <numeric>

#include "isnet/error.hpp"
#include "isnet/ops.hpp"

namespace isnet {

void ConfusionMatrix::add(std::size_t gt, std::size_t pred, std::uint64_t n) {
  if (gt >= classes_ || pred >= classes_)
    throw DataError("confusion entry (" + std::to_string(gt) + "," + std::to_string(pred) + ") out of range for " +
                    std::to_string(classes_) + " classes");
  counts_[gt * classes_ + pred] += n;
}

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_)
    throw DimensionError("cannot merge confusion matrices over " + std::to_string(classes_) + " and " +
                         std::to_string(other.classes_) + " classes");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  return *this;
}

void accumulate_confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gt,
                          ConfusionMatrix& cm) {
  if (pred.size() != gt.size())
    throw DimensionError("accumulate_confusion: " + std::to_string(pred.size()) + " predictions vs " +
                         std::to_string(gt.size()) + " labels");
  for (std::size_t i = 0; i < gt.size(); ++i)
    if (gt[i] != kIgnoreLabel) cm.add(gt[i], pred[i]);
}

IouReport miou(const ConfusionMatrix& cm) {
  const std::size_t k = cm.classes();
  IouReport r;
  r.per_class.resize(k);
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < k; ++c) {
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm.at(c, j);
      col += cm.at(j, c);
    }
    const std::uint64_t tp = cm.at(c, c);
    const std::uint64_t denom = row + col - tp;  // TP + FN + FP
    if (denom == 0) continue;
    r.per_class[c] = static_cast<double>(tp) / static_cast<double>(denom);
    sum += *r.per_class[c];
    ++present;
  }
  if (present == 0) throw MetricError("mIoU undefined: no class occurs in ground truth or prediction");
  r.mean = sum / static_cast<double>(present);
  return r;
}

namespace {

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string format_report(const IouReport& report) {
  std::string out;
  for (std::size_t c = 0; c < report.per_class.size(); ++c)
    out += "class " + std::to_string(c) + ": " + (report.per_class[c] ? fixed(*report.per_class[c]) : "absent") + "\n";
  out += "mIoU: " + fixed(report.mean) + "\n";
  return out;
}

std::string format_report_tsv(const IouReport& report) {
  std::string out;
  for (std::size_t c = 0; c < report.per_class.size(); ++c)
    out += std::to_string(c) + "\t" + (report.per_class[c] ? fixed(*report.per_class[c]) : "nan") + "\n";
  out += "mIoU\t" + fixed(report.mean) + "\n";
  return out;
}

template <typename T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& logits) {
  const Planes p = as_planes(logits.shape(), "argmax_labels");
  if (p.channels > 255) throw DimensionError("argmax_labels supports at most 255 classes");
  const std::size_t area = p.area();
  std::vector<std::uint8_t> out(p.batch * area);
  for (std::size_t b = 0; b < p.batch; ++b) {
    const T* base = logits.ptr() + b * p.per_sample();
    for (std::size_t i = 0; i < area; ++i) {
      T best = base[i];
      std::uint8_t arg = 0;
      for (std::size_t c = 1; c < p.channels; ++c)
        if (base[c * area + i] > best) {
          best = base[c * area + i];
          arg = static_cast<std::uint8_t>(c);
        }
      out[b * area + i] = arg;
    }
  }
  return out;
}

template std::vector<std::uint8_t> argmax_labels<float>(const Tensor<float>&);
template std::vector<std::uint8_t> argmax_labels<double>(const Tensor<double>&);

}  // namespace isnet
