#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "isnet/checkpoint.hpp"
#include "isnet/data.hpp"
#include "isnet/fusion.hpp"
#include "isnet/metrics.hpp"

namespace isnet {

struct TrainConfig {
  double lr = 0.01;
  double weight_decay = 0.0005;
  double momentum = 0.9;
  std::size_t batch = 8;
  std::size_t iterations = 2000;
  std::size_t crop = 64;
  bool augment = true;
  std::size_t eval_interval = 0;  // 0: evaluate once, after the last step
  std::size_t log_interval = 1;
  std::size_t checkpoint_interval = 0;  // 0: final checkpoint only
  std::string output_dir;               // empty: nothing written
  std::string data_dir;                 // empty: generate the dataset in memory
  Precision precision = Precision::f32;
  // Ablation only.
  std::size_t seeds = 3;
  std::size_t threads = 0;  // 0: hardware concurrency
  ModelConfig model;        // seed, variant, alpha, C, K, ...
  DatasetSpec dataset;

  std::uint64_t seed() const { return model.seed; }
  void validate() const;
};

// `key = value` lines, `#` comments, blank lines ignored. Unknown keys,
// duplicate keys and malformed values are ConfigErrors naming the line.
TrainConfig parse_config(std::string_view text);
TrainConfig load_config(const std::filesystem::path& path);
// Canonical text form; parse_config(format_config(c)) reproduces c.
std::string format_config(const TrainConfig& c);

// base * (1 - iter/total)^0.9; UsageError unless iter <= total, total >= 1.
double poly_lr(double base, std::size_t iter, std::size_t total);

// v <- momentum*v + grad + wd*param (wd only when param.decay);
// param <- param - lr*v. DimensionError on shape mismatch.
template <typename T>
void sgd_step(Parameter<T>& param, Tensor<T>& velocity, double lr, double momentum, double weight_decay);

struct StepResult {
  std::size_t iteration = 0;  // completed updates after this step
  double loss = 0;
  double lr = 0;
};

// One training run's state: model, momentum buffers and the step counter.
// The randomness of step t is a pure function of (seed, t).
template <typename T>
class Trainer {
 public:
  Trainer(const TrainConfig& config, std::vector<Sample> train_set);

  StepResult step();
  std::size_t iteration() const { return iteration_; }
  bool done() const { return iteration_ >= config_.iterations; }

  IsNet<T>& model() { return model_; }
  const TrainConfig& config() const { return config_; }

  // Checkpoint records: parameters and buffers under their own names,
  // momentum buffers as "momentum/<name>", and "meta/..." records.
  std::vector<NamedTensor> state();
  // ConfigError when the checkpoint belongs to a different model or seed.
  void restore(const std::vector<NamedTensor>& records);

 private:
  TrainConfig config_;
  std::vector<Sample> train_;
  IsNet<T> model_;
  std::vector<Parameter<T>*> trainable_;
  std::vector<Tensor<T>> velocity_;
  std::size_t iteration_ = 0;
};

// Records describing the architecture, so a checkpoint is self-contained.
std::vector<NamedTensor> model_meta(const ModelConfig& m);
ModelConfig model_from_checkpoint(const std::vector<NamedTensor>& records);
// Copies parameters/buffers by name. FormatError for a missing record,
// ConfigError for an extent mismatch.
template <typename T>
void load_parameters(IsNet<T>& model, const std::vector<NamedTensor>& records);

// Single-scale evaluation at native sample size with inference-mode
// normalization. ConfigError when sample and model class counts differ.
template <typename T>
IouReport evaluate(IsNet<T>& model, const std::vector<Sample>& samples, std::size_t batch = 8);

struct LogRow {
  std::size_t iteration = 0;
  double loss = 0;
  double lr = 0;
  std::optional<double> miou;
};

std::string format_log_row(const LogRow& row, Precision precision);

struct TrainResult {
  std::vector<LogRow> log;
  std::optional<IouReport> final_report;
  std::vector<NamedTensor> checkpoint;
};

struct Datasets {
  std::vector<Sample> train, val;
};
// From config.data_dir when set (DataError if missing), otherwise generated.
Datasets load_datasets(const TrainConfig& config);

// Full loop with periodic evaluation on `data.val`. Log rows are streamed to
// `log` as they are produced. NumericError on a non-finite loss.
TrainResult train(const TrainConfig& config, const Datasets& data, std::ostream* log = nullptr,
                  const std::vector<NamedTensor>* resume = nullptr);

struct AblationRow {
  Variant variant;
  std::vector<double> miou;  // one per seed
  double median = 0;
  double reference = 0;  // published value, context only
};

// Trains all four variants over `config.seeds` consecutive model seeds on
// one shared dataset; rows in baseline, ilcm, slcm, isnet order.
std::vector<AblationRow> ablation(const TrainConfig& config, std::ostream* progress = nullptr);
std::string format_ablation(const std::vector<AblationRow>& rows);

inline constexpr double kPublishedAblation[4] = {36.96, 42.50, 42.89, 44.09};

}  // namespace isnet
