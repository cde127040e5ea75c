#include "isnet/train.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "isnet/error.hpp"
#include "isnet/random.hpp"

namespace isnet {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
  if (iterations < 1) throw ConfigError("iterations must be at least 1");
  if (crop == 0 || crop % 8) throw ConfigError("crop must be a positive multiple of 8");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(lr >= 0) || !(weight_decay >= 0) || !(momentum >= 0 && momentum < 1))
    throw ConfigError("need lr >= 0, weight_decay >= 0 and 0 <= momentum < 1");
  if (log_interval == 0) throw ConfigError("log_interval must be positive");
  if (seeds == 0) throw ConfigError("seeds must be positive");
  if (dataset.classes != model.classes) throw ConfigError("dataset and model class counts differ");
  model.validate();
  dataset.validate();
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N parse_number(const std::string& v) {
  N out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("malformed number '" + v + "'");
  return out;
}

double parse_double(const std::string& v) {
  // from_chars for double is missing in some standard libraries; strtod with
  // a full-consumption check is equivalent here.
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(d)) throw ConfigError("malformed number '" + v + "'");
  return d;
}

bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("malformed boolean '" + v + "' (true/false)");
}

Precision parse_precision(const std::string& v) {
  if (v == "f32" || v == "float32") return Precision::f32;
  if (v == "f64" || v == "float64") return Precision::f64;
  throw ConfigError("unknown precision '" + v + "' (f32 or f64)");
}

using Setter = std::function<void(TrainConfig&, const std::string&)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"lr", [](TrainConfig& c, const std::string& v) { c.lr = parse_double(v); }},
      {"weight_decay", [](TrainConfig& c, const std::string& v) { c.weight_decay = parse_double(v); }},
      {"momentum", [](TrainConfig& c, const std::string& v) { c.momentum = parse_double(v); }},
      {"batch", [](TrainConfig& c, const std::string& v) { c.batch = parse_number<std::size_t>(v); }},
      {"iterations", [](TrainConfig& c, const std::string& v) { c.iterations = parse_number<std::size_t>(v); }},
      {"crop", [](TrainConfig& c, const std::string& v) { c.crop = parse_number<std::size_t>(v); }},
      {"augment", [](TrainConfig& c, const std::string& v) { c.augment = parse_bool(v); }},
      {"eval_interval", [](TrainConfig& c, const std::string& v) { c.eval_interval = parse_number<std::size_t>(v); }},
      {"log_interval", [](TrainConfig& c, const std::string& v) { c.log_interval = parse_number<std::size_t>(v); }},
      {"checkpoint_interval",
       [](TrainConfig& c, const std::string& v) { c.checkpoint_interval = parse_number<std::size_t>(v); }},
      {"output_dir", [](TrainConfig& c, const std::string& v) { c.output_dir = v; }},
      {"data_dir", [](TrainConfig& c, const std::string& v) { c.data_dir = v; }},
      {"precision", [](TrainConfig& c, const std::string& v) { c.precision = parse_precision(v); }},
      {"seeds", [](TrainConfig& c, const std::string& v) { c.seeds = parse_number<std::size_t>(v); }},
      {"threads", [](TrainConfig& c, const std::string& v) { c.threads = parse_number<std::size_t>(v); }},
      {"seed", [](TrainConfig& c, const std::string& v) { c.model.seed = parse_number<std::uint64_t>(v); }},
      {"variant", [](TrainConfig& c, const std::string& v) { c.model.variant = parse_variant(v); }},
      {"alpha", [](TrainConfig& c, const std::string& v) { c.model.alpha = parse_double(v); }},
      {"channels", [](TrainConfig& c, const std::string& v) { c.model.channels = parse_number<std::size_t>(v); }},
      {"classes",
       [](TrainConfig& c, const std::string& v) { c.model.classes = c.dataset.classes = parse_number<std::size_t>(v); }},
      {"aux_hidden", [](TrainConfig& c, const std::string& v) { c.model.aux_hidden = parse_number<std::size_t>(v); }},
      {"dropout", [](TrainConfig& c, const std::string& v) { c.model.dropout = parse_double(v); }},
      {"norm", [](TrainConfig& c, const std::string& v) { c.model.norm = parse_bool(v); }},
      {"attention_cap",
       [](TrainConfig& c, const std::string& v) { c.model.attention_cap = parse_number<std::size_t>(v); }},
      {"dataset.seed", [](TrainConfig& c, const std::string& v) { c.dataset.seed = parse_number<std::uint64_t>(v); }},
      {"dataset.train_count",
       [](TrainConfig& c, const std::string& v) { c.dataset.train_count = parse_number<std::size_t>(v); }},
      {"dataset.val_count",
       [](TrainConfig& c, const std::string& v) { c.dataset.val_count = parse_number<std::size_t>(v); }},
      {"dataset.height", [](TrainConfig& c, const std::string& v) { c.dataset.height = parse_number<std::size_t>(v); }},
      {"dataset.width", [](TrainConfig& c, const std::string& v) { c.dataset.width = parse_number<std::size_t>(v); }},
      {"dataset.noise", [](TrainConfig& c, const std::string& v) { c.dataset.noise = parse_double(v); }},
      {"dataset.twin_gap", [](TrainConfig& c, const std::string& v) { c.dataset.twin_gap = parse_double(v); }},
      {"dataset.min_extent", [](TrainConfig& c, const std::string& v) { c.dataset.min_extent = parse_double(v); }},
      {"dataset.max_extent", [](TrainConfig& c, const std::string& v) { c.dataset.max_extent = parse_double(v); }},
  };
  return table;
}

// dataset.pair.<a>.<b> = p
bool parse_pair(TrainConfig& c, const std::string& key, const std::string& value) {
  constexpr std::string_view prefix = "dataset.pair.";
  if (key.rfind(prefix, 0) != 0) return false;
  const std::string rest = key.substr(prefix.size());
  const auto dot = rest.find('.');
  if (dot == std::string::npos) throw ConfigError("pair keys look like dataset.pair.<a>.<b>");
  PairProbability e;
  e.a = parse_number<std::uint16_t>(rest.substr(0, dot));
  e.b = parse_number<std::uint16_t>(rest.substr(dot + 1));
  if (e.a > e.b) std::swap(e.a, e.b);
  e.p = parse_double(value);
  c.dataset.pairs.push_back(e);
  return true;
}

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

TrainConfig parse_config(std::string_view text) {
  TrainConfig c;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = "config line " + std::to_string(line_no) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(std::string_view(body).substr(0, eq));
    const std::string value = trim(std::string_view(body).substr(eq + 1));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (auto [it, fresh] = seen.emplace(key, line_no); !fresh)
      throw ConfigError(where + "duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    try {
      if (parse_pair(c, key, value)) continue;
      const auto it = setters().find(key);
      if (it == setters().end()) throw ConfigError("unknown key '" + key + "'");
      it->second(c, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const TrainConfig& c) {
  std::string o;
  auto kv = [&](std::string_view k, const std::string& v) {
    o += k;
    o += " = ";
    o += v;
    o += '\n';
  };
  kv("lr", num(c.lr));
  kv("weight_decay", num(c.weight_decay));
  kv("momentum", num(c.momentum));
  kv("batch", std::to_string(c.batch));
  kv("iterations", std::to_string(c.iterations));
  kv("crop", std::to_string(c.crop));
  kv("augment", c.augment ? "true" : "false");
  kv("eval_interval", std::to_string(c.eval_interval));
  kv("log_interval", std::to_string(c.log_interval));
  kv("checkpoint_interval", std::to_string(c.checkpoint_interval));
  if (!c.output_dir.empty()) kv("output_dir", c.output_dir);
  if (!c.data_dir.empty()) kv("data_dir", c.data_dir);
  kv("precision", c.precision == Precision::f32 ? "f32" : "f64");
  kv("seeds", std::to_string(c.seeds));
  kv("threads", std::to_string(c.threads));
  kv("seed", std::to_string(c.model.seed));
  kv("variant", std::string(to_string(c.model.variant)));
  kv("alpha", num(c.model.alpha));
  kv("channels", std::to_string(c.model.channels));
  kv("classes", std::to_string(c.model.classes));
  kv("aux_hidden", std::to_string(c.model.aux_hidden));
  kv("dropout", num(c.model.dropout));
  kv("norm", c.model.norm ? "true" : "false");
  kv("attention_cap", std::to_string(c.model.attention_cap));
  kv("dataset.seed", std::to_string(c.dataset.seed));
  kv("dataset.train_count", std::to_string(c.dataset.train_count));
  kv("dataset.val_count", std::to_string(c.dataset.val_count));
  kv("dataset.height", std::to_string(c.dataset.height));
  kv("dataset.width", std::to_string(c.dataset.width));
  kv("dataset.noise", num(c.dataset.noise));
  kv("dataset.twin_gap", num(c.dataset.twin_gap));
  kv("dataset.min_extent", num(c.dataset.min_extent));
  kv("dataset.max_extent", num(c.dataset.max_extent));
  for (const auto& e : c.dataset.pairs)
    kv("dataset.pair." + std::to_string(e.a) + "." + std::to_string(e.b), num(e.p));
  return o;
}

// ---------------------------------------------------------------- optimizer

double poly_lr(double base, std::size_t iter, std::size_t total) {
  if (total == 0) throw UsageError("poly_lr: total must be at least 1");
  if (iter > total)
    throw UsageError("poly_lr: iteration " + std::to_string(iter) + " exceeds total " + std::to_string(total));
  return base * std::pow(1.0 - static_cast<double>(iter) / static_cast<double>(total), 0.9);
}

template <typename T>
void sgd_step(Parameter<T>& param, Tensor<T>& velocity, double lr, double momentum, double weight_decay) {
  if (param.grad.shape() != param.value.shape() || velocity.shape() != param.value.shape())
    throw DimensionError("sgd_step: '" + param.name + "' value " + to_string(param.value.shape()) + ", grad " +
                         to_string(param.grad.shape()) + ", velocity " + to_string(velocity.shape()));
  const T m = static_cast<T>(momentum), l = static_cast<T>(lr);
  const T wd = param.decay ? static_cast<T>(weight_decay) : T{0};
  T* w = param.value.ptr();
  const T* g = param.grad.ptr();
  T* v = velocity.ptr();
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    v[i] = m * v[i] + g[i] + wd * w[i];
    w[i] -= l * v[i];
  }
}

// ---------------------------------------------------------------- trainer

template <typename T>
Trainer<T>::Trainer(const TrainConfig& config, std::vector<Sample> train_set)
    : config_(config), train_(std::move(train_set)), model_(config.model) {
  config_.validate();
  if (train_.empty()) throw DataError("training set is empty");
  for (const Sample& s : train_)
    if (s.classes != config_.model.classes)
      throw ConfigError("training sample has " + std::to_string(s.classes) + " classes, the model " +
                        std::to_string(config_.model.classes));
  trainable_ = model_.trainable();
  for (Parameter<T>* p : trainable_) velocity_.emplace_back(p->value.shape());
}

template <typename T>
StepResult Trainer<T>::step() {
  if (done()) throw UsageError("training already finished");
  const std::size_t t = iteration_;
  std::mt19937_64 rng = make_rng(config_.seed(), 0x7EA1, t);
  const double lr = poly_lr(config_.lr, t, config_.iterations);

  AugmentOptions aug;
  aug.crop_height = aug.crop_width = config_.crop;
  std::vector<Sample> picked;
  picked.reserve(config_.batch);
  for (std::size_t b = 0; b < config_.batch; ++b) {
    const Sample& s = train_[uniform_index(rng, train_.size())];
    picked.push_back(config_.augment ? augment_train(s, rng, aug) : s);
  }
  const Batch batch = make_batch(picked);

  Tape<T> tape;
  Pass<T> pass{tape, true, &rng};
  Var<T> x = tape.constant(batch.images.template cast<T>());
  ForwardResult<T> f = model_.forward(pass, x);
  Var<T> loss = loss_O(f.output, batch.truth);
  if (model_.slcm) loss = total_loss(loss_D(f.distribution, batch.truth), loss, config_.model.alpha);
  const double value = static_cast<double>(loss.value().item());
  if (!std::isfinite(value)) throw NumericError("non-finite loss at iteration " + std::to_string(t + 1));

  for (Parameter<T>* p : trainable_) p->zero_grad();
  tape.backward(loss);
  for (std::size_t i = 0; i < trainable_.size(); ++i)
    sgd_step(*trainable_[i], velocity_[i], lr, config_.momentum, config_.weight_decay);
  ++iteration_;
  return {iteration_, value, lr};
}

std::vector<NamedTensor> model_meta(const ModelConfig& m) {
  const std::vector<std::size_t> fields{m.channels, m.classes, m.aux_hidden, m.in_channels,
                                        m.width(0), m.width(1), m.width(2), m.feature_channels,
                                        static_cast<std::size_t>(m.variant), m.norm ? 1u : 0u};
  std::vector<float> v;
  for (std::size_t f : fields) {
    if (f >= (1u << 24)) throw UsageError("model extent too large for the checkpoint header");
    v.push_back(static_cast<float>(f));
  }
  const std::size_t n = v.size();
  return {{"meta/model", Tensor<float>({n}, std::move(v))}};
}

ModelConfig model_from_checkpoint(const std::vector<NamedTensor>& records) {
  const Tensor<float>& t = require_record(records, "meta/model");
  if (t.shape() != Shape{10}) throw FormatError("ISNC: meta/model must have 10 entries");
  auto at = [&](std::size_t i) {
    const float f = t[i];
    if (!(f >= 0 && f < 16777216.0f && f == std::floor(f))) throw FormatError("ISNC: malformed meta/model");
    return static_cast<std::size_t>(f);
  };
  ModelConfig m;
  m.channels = at(0);
  m.classes = at(1);
  m.aux_hidden = at(2);
  m.in_channels = at(3);
  for (int i = 0; i < 3; ++i) m.backbone_widths[i] = at(4 + i);
  m.feature_channels = at(7);
  if (at(8) > 3) throw FormatError("ISNC: unknown variant code");
  m.variant = static_cast<Variant>(at(8));
  m.norm = at(9) != 0;
  m.dropout = 0;
  m.validate();
  return m;
}

template <typename T>
void load_parameters(IsNet<T>& model, const std::vector<NamedTensor>& records) {
  model.visit([&](Parameter<T>& p) {
    const Tensor<float>& t = require_record(records, p.name);
    if (t.shape() != p.value.shape())
      throw ConfigError("checkpoint record '" + p.name + "' is " + to_string(t.shape()) + ", the model expects " +
                        to_string(p.value.shape()));
    p.value = t.template cast<T>();
  });
}

template <typename T>
std::vector<NamedTensor> Trainer<T>::state() {
  std::vector<NamedTensor> out = model_meta(config_.model);
  out.push_back({"meta/iteration", pack_u64(iteration_)});
  out.push_back({"meta/seed", pack_u64(config_.seed())});
  model_.visit([&](Parameter<T>& p) { out.push_back({p.name, p.value.template cast<float>()}); });
  for (std::size_t i = 0; i < trainable_.size(); ++i)
    out.push_back({"momentum/" + trainable_[i]->name, velocity_[i].template cast<float>()});
  return out;
}

template <typename T>
void Trainer<T>::restore(const std::vector<NamedTensor>& records) {
  const ModelConfig m = model_from_checkpoint(records);
  const ModelConfig& c = config_.model;
  if (m.channels != c.channels || m.classes != c.classes || m.hidden() != c.hidden() || m.variant != c.variant ||
      m.norm != c.norm || m.feature_channels != c.feature_channels || m.in_channels != c.in_channels)
    throw ConfigError("checkpoint model does not match the configured model");
  const std::uint64_t seed = unpack_u64(require_record(records, "meta/seed"));
  if (seed != config_.seed()) throw ConfigError("checkpoint seed " + std::to_string(seed) + " differs from config");
  const std::uint64_t it = unpack_u64(require_record(records, "meta/iteration"));
  if (it > config_.iterations) throw ConfigError("checkpoint iteration exceeds configured iterations");
  load_parameters(model_, records);
  for (std::size_t i = 0; i < trainable_.size(); ++i) {
    const Tensor<float>& v = require_record(records, "momentum/" + trainable_[i]->name);
    if (v.shape() != velocity_[i].shape()) throw ConfigError("momentum buffer shape mismatch");
    velocity_[i] = v.template cast<T>();
  }
  iteration_ = static_cast<std::size_t>(it);
}

// ---------------------------------------------------------------- evaluation

template <typename T>
IouReport evaluate(IsNet<T>& model, const std::vector<Sample>& samples, std::size_t batch) {
  if (samples.empty()) throw DataError("evaluation split is empty");
  if (batch == 0) throw UsageError("evaluation batch must be positive");
  const std::size_t k = model.config().classes;
  ConfusionMatrix cm(k);
  std::size_t i = 0;
  while (i < samples.size()) {
    // Consecutive samples of equal extent share a forward pass.
    std::size_t j = i + 1;
    while (j < samples.size() && j - i < batch && samples[j].height() == samples[i].height() &&
           samples[j].width() == samples[i].width())
      ++j;
    for (std::size_t s = i; s < j; ++s)
      if (samples[s].classes != k)
        throw ConfigError("sample has " + std::to_string(samples[s].classes) + " classes, the checkpoint " +
                          std::to_string(k));
    const Batch b = make_batch(std::span<const Sample>(samples.data() + i, j - i));
    Tape<T> tape;
    Pass<T> pass{tape, false, nullptr};
    ForwardResult<T> f = model.forward(pass, tape.constant(b.images.template cast<T>()));
    accumulate_confusion(argmax_labels(f.output.value()), b.truth.labels, cm);
    i = j;
  }
  return miou(cm);
}

std::string format_log_row(const LogRow& row, Precision precision) {
  const char* f = precision == Precision::f32 ? "%.9g" : "%.17g";
  char loss[40], lr[40];
  std::snprintf(loss, sizeof loss, f, row.loss);
  std::snprintf(lr, sizeof lr, "%.17g", row.lr);
  std::string out = std::to_string(row.iteration) + "\t" + loss + "\t" + lr;
  if (row.miou) {
    char m[40];
    std::snprintf(m, sizeof m, "%.6f", *row.miou);
    out += "\t";
    out += m;
  }
  return out;
}

Datasets load_datasets(const TrainConfig& config) {
  Datasets d;
  if (!config.data_dir.empty()) {
    d.train = load_split(config.data_dir, Split::train);
    const fs::path val = fs::path(config.data_dir) / "val";
    if (fs::is_directory(val)) d.val = load_split(config.data_dir, Split::val);
    return d;
  }
  config.dataset.validate();
  for (std::size_t i = 0; i < config.dataset.train_count; ++i)
    d.train.push_back(generate_split(config.dataset, Split::train, i));
  for (std::size_t i = 0; i < config.dataset.val_count; ++i)
    d.val.push_back(generate_split(config.dataset, Split::val, i));
  return d;
}

namespace {

template <typename T>
TrainResult train_impl(const TrainConfig& config, const Datasets& data, std::ostream* log,
                       const std::vector<NamedTensor>* resume) {
  Trainer<T> trainer(config, data.train);
  if (resume) trainer.restore(*resume);

  std::ofstream file;
  const bool write = !config.output_dir.empty();
  if (write) {
    fs::create_directories(config.output_dir);
    file.open(fs::path(config.output_dir) / "log.tsv", resume ? std::ios::app : std::ios::trunc);
    if (!file) throw DataError("cannot write the training log in " + config.output_dir);
    if (!resume) file << "iter\tloss\tlr\tmiou\n";
  }

  TrainResult result;
  while (!trainer.done()) {
    const StepResult s = trainer.step();
    LogRow row{s.iteration, s.loss, s.lr, std::nullopt};
    const bool last = trainer.done();
    const bool eval_now = (config.eval_interval && s.iteration % config.eval_interval == 0) || last;
    if (eval_now && !data.val.empty()) {
      IouReport r = evaluate(trainer.model(), data.val);
      row.miou = r.mean;
      if (last) result.final_report = std::move(r);
    }
    if (row.miou || last || s.iteration % config.log_interval == 0) {
      const std::string line = format_log_row(row, config.precision);
      if (log) *log << line << '\n' << std::flush;
      if (write) file << line << '\n' << std::flush;
    }
    result.log.push_back(row);
    if (write && config.checkpoint_interval && s.iteration % config.checkpoint_interval == 0 && !last)
      save_checkpoint(fs::path(config.output_dir) / ("checkpoint_" + std::to_string(s.iteration) + ".isnc"),
                      trainer.state());
  }
  result.checkpoint = trainer.state();
  if (write) save_checkpoint(fs::path(config.output_dir) / "final.isnc", result.checkpoint);
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& config, const Datasets& data, std::ostream* log,
                  const std::vector<NamedTensor>* resume) {
  config.validate();
  return config.precision == Precision::f32 ? train_impl<float>(config, data, log, resume)
                                            : train_impl<double>(config, data, log, resume);
}

// ---------------------------------------------------------------- ablation

std::vector<AblationRow> ablation(const TrainConfig& config, std::ostream* progress) {
  config.validate();
  const Datasets data = load_datasets(config);
  if (data.val.empty()) throw DataError("ablation needs a validation split");
  constexpr Variant order[4] = {Variant::baseline, Variant::ilcm, Variant::slcm, Variant::isnet};
  const std::size_t runs = 4 * config.seeds;
  std::vector<double> miou(runs, 0);
  std::vector<std::exception_ptr> errors(runs);
  std::atomic<std::size_t> next{0};
  std::mutex out_mu;

  auto worker = [&] {
    for (std::size_t r; (r = next.fetch_add(1)) < runs;) {
      TrainConfig c = config;
      c.model.variant = order[r % 4];
      c.model.seed = config.model.seed + r / 4;
      c.output_dir.clear();
      c.eval_interval = 0;
      try {
        const auto t0 = std::chrono::steady_clock::now();
        const TrainResult res = train(c, data);
        miou[r] = res.final_report ? res.final_report->mean : 0.0;
        if (progress) {
          const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
          char line[160];
          std::snprintf(line, sizeof line, "%-8s seed %llu  mIoU %.4f  (%.1f s)\n",
                        std::string(to_string(c.model.variant)).c_str(),
                        static_cast<unsigned long long>(c.model.seed), miou[r], secs);
          std::lock_guard lock(out_mu);
          *progress << line << std::flush;
        }
      } catch (...) {
        errors[r] = std::current_exception();
      }
    }
  };
  std::size_t threads = config.threads ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, runs);
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<AblationRow> rows;
  for (std::size_t v = 0; v < 4; ++v) {
    AblationRow row{order[v], {}, 0, kPublishedAblation[v]};
    for (std::size_t s = 0; s < config.seeds; ++s) row.miou.push_back(miou[s * 4 + v]);
    std::vector<double> sorted = row.miou;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    row.median = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::string out = "variant\tilcm\tslcm\tmiou_median\tmiou_per_seed\tpublished_reference\n";
  for (const AblationRow& r : rows) {
    char buf[64];
    std::string seeds;
    for (std::size_t i = 0; i < r.miou.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%s%.4f", i ? "," : "", r.miou[i]);
      seeds += buf;
    }
    std::snprintf(buf, sizeof buf, "%.4f", r.median);
    std::string med = buf;
    std::snprintf(buf, sizeof buf, "%.2f", r.reference);
    out += std::string(to_string(r.variant)) + "\t" + (uses_ilcm(r.variant) ? "yes" : "no") + "\t" +
           (uses_slcm(r.variant) ? "yes" : "no") + "\t" + med + "\t" + seeds + "\t" + buf + "\n";
  }
  return out;
}

#define ISNET_TRAIN(T)                                                                        \
  template void sgd_step<T>(Parameter<T>&, Tensor<T>&, double, double, double);              \
  template class Trainer<T>;                                                                  \
  template void load_parameters<T>(IsNet<T>&, const std::vector<NamedTensor>&);              \
  template IouReport evaluate<T>(IsNet<T>&, const std::vector<Sample>&, std::size_t);

ISNET_TRAIN(float)
ISNET_TRAIN(double)

#undef ISNET_TRAIN

}  // namespace isnet
