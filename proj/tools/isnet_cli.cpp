#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "isnet/checkpoint.hpp"
#include "isnet/error.hpp"
#include "isnet/gradcheck_suite.hpp"
#include "isnet/profiler.hpp"
#include "isnet/train.hpp"

namespace {

using namespace isnet;

constexpr int kOk = 0;
constexpr int kFailed = 1;
constexpr int kUsage = 2;
constexpr int kData = 3;

Shape parse_shape(const std::string& text) {
  Shape s;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto x = text.find('x', pos);
    const std::string part = text.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos)
      throw UsageError("malformed shape '" + text + "' (expected e.g. 1x2048x128x128)");
    s.push_back(std::stoull(part));
    if (s.back() == 0) throw UsageError("shape extents must be positive");
    if (x == std::string::npos) break;
    pos = x + 1;
  }
  return s;
}

int gen_data(const std::string& spec_path, const std::string& out) {
  const TrainConfig c = load_config(spec_path);
  write_dataset(c.dataset, out);
  std::cout << "wrote " << c.dataset.train_count << " train and " << c.dataset.val_count << " val samples to " << out
            << "\n";
  return kOk;
}

int train_cmd(const std::string& config_path, const std::string& resume, const std::string& out_dir) {
  TrainConfig c = load_config(config_path);
  if (!out_dir.empty()) c.output_dir = out_dir;
  const Datasets data = load_datasets(c);
  std::vector<NamedTensor> state;
  if (!resume.empty()) state = load_checkpoint(resume);
  std::cout << "iter\tloss\tlr\tmiou\n";
  const TrainResult r = train(c, data, &std::cout, resume.empty() ? nullptr : &state);
  if (r.final_report) std::cout << format_report(*r.final_report);
  return kOk;
}

template <typename T>
IouReport eval_with(const ModelConfig& m, const std::vector<NamedTensor>& records, const std::vector<Sample>& samples) {
  IsNet<T> model(m);
  load_parameters(model, records);
  return evaluate(model, samples);
}

int eval_cmd(const std::string& ckpt, const std::string& data, const std::string& split, bool tsv, bool f64) {
  const auto records = load_checkpoint(ckpt);
  const ModelConfig m = model_from_checkpoint(records);
  const auto samples = load_split(data, parse_split(split));
  const IouReport r = f64 ? eval_with<double>(m, records, samples) : eval_with<float>(m, records, samples);
  std::cout << (tsv ? format_report_tsv(r) : format_report(r));
  return kOk;
}

int ablation_cmd(const std::string& config_path, std::size_t seeds, std::size_t threads) {
  TrainConfig c = load_config(config_path);
  if (seeds) c.seeds = seeds;
  if (threads) c.threads = threads;
  const auto rows = ablation(c, &std::cerr);
  const std::string table = format_ablation(rows);
  std::cout << table;
  std::cout << "published values are reference context only\n";
  if (!c.output_dir.empty()) {
    std::filesystem::create_directories(c.output_dir);
    FILE* f = std::fopen((std::filesystem::path(c.output_dir) / "ablation.tsv").c_str(), "w");
    if (!f) throw DataError("cannot write ablation.tsv in " + c.output_dir);
    std::fputs(table.c_str(), f);
    std::fclose(f);
  }
  return kOk;
}

int gradcheck_cmd(const std::string& module, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto cases = run_gradcheck_suite(module, seed);
  bool ok = true;
  for (const auto& c : cases) {
    std::printf("%-4s %-7s %-40s max_rel_err %.3e  (%zu components, worst %s: %.6e vs %.6e)\n",
                c.pass() ? "PASS" : "FAIL", c.module.c_str(), c.name.c_str(), c.report.max_rel_error,
                c.report.components, c.report.worst.c_str(), c.report.worst_analytic, c.report.worst_numeric);
    ok = ok && c.pass();
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("%s in %.1f s\n", ok ? "all gradient checks passed" : "gradient check FAILED", secs);
  return ok ? kOk : kFailed;
}

int profile_cmd(const std::string& shape_text, bool tsv, std::size_t channels, std::size_t classes,
                const std::string& variant, const std::string& time_shape, std::size_t reps) {
  ModelConfig m = profile_config();
  if (channels) m.channels = channels;
  if (classes) m.classes = classes;
  m.variant = parse_variant(variant);
  const Shape shape = parse_shape(shape_text);
  if (shape.size() != 4) throw UsageError("--shape must be BxCxHxW");
  m.feature_channels = shape[1];
  CostReport r = count_flops(m, shape);
  if (!time_shape.empty()) {
    ModelConfig timed = m;
    const Shape ts = parse_shape(time_shape);
    if (ts.size() != 4) throw UsageError("--time-shape must be BxCxHxW");
    timed.feature_channels = ts[1];
    r.seconds = timing_probe(timed, ts, reps);
  }
  if (tsv) {
    std::cout << format_profile_tsv(r);
    return kOk;
  }
  std::cout << format_profile(r);
  const double p = r.params() / 1e6, f = r.flops() / 1e9;
  std::printf("\nthis build: %.4f M params, %.4f G FLOPs; published ILCM+SLCM: 11.02 M, 180.60 G "
              "(deviation %+.1f%% params, %+.1f%% FLOPs)\n",
              p, f, 100 * (p / 11.02 - 1), 100 * (f / 180.60 - 1));
  std::printf("smallest competitor (OCRNet): %.2f M, %.2f G -> params %s, FLOPs %s\n", kSmallestCompetitorParamsM,
              kSmallestCompetitorFlopsG, p <= kSmallestCompetitorParamsM ? "lower" : "HIGHER",
              f <= kSmallestCompetitorFlopsG ? "lower" : "HIGHER");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Image-level and semantic-level context segmentation toolkit"};
  app.require_subcommand(1);

  std::string spec, out;
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as ISEG files");
  gen->add_option("--spec", spec, "Config file with dataset.* keys")->required();
  gen->add_option("--out", out, "Output root directory")->required();

  std::string config, resume, train_out;
  auto* tr = app.add_subcommand("train", "Train one variant");
  tr->add_option("--config", config, "Config file")->required();
  tr->add_option("--resume", resume, "Checkpoint to resume from");
  tr->add_option("--output-dir", train_out, "Override output_dir");

  std::string ckpt, data, split = "val";
  bool tsv = false, f64 = false;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset split");
  ev->add_option("--checkpoint", ckpt, "ISNC checkpoint")->required();
  ev->add_option("--data", data, "Dataset root")->required();
  ev->add_option("--split", split, "train or val");
  ev->add_flag("--tsv", tsv, "Machine-readable report");
  ev->add_flag("--f64", f64, "Evaluate in float64");

  std::string ab_config;
  std::size_t seeds = 0, threads = 0;
  auto* ab = app.add_subcommand("ablation", "Train all four variants over several seeds");
  ab->add_option("--config", ab_config, "Config file")->required();
  ab->add_option("--seeds", seeds, "Override seeds");
  ab->add_option("--threads", threads, "Override threads");

  std::string module = "all";
  std::uint64_t gc_seed = 1;
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gc->add_option("--module", module, "all, ilcm, slcm, fusion or loss");
  gc->add_option("--seed", gc_seed, "Instance seed");

  std::string shape = "1x2048x128x128", variant = "isnet", time_shape;
  std::size_t channels = 0, classes = 0, reps = 5;
  bool ptsv = false;
  auto* pr = app.add_subcommand("profile", "Analytic parameter and FLOP counts");
  pr->add_option("--shape", shape, "Feature-map probe shape BxCxHxW");
  pr->add_flag("--tsv", ptsv, "Tab-separated output");
  pr->add_option("--channels", channels, "Override C (default 512)");
  pr->add_option("--classes", classes, "Override K (default 150)");
  pr->add_option("--variant", variant, "baseline, ilcm, slcm or isnet");
  pr->add_option("--time-shape", time_shape, "Also time a forward pass at this feature shape");
  pr->add_option("--reps", reps, "Timing repetitions");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return gen_data(spec, out);
    if (*tr) return train_cmd(config, resume, train_out);
    if (*ev) return eval_cmd(ckpt, data, split, tsv, f64);
    if (*ab) return ablation_cmd(ab_config, seeds, threads);
    if (*gc) return gradcheck_cmd(module, gc_seed);
    if (*pr) return profile_cmd(shape, ptsv, channels, classes, variant, time_shape, reps);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kData;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kData;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
