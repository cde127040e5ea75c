#include "isnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "byteio.hpp"
#include "isnet/error.hpp"
#include "isnet/random.hpp"
#include "kernels.hpp"

namespace isnet {

namespace fs = std::filesystem;

std::vector<PairProbability> DatasetSpec::table() const {
  if (!pairs.empty()) return pairs;
  if (classes == 5) return {{1, 3, 0.45}, {2, 4, 0.45}, {1, 4, 0.05}, {2, 3, 0.05}};
  if (classes == 2) return {{1, 1, 1.0}};
  std::vector<PairProbability> t;
  const std::size_t objects = classes - 1;
  const double p = 2.0 / static_cast<double>(objects * (objects - 1));
  for (std::size_t a = 1; a < classes; ++a)
    for (std::size_t b = a + 1; b < classes; ++b)
      t.push_back({static_cast<std::uint16_t>(a), static_cast<std::uint16_t>(b), p});
  return t;
}

double DatasetSpec::cooccurrence(std::size_t i, std::size_t j) const {
  if (i > j) std::swap(i, j);
  double total = 0;
  for (const PairProbability& e : table()) {
    const bool has_i = i == 0 || e.a == i || e.b == i;
    const bool has_j = j == 0 || e.a == j || e.b == j;
    if (has_i && has_j) total += e.p;
  }
  return total;
}

void DatasetSpec::validate() const {
  if (classes < 2 || classes > 255) throw ConfigError("dataset classes must lie in [2, 255]");
  if (height == 0 || width == 0) throw ConfigError("dataset extents must be positive");
  if (!(noise >= 0)) throw ConfigError("dataset noise must be non-negative");
  if (!(twin_gap >= 0 && twin_gap <= 0.3)) throw ConfigError("dataset twin_gap must lie in [0, 0.3]");
  if (!(min_extent > 0 && min_extent <= max_extent && max_extent <= 1))
    throw ConfigError("dataset shape extents need 0 < min_extent <= max_extent <= 1");
  double total = 0;
  const auto t = table();
  for (std::size_t i = 0; i < t.size(); ++i) {
    const PairProbability& e = t[i];
    if (e.a == 0 || e.b == 0 || e.a >= classes || e.b >= classes)
      throw ConfigError("co-occurrence entry {" + std::to_string(e.a) + "," + std::to_string(e.b) +
                        "} names a class outside [1, " + std::to_string(classes) + ")");
    if (!(e.p >= 0 && e.p <= 1)) throw ConfigError("co-occurrence probabilities must lie in [0, 1]");
    for (std::size_t j = 0; j < i; ++j)
      if (std::minmax(e.a, e.b) == std::minmax(t[j].a, t[j].b))
        throw ConfigError("duplicate co-occurrence entry {" + std::to_string(e.a) + "," + std::to_string(e.b) + "}");
    total += e.p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("co-occurrence probabilities must sum to 1");
}

std::array<float, 3> class_color(std::size_t cls, double twin_gap) {
  // Class 2 has no palette entry of its own: it is class 1 plus the twin gap.
  // Their co-occurring partners (3 and 4 in the default table) stay distinct.
  static constexpr std::array<std::array<float, 3>, 5> palette{{
      {0.15f, 0.15f, 0.15f},
      {0.80f, 0.30f, 0.25f},
      {0.80f, 0.30f, 0.25f},
      {0.20f, 0.65f, 0.30f},
      {0.25f, 0.35f, 0.80f},
  }};
  if (cls == 2) {
    const auto c = palette[1];
    return {static_cast<float>(c[0] - twin_gap), static_cast<float>(c[1] + twin_gap), c[2]};
  }
  if (cls < palette.size()) return palette[cls];
  // Golden-ratio hue walk for larger class counts.
  const double h = std::fmod(static_cast<double>(cls) * 0.6180339887498949, 1.0) * 6.0;
  const double s = 0.6, v = 0.85, c = v * s;
  const double x = c * (1 - std::abs(std::fmod(h, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = c, g = x; break;
    case 1: r = x, g = c; break;
    case 2: g = c, b = x; break;
    case 3: g = x, b = c; break;
    case 4: r = x, b = c; break;
    default: r = c, b = x; break;
  }
  const double m = v - c;
  return {static_cast<float>(r + m), static_cast<float>(g + m), static_cast<float>(b + m)};
}

namespace {

struct Shape2d {
  std::uint8_t cls;
  bool ellipse;
  std::size_t y0, x0, h, w;
  std::size_t area() const { return h * w; }
  bool contains(std::size_t i, std::size_t j) const {
    if (i < y0 || i >= y0 + h || j < x0 || j >= x0 + w) return false;
    if (!ellipse) return true;
    const double dy = (static_cast<double>(i) + 0.5 - (static_cast<double>(y0) + 0.5 * h)) / (0.5 * h);
    const double dx = (static_cast<double>(j) + 0.5 - (static_cast<double>(x0) + 0.5 * w)) / (0.5 * w);
    return dy * dy + dx * dx <= 1.0;
  }
};

std::size_t extent_in(std::mt19937_64& rng, std::size_t full, double lo, double hi) {
  const auto a = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(lo * static_cast<double>(full))));
  const auto b = std::max(a, std::min(full, static_cast<std::size_t>(std::lround(hi * static_cast<double>(full)))));
  return a + uniform_index(rng, b - a + 1);
}

}  // namespace

Sample generate(const DatasetSpec& spec, std::size_t index) {
  spec.validate();
  std::mt19937_64 rng = make_rng(spec.seed, index, 0x15E6);
  const auto table = spec.table();
  const std::size_t h = spec.height, w = spec.width;

  // Class subset.
  const double u = uniform01(rng);
  double acc = 0;
  std::size_t pick = table.size() - 1;
  for (std::size_t i = 0; i < table.size(); ++i) {
    acc += table[i].p;
    if (u < acc) {
      pick = i;
      break;
    }
  }
  std::vector<std::uint8_t> chosen{static_cast<std::uint8_t>(table[pick].a)};
  if (table[pick].b != table[pick].a) chosen.push_back(static_cast<std::uint8_t>(table[pick].b));

  // Larger shapes are painted first so later ones occlude them. Layouts that
  // hide a class or the whole background are redrawn.
  std::vector<std::uint8_t> label(h * w);
  for (int attempt = 0;; ++attempt) {
    if (attempt == 256) throw InternalError("could not place visible shapes for sample " + std::to_string(index));
    std::vector<Shape2d> shapes;
    for (std::uint8_t cls : chosen) {
      Shape2d s{cls, uniform01(rng) < 0.5, 0, 0, 0, 0};
      s.h = extent_in(rng, h, spec.min_extent, spec.max_extent);
      s.w = extent_in(rng, w, spec.min_extent, spec.max_extent);
      s.y0 = uniform_index(rng, h - s.h + 1);
      s.x0 = uniform_index(rng, w - s.w + 1);
      shapes.push_back(s);
    }
    std::stable_sort(shapes.begin(), shapes.end(),
                     [](const Shape2d& a, const Shape2d& b) { return a.area() > b.area(); });
    std::fill(label.begin(), label.end(), std::uint8_t{0});
    for (const Shape2d& s : shapes)
      for (std::size_t i = s.y0; i < s.y0 + s.h; ++i)
        for (std::size_t j = s.x0; j < s.x0 + s.w; ++j)
          if (s.contains(i, j)) label[i * w + j] = s.cls;
    std::vector<std::size_t> seen(spec.classes, 0);
    for (std::uint8_t l : label) ++seen[l];
    bool ok = seen[0] > 0;
    for (std::uint8_t cls : chosen) ok = ok && seen[cls] > 0;
    if (ok) break;
  }

  Sample out;
  out.classes = static_cast<std::uint16_t>(spec.classes);
  out.image = Tensor<float>({3, h, w});
  std::vector<std::array<float, 3>> colors(spec.classes);
  for (std::size_t k = 0; k < spec.classes; ++k) colors[k] = class_color(k, spec.twin_gap);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < h * w; ++p) {
      double v = colors[label[p]][c];
      if (spec.noise > 0) v += spec.noise * standard_normal(rng);
      out.image[c * h * w + p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  out.label = std::move(label);
  return out;
}

std::string_view to_string(Split s) { return s == Split::train ? "train" : "val"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  throw UsageError("unknown split '" + std::string(name) + "' (expected train or val)");
}

std::size_t global_index(Split split, std::size_t i) { return 2 * i + (split == Split::val ? 1 : 0); }

std::size_t split_count(const DatasetSpec& spec, Split split) {
  return split == Split::train ? spec.train_count : spec.val_count;
}

Sample generate_split(const DatasetSpec& spec, Split split, std::size_t i) {
  if (i >= split_count(spec, split))
    throw UsageError("sample " + std::to_string(i) + " out of range for the " + std::string(to_string(split)) +
                     " split");
  return generate(spec, global_index(split, i));
}

Sample rescale(const Sample& s, std::size_t out_h, std::size_t out_w) {
  if (out_h == 0 || out_w == 0) throw UsageError("rescale to an empty extent");
  const std::size_t in_h = s.height(), in_w = s.width();
  Sample out;
  out.classes = s.classes;
  out.image = Tensor<float>({3, out_h, out_w});
  const kernels::LerpAxis ay = kernels::lerp_axis(in_h, out_h), ax = kernels::lerp_axis(in_w, out_w);
  std::vector<float> scratch;
  for (std::size_t c = 0; c < 3; ++c)
    kernels::resize_plane(s.image.ptr() + c * in_h * in_w, in_h, in_w, ay, ax, out.image.ptr() + c * out_h * out_w,
                          scratch);
  out.label.resize(out_h * out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    const std::size_t si = std::min((2 * i + 1) * in_h / (2 * out_h), in_h - 1);
    for (std::size_t j = 0; j < out_w; ++j) {
      const std::size_t sj = std::min((2 * j + 1) * in_w / (2 * out_w), in_w - 1);
      out.label[i * out_w + j] = s.label[si * in_w + sj];
    }
  }
  return out;
}

Sample pad_to(const Sample& s, std::size_t h, std::size_t w) {
  const std::size_t in_h = s.height(), in_w = s.width();
  const std::size_t out_h = std::max(h, in_h), out_w = std::max(w, in_w);
  if (out_h == in_h && out_w == in_w) return s;
  Sample out;
  out.classes = s.classes;
  out.image = Tensor<float>({3, out_h, out_w}, 0.0f);
  out.label.assign(out_h * out_w, kIgnoreLabel);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < in_h; ++i)
      std::copy_n(s.image.ptr() + (c * in_h + i) * in_w, in_w, out.image.ptr() + (c * out_h + i) * out_w);
  for (std::size_t i = 0; i < in_h; ++i)
    std::copy_n(s.label.data() + i * in_w, in_w, out.label.data() + i * out_w);
  return out;
}

Sample crop(const Sample& s, std::size_t y, std::size_t x, std::size_t h, std::size_t w) {
  const std::size_t in_h = s.height(), in_w = s.width();
  if (h == 0 || w == 0 || y + h > in_h || x + w > in_w)
    throw DimensionError("crop window exceeds the " + std::to_string(in_h) + "x" + std::to_string(in_w) + " sample");
  Sample out;
  out.classes = s.classes;
  out.image = Tensor<float>({3, h, w});
  out.label.resize(h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < h; ++i)
      std::copy_n(s.image.ptr() + (c * in_h + y + i) * in_w + x, w, out.image.ptr() + (c * h + i) * w);
  for (std::size_t i = 0; i < h; ++i) std::copy_n(s.label.data() + (y + i) * in_w + x, w, out.label.data() + i * w);
  return out;
}

Sample flip_horizontal(const Sample& s) {
  Sample out = s;
  const std::size_t h = s.height(), w = s.width();
  for (std::size_t row = 0; row < 3 * h; ++row) std::reverse(out.image.ptr() + row * w, out.image.ptr() + (row + 1) * w);
  for (std::size_t i = 0; i < h; ++i) std::reverse(out.label.begin() + i * w, out.label.begin() + (i + 1) * w);
  return out;
}

Sample augment_train(const Sample& s, std::mt19937_64& rng, const AugmentOptions& opts) {
  if (opts.crop_height == 0 || opts.crop_width == 0 || opts.crop_height % 8 || opts.crop_width % 8)
    throw UsageError("crop extents must be positive multiples of 8");
  if (!(opts.scale_min > 0 && opts.scale_min <= opts.scale_max)) throw UsageError("invalid scale range");
  const double f = opts.scale_min + uniform01(rng) * (opts.scale_max - opts.scale_min);
  const auto sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(s.height()))));
  const auto sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(f * static_cast<double>(s.width()))));
  Sample out = (sh == s.height() && sw == s.width()) ? s : rescale(s, sh, sw);
  out = pad_to(out, opts.crop_height, opts.crop_width);
  const std::size_t y = uniform_index(rng, out.height() - opts.crop_height + 1);
  const std::size_t x = uniform_index(rng, out.width() - opts.crop_width + 1);
  out = crop(out, y, x, opts.crop_height, opts.crop_width);
  const bool flip = uniform01(rng) < 0.5;
  if (opts.flip && flip) out = flip_horizontal(out);
  return out;
}

Batch make_batch(std::span<const Sample> samples) {
  if (samples.empty()) throw UsageError("cannot batch zero samples");
  const std::size_t h = samples[0].height(), w = samples[0].width();
  Batch b;
  b.classes = samples[0].classes;
  b.images = Tensor<float>({samples.size(), 3, h, w});
  b.truth.batch = samples.size();
  b.truth.height = h;
  b.truth.width = w;
  b.truth.labels.reserve(samples.size() * h * w);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    if (s.height() != h || s.width() != w || s.image.dim(0) != 3 || s.classes != b.classes)
      throw DimensionError("batch: sample " + std::to_string(i) + " is " + to_string(s.image.shape()) +
                           ", expected [3, " + std::to_string(h) + ", " + std::to_string(w) + "]");
    std::copy(s.image.storage().begin(), s.image.storage().end(), b.images.ptr() + i * 3 * h * w);
    b.truth.labels.insert(b.truth.labels.end(), s.label.begin(), s.label.end());
  }
  return b;
}

std::vector<Sample> unbatch(const Batch& batch) {
  const Planes p = as_planes(batch.images.shape(), "unbatch");
  std::vector<Sample> out(p.batch);
  for (std::size_t i = 0; i < p.batch; ++i) {
    const float* src = batch.images.ptr() + i * p.per_sample();
    out[i].classes = batch.classes;
    out[i].image = Tensor<float>({p.channels, p.height, p.width}, std::vector<float>(src, src + p.per_sample()));
    out[i].label.assign(batch.truth.labels.begin() + i * p.area(), batch.truth.labels.begin() + (i + 1) * p.area());
  }
  return out;
}

namespace {
constexpr std::string_view kSampleMagic = "ISEG";
constexpr std::uint8_t kSampleVersion = 1;
}  // namespace

std::vector<std::uint8_t> encode_sample(const Sample& s) {
  if (s.image.rank() != 3 || s.image.dim(0) != 3 || s.label.size() != s.height() * s.width())
    throw DimensionError("encode_sample: malformed sample " + to_string(s.image.shape()));
  const std::size_t n = s.height() * s.width();
  io::Writer out;
  out.reserve(15 + 13 * n);
  out.bytes(kSampleMagic);
  out.u8(kSampleVersion);
  out.u32(static_cast<std::uint32_t>(s.height()));
  out.u32(static_cast<std::uint32_t>(s.width()));
  out.u16(s.classes);
  for (float v : s.image.storage()) out.f32(v);
  out.raw(s.label);
  return std::move(out.buffer());
}

Sample decode_sample(std::span<const std::uint8_t> bytes) {
  io::Reader in(bytes, "ISEG");
  if (in.string(4) != kSampleMagic) {
    io::Reader at_start(bytes, "ISEG");
    at_start.fail("bad magic");
  }
  const std::uint8_t version = in.u8();
  if (version != kSampleVersion) in.fail("unsupported version " + std::to_string(version));
  const std::uint32_t h = in.u32(), w = in.u32();
  const std::uint16_t k = in.u16();
  if (h == 0 || w == 0) in.fail("empty extent");
  const std::size_t n = static_cast<std::size_t>(h) * w;
  in.need(13 * n);
  Sample s;
  s.classes = k;
  s.image = Tensor<float>({3, h, w});
  for (std::size_t i = 0; i < 3 * n; ++i) s.image[i] = in.f32();
  const auto labels = in.raw(n);
  s.label.assign(labels.begin(), labels.end());
  if (!in.done()) in.fail(std::to_string(in.remaining()) + " trailing bytes");
  for (std::size_t i = 0; i < n; ++i)
    if (s.label[i] != kIgnoreLabel && s.label[i] >= k)
      throw FormatError("ISEG: label " + std::to_string(s.label[i]) + " out of range at byte offset " +
                        std::to_string(15 + 12 * n + i));
  return s;
}

void save_sample(const fs::path& path, const Sample& s) { io::write_file(path, encode_sample(s)); }

Sample load_sample(const fs::path& path) {
  const auto bytes = io::read_file(path);
  try {
    return decode_sample(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

fs::path sample_path(const fs::path& root, Split split, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu.iseg", index);
  return root / std::string(to_string(split)) / name;
}

void write_dataset(const DatasetSpec& spec, const fs::path& root) {
  spec.validate();
  for (Split split : {Split::train, Split::val}) {
    fs::create_directories(root / std::string(to_string(split)));
    for (std::size_t i = 0; i < split_count(spec, split); ++i)
      save_sample(sample_path(root, split, i), generate_split(spec, split, i));
  }
}

std::vector<Sample> load_split(const fs::path& root, Split split) {
  const fs::path dir = root / std::string(to_string(split));
  if (!fs::is_directory(dir)) throw DataError("dataset split directory " + dir.string() + " does not exist");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".iseg") ++files;
  if (files == 0) throw DataError("no .iseg samples in " + dir.string());
  std::vector<Sample> out;
  out.reserve(files);
  for (std::size_t i = 0; i < files; ++i) {
    const fs::path p = sample_path(root, split, i);
    if (!fs::is_regular_file(p)) throw DataError("sample numbering in " + dir.string() + " has a gap at " + p.string());
    out.push_back(load_sample(p));
  }
  return out;
}

}  // namespace isnet
