#include "gradfaith/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gradfaith/image_io.hpp"
#include "gradfaith/rng.hpp"
#include "serialize.hpp"

namespace gradfaith {

namespace {

// Fixed scene geometry, in fractions of the image side. Intensities keep
// the lesion (lung + contrast, 0.57 at the default 0.35) clearly the
// brightest structure in the frame.
constexpr double kBackground = 0.05;
constexpr double kThoraxIntensity = 0.40;
constexpr double kLungIntensity = 0.22;
constexpr double kThoraxRadius = 0.47;
constexpr double kLungCenterX[2] = {0.26, 0.74};
constexpr double kLungCenterY = 0.5;
constexpr double kLungSemiX = 0.22;
constexpr double kLungSemiY = 0.34;
constexpr double kPlacementMargin = 0.5;  // pixels

void check_config(const PhantomConfig& cfg) {
  if (cfg.size < 8) throw ConfigError("phantom: image size must be >= 8");
  if (cfg.per_class < 1) throw ConfigError("phantom: per_class must be >= 1");
  if (cfg.noise_sigma < 0.0) throw ConfigError("phantom: noise sigma must be >= 0");
  if (cfg.contrast <= 0.0 || cfg.contrast >= 1.0)
    throw ConfigError("phantom: contrast must lie in (0,1)");
  if (cfg.benign_radius_min < 1.0 || cfg.benign_radius_max < cfg.benign_radius_min ||
      cfg.malignant_radius_min < 1.0 || cfg.malignant_radius_max < cfg.malignant_radius_min)
    throw ConfigError("phantom: lesion radius ranges must be >= 1 and ordered");
  if (cfg.spiculation < 0.0 || cfg.spiculation >= 1.0)
    throw ConfigError("phantom: spiculation amplitude must lie in [0,1)");
}

// Largest reachable lesion extent per class; placement keeps the whole
// lesion inside the lung ellipse.
double max_extent(const PhantomConfig& cfg, int label) {
  return label == kMalignant ? cfg.malignant_radius_max * (1.0 + cfg.spiculation)
                             : cfg.benign_radius_max;
}

struct Lesion {
  double cx, cy, r0;
  double amp = 0.0;  // 0 for benign discs
  int freq = 0;
  double phase = 0.0;

  bool contains(double px, double py) const {
    const double dx = px - cx, dy = py - cy;
    const double d = std::hypot(dx, dy);
    double r = r0;
    if (amp > 0.0) r = r0 * (1.0 + amp * std::sin(freq * std::atan2(dy, dx) + phase));
    return d <= r;
  }
};

Grid base_image(const PhantomConfig& cfg) {
  const int s = cfg.size;
  const double cx = 0.5 * s, cy = 0.5 * s, tr = kThoraxRadius * s;
  Grid img = Grid::Constant(s, s, kBackground);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (std::hypot(x - cx, y - cy) <= tr) img(y, x) = kThoraxIntensity;
      if (in_lung_field(cfg, x, y)) img(y, x) = kLungIntensity;
    }
  return img;
}

}  // namespace

bool in_lung_field(const PhantomConfig& cfg, double x, double y) {
  const double s = cfg.size;
  const double a = kLungSemiX * s, b = kLungSemiY * s, cy = kLungCenterY * s;
  for (double fx : kLungCenterX) {
    const double dx = (x - fx * s) / a, dy = (y - cy) / b;
    if (dx * dx + dy * dy <= 1.0) return true;
  }
  return false;
}

BinaryMask lung_field_mask(const PhantomConfig& cfg) {
  MaskGrid m(cfg.size, cfg.size);
  for (int y = 0; y < cfg.size; ++y)
    for (int x = 0; x < cfg.size; ++x) m(y, x) = in_lung_field(cfg, x, y);
  return BinaryMask::of(std::move(m));
}

namespace {

Sample make_sample(const PhantomConfig& cfg, const Grid& base, int label, int id, Rng rng) {
  const int s = cfg.size;
  Sample sample;
  sample.label = label;
  sample.id = id;
  sample.image = base;
  sample.mask = BinaryMask::empty(s, s);

  if (label != kNormal) {
    Lesion lesion{};
    if (label == kBenign) {
      lesion.r0 = rng.uniform(cfg.benign_radius_min, cfg.benign_radius_max);
    } else {
      lesion.r0 = rng.uniform(cfg.malignant_radius_min, cfg.malignant_radius_max);
      lesion.amp = cfg.spiculation;
      lesion.freq = rng.uniform_int(4, 8);
      lesion.phase = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    }
    const double extent = max_extent(cfg, label);
    const double sa = kLungSemiX * s - extent - kPlacementMargin;
    const double sb = kLungSemiY * s - extent - kPlacementMargin;
    if (sa <= 0.0 || sb <= 0.0)
      throw ConfigError("phantom: lesion of extent " + std::to_string(extent) +
                        " px cannot fit inside the lung field at size " + std::to_string(s));

    MaskGrid mask(s, s);
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      const int side = rng.uniform_int(0, 1);
      const double dx = rng.uniform(-sa, sa), dy = rng.uniform(-sb, sb);
      if ((dx / sa) * (dx / sa) + (dy / sb) * (dy / sb) > 1.0) continue;
      lesion.cx = kLungCenterX[side] * s + dx;
      lesion.cy = kLungCenterY * s + dy;

      mask.setConstant(false);
      bool inside_lung = true;
      int count = 0;
      const int x0 = std::max(0, static_cast<int>(std::floor(lesion.cx - extent)));
      const int x1 = std::min(s - 1, static_cast<int>(std::ceil(lesion.cx + extent)));
      const int y0 = std::max(0, static_cast<int>(std::floor(lesion.cy - extent)));
      const int y1 = std::min(s - 1, static_cast<int>(std::ceil(lesion.cy + extent)));
      for (int y = y0; y <= y1 && inside_lung; ++y)
        for (int x = x0; x <= x1; ++x) {
          if (!lesion.contains(x, y)) continue;
          if (!in_lung_field(cfg, x, y)) {
            inside_lung = false;
            break;
          }
          mask(y, x) = true;
          ++count;
        }
      placed = inside_lung && count > 0;
    }
    if (!placed)
      throw ConfigError("phantom: could not place a lesion inside the lung field (size " +
                        std::to_string(s) + ")");
    sample.mask = BinaryMask::of(mask);
    const double lesion_intensity = kLungIntensity + cfg.contrast;
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x)
        if (sample.mask.values(y, x)) sample.image(y, x) = lesion_intensity;
  }

  if (cfg.noise_sigma > 0.0) {
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        const double v = sample.image(y, x) + cfg.noise_sigma * rng.gaussian();
        sample.image(y, x) = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);  // clamp, not renormalize
      }
  }
  return sample;
}

}  // namespace

std::vector<Sample> generate(const PhantomConfig& cfg, std::uint64_t seed) {
  check_config(cfg);
  const Grid base = base_image(cfg);
  const Rng root(seed);
  std::vector<Sample> out;
  out.reserve(static_cast<std::size_t>(cfg.per_class) * 3);
  for (int label = 0; label < 3; ++label)
    for (int i = 0; i < cfg.per_class; ++i) {
      const int id = label * cfg.per_class + i;
      out.push_back(make_sample(cfg, base, label, id, root.fork(static_cast<std::uint64_t>(id))));
    }
  return out;
}

DatasetSplit split(const std::vector<Sample>& samples, std::array<double, 3> ratios,
                   std::uint64_t seed) {
  const double total_ratio = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(total_ratio - 1.0) > 1e-9)
    throw InputError("split: ratios must sum to 1, got " + std::to_string(total_ratio));
  if (samples.empty()) throw InputError("split: empty dataset");

  // Group ids per class label.
  std::vector<int> labels;
  for (const Sample& s : samples)
    if (std::find(labels.begin(), labels.end(), s.label) == labels.end())
      labels.push_back(s.label);
  std::sort(labels.begin(), labels.end());

  const Rng root(seed);
  DatasetSplit out;
  for (int label : labels) {
    std::vector<int> ids;
    for (const Sample& s : samples)
      if (s.label == label) ids.push_back(s.id);
    if (ids.size() < 3)
      throw InputError("split: class " + std::to_string(label) + " has only " +
                       std::to_string(ids.size()) + " samples (need >= 3)");

    Rng rng = root.fork(static_cast<std::uint64_t>(label));
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i)));
      std::swap(ids[i], ids[j]);
    }

    // Largest-remainder rounding keeps every split within one sample of
    // its exact quota.
    const int n = static_cast<int>(ids.size());
    std::array<int, 3> base{};
    std::array<double, 3> frac{};
    int used = 0;
    for (int k = 0; k < 3; ++k) {
      const double quota = n * ratios[k];
      base[k] = static_cast<int>(std::floor(quota));
      frac[k] = quota - base[k];
      used += base[k];
    }
    std::array<int, 3> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return frac[a] != frac[b] ? frac[a] > frac[b] : a < b;
    });
    for (int r = 0; r < n - used; ++r) base[order[static_cast<std::size_t>(r)]] += 1;

    int at = 0;
    for (int k = 0; k < 3; ++k) {
      auto* dst = k == 0 ? &out.train : (k == 1 ? &out.val : &out.test);
      for (int c = 0; c < base[k]; ++c) dst->push_back(ids[static_cast<std::size_t>(at++)]);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

// ---- GFDS dataset container ---------------------------------------------------

namespace {
constexpr std::uint32_t kDatasetVersion = 1;

// Alternating run lengths over the row-major mask, first run counts false
// pixels (possibly zero).
std::vector<std::uint32_t> mask_runs(const BinaryMask& m) {
  std::vector<std::uint32_t> runs;
  bool current = false;
  std::uint32_t len = 0;
  const auto* data = m.values.data();
  for (Eigen::Index i = 0; i < m.values.size(); ++i) {
    if (data[i] == current) {
      ++len;
    } else {
      runs.push_back(len);
      current = !current;
      len = 1;
    }
  }
  runs.push_back(len);
  return runs;
}

}  // namespace

void save_dataset(const std::vector<Sample>& samples, const std::filesystem::path& path) {
  int h = 0, w = 0;
  if (!samples.empty()) {
    h = static_cast<int>(samples[0].image.rows());
    w = static_cast<int>(samples[0].image.cols());
    for (const Sample& s : samples)
      if (s.image.rows() != h || s.image.cols() != w || s.mask.values.rows() != h ||
          s.mask.values.cols() != w)
        throw InputError("save_dataset: all samples must share one image size");
  }
  detail::ByteWriter wr;
  wr.str("GFDS");
  wr.u32(kDatasetVersion);
  wr.u32(static_cast<std::uint32_t>(samples.size()));
  wr.u16(static_cast<std::uint16_t>(h));
  wr.u16(static_cast<std::uint16_t>(w));
  for (const Sample& s : samples) {
    wr.u32(static_cast<std::uint32_t>(s.id));
    wr.u8(static_cast<std::uint8_t>(s.label));
    for (Eigen::Index i = 0; i < s.image.size(); ++i) wr.f64(s.image.data()[i]);
    const auto runs = mask_runs(s.mask);
    wr.u32(static_cast<std::uint32_t>(runs.size()));
    for (std::uint32_t r : runs) wr.u32(r);
  }
  wr.crc_trailer();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out.write(wr.buf.data(), static_cast<std::streamsize>(wr.buf.size()));
  if (!out) throw FormatError("write failed for '" + path.string() + "'");
}

std::vector<Sample> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path.string() + "'");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  detail::ByteReader r(buf);
  if (r.str(4, "magic") != "GFDS") throw FormatError("not a GFDS dataset", 0);
  r.check_crc_trailer("dataset");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion)
    throw FormatError("unsupported dataset version " + std::to_string(version), 4);
  const std::uint32_t count = r.u32("sample count");
  const int h = r.u16("height"), w = r.u16("width");
  if (count > 0 && (h < 1 || w < 1))
    throw FormatError("dataset with samples but empty image dimensions", 12);

  std::vector<Sample> samples;
  samples.reserve(count);
  for (std::uint32_t si = 0; si < count; ++si) {
    Sample s;
    s.id = static_cast<int>(r.u32("sample id"));
    s.label = r.u8("sample label");
    if (s.label < 0 || s.label > 2)
      throw FormatError("sample label " + std::to_string(s.label) + " out of range",
                        static_cast<long long>(r.pos - 1));
    s.image = Grid(h, w);
    for (Eigen::Index i = 0; i < s.image.size(); ++i) s.image.data()[i] = r.f64("image pixels");
    const std::uint32_t nruns = r.u32("mask run count");
    MaskGrid mask(h, w);
    Eigen::Index at = 0;
    bool value = false;
    for (std::uint32_t k = 0; k < nruns; ++k) {
      const std::uint32_t len = r.u32("mask run");
      if (at + len > mask.size())
        throw FormatError("mask runs exceed image area", static_cast<long long>(r.pos - 4));
      for (std::uint32_t j = 0; j < len; ++j) mask.data()[at++] = value;
      value = !value;
    }
    if (at != mask.size())
      throw FormatError("mask runs cover " + std::to_string(at) + " of " +
                            std::to_string(mask.size()) + " pixels",
                        static_cast<long long>(r.pos));
    s.mask = BinaryMask::of(std::move(mask));
    samples.push_back(std::move(s));
  }
  return samples;
}

IngestReport load_grayscale_dir(const std::filesystem::path& dir, int expected_size,
                                const std::filesystem::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw FormatError("cannot open manifest '" + manifest.string() + "'");

  IngestReport report;
  std::string line;
  int line_no = 0;
  int next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string fname, label_text, mask_name;
    std::getline(ss, fname, ',');
    std::getline(ss, label_text, ',');
    std::getline(ss, mask_name, ',');
    const std::string where = "line " + std::to_string(line_no);
    if (fname.empty() || label_text.empty()) {
      report.errors.push_back(where + ": expected filename,label[,maskfile]");
      continue;
    }
    int label;
    try {
      label = std::stoi(label_text);
    } catch (const std::exception&) {
      report.errors.push_back(where + ": bad label '" + label_text + "'");
      continue;
    }
    if (label < 0 || label > 2) {
      report.errors.push_back(where + ": label " + std::to_string(label) +
                              " outside {0,1,2}");
      continue;
    }
    try {
      Sample s;
      s.image = read_pgm(dir / fname);
      if (s.image.rows() != expected_size || s.image.cols() != expected_size)
        throw FormatError("image is " + std::to_string(s.image.rows()) + "x" +
                          std::to_string(s.image.cols()) + ", expected " +
                          std::to_string(expected_size) + " square");
      if (!mask_name.empty()) {
        const Grid m = read_pgm(dir / mask_name);
        if (m.rows() != s.image.rows() || m.cols() != s.image.cols())
          throw FormatError("mask dimensions do not match image");
        s.mask = BinaryMask::of(m > 0.0);
      } else {
        s.mask = BinaryMask::empty(expected_size, expected_size);
      }
      s.label = label;
      s.id = next_id++;
      report.samples.push_back(std::move(s));
    } catch (const Error& e) {
      report.errors.push_back(where + " (" + fname + "): " + e.what());
    }
  }
  return report;
}

Tensor to_tensor(const Grid& image) {
  Tensor t = Tensor::zeros({1, static_cast<int>(image.rows()), static_cast<int>(image.cols())});
  for (Eigen::Index i = 0; i < image.size(); ++i) t.values[i] = image.data()[i];
  return t;
}

}  // namespace gradfaith
