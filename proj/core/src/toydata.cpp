#include "defsynth/toydata.hpp"

#include "defsynth/imageio.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace fs = std::filesystem;

namespace defsynth::toy {

namespace {

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Smooth value noise in [0,1]: bilinearly interpolated random lattices summed
// over octaves.
Tensor value_noise(int64_t size, int octaves, std::mt19937_64& rng) {
  Tensor field({1, size, size});
  double total_amp = 0;
  for (int o = 0; o < octaves; ++o) {
    int64_t cells = (int64_t{2} << o);
    double amp = 1.0 / static_cast<double>(1 << o);
    total_amp += amp;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    Tensor lattice({1, cells + 1, cells + 1});
    for (int64_t i = 0; i < lattice.numel(); ++i) lattice.at(i) = uni(rng);
    for (int64_t y = 0; y < size; ++y) {
      double fy = static_cast<double>(y) / static_cast<double>(size) * cells;
      int64_t y0 = static_cast<int64_t>(fy);
      double wy = fy - y0;
      for (int64_t x = 0; x < size; ++x) {
        double fx = static_cast<double>(x) / static_cast<double>(size) * cells;
        int64_t x0 = static_cast<int64_t>(fx);
        double wx = fx - x0;
        double top = lattice.at3(0, y0, x0) * (1 - wx) + lattice.at3(0, y0, x0 + 1) * wx;
        double bot = lattice.at3(0, y0 + 1, x0) * (1 - wx) + lattice.at3(0, y0 + 1, x0 + 1) * wx;
        field.at3(0, y, x) += amp * (top * (1 - wy) + bot * wy);
      }
    }
  }
  for (int64_t i = 0; i < field.numel(); ++i) field.at(i) /= total_amp;
  return field;
}

Tensor render_background(const ToyDefectSpec& spec, std::mt19937_64& rng) {
  const int64_t s = spec.image_size;
  Tensor noise = value_noise(s, spec.noise_octaves, rng);
  std::normal_distribution<double> grain(0.0, 3.0);
  Tensor img({3, s, s});
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      double t = noise.at3(0, y, x);
      double g = grain(rng);
      for (int64_t c = 0; c < 3; ++c) {
        double v = spec.base_color_b[c] + (spec.base_color_a[c] - spec.base_color_b[c]) * t + g;
        img.at3(c, y, x) = std::min(255.0, std::max(0.0, v));
      }
    }
  return img;
}

void paint(Tensor& img, Tensor& mask, int64_t y, int64_t x, const std::array<double, 3>& color,
           double alpha) {
  const int64_t s = img.dim(1);
  if (y < 0 || y >= s || x < 0 || x >= s || alpha <= 0) return;
  double a = clamp01(alpha);
  for (int64_t c = 0; c < 3; ++c)
    img.at3(c, y, x) = img.at3(c, y, x) * (1 - a) + color[c] * a;
  if (a >= 0.25) mask.at3(0, y, x) = 255.0;
}

void paint_disk(Tensor& img, Tensor& mask, double cy, double cx, double radius,
                const std::array<double, 3>& color, double alpha) {
  const int64_t s = img.dim(1);
  int64_t y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - radius - 1)));
  int64_t y1 = std::min(s - 1, static_cast<int64_t>(std::ceil(cy + radius + 1)));
  int64_t x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - radius - 1)));
  int64_t x1 = std::min(s - 1, static_cast<int64_t>(std::ceil(cx + radius + 1)));
  for (int64_t y = y0; y <= y1; ++y)
    for (int64_t x = x0; x <= x1; ++x) {
      double d = std::hypot(static_cast<double>(y) - cy, static_cast<double>(x) - cx);
      if (d <= radius) paint(img, mask, y, x, color, alpha * clamp01(radius - d + 0.5));
    }
}

void paint_segment(Tensor& img, Tensor& mask, double y0, double x0, double y1, double x1,
                   double width, const std::array<double, 3>& color) {
  const int64_t s = img.dim(1);
  double lo_y = std::min(y0, y1) - width, hi_y = std::max(y0, y1) + width;
  double lo_x = std::min(x0, x1) - width, hi_x = std::max(x0, x1) + width;
  int64_t ya = std::max<int64_t>(0, static_cast<int64_t>(std::floor(lo_y)));
  int64_t yb = std::min(s - 1, static_cast<int64_t>(std::ceil(hi_y)));
  int64_t xa = std::max<int64_t>(0, static_cast<int64_t>(std::floor(lo_x)));
  int64_t xb = std::min(s - 1, static_cast<int64_t>(std::ceil(hi_x)));
  double vy = y1 - y0, vx = x1 - x0;
  double len2 = vy * vy + vx * vx;
  for (int64_t y = ya; y <= yb; ++y)
    for (int64_t x = xa; x <= xb; ++x) {
      double t = len2 > 0 ? ((y - y0) * vy + (x - x0) * vx) / len2 : 0.0;
      t = clamp01(t);
      double d = std::hypot(y - (y0 + t * vy), x - (x0 + t * vx));
      double half = width / 2;
      if (d <= half + 0.5) paint(img, mask, y, x, color, clamp01(half + 0.5 - d));
    }
}

struct ClampTracker {
  const ToyDefectSpec& spec;
  std::vector<std::string>* warnings;

  double clamp(double value, double lo, double hi, const char* what) {
    double v = std::min(hi, std::max(lo, value));
    if (v != value && warnings)
      warnings->push_back(std::string(what) + " " + std::to_string(value) + " clamped to " +
                          std::to_string(v) + " for image size " +
                          std::to_string(spec.image_size));
    return v;
  }
};

// Uniform draw in [lo, hi] that degrades to the midpoint when the margin
// requirements leave no room.
double safe_pos(std::mt19937_64& rng, double lo, double hi) {
  if (lo >= hi) return (lo + hi) / 2;
  std::uniform_real_distribution<double> pos(lo, hi);
  return pos(rng);
}

void render_crack(const ToyDefectSpec& spec, Tensor& img, Tensor& mask, std::mt19937_64& rng,
                  ClampTracker& ct) {
  const int64_t s = spec.image_size;
  const double width = ct.clamp(spec.crack_width, 1.0, static_cast<double>(s) / 4.0, "crack width");
  std::uniform_real_distribution<double> pos(2.0, static_cast<double>(s) - 3.0);
  std::normal_distribution<double> drift(0.0, static_cast<double>(s) / 10.0);
  const std::array<double, 3> dark = {38.0, 34.0, 32.0};
  for (int p = 0; p < std::max(1, spec.crack_polylines); ++p) {
    // March across the canvas with lateral jitter.
    bool horizontal = (rng() & 1) != 0;
    double along = 0.0, across = pos(rng);
    const int steps = 5;
    double step_len = static_cast<double>(s) / steps;
    for (int i = 0; i < steps; ++i) {
      double next_along = along + step_len;
      double next_across = across + drift(rng);
      next_across = std::min(static_cast<double>(s) - 2.0, std::max(1.0, next_across));
      if (horizontal)
        paint_segment(img, mask, across, along, next_across, next_along, width, dark);
      else
        paint_segment(img, mask, along, across, next_along, next_across, width, dark);
      along = next_along;
      across = next_across;
    }
  }
}

void render_spallation(const ToyDefectSpec& spec, Tensor& img, Tensor& mask, std::mt19937_64& rng,
                       ClampTracker& ct) {
  const int64_t s = spec.image_size;
  double rmax = ct.clamp(spec.blob_radius_max, 1.0, static_cast<double>(s) / 2.0 - 1.0,
                         "blob radius max");
  double rmin = std::min(ct.clamp(spec.blob_radius_min, 1.0, rmax, "blob radius min"), rmax);
  std::uniform_real_distribution<double> rad(rmin, rmax);
  double r = rad(rng);
  double cy = safe_pos(rng, r + 1.0, static_cast<double>(s) - r - 2.0);
  double cx = safe_pos(rng, r + 1.0, static_cast<double>(s) - r - 2.0);
  const std::array<double, 3> pit = {74.0, 68.0, 63.0};
  const std::array<double, 3> rim = {96.0, 90.0, 84.0};
  // Irregular boundary: several overlapping disks around the center.
  paint_disk(img, mask, cy, cx, r, rim, 0.9);
  std::normal_distribution<double> off(0.0, r / 3.0);
  for (int i = 0; i < 4; ++i)
    paint_disk(img, mask, cy + off(rng), cx + off(rng), r * 0.6, pit, 0.95);
}

void render_efflorescence(const ToyDefectSpec& spec, Tensor& img, Tensor& mask,
                          std::mt19937_64& rng, ClampTracker& ct) {
  const int64_t s = spec.image_size;
  double sigma = ct.clamp(spec.blob_radius_max, 1.0, static_cast<double>(s) / 3.0,
                          "deposit radius");
  double bright = ct.clamp(spec.patch_brightness, 5.0, 120.0, "deposit brightness");
  double cy = safe_pos(rng, sigma, static_cast<double>(s) - sigma - 1.0);
  double cx = safe_pos(rng, sigma, static_cast<double>(s) - sigma - 1.0);
  for (int64_t y = 0; y < s; ++y)
    for (int64_t x = 0; x < s; ++x) {
      double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
      double gain = bright * std::exp(-d2 / (2 * sigma * sigma));
      if (gain < 1.0) continue;
      for (int64_t c = 0; c < 3; ++c)
        img.at3(c, y, x) = std::min(255.0, img.at3(c, y, x) + gain * (c == 2 ? 0.92 : 1.0));
      if (gain >= 0.3 * bright) mask.at3(0, y, x) = 255.0;
    }
}

void render_exposed_bars(const ToyDefectSpec& spec, Tensor& img, Tensor& mask,
                         std::mt19937_64& rng, ClampTracker& ct) {
  const int64_t s = spec.image_size;
  double width = ct.clamp(std::max(2.0, spec.crack_width * 2.0), 2.0,
                          static_cast<double>(s) / 3.0, "bar width");
  std::uniform_real_distribution<double> tilt(-static_cast<double>(s) / 8.0,
                                              static_cast<double>(s) / 8.0);
  const std::array<double, 3> steel = {92.0, 64.0, 48.0};
  const std::array<double, 3> shadow = {52.0, 44.0, 40.0};
  bool horizontal = (rng() & 1) != 0;
  double c0 = safe_pos(rng, width + 2.0, static_cast<double>(s) - width - 3.0);
  double t = tilt(rng);
  if (horizontal) {
    paint_segment(img, mask, c0 + 1.5, 0, c0 + t + 1.5, s - 1, width + 1.5, shadow);
    paint_segment(img, mask, c0, 0, c0 + t, s - 1, width, steel);
  } else {
    paint_segment(img, mask, 0, c0 + 1.5, s - 1, c0 + t + 1.5, width + 1.5, shadow);
    paint_segment(img, mask, 0, c0, s - 1, c0 + t, width, steel);
  }
}

void render_corrosion(const ToyDefectSpec& spec, Tensor& img, Tensor& mask, std::mt19937_64& rng,
                      ClampTracker& ct) {
  const int64_t s = spec.image_size;
  double rmax = ct.clamp(spec.blob_radius_max / 2.0, 1.0, static_cast<double>(s) / 4.0,
                         "stain radius");
  std::uniform_real_distribution<double> rad(std::max(1.0, rmax / 2.0), rmax);
  std::uniform_int_distribution<int> count(3, 5);
  const std::array<double, 3> rust = {153.0, 82.0, 38.0};
  const std::array<double, 3> stain = {120.0, 66.0, 34.0};
  double cy = safe_pos(rng, rmax + 1.0, static_cast<double>(s) - rmax - 2.0);
  double cx = safe_pos(rng, rmax + 1.0, static_cast<double>(s) - rmax - 2.0);
  std::normal_distribution<double> off(0.0, rmax);
  int n = count(rng);
  for (int i = 0; i < n; ++i) {
    double r = rad(rng);
    paint_disk(img, mask, cy + off(rng), cx + off(rng), r, i % 2 ? rust : stain, 0.85);
  }
}

}  // namespace

void ToyDefectSpec::validate() const {
  if (image_size < 16) throw std::invalid_argument("toy spec: image size must be >= 16");
  if (samples_per_class < 1) throw std::invalid_argument("toy spec: samples per class must be >= 1");
  if (noise_octaves < 1 || noise_octaves > 8)
    throw std::invalid_argument("toy spec: noise octaves must be in 1..8");
  if (blob_radius_min > blob_radius_max)
    throw std::invalid_argument("toy spec: blob radius min exceeds max");
}

ToyRender render_toy_sample(const ToyDefectSpec& spec, int64_t category, int64_t index,
                            std::vector<std::string>* warnings) {
  spec.validate();
  if (category < 0 || category >= data::kNumCategories)
    throw std::invalid_argument("render_toy_sample: bad category " + std::to_string(category));

  // Independent stream per (category, index); renders in any order agree.
  uint64_t stream = spec.seed;
  stream ^= 0x9E3779B97F4A7C15ull * static_cast<uint64_t>(category + 1);
  stream ^= 0xBF58476D1CE4E5B9ull * static_cast<uint64_t>(index + 1);
  std::mt19937_64 rng(stream);

  ToyRender out;
  out.image = render_background(spec, rng);
  out.mask = Tensor({1, spec.image_size, spec.image_size});
  ClampTracker ct{spec, warnings};
  switch (category) {
    case 0: render_crack(spec, out.image, out.mask, rng, ct); break;
    case 1: render_spallation(spec, out.image, out.mask, rng, ct); break;
    case 2: render_efflorescence(spec, out.image, out.mask, rng, ct); break;
    case 3: render_exposed_bars(spec, out.image, out.mask, rng, ct); break;
    case 4: render_corrosion(spec, out.image, out.mask, rng, ct); break;
    case data::kNormalIndex: break;
  }
  return out;
}

data::DatasetManifest make_toy_dataset(const ToyDefectSpec& spec, const std::string& out_root) {
  spec.validate();
  fs::path root(out_root);
  std::error_code ec;
  fs::create_directories(root, ec);
  if (!fs::is_directory(root))
    throw std::runtime_error("cannot create toy dataset directory: " + out_root);

  const int64_t n_train = spec.samples_per_class;
  const int64_t n_hold = std::max<int64_t>(1, n_train / 5);

  std::vector<std::string> warnings;
  struct Row {
    std::string rel;
    std::string labels;
  };
  std::vector<Row> split_rows[3];

  for (int64_t cat = 0; cat < data::kNumCategories; ++cat) {
    const std::string& cls = data::category_names()[cat];
    fs::create_directories(root / "images" / cls);
    fs::create_directories(root / "masks" / cls);
    const int64_t total = n_train + 2 * n_hold;
    for (int64_t i = 0; i < total; ++i) {
      ToyRender r = render_toy_sample(spec, cat, i, &warnings);
      std::string name = std::to_string(spec.seed) + "_" + std::to_string(i) + ".png";
      std::string rel = "images/" + cls + "/" + name;
      img::write_image_rgb((root / rel).string(), r.image);
      img::write_image_gray((root / "masks" / cls / name).string(), r.mask);
      int split = i < n_train ? 0 : (i < n_train + n_hold ? 1 : 2);
      split_rows[split].push_back({rel, cls});
    }
  }

  const char* index_names[3] = {"index.csv", "index_val.csv", "index_test.csv"};
  for (int s = 0; s < 3; ++s) {
    std::ofstream out(root / index_names[s]);
    if (!out) throw std::runtime_error("cannot write index file under " + out_root);
    out << "path,labels,source\n";
    for (const Row& row : split_rows[s]) out << row.rel << "," << row.labels << ",real\n";
  }

  data::DatasetManifest manifest = data::load_manifest(out_root, data::Split::train);
  // Clamp messages repeat per sample; keep one per distinct message.
  std::sort(warnings.begin(), warnings.end());
  warnings.erase(std::unique(warnings.begin(), warnings.end()), warnings.end());
  for (std::string& w : warnings) manifest.warnings.push_back(std::move(w));
  return manifest;
}

}  // namespace defsynth::toy
