#include <algorithm>
#include <cmath>
#include <cstdio>

#include "hpcf/data.hpp"

namespace hpcf {

namespace {

struct Shape : SynthShape {
  double color[3] = {0, 0, 0};
};

bool bbox_overlap(const SynthShape& a, const SynthShape& b) {
  return a.x0 < b.x0 + b.w && b.x0 < a.x0 + a.w && a.y0 < b.y0 + b.h && b.y0 < a.y0 + a.h;
}

}  // namespace

bool synth_shape_covers(const SynthShape& s, int y, int x) {
  if (x < s.x0 || x >= s.x0 + s.w || y < s.y0 || y >= s.y0 + s.h) return false;
  if (!s.ellipse) return true;
  const double cx = s.x0 + (s.w - 1) / 2.0;
  const double cy = s.y0 + (s.h - 1) / 2.0;
  const double rx = s.w / 2.0;
  const double ry = s.h / 2.0;
  const double dx = (x - cx) / rx;
  const double dy = (y - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

DatasetManifest synth_dataset(std::uint64_t seed, const SynthOptions& opt,
                              const std::filesystem::path& out_dir,
                              std::vector<std::vector<SynthShape>>* shapes_out) {
  if (opt.count < 1) throw ConfigError("synth: count must be >= 1");
  if (opt.height % 16 != 0 || opt.width % 16 != 0) {
    throw ConfigError("synth: height and width must be divisible by 16, got " +
                      std::to_string(opt.height) + "x" + std::to_string(opt.width));
  }
  if (opt.val_fraction < 0 || opt.val_fraction > 1) {
    throw ConfigError("synth: val_fraction must be in [0,1]");
  }
  if (opt.min_objects < 0 || opt.max_objects < opt.min_objects) {
    throw ConfigError("synth: bad object count range");
  }
  std::filesystem::create_directories(out_dir / "images");

  const int h = opt.height, w = opt.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int val_count =
      std::clamp(static_cast<int>(std::lround(opt.count * opt.val_fraction)), 0, opt.count);

  DatasetManifest manifest;
  manifest.seed = seed;
  if (shapes_out) shapes_out->clear();
  Rng root(seed);

  for (int i = 0; i < opt.count; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "pair_%05d", i);
    const std::string id = name;
    Rng rng = root.stream(id);

    // Shared background: per-channel corner gradient plus per-pixel noise.
    std::vector<double> t0(plane * 3), t1(plane * 3);
    for (int c = 0; c < 3; ++c) {
      const double c00 = rng.uniform(0.15, 0.85), c01 = rng.uniform(0.15, 0.85);
      const double c10 = rng.uniform(0.15, 0.85), c11 = rng.uniform(0.15, 0.85);
      for (int y = 0; y < h; ++y) {
        const double fy = h > 1 ? static_cast<double>(y) / (h - 1) : 0.0;
        for (int x = 0; x < w; ++x) {
          const double fx = w > 1 ? static_cast<double>(x) / (w - 1) : 0.0;
          const double g = (1 - fy) * ((1 - fx) * c00 + fx * c01) +
                           fy * ((1 - fx) * c10 + fx * c11);
          const double v = g + rng.uniform(-opt.noise, opt.noise);
          t0[c * plane + static_cast<std::size_t>(y) * w + x] = v;
          t1[c * plane + static_cast<std::size_t>(y) * w + x] = v;
        }
      }
    }

    // Objects appear in exactly one image each; bounding boxes are kept
    // disjoint so the symmetric-difference label stays truthful.
    std::vector<Shape> shapes;
    const int want = opt.no_objects ? 0 : rng.uniform_int(opt.min_objects, opt.max_objects);
    for (int obj = 0; obj < want; ++obj) {
      Shape s;
      bool placed = false;
      for (int attempt = 0; attempt < 20 && !placed; ++attempt) {
        s.ellipse = rng.bernoulli(0.5);
        s.w = std::max(2, static_cast<int>(std::lround(rng.uniform(opt.min_obj_frac, opt.max_obj_frac) * w)));
        s.h = std::max(2, static_cast<int>(std::lround(rng.uniform(opt.min_obj_frac, opt.max_obj_frac) * h)));
        s.w = std::min(s.w, w);
        s.h = std::min(s.h, h);
        s.x0 = rng.uniform_int(0, w - s.w);
        s.y0 = rng.uniform_int(0, h - s.h);
        placed = std::none_of(shapes.begin(), shapes.end(),
                              [&](const Shape& other) { return bbox_overlap(s, other); });
      }
      if (!placed) continue;
      s.target = rng.bernoulli(0.5) ? 1 : 0;
      for (double& c : s.color) c = rng.uniform(0.0, 1.0);
      shapes.push_back(s);
    }

    std::vector<std::uint8_t> support0(plane, 0), support1(plane, 0);
    for (const auto& s : shapes) {
      auto& img = s.target == 0 ? t0 : t1;
      auto& support = s.target == 0 ? support0 : support1;
      for (int y = s.y0; y < s.y0 + s.h; ++y) {
        for (int x = s.x0; x < s.x0 + s.w; ++x) {
          if (!synth_shape_covers(s, y, x)) continue;
          support[static_cast<std::size_t>(y) * w + x] = 1;
          for (int c = 0; c < 3; ++c) {
            img[c * plane + static_cast<std::size_t>(y) * w + x] = s.color[c];
          }
        }
      }
    }

    if (shapes_out) {
      std::vector<SynthShape> geo(shapes.begin(), shapes.end());
      shapes_out->push_back(std::move(geo));
    }

    ChangeMap gt;
    gt.h = h;
    gt.w = w;
    gt.labels.resize(plane);
    for (std::size_t p = 0; p < plane; ++p) gt.labels[p] = support0[p] ^ support1[p];

    // Illumination change on t1 only; deliberately not labeled as change.
    const double brightness = 1.0 + rng.uniform(-opt.jitter, opt.jitter);
    for (double& v : t1) v *= brightness;
    for (double& v : t0) v = std::clamp(v, 0.0, 1.0);
    for (double& v : t1) v = std::clamp(v, 0.0, 1.0);

    const std::string p0 = "images/" + id + "_t0.png";
    const std::string p1 = "images/" + id + "_t1.png";
    const std::string pm = "images/" + id + "_gt.png";
    write_png(out_dir / p0, tensor_to_image(Tensor::from_data({3, h, w}, std::move(t0))));
    write_png(out_dir / p1, tensor_to_image(Tensor::from_data({3, h, w}, std::move(t1))));
    write_png(out_dir / pm, change_map_to_image(gt));

    ManifestRecord record;
    record.id = id;
    record.path_t0 = p0;
    record.path_t1 = p1;
    record.path_mask = pm;
    record.split = i < opt.count - val_count ? Split::kTrain : Split::kVal;
    manifest.records.push_back(std::move(record));
  }

  write_manifest(out_dir / "manifest.tsv", manifest);
  return manifest;
}

}  // namespace hpcf
