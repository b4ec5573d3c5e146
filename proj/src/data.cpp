#include "hpcf/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace hpcf {

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "train";
}

Split split_from_name(const std::string& name) {
  if (name == "train") return Split::kTrain;
  if (name == "val") return Split::kVal;
  if (name == "test") return Split::kTest;
  throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  DatasetManifest manifest;
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string a, b, c, d, e;
    if (line_no == 1 && line.rfind("#seed\t", 0) == 0) {
      manifest.seed = std::stoull(line.substr(6));
      continue;
    }
    if (!std::getline(ls, a, '\t') || !std::getline(ls, b, '\t') || !std::getline(ls, c, '\t') ||
        !std::getline(ls, d, '\t') || !std::getline(ls, e, '\t')) {
      throw IoError("manifest " + path.string() + ": missing field on line " +
                    std::to_string(line_no));
    }
    std::string extra;
    if (std::getline(ls, extra, '\t')) {
      throw IoError("manifest " + path.string() + ": too many fields on line " +
                    std::to_string(line_no));
    }
    if (!ids.insert(a).second) {
      throw IoError("manifest " + path.string() + ": duplicate id '" + a + "' on line " +
                    std::to_string(line_no));
    }
    Split split;
    try {
      split = split_from_name(e);
    } catch (const ConfigError&) {
      throw IoError("manifest " + path.string() + ": bad split on line " +
                    std::to_string(line_no));
    }
    manifest.records.push_back(ManifestRecord{a, b, c, d, split});
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << "#seed\t" << manifest.seed << "\n";
  for (const auto& r : manifest.records) {
    os << r.id << '\t' << r.path_t0 << '\t' << r.path_t1 << '\t' << r.path_mask << '\t'
       << split_name(r.split) << '\n';
  }
  if (!os.good()) throw IoError("short write for manifest " + path.string());
}

Tensor image_to_tensor(const Image& img) {
  if (img.channels != 3) throw IoError("image_to_tensor: expected a 3-channel image");
  Tensor t = Tensor::zeros({3, img.h, img.w});
  auto d = t.raw_data();
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * img.w + x;
      for (int c = 0; c < 3; ++c) {
        d[static_cast<std::size_t>(c) * plane + p] = img.at(y, x, c) / 255.0;
      }
    }
  }
  return t;
}

Image tensor_to_image(const Tensor& t) {
  if (t.rank() != 3 || t.dim(0) != 3) throw IoError("tensor_to_image: expected shape (3,h,w)");
  Image img;
  img.h = t.dim(1);
  img.w = t.dim(2);
  img.channels = 3;
  img.pix.resize(static_cast<std::size_t>(img.h) * img.w * 3);
  const auto d = t.data();
  const std::size_t plane = static_cast<std::size_t>(img.h) * img.w;
  for (int y = 0; y < img.h; ++y) {
    for (int x = 0; x < img.w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * img.w + x;
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(d[static_cast<std::size_t>(c) * plane + p], 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }
  return img;
}

ChangeMap image_to_change_map(const Image& mask) {
  if (mask.channels != 1) throw IoError("image_to_change_map: expected a grayscale image");
  ChangeMap m;
  m.h = mask.h;
  m.w = mask.w;
  m.labels.resize(mask.pix.size());
  for (std::size_t i = 0; i < mask.pix.size(); ++i) m.labels[i] = mask.pix[i] >= 128 ? 1 : 0;
  return m;
}

Image change_map_to_image(const ChangeMap& m) {
  Image img;
  img.h = m.h;
  img.w = m.w;
  img.channels = 1;
  img.pix.resize(m.labels.size());
  for (std::size_t i = 0; i < m.labels.size(); ++i) img.pix[i] = m.labels[i] ? 255 : 0;
  return img;
}

ImagePair load_image_pair(const ManifestRecord& record, const std::filesystem::path& base_dir) {
  ImagePair pair;
  pair.id = record.id;
  Image i0, i1, im;
  try {
    i0 = read_png(base_dir / record.path_t0);
    i1 = read_png(base_dir / record.path_t1);
    im = read_png(base_dir / record.path_mask);
  } catch (const IoError& e) {
    throw IoError("pair '" + record.id + "': " + e.what());
  }
  if (i0.channels != 3 || i1.channels != 3) {
    throw IoError("pair '" + record.id + "': images must be 8-bit RGB");
  }
  if (im.channels != 1) {
    throw IoError("pair '" + record.id + "': mask must be 8-bit grayscale");
  }
  if (i0.h != i1.h || i0.w != i1.w || i0.h != im.h || i0.w != im.w) {
    throw IoError("pair '" + record.id + "': t0/t1/mask dimensions differ");
  }
  pair.t0 = image_to_tensor(i0);
  pair.t1 = image_to_tensor(i1);
  pair.mask = image_to_change_map(im);
  return pair;
}

long long sliding_crop_count(int h, int w, int ph, int pw, int stride) {
  if (ph > h || pw > w) throw ShapeError("sliding_crop: patch larger than image");
  if (stride < 1) throw ShapeError("sliding_crop: stride must be >= 1");
  const long long cols = (w - pw) / stride + 1;
  const long long rows = ph < h ? (h - ph) / stride + 1 : 1;
  return cols * rows;
}

namespace {

Tensor crop_tensor(const Tensor& t, int y0, int x0, int ph, int pw) {
  const int c = t.dim(0), w = t.dim(2);
  Tensor out = Tensor::zeros({c, ph, pw});
  auto dst = out.raw_data();
  const auto src = t.data();
  const std::size_t splane = static_cast<std::size_t>(t.dim(1)) * w;
  const std::size_t dplane = static_cast<std::size_t>(ph) * pw;
  for (int ci = 0; ci < c; ++ci) {
    for (int y = 0; y < ph; ++y) {
      const double* srow = src.data() + ci * splane + static_cast<std::size_t>(y0 + y) * w + x0;
      std::copy(srow, srow + pw, dst.begin() + ci * dplane + static_cast<std::size_t>(y) * pw);
    }
  }
  return out;
}

ChangeMap crop_mask(const ChangeMap& m, int y0, int x0, int ph, int pw) {
  ChangeMap out;
  out.h = ph;
  out.w = pw;
  out.labels.resize(static_cast<std::size_t>(ph) * pw);
  for (int y = 0; y < ph; ++y) {
    const auto* srow = m.labels.data() + static_cast<std::size_t>(y0 + y) * m.w + x0;
    std::copy(srow, srow + pw, out.labels.begin() + static_cast<std::size_t>(y) * pw);
  }
  return out;
}

}  // namespace

std::vector<ImagePair> sliding_crop(const ImagePair& pair, int ph, int pw, int stride) {
  const int h = pair.height(), w = pair.width();
  sliding_crop_count(h, w, ph, pw, stride);  // validates
  std::vector<ImagePair> out;
  for (int y0 = 0; y0 + ph <= h; y0 += stride) {
    for (int x0 = 0; x0 + pw <= w; x0 += stride) {
      ImagePair patch;
      patch.id = pair.id + "@y" + std::to_string(y0) + "x" + std::to_string(x0);
      patch.t0 = crop_tensor(pair.t0, y0, x0, ph, pw);
      patch.t1 = crop_tensor(pair.t1, y0, x0, ph, pw);
      if (pair.mask) patch.mask = crop_mask(*pair.mask, y0, x0, ph, pw);
      out.push_back(std::move(patch));
    }
  }
  return out;
}

namespace {

template <typename T>
std::vector<T> mirror_h(const std::vector<T>& src, int h, int w, int channels) {
  std::vector<T> out(src.size());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out[c * plane + static_cast<std::size_t>(y) * w + x] =
            src[c * plane + static_cast<std::size_t>(y) * w + (w - 1 - x)];
      }
    }
  }
  return out;
}

// Counterclockwise quarter turn; (h,w) becomes (w,h).
template <typename T>
std::vector<T> rot90ccw(const std::vector<T>& src, int h, int w, int channels) {
  std::vector<T> out(src.size());
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < w; ++y) {      // output rows: w of them
      for (int x = 0; x < h; ++x) {    // output cols: h of them
        out[c * plane + static_cast<std::size_t>(y) * h + x] =
            src[c * plane + static_cast<std::size_t>(x) * w + (w - 1 - y)];
      }
    }
  }
  return out;
}

}  // namespace

ImagePair apply_augment(const ImagePair& pair, int variant) {
  if (variant < 0 || variant > 7) throw ShapeError("apply_augment: variant must be in [0,7]");
  const int mirror = variant % 2;
  const int quarter_turns = variant / 2;
  int h = pair.height(), w = pair.width();
  if (quarter_turns % 2 == 1 && h != w) {
    throw ShapeError("apply_augment: right-angle rotations need square inputs, got " +
                     std::to_string(h) + "x" + std::to_string(w));
  }

  auto img0 = std::vector<double>(pair.t0.data().begin(), pair.t0.data().end());
  auto img1 = std::vector<double>(pair.t1.data().begin(), pair.t1.data().end());
  std::vector<std::uint8_t> mask;
  if (pair.mask) mask = pair.mask->labels;

  if (mirror) {
    img0 = mirror_h(img0, h, w, 3);
    img1 = mirror_h(img1, h, w, 3);
    if (pair.mask) mask = mirror_h(mask, h, w, 1);
  }
  for (int k = 0; k < quarter_turns; ++k) {
    img0 = rot90ccw(img0, h, w, 3);
    img1 = rot90ccw(img1, h, w, 3);
    if (pair.mask) mask = rot90ccw(mask, h, w, 1);
    std::swap(h, w);
  }

  ImagePair out;
  out.id = pair.id + "~a" + std::to_string(variant);
  out.t0 = Tensor::from_data({3, h, w}, std::move(img0));
  out.t1 = Tensor::from_data({3, h, w}, std::move(img1));
  if (pair.mask) out.mask = ChangeMap{h, w, std::move(mask)};
  return out;
}

std::vector<ImagePair> augment8(const ImagePair& pair) {
  if (pair.height() != pair.width()) {
    throw ShapeError("augment8: square patches required for rotations");
  }
  std::vector<ImagePair> out;
  out.reserve(8);
  for (int v = 0; v < 8; ++v) out.push_back(apply_augment(pair, v));
  return out;
}

std::vector<LoadedSample> load_split(const DatasetManifest& manifest,
                                     const std::filesystem::path& base_dir, Split split,
                                     bool augment) {
  std::vector<LoadedSample> out;
  for (const auto& record : manifest.records) {
    if (record.split != split) continue;
    ImagePair pair = load_image_pair(record, base_dir);
    if (!pair.mask) throw IoError("pair '" + record.id + "': missing ground truth");
    if (augment) {
      for (auto& variant : augment8(pair)) {
        out.push_back(LoadedSample{variant.id, variant.t0, variant.t1, std::move(*variant.mask)});
      }
    } else {
      out.push_back(LoadedSample{pair.id, pair.t0, pair.t1, std::move(*pair.mask)});
    }
  }
  return out;
}

long long expanded_record_count(const DatasetManifest& manifest,
                                const std::filesystem::path& base_dir, int ph, int pw, int stride,
                                bool augment) {
  long long total = 0;
  for (const auto& record : manifest.records) {
    const Image img = read_png(base_dir / record.path_t0);
    total += sliding_crop_count(img.h, img.w, ph, pw, stride) * (augment ? 8 : 1);
  }
  return total;
}

}  // namespace hpcf
