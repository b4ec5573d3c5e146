#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpcf/change_map.hpp"
#include "hpcf/image.hpp"
#include "hpcf/tensor.hpp"

namespace hpcf {

enum class Split { kTrain, kVal, kTest };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// Two co-registered RGB images in [0,1] (tensors of shape (3,h,w)) plus the
/// optional ground-truth change map.
struct ImagePair {
  std::string id;
  Tensor t0;
  Tensor t1;
  std::optional<ChangeMap> mask;

  int height() const { return t0.dim(1); }
  int width() const { return t0.dim(2); }
};

struct ManifestRecord {
  std::string id;
  std::string path_t0;
  std::string path_t1;
  std::string path_mask;
  Split split = Split::kTrain;
};

/// Tab-separated records, one per line, optionally preceded by a
/// "#seed<TAB><value>" header. Paths are relative to the manifest location.
struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestRecord> records;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);

/// Pixel values scaled to [0,1]; the mask binarized at 128 (>=128 = changed).
ImagePair load_image_pair(const ManifestRecord& record, const std::filesystem::path& base_dir);

Tensor image_to_tensor(const Image& img);          // (3,h,w) in [0,1]
Image tensor_to_image(const Tensor& t);            // clamps and quantizes
ChangeMap image_to_change_map(const Image& mask);  // threshold 128
Image change_map_to_image(const ChangeMap& m);     // 0 / 255 grayscale

/// Patches at offsets 0, s, 2s, ... while offset + patch <= extent, along
/// width and (when ph < H) height. Masks are cropped identically.
std::vector<ImagePair> sliding_crop(const ImagePair& pair, int ph, int pw, int stride);
long long sliding_crop_count(int h, int w, int ph, int pw, int stride);

/// Variant v in 0..7 applies rot90ccw^(v/2) after an optional horizontal
/// mirror (v%2), identically to t0, t1 and the mask. Right-angle rotations
/// require square inputs.
ImagePair apply_augment(const ImagePair& pair, int variant);
std::vector<ImagePair> augment8(const ImagePair& pair);

struct SynthOptions {
  int count = 16;
  int height = 64;
  int width = 64;
  double val_fraction = 0.0;
  int min_objects = 1;
  int max_objects = 3;
  double min_obj_frac = 0.15;  // object extent relative to image size
  double max_obj_frac = 0.45;
  double noise = 0.03;          // shared background noise amplitude
  double jitter = 0.10;         // brightness jitter on t1, labeled unchanged
  bool no_objects = false;
};

/// Geometry of one rendered object; enough to re-rasterize its support.
struct SynthShape {
  bool ellipse = false;
  int target = 0;  // 0 = drawn into t0, 1 = into t1
  int x0 = 0, y0 = 0, w = 0, h = 0;
};

bool synth_shape_covers(const SynthShape& s, int y, int x);

/// Renders pairs that share a background while rectangles/ellipses appear in
/// exactly one image of each pair; ground truth is the symmetric difference
/// of the two object supports. Byte-identical output for a given seed.
/// `shapes_out`, when given, receives the per-pair object geometry.
DatasetManifest synth_dataset(std::uint64_t seed, const SynthOptions& opt,
                              const std::filesystem::path& out_dir,
                              std::vector<std::vector<SynthShape>>* shapes_out = nullptr);

/// A fully decoded training/eval sample.
struct LoadedSample {
  std::string id;
  Tensor t0;  // (3,h,w)
  Tensor t1;
  ChangeMap gt;
};

/// Loads every record of `split`, optionally expanding the 8 augmentation
/// variants per pair.
std::vector<LoadedSample> load_split(const DatasetManifest& manifest,
                                     const std::filesystem::path& base_dir, Split split,
                                     bool augment = false);

/// Record count after sliding-window cropping and optional augmentation,
/// without materializing the patches.
long long expanded_record_count(const DatasetManifest& manifest,
                                const std::filesystem::path& base_dir, int ph, int pw, int stride,
                                bool augment);

}  // namespace hpcf
