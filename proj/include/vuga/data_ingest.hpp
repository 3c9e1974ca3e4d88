#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include <torch/torch.h>

#include "vuga/common.hpp"

namespace vuga {

enum class SourceKind { equirectangular, planar };
enum class Split { unassigned, train, test };

// A decoded RGB raster, either an equirectangular panorama or a plain 2D
// image. Pixels are H x W x 3 float32 in [0,1].
struct ErpImage {
  torch::Tensor pixels;
  SourceKind source_kind = SourceKind::planar;
  std::string source_path;

  void validate() const;
};

struct QualityRecord {
  std::string image_id;
  std::string path;
  double mos = 0.0;
  Split split = Split::unassigned;
};

struct DatasetManifest {
  std::string name;
  std::vector<QualityRecord> records;
  std::pair<double, double> mos_range{0.0, 0.0};

  std::vector<QualityRecord> subset(Split which) const;
  size_t count(Split which) const;
};

struct PreprocessConfig {
  int64_t target_resolution = 224;
  std::array<double, 3> normalization_mean{0.485, 0.456, 0.406};
  std::array<double, 3> normalization_std{0.229, 0.224, 0.225};

  void validate() const;
};

// Parses a CSV manifest with header `image_id,path,mos[,split]`. Relative
// image paths are resolved against the manifest's directory.
DatasetManifest load_manifest(const std::string& path);

// Assigns every record to train or test. |train| = round(fraction * N),
// clamped so both splits stay nonempty. Same seed, same assignment.
DatasetManifest split_dataset(const DatasetManifest& manifest, double train_fraction,
                              uint64_t seed);

// Decodes a PNG/JPEG file. Images with a 2:1 aspect ratio are tagged as
// equirectangular, everything else as planar.
ErpImage decode_image(const std::string& path);

// The preprocessing operator: bilinear resize to R x R (no aspect
// preservation) followed by per-channel (x - mean) / std. Returns 3 x R x R.
torch::Tensor preprocess(const ErpImage& image, const PreprocessConfig& cfg);

// Inverse of the normalization step; returns the resized pixels in [0,1].
torch::Tensor denormalize(const torch::Tensor& chw, const PreprocessConfig& cfg);

}  // namespace vuga
