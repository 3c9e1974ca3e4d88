#include "vuga/data_ingest.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace fs = std::filesystem;
namespace F = torch::nn::functional;

namespace vuga {

void ErpImage::validate() const {
  VUGA_CHECK(pixels.defined(), validation_error, "image has no pixel data: ", source_path);
  VUGA_CHECK(pixels.dim() == 3 && pixels.size(2) == 3, shape_error,
             "image must be HxWx3, got ", pixels.sizes(), ": ", source_path);
  VUGA_CHECK(pixels.size(0) >= 1 && pixels.size(1) >= 1, shape_error,
             "image must be at least 1x1: ", source_path);
  VUGA_CHECK(pixels.isfinite().all().item<bool>(), validation_error,
             "non-finite pixel after decode: ", source_path);
  const double lo = pixels.min().item<double>();
  const double hi = pixels.max().item<double>();
  VUGA_CHECK(lo >= 0.0 && hi <= 1.0, validation_error, "pixels outside [0,1] (min=", lo,
             ", max=", hi, "): ", source_path);
}

void PreprocessConfig::validate() const {
  VUGA_CHECK(target_resolution > 0 && target_resolution % 32 == 0, config_error,
             "target_resolution must be a positive multiple of 32, got ", target_resolution);
  for (double s : normalization_std)
    VUGA_CHECK(s > 0.0, config_error, "normalization_std components must be positive");
}

std::vector<QualityRecord> DatasetManifest::subset(Split which) const {
  std::vector<QualityRecord> out;
  for (const auto& r : records)
    if (r.split == which) out.push_back(r);
  return out;
}

size_t DatasetManifest::count(Split which) const {
  return static_cast<size_t>(
      std::count_if(records.begin(), records.end(),
                    [&](const QualityRecord& r) { return r.split == which; }));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_mos(const std::string& text, size_t line_no) {
  size_t consumed = 0;
  double value = 0.0;
  try {
    value = std::stod(text, &consumed);
  } catch (const std::exception&) {
    throw parse_error(detail::msg("line ", line_no, ": cannot parse mos value '", text, "'"));
  }
  VUGA_CHECK(consumed == text.size(), parse_error, "line ", line_no,
             ": trailing characters in mos value '", text, "'");
  VUGA_CHECK(std::isfinite(value), parse_error, "line ", line_no, ": mos value is not finite");
  return value;
}

Split parse_split(const std::string& text, size_t line_no) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text.empty()) return Split::unassigned;
  throw parse_error(
      detail::msg("line ", line_no, ": split must be 'train' or 'test', got '", text, "'"));
}

}  // namespace

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  VUGA_CHECK(in.good(), io_error, "cannot open manifest: ", path);

  std::string line;
  VUGA_CHECK(static_cast<bool>(std::getline(in, line)), parse_error, "manifest is empty: ", path);
  auto header = split_csv_line(line);
  const bool has_split = header.size() == 4 && header[3] == "split";
  VUGA_CHECK((header.size() == 3 || has_split) && header[0] == "image_id" &&
                 header[1] == "path" && header[2] == "mos",
             parse_error, "manifest header must be 'image_id,path,mos[,split]', got '", line, "'");

  DatasetManifest manifest;
  manifest.name = fs::path(path).stem().string();
  const fs::path base = fs::path(path).parent_path();

  std::unordered_set<std::string> seen;
  size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_csv_line(line);
    VUGA_CHECK(fields.size() == header.size(), parse_error, "line ", line_no, ": expected ",
               header.size(), " fields, got ", fields.size());

    QualityRecord rec;
    rec.image_id = fields[0];
    VUGA_CHECK(!rec.image_id.empty(), parse_error, "line ", line_no, ": empty image_id");
    VUGA_CHECK(seen.insert(rec.image_id).second, validation_error, "line ", line_no,
               ": duplicate image_id '", rec.image_id, "'");
    fs::path p(fields[1]);
    rec.path = p.is_absolute() ? p.string() : (base / p).string();
    rec.mos = parse_mos(fields[2], line_no);
    if (has_split) rec.split = parse_split(fields[3], line_no);
    manifest.records.push_back(std::move(rec));
  }
  VUGA_CHECK(!manifest.records.empty(), validation_error, "manifest has no records: ", path);

  auto [lo, hi] = std::minmax_element(
      manifest.records.begin(), manifest.records.end(),
      [](const QualityRecord& a, const QualityRecord& b) { return a.mos < b.mos; });
  manifest.mos_range = {lo->mos, hi->mos};
  return manifest;
}

DatasetManifest split_dataset(const DatasetManifest& manifest, double train_fraction,
                              uint64_t seed) {
  VUGA_CHECK(train_fraction > 0.0 && train_fraction < 1.0, validation_error,
             "train_fraction must lie in (0,1), got ", train_fraction);
  const size_t n = manifest.records.size();
  VUGA_CHECK(n >= 2, validation_error, "cannot split ", n, " record(s) into train and test");

  // Hand-rolled Fisher-Yates so the assignment is identical across platforms.
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed);
  for (size_t i = n - 1; i > 0; --i) {
    const size_t j = static_cast<size_t>(rng() % (i + 1));
    std::swap(order[i], order[j]);
  }

  size_t n_train = static_cast<size_t>(std::llround(train_fraction * static_cast<double>(n)));
  n_train = std::clamp<size_t>(n_train, 1, n - 1);

  DatasetManifest out = manifest;
  for (auto& r : out.records) r.split = Split::test;
  for (size_t i = 0; i < n_train; ++i) out.records[order[i]].split = Split::train;
  return out;
}

ErpImage decode_image(const std::string& path) {
  cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
  VUGA_CHECK(!bgr.empty(), io_error, "cannot decode image: ", path);
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat f32;
  rgb.convertTo(f32, CV_32FC3, 1.0 / 255.0);

  ErpImage img;
  img.pixels = torch::from_blob(f32.data, {f32.rows, f32.cols, 3}, torch::kFloat32).clone();
  img.source_kind =
      (f32.cols == 2 * f32.rows) ? SourceKind::equirectangular : SourceKind::planar;
  img.source_path = path;
  img.validate();
  return img;
}

torch::Tensor preprocess(const ErpImage& image, const PreprocessConfig& cfg) {
  cfg.validate();
  image.validate();
  const int64_t r = cfg.target_resolution;

  auto chw = image.pixels.permute({2, 0, 1}).unsqueeze(0);
  if (chw.size(2) != r || chw.size(3) != r) {
    chw = F::interpolate(chw, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{r, r})
                                  .mode(torch::kBilinear)
                                  .align_corners(false));
  }
  auto mean = torch::tensor({cfg.normalization_mean[0], cfg.normalization_mean[1],
                             cfg.normalization_mean[2]},
                            torch::kFloat32)
                  .view({1, 3, 1, 1});
  auto std = torch::tensor({cfg.normalization_std[0], cfg.normalization_std[1],
                            cfg.normalization_std[2]},
                           torch::kFloat32)
                 .view({1, 3, 1, 1});
  auto out = ((chw - mean) / std).squeeze(0);
  VUGA_CHECK(out.isfinite().all().item<bool>(), validation_error,
             "non-finite value after preprocessing: ", image.source_path);
  return out;
}

torch::Tensor denormalize(const torch::Tensor& chw, const PreprocessConfig& cfg) {
  VUGA_CHECK(chw.dim() == 3 && chw.size(0) == 3, shape_error, "expected 3xHxW, got ",
             chw.sizes());
  auto mean = torch::tensor({cfg.normalization_mean[0], cfg.normalization_mean[1],
                             cfg.normalization_mean[2]},
                            torch::kFloat32)
                  .view({3, 1, 1});
  auto std = torch::tensor({cfg.normalization_std[0], cfg.normalization_std[1],
                            cfg.normalization_std[2]},
                           torch::kFloat32)
                 .view({3, 1, 1});
  return chw * std + mean;
}

}  // namespace vuga
