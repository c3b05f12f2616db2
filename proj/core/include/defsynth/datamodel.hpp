#pragma once

#include "defsynth/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace defsynth::data {

inline constexpr int64_t kNumCategories = 6;
inline constexpr int64_t kNormalIndex = 5;

/// Fixed category order: crack, spallation, efflorescence, exposed_bars,
/// corrosion, normal.
const std::vector<std::string>& category_names();

/// Index of a category name; accepts spaces in place of underscores and is
/// case-insensitive. Returns -1 when unknown.
int64_t category_index(const std::string& name);

/// Multi-hot category label. The normal bit excludes every defect bit.
struct LabelVector {
  std::array<int, kNumCategories> bits{};

  static LabelVector normal();
  static LabelVector single(int64_t category);

  /// Parses a label list like "crack|corrosion" (also accepts commas).
  /// Throws on unknown names, empty lists, or normal+defect combinations.
  static LabelVector from_names(const std::string& names);

  std::string to_names() const;
  Tensor to_tensor() const;
  bool is_normal() const { return bits[kNormalIndex] == 1; }
  void validate() const;

  bool operator==(const LabelVector&) const = default;
};

enum class Source { real, synthetic, restored };
std::string source_name(Source s);
Source parse_source(const std::string& name);

struct SampleRecord {
  std::string path;
  LabelVector label;
  Source source = Source::real;
};

enum class Split { train, val, test };
std::string split_name(Split s);
Split parse_split(const std::string& name);

/// Index file name for a split: index.csv, index_val.csv, index_test.csv.
std::string split_index_file(Split s);

struct DatasetManifest {
  std::vector<SampleRecord> records;
  Split split = Split::train;
  std::vector<std::string> categories;
  std::vector<std::string> warnings;
};

/// Loads `root/<split index>.csv`. Rows are `relative_path,labels[,source]`
/// with labels `|`-separated (commas accepted inside quotes). Malformed rows
/// and rows naming missing files are skipped and reported in `warnings`.
/// A missing root or index file is fatal.
DatasetManifest load_manifest(const std::string& root, Split split);

/// Splits one CSV line into fields, honoring double quotes.
std::vector<std::string> split_csv_line(const std::string& line);

/// Uniformly random square crops from a (C,H,W) image; deterministic per seed.
/// Throws when the image is smaller than the patch in either axis.
std::vector<Tensor> crop_normal_patches(const Tensor& full_image, int64_t patch_size,
                                        int64_t count, uint64_t seed);

/// Imports a directory tree whose subfolders are class-combination names
/// (e.g. Crack_Spallation, Background) by writing `root/index.csv` referencing
/// the images in place. Returns the record count and per-folder warnings.
std::pair<int64_t, std::vector<std::string>> index_class_folders(const std::string& root);

}  // namespace defsynth::data
