#include "defsynth/datamodel.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <random>
#include <stdexcept>

namespace fs = std::filesystem;

namespace defsynth::data {

namespace {

std::string canonical_token(const std::string& raw) {
  std::string out;
  for (char ch : raw) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == '-')
      out.push_back('_');
    else
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  }
  size_t a = out.find_first_not_of('_');
  size_t b = out.find_last_not_of('_');
  if (a == std::string::npos) return "";
  return out.substr(a, b - a + 1);
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  size_t b = s.find_last_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

}  // namespace

const std::vector<std::string>& category_names() {
  static const std::vector<std::string> names = {"crack",        "spallation", "efflorescence",
                                                 "exposed_bars", "corrosion",  "normal"};
  return names;
}

int64_t category_index(const std::string& name) {
  std::string t = canonical_token(name);
  if (t == "background") t = "normal";
  if (t == "exposedbars") t = "exposed_bars";
  const auto& names = category_names();
  for (int64_t i = 0; i < kNumCategories; ++i)
    if (names[i] == t) return i;
  return -1;
}

LabelVector LabelVector::normal() { return single(kNormalIndex); }

LabelVector LabelVector::single(int64_t category) {
  if (category < 0 || category >= kNumCategories)
    throw std::invalid_argument("LabelVector: category index out of range: " +
                                std::to_string(category));
  LabelVector v;
  v.bits[category] = 1;
  return v;
}

LabelVector LabelVector::from_names(const std::string& names) {
  LabelVector v;
  std::string token;
  auto flush = [&] {
    std::string t = trim(token);
    token.clear();
    if (t.empty()) return;
    int64_t idx = category_index(t);
    if (idx < 0) throw std::invalid_argument("unknown category '" + t + "'");
    v.bits[idx] = 1;
  };
  for (char ch : names) {
    if (ch == '|' || ch == ',')
      flush();
    else
      token.push_back(ch);
  }
  flush();
  v.validate();
  return v;
}

std::string LabelVector::to_names() const {
  std::string out;
  for (int64_t i = 0; i < kNumCategories; ++i)
    if (bits[i]) {
      if (!out.empty()) out.push_back('|');
      out += category_names()[i];
    }
  return out;
}

Tensor LabelVector::to_tensor() const {
  Tensor t({kNumCategories});
  for (int64_t i = 0; i < kNumCategories; ++i) t.at(i) = bits[i];
  return t;
}

void LabelVector::validate() const {
  int64_t set = 0;
  for (int b : bits) {
    if (b != 0 && b != 1) throw std::invalid_argument("label bits must be 0 or 1");
    set += b;
  }
  if (set == 0) throw std::invalid_argument("label must set at least one category");
  if (bits[kNormalIndex] == 1 && set > 1)
    throw std::invalid_argument("normal label excludes defect categories");
}

std::string source_name(Source s) {
  switch (s) {
    case Source::real: return "real";
    case Source::synthetic: return "synthetic";
    case Source::restored: return "restored";
  }
  throw std::logic_error("bad source");
}

Source parse_source(const std::string& name) {
  std::string t = canonical_token(name);
  if (t == "real") return Source::real;
  if (t == "synthetic") return Source::synthetic;
  if (t == "restored") return Source::restored;
  throw std::invalid_argument("unknown source '" + name + "'");
}

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  throw std::logic_error("bad split");
}

Split parse_split(const std::string& name) {
  std::string t = canonical_token(name);
  if (t == "train") return Split::train;
  if (t == "val" || t == "validation") return Split::val;
  if (t == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + name + "'");
}

std::string split_index_file(Split s) {
  switch (s) {
    case Split::train: return "index.csv";
    case Split::val: return "index_val.csv";
    case Split::test: return "index_test.csv";
  }
  throw std::logic_error("bad split");
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (size_t i = 0; i < line.size(); ++i) {
    char ch = line[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

DatasetManifest load_manifest(const std::string& root, Split split) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset root does not exist: " + root);
  fs::path index = fs::path(root) / split_index_file(split);
  std::ifstream in(index);
  if (!in) throw std::runtime_error("missing index file: " + index.string());

  DatasetManifest manifest;
  manifest.split = split;
  manifest.categories = category_names();

  std::string line;
  bool first = true;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (first) {
      first = false;  // header row
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<std::string> fields = split_csv_line(line);
    auto warn = [&](const std::string& why) {
      manifest.warnings.push_back(index.filename().string() + ":" + std::to_string(line_no) +
                                  ": " + why);
    };
    if (fields.size() < 2 || fields.size() > 3) {
      warn("expected 2 or 3 fields, got " + std::to_string(fields.size()));
      continue;
    }
    SampleRecord rec;
    fs::path img = fs::path(root) / trim(fields[0]);
    if (!fs::is_regular_file(img)) {
      warn("missing image file: " + trim(fields[0]));
      continue;
    }
    rec.path = img.string();
    try {
      rec.label = LabelVector::from_names(fields[1]);
    } catch (const std::exception& e) {
      warn(e.what());
      continue;
    }
    if (fields.size() == 3) {
      try {
        rec.source = parse_source(fields[2]);
      } catch (const std::exception& e) {
        warn(e.what());
        continue;
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

std::vector<Tensor> crop_normal_patches(const Tensor& full_image, int64_t patch_size,
                                        int64_t count, uint64_t seed) {
  if (full_image.rank() != 3)
    throw std::invalid_argument("crop_normal_patches: expected (C,H,W), got " +
                                full_image.shape_str());
  const int64_t c = full_image.dim(0), h = full_image.dim(1), w = full_image.dim(2);
  if (h < patch_size || w < patch_size)
    throw std::invalid_argument("crop_normal_patches: image " + full_image.shape_str() +
                                " smaller than patch size " + std::to_string(patch_size));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int64_t> dy(0, h - patch_size);
  std::uniform_int_distribution<int64_t> dx(0, w - patch_size);
  std::vector<Tensor> out;
  out.reserve(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    int64_t y0 = dy(rng), x0 = dx(rng);
    Tensor patch({c, patch_size, patch_size});
    for (int64_t k = 0; k < c; ++k)
      for (int64_t y = 0; y < patch_size; ++y)
        for (int64_t x = 0; x < patch_size; ++x)
          patch.at3(k, y, x) = full_image.at3(k, y0 + y, x0 + x);
    out.push_back(std::move(patch));
  }
  return out;
}

std::pair<int64_t, std::vector<std::string>> index_class_folders(const std::string& root) {
  if (!fs::is_directory(root))
    throw std::runtime_error("dataset root does not exist: " + root);

  std::vector<std::string> warnings;
  std::vector<std::pair<std::string, std::string>> rows;  // relative path, labels

  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root))
    if (entry.is_directory()) dirs.push_back(entry.path());
  std::sort(dirs.begin(), dirs.end());

  for (const fs::path& dir : dirs) {
    std::string folder = dir.filename().string();
    LabelVector label;
    bool ok = true;
    try {
      // Folder names are class combinations joined by _ + or -. A category
      // whose own name contains an underscore (exposed_bars) may arrive split
      // into two tokens, so unknown tokens try merging with their successor.
      std::vector<std::string> tokens;
      std::string cur;
      for (char ch : folder + "_") {
        if (ch == '_' || ch == '+' || ch == '-') {
          if (!cur.empty()) tokens.push_back(cur);
          cur.clear();
        } else {
          cur.push_back(ch);
        }
      }
      if (tokens.empty()) throw std::invalid_argument("empty folder name");
      for (size_t i = 0; i < tokens.size();) {
        int64_t idx = category_index(tokens[i]);
        if (idx >= 0) {
          label.bits[idx] = 1;
          ++i;
          continue;
        }
        if (i + 1 < tokens.size()) {
          idx = category_index(tokens[i] + "_" + tokens[i + 1]);
          if (idx >= 0) {
            label.bits[idx] = 1;
            i += 2;
            continue;
          }
        }
        throw std::invalid_argument("unknown category '" + tokens[i] + "'");
      }
      label.validate();
    } catch (const std::exception& e) {
      warnings.push_back("skipping folder '" + folder + "': " + e.what());
      ok = false;
    }
    if (!ok) continue;

    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
      if (!entry.is_regular_file()) continue;
      std::string ext = entry.path().extension().string();
      std::transform(ext.begin(), ext.end(), ext.begin(),
                     [](unsigned char ch) { return std::tolower(ch); });
      if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const fs::path& f : files)
      rows.emplace_back(folder + "/" + f.filename().string(), label.to_names());
  }

  fs::path index = fs::path(root) / "index.csv";
  std::ofstream out(index);
  if (!out) throw std::runtime_error("cannot write " + index.string());
  out << "path,labels,source\n";
  for (const auto& [path, labels] : rows) out << path << "," << labels << ",real\n";
  return {static_cast<int64_t>(rows.size()), warnings};
}

}  // namespace defsynth::data
