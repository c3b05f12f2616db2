#include "defsynth/controlmap.hpp"

#include "defsynth/imageio.hpp"
#include "defsynth/ziparchive.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <stdexcept>

using nlohmann::json;

namespace defsynth::ctrl {

void AttributeControlMap::validate() const {
  if (values.rank() != 3)
    throw std::invalid_argument("control map: expected (C,H,W), got " + values.shape_str());
  if (values.dim(0) != data::kNumCategories)
    throw std::invalid_argument("control map: expected " + std::to_string(data::kNumCategories) +
                                " channels, got " + std::to_string(values.dim(0)));
  for (int64_t i = 0; i < values.numel(); ++i) {
    double v = values.at(i);
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("control map: value " + std::to_string(v) + " outside [0,1]");
  }
  if (mode == ControlMode::uniform) {
    for (int64_t c = 0; c < values.dim(0); ++c) {
      double first = values.at3(c, 0, 0);
      for (int64_t y = 0; y < values.dim(1); ++y)
        for (int64_t x = 0; x < values.dim(2); ++x)
          if (values.at3(c, y, x) != first)
            throw std::invalid_argument("control map: uniform mode but channel " +
                                        std::to_string(c) + " varies spatially");
    }
  }
}

Tensor AttributeControlMap::batch(int64_t n) const {
  if (n < 1) throw std::invalid_argument("control map batch: n must be positive");
  const int64_t c = values.dim(0), h = values.dim(1), w = values.dim(2);
  Tensor out({n, c, h, w});
  const int64_t per = c * h * w;
  const double* src = values.data();
  double* dst = out.data();
  for (int64_t i = 0; i < n; ++i) std::copy(src, src + per, dst + i * per);
  return out;
}

AttributeControlMap repeat_label(const data::LabelVector& c, int64_t h, int64_t w) {
  c.validate();
  if (h < 1 || w < 1) throw std::invalid_argument("repeat_label: non-positive size");
  AttributeControlMap map;
  map.mode = ControlMode::uniform;
  map.values = Tensor({data::kNumCategories, h, w});
  for (int64_t k = 0; k < data::kNumCategories; ++k)
    if (c.bits[k])
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) map.values.at3(k, y, x) = 1.0;
  return map;
}

AttributeControlMap paint_regions(const std::vector<ControlRegion>& regions, int64_t h,
                                  int64_t w) {
  if (h < 1 || w < 1) throw std::invalid_argument("paint_regions: non-positive size");
  for (const ControlRegion& r : regions) {
    if (r.category < 0 || r.category >= data::kNumCategories)
      throw std::invalid_argument("paint_regions: category index " + std::to_string(r.category) +
                                  " out of range");
    if (r.x0 >= r.x1 || r.y0 >= r.y1)
      throw std::invalid_argument("paint_regions: box (" + std::to_string(r.x0) + "," +
                                  std::to_string(r.y0) + "," + std::to_string(r.x1) + "," +
                                  std::to_string(r.y1) + ") is empty");
    if (r.x0 < 0 || r.y0 < 0 || r.x1 > w || r.y1 > h)
      throw std::invalid_argument("paint_regions: box (" + std::to_string(r.x0) + "," +
                                  std::to_string(r.y0) + "," + std::to_string(r.x1) + "," +
                                  std::to_string(r.y1) + ") exceeds the " + std::to_string(w) +
                                  "x" + std::to_string(h) + " bounds");
    if (!(r.intensity > 0.0 && r.intensity <= 1.0))
      throw std::invalid_argument("paint_regions: intensity must be in (0,1]");
  }
  AttributeControlMap map;
  map.mode = ControlMode::spatial;
  map.values = Tensor({data::kNumCategories, h, w});
  for (const ControlRegion& r : regions)
    for (int64_t y = r.y0; y < r.y1; ++y)
      for (int64_t x = r.x0; x < r.x1; ++x)
        map.values.at3(r.category, y, x) = std::max(map.values.at3(r.category, y, x), r.intensity);
  return map;
}

AttributeControlMap restoration_map(int64_t h, int64_t w) {
  return repeat_label(data::LabelVector::normal(), h, w);
}

Tensor stack_maps(const std::vector<AttributeControlMap>& maps) {
  if (maps.empty()) throw std::invalid_argument("stack_maps: empty map list");
  const std::vector<int64_t>& shape = maps.front().values.shape();
  for (const AttributeControlMap& m : maps) {
    m.validate();
    if (m.values.shape() != shape)
      throw std::invalid_argument("stack_maps: mixed map shapes " + m.values.shape_str() +
                                  " vs " + maps.front().values.shape_str());
  }
  int64_t per = maps.front().values.numel();
  Tensor out({static_cast<int64_t>(maps.size()), shape[0], shape[1], shape[2]});
  for (size_t i = 0; i < maps.size(); ++i)
    for (int64_t k = 0; k < per; ++k) out.at(static_cast<int64_t>(i) * per + k) = maps[i].values.at(k);
  return out;
}

void save_control_map(const AttributeControlMap& map, const std::string& path) {
  map.validate();
  zipa::ZipWriter zip(path);
  json manifest;
  manifest["format"] = "defsynth-control-map";
  manifest["version"] = 1;
  manifest["height"] = map.height();
  manifest["width"] = map.width();
  manifest["mode"] = map.mode == ControlMode::uniform ? "uniform" : "spatial";
  manifest["categories"] = data::category_names();
  zip.add_text("manifest.json", manifest.dump(2));

  for (int64_t c = 0; c < map.channels(); ++c) {
    Tensor ch({1, map.height(), map.width()});
    for (int64_t i = 0; i < ch.numel(); ++i)
      ch.at(i) = std::round(map.values.at(c * ch.numel() + i) * 65535.0);
    zip.add("channel_" + std::to_string(c) + ".png", img::encode_png16(ch));
  }
  zip.finish();
}

AttributeControlMap load_control_map(const std::string& path) {
  try {
    zipa::ZipReader zip(path);
    json manifest = json::parse(zip.read_text("manifest.json"));
    if (manifest.value("format", "") != "defsynth-control-map")
      throw std::runtime_error("not a control-map archive");
    const int64_t h = manifest.at("height").get<int64_t>();
    const int64_t w = manifest.at("width").get<int64_t>();
    if (h < 1 || w < 1) throw std::runtime_error("bad dimensions in manifest");
    const auto cats = manifest.at("categories").get<std::vector<std::string>>();
    if (cats != data::category_names())
      throw std::runtime_error("category list does not match this build");
    std::string mode = manifest.at("mode").get<std::string>();

    AttributeControlMap map;
    map.mode = mode == "uniform" ? ControlMode::uniform : ControlMode::spatial;
    map.values = Tensor({data::kNumCategories, h, w});
    for (int64_t c = 0; c < data::kNumCategories; ++c) {
      Tensor ch = img::decode_png16(zip.read("channel_" + std::to_string(c) + ".png"));
      if (ch.dim(1) != h || ch.dim(2) != w)
        throw std::runtime_error("channel " + std::to_string(c) + " shape mismatch: " +
                                 ch.shape_str() + " vs manifest " + std::to_string(h) + "x" +
                                 std::to_string(w));
      for (int64_t i = 0; i < ch.numel(); ++i)
        map.values.at(c * h * w + i) = ch.at(i) / 65535.0;
    }
    map.validate();
    return map;
  } catch (const std::exception& e) {
    throw std::runtime_error("cannot load control map '" + path + "': " + e.what());
  }
}

ControlRegion parse_region_flag(const std::string& flag) {
  // category:x0,y0,x1,y1[:intensity]
  size_t colon = flag.find(':');
  if (colon == std::string::npos)
    throw std::invalid_argument("region flag must look like category:x0,y0,x1,y1, got '" + flag +
                                "'");
  std::string cat = flag.substr(0, colon);
  std::string rest = flag.substr(colon + 1);
  ControlRegion region;
  region.category = data::category_index(cat);
  if (region.category < 0) {
    try {
      region.category = std::stoll(cat);
    } catch (...) {
      throw std::invalid_argument("unknown category '" + cat + "' in region flag");
    }
  }
  size_t colon2 = rest.find(':');
  if (colon2 != std::string::npos) {
    region.intensity = std::stod(rest.substr(colon2 + 1));
    rest = rest.substr(0, colon2);
  }
  int64_t* coords[4] = {&region.x0, &region.y0, &region.x1, &region.y1};
  size_t pos = 0;
  for (int i = 0; i < 4; ++i) {
    size_t comma = i < 3 ? rest.find(',', pos) : rest.size();
    if (comma == std::string::npos)
      throw std::invalid_argument("region flag needs 4 coordinates, got '" + flag + "'");
    try {
      *coords[i] = std::stoll(rest.substr(pos, comma - pos));
    } catch (...) {
      throw std::invalid_argument("bad coordinate in region flag '" + flag + "'");
    }
    pos = comma + 1;
  }
  return region;
}

}  // namespace defsynth::ctrl
