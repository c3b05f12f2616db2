#pragma once

#include "defsynth/datamodel.hpp"
#include "defsynth/tensor.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace defsynth::toy {

/// Parameters of the procedurally rendered desk-scale dataset. Defect marks
/// are painted on a textured concrete-like background; the paint mask is kept
/// as a diagnostic ground truth, never consumed by training.
struct ToyDefectSpec {
  int64_t image_size = 32;
  int noise_octaves = 3;
  std::array<double, 3> base_color_a = {172.0, 165.0, 155.0};
  std::array<double, 3> base_color_b = {118.0, 112.0, 105.0};
  int crack_polylines = 1;
  double crack_width = 1.6;
  double blob_radius_min = 3.0;
  double blob_radius_max = 7.0;
  double patch_brightness = 70.0;
  int64_t samples_per_class = 5;
  uint64_t seed = 1234;

  void validate() const;
};

/// One rendered sample: raw 8-bit RGB image plus a binary defect mask.
struct ToyRender {
  Tensor image;  // (3,S,S) values 0..255
  Tensor mask;   // (1,S,S) values in {0,255}
};

/// Renders sample `index` of `category` deterministically from the spec seed.
/// Out-of-canvas parameters are clamped; clamp messages are appended to
/// `warnings` when non-null.
ToyRender render_toy_sample(const ToyDefectSpec& spec, int64_t category, int64_t index,
                            std::vector<std::string>* warnings = nullptr);

/// Writes images/<class>/<seed>_<i>.png, masks/<class>/<seed>_<i>.png and the
/// split indexes index.csv (train), index_val.csv, index_test.csv under
/// out_root. Val and test each hold max(1, samples_per_class/5) extra samples
/// per class. Returns the train manifest; clamp warnings ride in its
/// `warnings` field.
data::DatasetManifest make_toy_dataset(const ToyDefectSpec& spec, const std::string& out_root);

}  // namespace defsynth::toy
