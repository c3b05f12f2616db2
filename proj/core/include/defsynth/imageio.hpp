#pragma once

#include "defsynth/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace defsynth::img {

/// Decodes a PNG/JPEG file to a (3,H,W) RGB tensor with raw 8-bit values 0..255.
Tensor read_image_rgb(const std::string& path);

/// Encodes a (3,H,W) RGB tensor of raw values 0..255 (rounded and clamped).
void write_image_rgb(const std::string& path, const Tensor& raw);

/// Single-channel 8-bit image as (1,H,W), values 0..255.
Tensor read_image_gray(const std::string& path);
void write_image_gray(const std::string& path, const Tensor& raw);

/// 16-bit grayscale PNG as (1,H,W), values 0..65535; in-memory variants for
/// archive embedding.
std::vector<unsigned char> encode_png16(const Tensor& raw);
Tensor decode_png16(const std::vector<unsigned char>& bytes);

/// Maps raw 8-bit values to [-1,1]: 0 -> -1, 127.5 -> 0, 255 -> +1.
Tensor normalize(const Tensor& raw);

/// Inverse of normalize; output is rounded to whole 8-bit values in 0..255.
Tensor denormalize(const Tensor& img);

/// Bilinear resize of a (C,H,W) tensor.
Tensor resize_bilinear(const Tensor& x, int64_t oh, int64_t ow);

}  // namespace defsynth::img
