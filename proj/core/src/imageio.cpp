#include "defsynth/imageio.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <stdexcept>

namespace defsynth::img {

namespace {

cv::Mat to_mat8(const Tensor& raw, bool rgb_to_bgr) {
  if (raw.rank() != 3) throw std::invalid_argument("write_image: expected (C,H,W), got " + raw.shape_str());
  const int64_t c = raw.dim(0), h = raw.dim(1), w = raw.dim(2);
  if (c != 1 && c != 3) throw std::invalid_argument("write_image: expected 1 or 3 channels");
  cv::Mat mat(static_cast<int>(h), static_cast<int>(w), c == 3 ? CV_8UC3 : CV_8UC1);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t k = 0; k < c; ++k) {
        double v = std::round(raw.at3(k, y, x));
        v = std::min(255.0, std::max(0.0, v));
        int64_t dst_k = (c == 3 && rgb_to_bgr) ? 2 - k : k;
        mat.ptr<unsigned char>(static_cast<int>(y))[x * c + dst_k] = static_cast<unsigned char>(v);
      }
  return mat;
}

Tensor from_mat8(const cv::Mat& mat, bool bgr_to_rgb) {
  const int64_t c = mat.channels(), h = mat.rows, w = mat.cols;
  Tensor out({c, h, w});
  for (int64_t y = 0; y < h; ++y) {
    const unsigned char* row = mat.ptr<unsigned char>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x)
      for (int64_t k = 0; k < c; ++k) {
        int64_t src_k = (c == 3 && bgr_to_rgb) ? 2 - k : k;
        out.at3(k, y, x) = static_cast<double>(row[x * c + src_k]);
      }
  }
  return out;
}

}  // namespace

Tensor read_image_rgb(const std::string& path) {
  cv::Mat mat = cv::imread(path, cv::IMREAD_COLOR);
  if (mat.empty()) throw std::runtime_error("cannot read image: " + path);
  return from_mat8(mat, true);
}

void write_image_rgb(const std::string& path, const Tensor& raw) {
  if (raw.dim(0) != 3) throw std::invalid_argument("write_image_rgb: expected 3 channels, got " + raw.shape_str());
  if (!cv::imwrite(path, to_mat8(raw, true)))
    throw std::runtime_error("cannot write image: " + path);
}

Tensor read_image_gray(const std::string& path) {
  cv::Mat mat = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (mat.empty()) throw std::runtime_error("cannot read image: " + path);
  return from_mat8(mat, false);
}

void write_image_gray(const std::string& path, const Tensor& raw) {
  if (raw.dim(0) != 1) throw std::invalid_argument("write_image_gray: expected 1 channel, got " + raw.shape_str());
  if (!cv::imwrite(path, to_mat8(raw, false)))
    throw std::runtime_error("cannot write image: " + path);
}

std::vector<unsigned char> encode_png16(const Tensor& raw) {
  if (raw.rank() != 3 || raw.dim(0) != 1)
    throw std::invalid_argument("encode_png16: expected (1,H,W), got " + raw.shape_str());
  const int64_t h = raw.dim(1), w = raw.dim(2);
  cv::Mat mat(static_cast<int>(h), static_cast<int>(w), CV_16UC1);
  for (int64_t y = 0; y < h; ++y) {
    uint16_t* row = mat.ptr<uint16_t>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) {
      double v = std::round(raw.at3(0, y, x));
      v = std::min(65535.0, std::max(0.0, v));
      row[x] = static_cast<uint16_t>(v);
    }
  }
  std::vector<unsigned char> bytes;
  if (!cv::imencode(".png", mat, bytes)) throw std::runtime_error("encode_png16: PNG encoding failed");
  return bytes;
}

Tensor decode_png16(const std::vector<unsigned char>& bytes) {
  cv::Mat mat = cv::imdecode(bytes, cv::IMREAD_UNCHANGED);
  if (mat.empty()) throw std::runtime_error("decode_png16: not a decodable image");
  if (mat.type() != CV_16UC1) throw std::runtime_error("decode_png16: expected 16-bit grayscale");
  const int64_t h = mat.rows, w = mat.cols;
  Tensor out({1, h, w});
  for (int64_t y = 0; y < h; ++y) {
    const uint16_t* row = mat.ptr<uint16_t>(static_cast<int>(y));
    for (int64_t x = 0; x < w; ++x) out.at3(0, y, x) = static_cast<double>(row[x]);
  }
  return out;
}

Tensor normalize(const Tensor& raw) {
  Tensor out(raw.shape());
  const double* p = raw.data();
  double* q = out.data();
  for (int64_t i = 0, n = raw.numel(); i < n; ++i) q[i] = p[i] / 127.5 - 1.0;
  return out;
}

Tensor denormalize(const Tensor& img) {
  Tensor out(img.shape());
  const double* p = img.data();
  double* q = out.data();
  for (int64_t i = 0, n = img.numel(); i < n; ++i) {
    double v = std::round((p[i] + 1.0) * 127.5);
    q[i] = std::min(255.0, std::max(0.0, v));
  }
  return out;
}

Tensor resize_bilinear(const Tensor& x, int64_t oh, int64_t ow) {
  if (x.rank() != 3) throw std::invalid_argument("resize_bilinear: expected (C,H,W), got " + x.shape_str());
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h == oh && w == ow) return x;
  Tensor out({c, oh, ow});
  const double sy = static_cast<double>(h) / static_cast<double>(oh);
  const double sx = static_cast<double>(w) / static_cast<double>(ow);
  for (int64_t oy = 0; oy < oh; ++oy) {
    double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
    int64_t y0 = static_cast<int64_t>(std::floor(fy));
    double wy = fy - static_cast<double>(y0);
    int64_t y0c = std::min(h - 1, std::max<int64_t>(0, y0));
    int64_t y1c = std::min(h - 1, std::max<int64_t>(0, y0 + 1));
    for (int64_t ox = 0; ox < ow; ++ox) {
      double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
      int64_t x0 = static_cast<int64_t>(std::floor(fx));
      double wx = fx - static_cast<double>(x0);
      int64_t x0c = std::min(w - 1, std::max<int64_t>(0, x0));
      int64_t x1c = std::min(w - 1, std::max<int64_t>(0, x0 + 1));
      for (int64_t k = 0; k < c; ++k) {
        double top = x.at3(k, y0c, x0c) * (1 - wx) + x.at3(k, y0c, x1c) * wx;
        double bot = x.at3(k, y1c, x0c) * (1 - wx) + x.at3(k, y1c, x1c) * wx;
        out.at3(k, oy, ox) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return out;
}

}  // namespace defsynth::img
