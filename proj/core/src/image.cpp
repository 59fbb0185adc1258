#include "feratt/image.hpp"

#include <cmath>
#include <opencv2/imgcodecs.hpp>

#include "feratt/errors.hpp"

namespace feratt {

Tensor load_image_rgb(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);  // BGR, 8-bit
  if (m.empty()) throw IoError("cannot read image: " + path);
  Tensor out(1, m.rows, m.cols, 3);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) {
      const cv::Vec3b& px = m.at<cv::Vec3b>(y, x);
      out.at(0, y, x, 0) = px[2] / 255.0;
      out.at(0, y, x, 1) = px[1] / 255.0;
      out.at(0, y, x, 2) = px[0] / 255.0;
    }
  return out;
}

Tensor load_image_gray(const std::string& path) {
  cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
  if (m.empty()) throw IoError("cannot read image: " + path);
  Tensor out(1, m.rows, m.cols, 1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) out.at(0, y, x, 0) = m.at<uint8_t>(y, x) / 255.0;
  return out;
}

void save_image_png(const Tensor& image, const std::string& path) {
  require(image.n() == 1, "save_image_png: expected single image");
  require(image.c() == 1 || image.c() == 3, "save_image_png: expected 1 or 3 channels");
  auto q = [](double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    return static_cast<uint8_t>(std::lround(v * 255.0));
  };
  cv::Mat m(image.h(), image.w(), image.c() == 3 ? CV_8UC3 : CV_8UC1);
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x) {
      if (image.c() == 3) {
        m.at<cv::Vec3b>(y, x) = cv::Vec3b(q(image.at(0, y, x, 2)), q(image.at(0, y, x, 1)),
                                          q(image.at(0, y, x, 0)));
      } else {
        m.at<uint8_t>(y, x) = q(image.at(0, y, x, 0));
      }
    }
  if (!cv::imwrite(path, m)) throw IoError("cannot write image: " + path);
}

std::array<double, 3> rgb_to_ycbcr(double r, double g, double b) {
  double y = 0.299 * r + 0.587 * g + 0.114 * b;
  double cb = 0.564 * (b - y) + 0.5;
  double cr = 0.713 * (r - y) + 0.5;
  return {y, cb, cr};
}

std::array<double, 3> ycbcr_to_rgb(double y, double cb, double cr) {
  double b = y + (cb - 0.5) / 0.564;
  double r = y + (cr - 0.5) / 0.713;
  double g = (y - 0.299 * r - 0.114 * b) / 0.587;
  return {r, g, b};
}

double mean_luminance(const Tensor& image, const Tensor& mask, long* count) {
  require(image.n() == 1 && mask.n() == 1 && mask.c() == 1, "mean_luminance: bad shapes");
  require(image.h() == mask.h() && image.w() == mask.w(), "mean_luminance: size mismatch");
  double acc = 0.0;
  long n = 0;
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x)
      if (mask.at(0, y, x, 0) > 0.5) {
        acc += rgb_to_ycbcr(image.at(0, y, x, 0), image.at(0, y, x, 1), image.at(0, y, x, 2))[0];
        ++n;
      }
  if (count) *count = n;
  return n > 0 ? acc / n : 0.0;
}

Tensor gaussian_blur(const Tensor& image, double sigma) {
  require(sigma >= 0.0, "gaussian_blur: negative sigma");
  if (sigma == 0.0) return image;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> kernel(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += kernel[i + radius];
  }
  for (double& k : kernel) k /= sum;
  auto reflect = [](int i, int n) {
    while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
    return i;
  };
  Tensor tmp(image.n(), image.h(), image.w(), image.c());
  Tensor out(image.n(), image.h(), image.w(), image.c());
  for (int n = 0; n < image.n(); ++n)
    for (int y = 0; y < image.h(); ++y)
      for (int x = 0; x < image.w(); ++x)
        for (int c = 0; c < image.c(); ++c) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[i + radius] * image.at(n, y, reflect(x + i, image.w()), c);
          tmp.at(n, y, x, c) = acc;
        }
  for (int n = 0; n < image.n(); ++n)
    for (int y = 0; y < image.h(); ++y)
      for (int x = 0; x < image.w(); ++x)
        for (int c = 0; c < image.c(); ++c) {
          double acc = 0.0;
          for (int i = -radius; i <= radius; ++i)
            acc += kernel[i + radius] * tmp.at(n, reflect(y + i, image.h()), x, c);
          out.at(n, y, x, c) = acc;
        }
  return out;
}

double bilinear_sample(const Tensor& image, double y, double x, int channel) {
  const int y0 = static_cast<int>(std::floor(y));
  const int x0 = static_cast<int>(std::floor(x));
  const double fy = y - y0, fx = x - x0;
  auto px = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= image.h() || xx < 0 || xx >= image.w()) return 0.0;
    return image.at(0, yy, xx, channel);
  };
  return (1 - fy) * ((1 - fx) * px(y0, x0) + fx * px(y0, x0 + 1)) +
         fy * ((1 - fx) * px(y0 + 1, x0) + fx * px(y0 + 1, x0 + 1));
}

Tensor crop(const Tensor& image, int y0, int x0, int h, int w) {
  require(y0 >= 0 && x0 >= 0 && y0 + h <= image.h() && x0 + w <= image.w(), "crop: out of bounds");
  Tensor out(1, h, w, image.c());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < image.c(); ++c) out.at(0, y, x, c) = image.at(0, y0 + y, x0 + x, c);
  return out;
}

}  // namespace feratt
