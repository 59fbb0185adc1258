#pragma once

#include <array>
#include <string>

#include "feratt/tensor.hpp"

namespace feratt {

// Images are Tensors with n = 1, values in [0, 1], RGB channel order.

Tensor load_image_rgb(const std::string& path);
Tensor load_image_gray(const std::string& path);

// 8-bit PNG, values quantized with round(v * 255) after clamping.
void save_image_png(const Tensor& image, const std::string& path);

// Full-range YCbCr. The inverse is the algebraic inverse of the forward
// matrix, so a round trip is exact up to floating-point rounding.
std::array<double, 3> rgb_to_ycbcr(double r, double g, double b);
std::array<double, 3> ycbcr_to_rgb(double y, double cb, double cr);

// Mean luminance over pixels where mask > 0.5; returns pixel count in *count.
double mean_luminance(const Tensor& image, const Tensor& mask, long* count = nullptr);

// Separable Gaussian blur with reflected borders; sigma 0 is the identity.
Tensor gaussian_blur(const Tensor& image, double sigma);

// Bilinear sample with zero padding outside the image; n must be 1.
double bilinear_sample(const Tensor& image, double y, double x, int channel);

Tensor crop(const Tensor& image, int y0, int x0, int h, int w);

}  // namespace feratt
