#pragma once

// Binary PPM (P6, maxval 255) import/export. Arrays are [C, H, W] floats in
// [-1, 1]; export maps to bytes with round-half-away-from-zero.

#include <string>

#include "dar/tensor.hpp"

namespace dar {

void export_image(const Tensor<float>& image, const std::string& path);

// center-crop to square, nearest resize to image_size, normalize to [-1, 1]
Tensor<float> load_ppm(const std::string& path, int64_t image_size = 0);

}  // namespace dar
