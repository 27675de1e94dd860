#pragma once

#include <torch/torch.h>

#include <string>

namespace igi {

// Binary PPM (P6, 8-bit). Images are 3 x H x W floats in [0,1]; values are clamped and rounded.
void write_ppm(const std::string& path, const torch::Tensor& image);
torch::Tensor read_ppm(const std::string& path);

}  // namespace igi
