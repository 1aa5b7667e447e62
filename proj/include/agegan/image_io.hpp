#pragma once

// 8-bit grayscale image output: binary PGM (P5) and PNG, plus a tiny line
// chart rasterizer for loss curves.

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace agegan {

// [H, W] uint8, or float in [0, 1] (scaled by 255 and rounded).
torch::Tensor to_gray8(const torch::Tensor& image);

void write_pgm(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_pgm(const std::filesystem::path& path);  // [H, W] uint8
void write_png(const std::filesystem::path& path, const torch::Tensor& image);
// Picks PNG for a ".png" extension, PGM otherwise.
void write_image(const std::filesystem::path& path, const torch::Tensor& image);

// White background, axes, one polyline per series in decreasing gray levels.
// All series share the x axis (index) and a common y range.
torch::Tensor render_line_chart(const std::vector<std::vector<double>>& series, int64_t width = 640,
                                int64_t height = 360);

}  // namespace agegan
