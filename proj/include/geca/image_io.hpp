#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "geca/tensor.hpp"

namespace geca {

/// 8-bit image read from or written to binary PGM (P5, 1 channel) or PPM
/// (P6, 3 channels). Pixel values map linearly between [0, 255] and [-1, 1].
struct Image8 {
  Index height = 0;
  Index width = 0;
  Index channels = 1;
  std::vector<std::uint8_t> pixels;  // row-major, interleaved channels
};

Image8 read_pnm(const std::filesystem::path& path);
void write_pnm(const std::filesystem::path& path, const Image8& image);

/// [H x W x C] in [-1, 1] -> 8-bit (values clamped, rounded to nearest).
Image8 to_image8(const TensorF& image);
/// 8-bit -> [H x W x C] in [-1, 1].
TensorF from_image8(const Image8& image);

TensorF load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const TensorF& image);

/// Images placed side by side with a one-pixel border of value -1.
TensorF contact_sheet(const std::vector<TensorF>& images);

/// Peak signal-to-noise ratio in dB for images in [-1, 1] (peak-to-peak 2).
double psnr(const TensorF& a, const TensorF& b);

}  // namespace geca
