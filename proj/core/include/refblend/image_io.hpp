#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "refblend/tensor.hpp"

namespace refblend {

struct ImageU8 {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb; // 3 bytes per pixel, row-major

    uint8_t at(int y, int x, int c) const { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
    uint8_t& at(int y, int x, int c) { return rgb[(static_cast<size_t>(y) * w + x) * 3 + c]; }
};

struct GrayU8 {
    int w = 0, h = 0;
    std::vector<uint8_t> px;
};

// Binary portable pixmaps: bit-exact, used by tests and round trips.
void write_ppm(const ImageU8& img, const std::string& path);
ImageU8 read_ppm(const std::string& path);
void write_pgm(const GrayU8& img, const std::string& path);
GrayU8 read_pgm(const std::string& path);

// 8-bit RGB PNG via zlib, for human viewing.
void write_png(const ImageU8& img, const std::string& path);

// Masks are single-channel; a pixel is on iff its value >= 128.
Tensor mask_from_gray(const GrayU8& g);
GrayU8 gray_from_mask(const Tensor& mask);

// Latents live in [-1,1]; images in [0,255].
ImageU8 image_from_latent(const Tensor& z);
Tensor latent_from_image(const ImageU8& img);

ImageU8 upscale_nearest(const ImageU8& img, int factor);

} // namespace refblend
