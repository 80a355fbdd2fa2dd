#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace oneshot {

/// Decoded 8-bit image, interleaved channels (1 = gray, 3 = RGB).
struct RawImage {
    int width = 0;
    int height = 0;
    int channels = 0;
    std::vector<uint8_t> pixels;
};

/// PNG or JPEG, chosen by file signature. Throws IoError naming the file.
RawImage decode_image(const std::string& path);

/// 8-bit grayscale PNG.
void write_gray_png(const std::string& path, int width, int height, const uint8_t* pixels);

/// Grayscale luminance (0.299 R + 0.587 G + 0.114 B) scaled to [0,1], [1,H,W].
Tensor to_gray_tensor(const RawImage& img);

/// Bilinear resize of a [1,H,W] tensor; exact pass-through when the size
/// already matches.
Tensor resize_bilinear(const Tensor& gray, int target_size);

/// decode -> gray -> resize convenience.
Tensor load_image_tensor(const std::string& path, int target_size);

}  // namespace oneshot
