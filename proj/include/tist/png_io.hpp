#pragma once

#include <filesystem>

#include "tist/tensor.hpp"

namespace tist {

// 8-bit PNG round trip. Images are written as gray or RGB depending on the
// channel count; label maps as single-channel 8-bit.
Image read_png_image(const std::filesystem::path& path);
LabelMap read_png_labels(const std::filesystem::path& path);
void write_png_image(const std::filesystem::path& path, const Image& image);
void write_png_labels(const std::filesystem::path& path, const LabelMap& labels);

}  // namespace tist
