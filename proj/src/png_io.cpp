#include "tist/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

namespace tist {

namespace {

struct PngImage {
  png_image header{};
  std::vector<png_byte> bytes;

  PngImage() {
    std::memset(&header, 0, sizeof header);
    header.version = PNG_IMAGE_VERSION;
  }
  ~PngImage() { png_image_free(&header); }
  PngImage(const PngImage&) = delete;
  PngImage& operator=(const PngImage&) = delete;
};

void read_into(const std::filesystem::path& path, PngImage& png, png_uint_32 format) {
  if (!png_image_begin_read_from_file(&png.header, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + png.header.message);
  png.header.format = format;
  png.bytes.resize(PNG_IMAGE_SIZE(png.header));
  if (!png_image_finish_read(&png.header, nullptr, png.bytes.data(), 0, nullptr))
    throw IoError("cannot decode " + path.string() + ": " + png.header.message);
}

void write_from(const std::filesystem::path& path, int height, int width, png_uint_32 format,
                const std::vector<png_byte>& bytes) {
  PngImage png;
  png.header.width = static_cast<png_uint_32>(width);
  png.header.height = static_cast<png_uint_32>(height);
  png.header.format = format;
  if (!png_image_write_to_file(&png.header, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write " + path.string() + ": " + png.header.message);
}

}  // namespace

Image read_png_image(const std::filesystem::path& path) {
  PngImage probe;
  if (!png_image_begin_read_from_file(&probe.header, path.c_str()))
    throw IoError("cannot read " + path.string() + ": " + probe.header.message);
  const bool color = (probe.header.format & PNG_FORMAT_FLAG_COLOR) != 0;
  png_image_free(&probe.header);

  PngImage png;
  read_into(path, png, color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY);
  const int channels = color ? 3 : 1;
  const int h = static_cast<int>(png.header.height), w = static_cast<int>(png.header.width);
  Image image(channels, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < channels; ++c)
        image.at(c, y, x) = static_cast<float>(png.bytes[(static_cast<std::size_t>(y) * w + x) * channels + c]) / 255.0F;
  return image;
}

LabelMap read_png_labels(const std::filesystem::path& path) {
  PngImage png;
  read_into(path, png, PNG_FORMAT_GRAY);
  LabelMap labels(static_cast<int>(png.header.height), static_cast<int>(png.header.width));
  std::copy(png.bytes.begin(), png.bytes.end(), labels.labels.begin());
  return labels;
}

void write_png_image(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) throw InvalidInput("write_png_image: need 1 or 3 channels");
  std::vector<png_byte> bytes(image.pixels.size());
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < image.channels; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0F, 1.0F);
        bytes[(static_cast<std::size_t>(y) * image.width + x) * image.channels + c] =
            static_cast<png_byte>(std::lround(v * 255.0F));
      }
  write_from(path, image.height, image.width, image.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY, bytes);
}

void write_png_labels(const std::filesystem::path& path, const LabelMap& labels) {
  std::vector<png_byte> bytes(labels.labels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    if (labels.labels[i] < 0 || labels.labels[i] > 255) throw InvalidInput("write_png_labels: label outside 0..255");
    bytes[i] = static_cast<png_byte>(labels.labels[i]);
  }
  write_from(path, labels.height, labels.width, PNG_FORMAT_GRAY, bytes);
}

}  // namespace tist
