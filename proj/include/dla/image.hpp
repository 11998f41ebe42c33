#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace dla {

/// Planar (channel, row, column) pixel grid with values in [0,1].
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, double fill = 0.0)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {}

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<double> data_;
};

/// Rounds every pixel to the nearest multiple of 1/255 so the PNG
/// round-trip is exact.
void quantize8(Image& img);

/// 8-bit PNG. Images whose channels are identical are stored as grayscale.
void write_png(const Image& img, const std::filesystem::path& path);

/// Always returns a 3-channel image; grayscale files are replicated.
Image read_png(const std::filesystem::path& path);

}  // namespace dla
