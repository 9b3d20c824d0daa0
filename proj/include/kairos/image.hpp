#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace kairos {

// Decoded 8-bit image, interleaved H×W×C with C ∈ {1, 3}.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// PNG or JPEG, detected from the signature bytes. Grayscale stays C=1, alpha
// is dropped, 16-bit PNG is reduced to 8 bits. Throws DecodeError carrying
// the path on unsupported or corrupt input.
Image load_image(const std::filesystem::path& path);
Image decode_image(std::span<const std::byte> bytes, const std::string& label);

}  // namespace kairos
