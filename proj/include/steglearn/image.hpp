#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace steglearn {

class IoError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Single-channel 8-bit image, row-major.
struct GrayImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> pixels;

    GrayImage() = default;
    GrayImage(int w, int h, std::uint8_t fill = 0)
        : width{w}, height{h}, pixels(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill)
    {
    }

    std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;
};

enum class PgmFormat { binary /* P5 */, ascii /* P2 */ };

GrayImage read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const GrayImage& image, PgmFormat format = PgmFormat::binary);

GrayImage parse_pgm(const std::string& bytes, const std::string& origin = "<memory>");
std::string encode_pgm(const GrayImage& image, PgmFormat format = PgmFormat::binary);

/// Min-max maps real values to 0..255; a constant input maps to all zeros.
GrayImage heatmap(const std::vector<double>& values, int width, int height);

} // namespace steglearn
