#include "steglearn/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

namespace steglearn {

namespace {

class HeaderReader {
  public:
    HeaderReader(const std::string& bytes, const std::string& origin) : bytes_{bytes}, origin_{origin} {}

    // Whitespace-separated token; '#' starts a comment running to end of line.
    std::string token()
    {
        skip_space_and_comments();
        std::string t;
        while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])) && bytes_[pos_] != '#') {
            t.push_back(bytes_[pos_++]);
        }
        if (t.empty()) {
            throw IoError(origin_ + ": truncated PGM header");
        }
        return t;
    }

    int integer()
    {
        const std::string t = token();
        if (!std::all_of(t.begin(), t.end(), [](unsigned char ch) { return std::isdigit(ch); }) || t.size() > 9) {
            throw IoError(origin_ + ": expected an unsigned integer in PGM, got '" + t + "'");
        }
        return std::stoi(t);
    }

    // After maxval exactly one whitespace byte separates header and raster.
    void single_space()
    {
        if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
            throw IoError(origin_ + ": missing separator after PGM header");
        }
        ++pos_;
    }

    std::size_t position() const { return pos_; }

  private:
    void skip_space_and_comments()
    {
        while (pos_ < bytes_.size()) {
            if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') {
                    ++pos_;
                }
            } else if (std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
                ++pos_;
            } else {
                break;
            }
        }
    }

    const std::string& bytes_;
    const std::string& origin_;
    std::size_t pos_ = 0;
};

} // namespace

GrayImage parse_pgm(const std::string& bytes, const std::string& origin)
{
    HeaderReader header(bytes, origin);
    const std::string magic = header.token();
    if (magic != "P5" && magic != "P2") {
        throw IoError(origin + ": unsupported PNM magic '" + magic + "' (expected P5 or P2)");
    }
    const int width = header.integer();
    const int height = header.integer();
    const int maxval = header.integer();
    if (width <= 0 || height <= 0) {
        throw IoError(origin + ": invalid PGM dimensions");
    }
    if (maxval != 255) {
        throw IoError(origin + ": PGM maxval must be 255, got " + std::to_string(maxval));
    }
    GrayImage image(width, height);
    const std::size_t count = image.pixels.size();
    if (magic == "P5") {
        header.single_space();
        const std::size_t start = header.position();
        if (bytes.size() - start < count) {
            throw IoError(origin + ": PGM raster truncated (" + std::to_string(bytes.size() - start) + " of " +
                          std::to_string(count) + " bytes)");
        }
        std::copy_n(bytes.begin() + static_cast<std::ptrdiff_t>(start), count, image.pixels.begin());
    } else {
        for (std::size_t i = 0; i < count; ++i) {
            const int v = header.integer();
            if (v > 255) {
                throw IoError(origin + ": sample " + std::to_string(v) + " exceeds maxval");
            }
            image.pixels[i] = static_cast<std::uint8_t>(v);
        }
    }
    return image;
}

std::string encode_pgm(const GrayImage& image, PgmFormat format)
{
    std::ostringstream os;
    os << (format == PgmFormat::binary ? "P5" : "P2") << '\n' << image.width << ' ' << image.height << "\n255\n";
    if (format == PgmFormat::binary) {
        os.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
    } else {
        for (int y = 0; y < image.height; ++y) {
            for (int x = 0; x < image.width; ++x) {
                os << static_cast<int>(image.at(x, y)) << (x + 1 < image.width ? ' ' : '\n');
            }
        }
    }
    return os.str();
}

GrayImage read_pgm(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_pgm(buf.str(), path.string());
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image, PgmFormat format)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    const std::string bytes = encode_pgm(image, format);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

GrayImage heatmap(const std::vector<double>& values, int width, int height)
{
    if (values.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height)) {
        throw std::invalid_argument("heatmap: value count does not match dimensions");
    }
    GrayImage image(width, height);
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    if (values.empty() || *hi - *lo <= 0) {
        return image;
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        image.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * (values[i] - *lo) / (*hi - *lo)));
    }
    return image;
}

} // namespace steglearn
