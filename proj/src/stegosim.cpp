#include "steglearn/stegosim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "steglearn/tensor.hpp"

namespace steglearn {

std::string to_string(Split s)
{
    switch (s) {
    case Split::train:
        return "train";
    case Split::val:
        return "val";
    case Split::test:
        return "test";
    }
    return "?";
}

Split parse_split(const std::string& s)
{
    if (s == "train") {
        return Split::train;
    }
    if (s == "val") {
        return Split::val;
    }
    if (s == "test") {
        return Split::test;
    }
    throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

const std::vector<std::size_t>& DatasetSplit::members(Split s) const
{
    switch (s) {
    case Split::train:
        return train;
    case Split::val:
        return val;
    default:
        return test;
    }
}

Split DatasetSplit::split_of(std::size_t pair_index) const
{
    for (Split s : {Split::train, Split::val, Split::test}) {
        const auto& m = members(s);
        if (std::find(m.begin(), m.end(), pair_index) != m.end()) {
            return s;
        }
    }
    throw std::out_of_range("pair " + std::to_string(pair_index) + " is in no split");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

namespace {

using Field = std::vector<double>;

// Separable box blur with replicate borders.
Field box_blur(const Field& in, int width, int height, int radius)
{
    Field tmp(in.size()), out(in.size());
    const double norm = 1.0 / (2 * radius + 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k) {
                acc += in[static_cast<std::size_t>(y) * width + std::clamp(x + k, 0, width - 1)];
            }
            tmp[static_cast<std::size_t>(y) * width + x] = acc * norm;
        }
    }
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            double acc = 0;
            for (int k = -radius; k <= radius; ++k) {
                acc += tmp[static_cast<std::size_t>(std::clamp(y + k, 0, height - 1)) * width + x];
            }
            out[static_cast<std::size_t>(y) * width + x] = acc * norm;
        }
    }
    return out;
}

// White Gaussian noise low-passed by two box blurs, rescaled to unit std.
Field band_limited_noise(std::mt19937_64& rng, int width, int height, int radius)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Field f(static_cast<std::size_t>(width) * height);
    for (auto& v : f) {
        v = normal(rng);
    }
    f = box_blur(box_blur(f, width, height, radius), width, height, radius);
    double mean = 0;
    for (double v : f) {
        mean += v;
    }
    mean /= double(f.size());
    double var = 0;
    for (double v : f) {
        var += (v - mean) * (v - mean);
    }
    const double s = std::sqrt(var / double(f.size()));
    for (auto& v : f) {
        v = s > 0 ? (v - mean) / s : 0.0;
    }
    return f;
}

double pixel_std(const GrayImage& img)
{
    double mean = 0;
    for (auto p : img.pixels) {
        mean += p;
    }
    mean /= double(img.pixels.size());
    double var = 0;
    for (auto p : img.pixels) {
        var += (p - mean) * (p - mean);
    }
    return std::sqrt(var / double(img.pixels.size()));
}

} // namespace

GrayImage gen_cover(int width, int height, std::uint64_t texture_seed)
{
    if (width < 32 || height < 32) {
        throw ConfigError("gen_cover: dimensions must be at least 32x32, got " + std::to_string(width) + "x" +
                          std::to_string(height));
    }
    std::mt19937_64 rng(texture_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (;;) {
        const double base = 70.0 + 110.0 * uni(rng);
        const double angle = 2.0 * std::numbers::pi * uni(rng);
        const double slope = 10.0 + 50.0 * uni(rng);
        const int coarse_radius = 3 + static_cast<int>(uni(rng) * 6.0);
        const double coarse_amp = 8.0 + 22.0 * uni(rng);
        const double fine_amp = 1.0 + 5.0 * uni(rng);
        const double grain_amp = 0.2 + 0.5 * uni(rng);
        const Field coarse = band_limited_noise(rng, width, height, coarse_radius);
        const Field fine = band_limited_noise(rng, width, height, 1);

        // Sensor-like white grain; without it the LSB noise is trivially visible.
        std::normal_distribution<double> grain(0.0, grain_amp);

        GrayImage img(width, height);
        const double cx = std::cos(angle), cy = std::sin(angle);
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const std::size_t i = static_cast<std::size_t>(y) * width + x;
                const double ramp = slope * ((x * cx + y * cy) / double(std::max(width, height)) - 0.5);
                const double v = base + ramp + coarse_amp * coarse[i] + fine_amp * fine[i] + grain(rng);
                img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
            }
        }
        if (pixel_std(img) >= 2.0) {
            return img;
        }
    }
}

GrayImage embed_lsbm(const GrayImage& cover, double rate_bpp, std::uint64_t embed_seed)
{
    if (!(rate_bpp >= 0.0 && rate_bpp <= 1.0)) {
        throw ConfigError("embed_lsbm: rate_bpp must lie in [0, 1], got " + std::to_string(rate_bpp));
    }
    GrayImage stego = cover;
    if (rate_bpp == 0.0) {
        return stego;
    }
    std::mt19937_64 rng(embed_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double change_rate = rate_bpp / 2.0;
    for (auto& p : stego.pixels) {
        if (uni(rng) >= change_rate) {
            continue;
        }
        const bool up = (rng() >> 63) != 0;
        if (p == 0) {
            p = 1;
        } else if (p == 255) {
            p = 254;
        } else {
            p = static_cast<std::uint8_t>(up ? p + 1 : p - 1);
        }
    }
    return stego;
}

Dataset make_dataset(const DatasetSpec& spec)
{
    if (spec.n_pairs < 10) {
        throw ConfigError("make_dataset: need at least 10 pairs, got " + std::to_string(spec.n_pairs));
    }
    Dataset ds;
    const std::size_t total = spec.n_pairs + spec.n_test_pairs;
    ds.pairs.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        ImagePair p;
        char id[32];
        std::snprintf(id, sizeof id, "p%06zu", i);
        p.source_id = id;
        p.rate_bpp = spec.rate_bpp;
        p.cover_seed = derive_seed(spec.master_seed, 2 * i);
        p.embed_seed = derive_seed(spec.master_seed, 2 * i + 1);
        p.cover = gen_cover(spec.width, spec.height, p.cover_seed);
        p.stego = embed_lsbm(p.cover, spec.rate_bpp, p.embed_seed);
        ds.pairs.push_back(std::move(p));
    }

    ds.split.split_seed = derive_seed(spec.master_seed, ~std::uint64_t{0});
    std::vector<std::size_t> pool(spec.n_pairs);
    for (std::size_t i = 0; i < pool.size(); ++i) {
        pool[i] = i;
    }
    std::mt19937_64 rng(ds.split.split_seed);
    std::shuffle(pool.begin(), pool.end(), rng);
    // Five folds: four train, one validation.
    const std::size_t n_val = spec.n_pairs / 5;
    ds.split.val.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_val));
    ds.split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_val), pool.end());
    std::sort(ds.split.train.begin(), ds.split.train.end());
    std::sort(ds.split.val.begin(), ds.split.val.end());
    for (std::size_t i = spec.n_pairs; i < total; ++i) {
        ds.split.test.push_back(i);
    }
    return ds;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& dir)
{
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / kManifestName, std::ios::trunc);
    if (!manifest) {
        throw IoError("cannot write " + (dir / kManifestName).string());
    }
    manifest << "id,width,height,rate_bpp,cover_seed,embed_seed,split\n";
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
        const auto& p = dataset.pairs[i];
        write_pgm(dir / (p.source_id + "_cover.pgm"), p.cover);
        write_pgm(dir / (p.source_id + "_stego.pgm"), p.stego);
        char rate[32];
        std::snprintf(rate, sizeof rate, "%.17g", p.rate_bpp);
        manifest << p.source_id << ',' << p.cover.width << ',' << p.cover.height << ',' << rate << ','
                 << p.cover_seed << ',' << p.embed_seed << ',' << to_string(dataset.split.split_of(i)) << '\n';
    }
    if (!manifest) {
        throw IoError("write failed for " + (dir / kManifestName).string());
    }
}

Dataset read_dataset(const std::filesystem::path& dir)
{
    const auto path = dir / kManifestName;
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open dataset manifest " + path.string());
    }
    std::string line;
    std::getline(in, line);
    if (line != "id,width,height,rate_bpp,cover_seed,embed_seed,split") {
        throw IoError(path.string() + ": unexpected manifest header");
    }
    Dataset ds;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) {
            f.push_back(cell);
        }
        if (f.size() != 7) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 7 fields");
        }
        ImagePair p;
        p.source_id = f[0];
        p.rate_bpp = std::stod(f[3]);
        p.cover_seed = std::stoull(f[4]);
        p.embed_seed = std::stoull(f[5]);
        p.cover = read_pgm(dir / (p.source_id + "_cover.pgm"));
        p.stego = read_pgm(dir / (p.source_id + "_stego.pgm"));
        if (p.cover.width != std::stoi(f[1]) || p.cover.height != std::stoi(f[2]) || p.stego.width != p.cover.width ||
            p.stego.height != p.cover.height) {
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": image dimensions disagree with manifest");
        }
        const std::size_t index = ds.pairs.size();
        switch (parse_split(f[6])) {
        case Split::train:
            ds.split.train.push_back(index);
            break;
        case Split::val:
            ds.split.val.push_back(index);
            break;
        case Split::test:
            ds.split.test.push_back(index);
            break;
        }
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

} // namespace steglearn
