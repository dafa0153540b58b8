#pragma once

// Seeded synthetic cover/stego pairs: procedural grayscale covers and a
// +/-1 LSB-matching embedder.

#include "steglearn/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace steglearn {

struct ImagePair {
    GrayImage cover;
    GrayImage stego;
    double rate_bpp = 0;
    std::uint64_t cover_seed = 0;
    std::uint64_t embed_seed = 0;
    std::string source_id;
};

enum class Split { train, val, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

/// Disjoint pair indices. A cover and its stego always share a split.
struct DatasetSplit {
    std::vector<std::size_t> train;
    std::vector<std::size_t> val;
    std::vector<std::size_t> test;
    std::uint64_t split_seed = 0;

    const std::vector<std::size_t>& members(Split s) const;
    Split split_of(std::size_t pair_index) const;
};

struct Dataset {
    std::vector<ImagePair> pairs;
    DatasetSplit split;
};

struct DatasetSpec {
    std::size_t n_pairs = 100;      ///< training pool, split 4/5 train, 1/5 validation
    std::size_t n_test_pairs = 25;  ///< held-out pairs never used during training
    int width = 64;
    int height = 64;
    double rate_bpp = 0.4;
    std::uint64_t master_seed = 1;

    friend bool operator==(const DatasetSpec&, const DatasetSpec&) = default;
};

/// SplitMix64 finalizer over (seed, stream); used to derive independent per-pair seeds.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

/// Smoothed band-limited noise plus a gradient field, quantized to 8 bits.
GrayImage gen_cover(int width, int height, std::uint64_t texture_seed);

/// Each pixel changes by +/-1 with probability rate_bpp / 2; 0 always goes up, 255 always goes down.
GrayImage embed_lsbm(const GrayImage& cover, double rate_bpp, std::uint64_t embed_seed);

Dataset make_dataset(const DatasetSpec& spec);

/// `<id>_cover.pgm`, `<id>_stego.pgm` and `manifest.csv` in `dir`.
void write_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

inline constexpr const char* kManifestName = "manifest.csv";

} // namespace steglearn
