#pragma once

// Binary checkpoints:
//   magic "STEGLRN\0" | u32 version | u32 endian tag 0x01020304 | u64 config hash |
//   u32 block count | blocks: u32 name length, name, u64 count, count x f64
// All integers and reals little-endian; blocks in for_each_layer order, then
// the batch-norm running statistics.

#include "steglearn/image.hpp"
#include "steglearn/model.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace steglearn {

inline constexpr std::array<char, 8> kCheckpointMagic = {'S', 'T', 'E', 'G', 'L', 'R', 'N', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kEndianTag = 0x01020304u;

namespace detail {

template <typename Scalar>
struct NamedBlock {
    std::string name;
    Eigen::Array<Scalar, Eigen::Dynamic, 1>* values;
};

template <typename Scalar>
std::vector<NamedBlock<Scalar>> checkpoint_blocks(ModelState<Scalar>& model)
{
    std::vector<NamedBlock<Scalar>> blocks;
    for_each_layer(model, [&](const std::string& name, LayerParams<Scalar>& p) {
        blocks.push_back({name + ".weights", &p.weights});
        if (p.bias) {
            blocks.push_back({name + ".bias", &*p.bias});
        }
    });
    for (std::size_t g = 0; g < model.steg.groups.size(); ++g) {
        const std::string prefix = "steg.g" + std::to_string(g + 1) + ".bn";
        blocks.push_back({prefix + ".running_mean", &model.steg.groups[g].bn.running_mean});
        blocks.push_back({prefix + ".running_var", &model.steg.groups[g].bn.running_var});
    }
    return blocks;
}

inline void put_u64(std::string& out, std::uint64_t v)
{
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

inline void put_u32(std::string& out, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
}

class ByteReader {
  public:
    ByteReader(const std::string& bytes, std::string origin) : bytes_{bytes}, origin_{std::move(origin)} {}

    std::uint64_t u64() { return uint(8); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }

    std::string raw(std::size_t n)
    {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == bytes_.size(); }

  private:
    std::uint64_t uint(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= std::uint64_t(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    void need(std::size_t n) const
    {
        if (bytes_.size() - pos_ < n) {
            throw IoError(origin_ + ": checkpoint truncated");
        }
    }

    const std::string& bytes_;
    std::string origin_;
    std::size_t pos_ = 0;
};

} // namespace detail

template <typename Scalar>
std::string encode_checkpoint(ModelState<Scalar>& model, std::uint64_t config_hash)
{
    std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
    detail::put_u32(out, kCheckpointVersion);
    detail::put_u32(out, kEndianTag);
    detail::put_u64(out, config_hash);
    const auto blocks = detail::checkpoint_blocks(model);
    detail::put_u32(out, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& b : blocks) {
        detail::put_u32(out, static_cast<std::uint32_t>(b.name.size()));
        out += b.name;
        detail::put_u64(out, static_cast<std::uint64_t>(b.values->size()));
        for (Index i = 0; i < b.values->size(); ++i) {
            detail::put_u64(out, std::bit_cast<std::uint64_t>(double((*b.values)[i])));
        }
    }
    return out;
}

/// Restores every block into `model` (which must have the standard layout); returns the stored config hash.
template <typename Scalar>
std::uint64_t decode_checkpoint(const std::string& bytes, ModelState<Scalar>& model, const std::string& origin = "<memory>")
{
    detail::ByteReader in(bytes, origin);
    const std::string magic = in.raw(kCheckpointMagic.size());
    if (std::memcmp(magic.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
        throw IoError(origin + ": not a checkpoint (bad magic)");
    }
    if (const auto v = in.u32(); v != kCheckpointVersion) {
        throw IoError(origin + ": unsupported checkpoint version " + std::to_string(v));
    }
    if (in.u32() != kEndianTag) {
        throw IoError(origin + ": bad endianness tag");
    }
    const std::uint64_t hash = in.u64();
    auto blocks = detail::checkpoint_blocks(model);
    if (in.u32() != blocks.size()) {
        throw IoError(origin + ": block count does not match the model layout");
    }
    for (auto& b : blocks) {
        const std::string name = in.raw(in.u32());
        const std::uint64_t count = in.u64();
        if (name != b.name || count != static_cast<std::uint64_t>(b.values->size())) {
            throw IoError(origin + ": expected block " + b.name + " of " + std::to_string(b.values->size()) +
                          " values, found " + name + " of " + std::to_string(count));
        }
        for (Index i = 0; i < b.values->size(); ++i) {
            (*b.values)[i] = Scalar(std::bit_cast<double>(in.u64()));
        }
    }
    if (!in.at_end()) {
        throw IoError(origin + ": trailing bytes after the last block");
    }
    return hash;
}

template <typename Scalar>
void save_checkpoint(const std::filesystem::path& path, ModelState<Scalar>& model, std::uint64_t config_hash)
{
    const std::string bytes = encode_checkpoint(model, config_hash);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("cannot write checkpoint " + path.string());
    }
}

template <typename Scalar>
std::uint64_t load_checkpoint(const std::filesystem::path& path, ModelState<Scalar>& model)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open checkpoint " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_checkpoint(buf.str(), model, path.string());
}

} // namespace steglearn
