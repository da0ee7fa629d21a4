#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "sstatl/adam.hpp"

namespace sstatl {

/// Model checkpoint container.
///
/// Byte layout (all integers little-endian):
///
///   offset 0   4 bytes   magic "SSTC"
///   offset 4   u32       format version (1)
///   offset 8   u64       header length H
///   offset 16  H bytes   UTF-8 JSON header
///   offset 16+H          parameter payload
///
/// The header is an object {"config": ..., "parameters": [{"name", "shape",
/// "frozen", "offset", "count"}, ...]}. Each parameter occupies `count`
/// IEEE-754 binary64 values starting `offset` bytes into the payload, in
/// header order with no padding. Gradients are not stored.
struct Checkpoint {
    nlohmann::json config = nlohmann::json::object();
    std::vector<Parameter> parameters;
};

inline constexpr std::string_view checkpoint_magic = "SSTC";
inline constexpr std::uint32_t checkpoint_version = 1;

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Whole-file helpers shared by the binary formats.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace sstatl
