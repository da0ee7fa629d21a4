#include "sstatl/checkpoint.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <limits>

#include "byte_io.hpp"

namespace sstatl {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io, "cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io, "cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io, "short write to " + path.string());
}

std::string encode_checkpoint(const Checkpoint& checkpoint) {
    nlohmann::json header;
    header["config"] = checkpoint.config;
    header["parameters"] = nlohmann::json::array();
    std::uint64_t offset = 0;
    for (const Parameter& p : checkpoint.parameters) {
        if (p.value.size() != shape_size(p.value.shape))
            throw Error(Errc::shape_mismatch, "parameter " + p.name + " has inconsistent shape");
        header["parameters"].push_back({{"name", p.name},
                                        {"shape", p.value.shape},
                                        {"frozen", p.frozen},
                                        {"offset", offset},
                                        {"count", p.value.size()}});
        offset += 8 * p.value.size();
    }
    const std::string text = header.dump();

    std::string out;
    out.reserve(16 + text.size() + offset);
    out.append(checkpoint_magic);
    detail::put_le<std::uint32_t>(out, checkpoint_version);
    detail::put_le<std::uint64_t>(out, text.size());
    out.append(text);
    for (const Parameter& p : checkpoint.parameters)
        for (double x : p.value.data) detail::put_f64(out, x);
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    detail::ByteReader in(bytes);
    if (in.remaining() < 4 || in.take(4) != checkpoint_magic) throw Error(Errc::bad_magic, "not a checkpoint file");
    const auto version = in.get_le<std::uint32_t>();
    if (version != checkpoint_version)
        throw Error(Errc::invalid_header, "unsupported checkpoint version " + std::to_string(version));
    const auto header_len = in.get_le<std::uint64_t>();
    if (header_len > in.remaining()) throw Error(Errc::truncated, "checkpoint header extends past end of file");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(in.take(static_cast<std::size_t>(header_len)));
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_header, std::string("checkpoint header: ") + e.what());
    }

    Checkpoint result;
    try {
        result.config = header.at("config");
        std::uint64_t expected_offset = 0;
        for (const auto& entry : header.at("parameters")) {
            Parameter p;
            p.name = entry.at("name").get<std::string>();
            Shape shape = entry.at("shape").get<Shape>();
            p.frozen = entry.at("frozen").get<bool>();
            const auto offset = entry.at("offset").get<std::uint64_t>();
            const auto count = entry.at("count").get<std::uint64_t>();
            if (offset != expected_offset || count != shape_size(shape))
                throw Error(Errc::invalid_header, "parameter " + p.name + " has inconsistent layout");
            if (count > in.remaining() / 8) throw Error(Errc::truncated, "payload for " + p.name);
            std::vector<double> values(count);
            for (double& x : values) {
                x = in.get_f64();
                if (!std::isfinite(x)) throw Error(Errc::non_finite, "parameter " + p.name);
            }
            p.value = Tensor(std::move(shape), std::move(values));
            p.grad = Tensor(p.value.shape);
            expected_offset += 8 * count;
            result.parameters.push_back(std::move(p));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::invalid_header, std::string("checkpoint header: ") + e.what());
    }
    if (in.remaining() != 0) throw Error(Errc::trailing_bytes, std::to_string(in.remaining()) + " bytes after payload");
    return result;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

}  // namespace sstatl
