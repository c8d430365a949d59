#pragma once

// Flat tensor archive reader/writer.
//
// Layout: u64 little-endian header length N, N bytes of JSON header, then the
// raw little-endian payloads. The header maps tensor names to
// {"dtype", "shape", "data_offsets": [begin, end]} with offsets relative to
// the first payload byte. An optional "__metadata__" string map is allowed.

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include <nlohmann/json.hpp>

#include "mals/error.hpp"
#include "mals/tensor.hpp"

namespace mals {

static_assert(std::endian::native == std::endian::little,
              "archive I/O assumes a little-endian host");

enum class DType { F32, F16 };

inline const char* dtype_name(DType d) {
    return d == DType::F32 ? "F32" : "F16";
}

inline std::size_t dtype_size(DType d) {
    return d == DType::F32 ? 4 : 2;
}

using Metadata = std::map<std::string, std::string>;

inline constexpr std::string_view kMetadataKey = "__metadata__";

/// One header entry as stored on disk.
struct ArchiveEntry {
    std::string name;
    DType dtype = DType::F32;
    std::vector<std::uint64_t> shape;
    std::uint64_t begin = 0;
    std::uint64_t end = 0;
};

/// Decoded header: entries in lexicographic name order plus metadata.
struct ArchiveIndex {
    std::vector<ArchiveEntry> entries;
    Metadata metadata;
    std::uint64_t header_size = 0;
    std::uint64_t payload_size = 0;
};

/// IEEE-754 binary16 to binary32, exact for every input including subnormals.
inline float half_to_float(std::uint16_t h) {
    const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
    std::uint32_t exp = (h >> 10) & 0x1fu;
    std::uint32_t mant = h & 0x3ffu;
    std::uint32_t bits = 0;
    if (exp == 0) {
        if (mant == 0) {
            bits = sign;
        } else {
            // subnormal: renormalize
            int e = -1;
            do {
                ++e;
                mant <<= 1;
            } while ((mant & 0x400u) == 0);
            mant &= 0x3ffu;
            bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | (mant << 13);
        }
    } else if (exp == 0x1f) {
        bits = sign | 0x7f800000u | (mant << 13);
    } else {
        bits = sign | ((exp + (127 - 15)) << 23) | (mant << 13);
    }
    return std::bit_cast<float>(bits);
}

namespace detail {

inline std::uint64_t read_u64_le(const std::uint8_t* p) {
    std::uint64_t v = 0;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline std::vector<std::uint64_t> parse_u64_array(const nlohmann::json& j, const std::string& what) {
    if (!j.is_array()) {
        throw FormatError("malformed header: " + what + " is not an array");
    }
    std::vector<std::uint64_t> out;
    out.reserve(j.size());
    for (const auto& v : j) {
        if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
            throw FormatError("malformed header: " + what + " must hold non-negative integers");
        }
        out.push_back(v.get<std::uint64_t>());
    }
    return out;
}

} // namespace detail

/// Parses and validates the header of an in-memory archive.
inline ArchiveIndex parse_archive_index(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 8) {
        throw FormatError("malformed header: file shorter than the 8-byte length prefix");
    }
    const std::uint64_t n = detail::read_u64_le(bytes.data());
    if (n > bytes.size() - 8) {
        throw FormatError("malformed header: header length " + std::to_string(n) +
                          " exceeds file size " + std::to_string(bytes.size()));
    }

    std::set<std::string> seen;
    std::string duplicate;
    nlohmann::json::parser_callback_t on_event =
        [&](int depth, nlohmann::json::parse_event_t event, nlohmann::json& parsed) {
            if (event == nlohmann::json::parse_event_t::key && depth == 1) {
                auto key = parsed.get<std::string>();
                if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
            }
            return true;
        };

    nlohmann::json header;
    const auto* first = reinterpret_cast<const char*>(bytes.data() + 8);
    try {
        header = nlohmann::json::parse(first, first + n, on_event);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed header: ") + e.what());
    }
    if (!duplicate.empty()) {
        throw FormatError("duplicate tensor name '" + duplicate + "' in header");
    }
    if (!header.is_object()) {
        throw FormatError("malformed header: top level is not a JSON object");
    }

    ArchiveIndex index;
    index.header_size = n;
    index.payload_size = bytes.size() - 8 - n;

    for (const auto& [name, info] : header.items()) {
        if (name == kMetadataKey) {
            if (!info.is_object()) {
                throw FormatError("malformed header: __metadata__ is not an object");
            }
            for (const auto& [k, v] : info.items()) {
                if (!v.is_string()) {
                    throw FormatError("malformed header: __metadata__ value for '" + k + "' is not a string");
                }
                index.metadata.emplace(k, v.get<std::string>());
            }
            continue;
        }
        if (name.empty()) {
            throw FormatError("malformed header: empty tensor name");
        }
        if (!info.is_object() || !info.contains("dtype") || !info.contains("shape") ||
            !info.contains("data_offsets")) {
            throw FormatError("malformed header: entry '" + name +
                              "' needs dtype, shape and data_offsets");
        }
        const auto& dt = info.at("dtype");
        if (!dt.is_string()) {
            throw FormatError("malformed header: dtype of '" + name + "' is not a string");
        }
        ArchiveEntry e;
        e.name = name;
        const auto dts = dt.get<std::string>();
        if (dts == "F32") {
            e.dtype = DType::F32;
        } else if (dts == "F16") {
            e.dtype = DType::F16;
        } else {
            throw FormatError("unsupported dtype '" + dts + "' for tensor '" + name + "'");
        }
        e.shape = detail::parse_u64_array(info.at("shape"), "shape of '" + name + "'");
        auto offs = detail::parse_u64_array(info.at("data_offsets"), "data_offsets of '" + name + "'");
        if (offs.size() != 2 || offs[0] > offs[1]) {
            throw FormatError("malformed header: data_offsets of '" + name + "' must be [begin, end]");
        }
        e.begin = offs[0];
        e.end = offs[1];
        std::uint64_t numel = 0;
        try {
            numel = element_count(e.shape);
        } catch (const ValidationError&) {
            throw FormatError("malformed header: shape of '" + name + "' overflows");
        }
        if (numel > (std::numeric_limits<std::uint64_t>::max)() / dtype_size(e.dtype) ||
            e.end - e.begin != numel * dtype_size(e.dtype)) {
            throw FormatError("malformed header: byte range of '" + name + "' does not match its shape");
        }
        if (e.end > index.payload_size) {
            throw FormatError("truncated payload: tensor '" + name + "' ends at byte " +
                              std::to_string(e.end) + " but payload has " +
                              std::to_string(index.payload_size) + " bytes");
        }
        index.entries.push_back(std::move(e));
    }

    // Payloads must tile the data section with no gaps or overlaps.
    std::vector<const ArchiveEntry*> by_offset;
    by_offset.reserve(index.entries.size());
    for (const auto& e : index.entries) by_offset.push_back(&e);
    std::sort(by_offset.begin(), by_offset.end(), [](const ArchiveEntry* a, const ArchiveEntry* b) {
        return a->begin != b->begin ? a->begin < b->begin : a->end < b->end;
    });
    std::uint64_t cursor = 0;
    for (const auto* e : by_offset) {
        if (e->begin != cursor) {
            throw FormatError("malformed header: tensor '" + e->name +
                              (e->begin < cursor ? "' overlaps another tensor" : "' leaves a gap in the payload"));
        }
        cursor = e->end;
    }
    if (cursor != index.payload_size) {
        throw FormatError("malformed header: payload has " + std::to_string(index.payload_size - cursor) +
                          " trailing bytes not covered by any tensor");
    }

    std::sort(index.entries.begin(), index.entries.end(),
              [](const ArchiveEntry& a, const ArchiveEntry& b) { return a.name < b.name; });
    return index;
}

/// Decodes an in-memory archive; F16 payloads are widened to F32.
inline TensorMap decode_archive(std::span<const std::uint8_t> bytes) {
    const ArchiveIndex index = parse_archive_index(bytes);
    const std::uint8_t* payload = bytes.data() + 8 + index.header_size;
    TensorMap map;
    for (const auto& e : index.entries) {
        const std::size_t numel = static_cast<std::size_t>((e.end - e.begin) / dtype_size(e.dtype));
        std::vector<float> data(numel);
        const std::uint8_t* src = payload + e.begin;
        if (e.dtype == DType::F32) {
            if (numel > 0) std::memcpy(data.data(), src, numel * sizeof(float));
        } else {
            for (std::size_t i = 0; i < numel; ++i) {
                std::uint16_t h = 0;
                std::memcpy(&h, src + 2 * i, sizeof(h));
                data[i] = half_to_float(h);
            }
        }
        for (std::size_t i = 0; i < numel; ++i) {
            if (!std::isfinite(data[i])) {
                throw ValidationError("non-finite value in tensor '" + e.name + "' at index " + std::to_string(i));
            }
        }
        map.insert(e.name, Tensor(e.shape, std::move(data)));
    }
    if (map.empty()) {
        throw ValidationError("archive contains no tensors");
    }
    return map;
}

/// Serializes a validated map as F32. Output bytes depend only on the map
/// contents and metadata.
inline std::vector<std::uint8_t> encode_archive(const TensorMap& map, const Metadata& metadata = {}) {
    map.validate();
    nlohmann::json header = nlohmann::json::object();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : map) {
        if (name == kMetadataKey) {
            throw ValidationError("tensor name '__metadata__' is reserved");
        }
        const std::uint64_t nbytes = static_cast<std::uint64_t>(t.numel()) * sizeof(float);
        header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    if (!metadata.empty()) {
        header[std::string(kMetadataKey)] = metadata;
    }

    std::string text;
    try {
        text = header.dump();
    } catch (const nlohmann::json::type_error& e) {
        throw ValidationError(std::string("unencodable tensor name or metadata: ") + e.what());
    }
    // Pad with spaces so the payload starts 8-byte aligned.
    while (text.size() % 8 != 0) text.push_back(' ');

    std::vector<std::uint8_t> out(8 + text.size() + offset);
    const std::uint64_t n = text.size();
    std::memcpy(out.data(), &n, sizeof(n));
    std::memcpy(out.data() + 8, text.data(), text.size());
    std::uint8_t* dst = out.data() + 8 + text.size();
    for (const auto& [_, t] : map) {
        const std::size_t nbytes = t.numel() * sizeof(float);
        if (nbytes > 0) std::memcpy(dst, t.data.data(), nbytes);
        dst += nbytes;
    }
    return out;
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "' for reading");
    }
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) {
        throw IoError("cannot determine size of '" + path.string() + "'");
    }
    in.seekg(0, std::ios::beg);
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(size));
    if (!bytes.empty() && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
        throw IoError("failed to read '" + path.string() + "'");
    }
    return bytes;
}

/// Writes through a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    static std::atomic<unsigned> counter{0};
    auto tmp = path;
    tmp += ".tmp-" + std::to_string(::getpid()) + "-" + std::to_string(counter++);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot open '" + tmp.string() + "' for writing");
        }
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        out.flush();
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(tmp, ec);
            throw IoError("failed to write '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move archive into place at '" + path.string() + "'");
    }
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
    write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

inline TensorMap read_archive(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return decode_archive(bytes);
    } catch (const Error& e) {
        // keep the error category, add the file name
        if (dynamic_cast<const FormatError*>(&e)) throw FormatError(path.string() + ": " + e.what());
        throw ValidationError(path.string() + ": " + e.what());
    }
}

inline ArchiveIndex read_archive_index(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    try {
        return parse_archive_index(bytes);
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

inline void write_archive(const TensorMap& map, const std::filesystem::path& path, const Metadata& metadata = {}) {
    const auto bytes = encode_archive(map, metadata);
    write_file_atomic(path, bytes);
}

} // namespace mals
