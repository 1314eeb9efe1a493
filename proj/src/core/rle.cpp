#include "mass/core/rle.hpp"

#include "mass/core/error.hpp"

#include <zlib.h>

#include <limits>

namespace mass {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<uint8_t>((v >> (8 * b)) & 0xffu));
}

uint32_t get_u32(std::span<uint8_t const> bytes, size_t at) {
    uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(bytes[at + static_cast<size_t>(b)]) << (8 * b);
    return v;
}

} // namespace

std::vector<Run> encode_runs(BinaryArray const& m) {
    if (m.size() > std::numeric_limits<uint32_t>::max()) throw ShapeError("mask too large for u32 run offsets");
    std::vector<Run> runs;
    int64_t const n = m.size();
    int64_t i = 0;
    while (i < n) {
        if (!m[i]) {
            ++i;
            continue;
        }
        int64_t const start = i;
        while (i < n && m[i]) ++i;
        runs.push_back({static_cast<uint32_t>(start), static_cast<uint32_t>(i - start)});
    }
    return runs;
}

BinaryArray decode_runs(std::span<Run const> runs, Shape3 const& shape) {
    BinaryArray out(shape, 0);
    uint64_t const n = static_cast<uint64_t>(out.size());
    uint64_t prev_end = 0;
    for (auto const& r : runs) {
        uint64_t const end = static_cast<uint64_t>(r.start) + r.length;
        if (r.length == 0 || end > n || r.start < prev_end) {
            throw FormatError("invalid run [" + std::to_string(r.start) + ", +" + std::to_string(r.length) +
                              ") for shape " + format_shape(shape));
        }
        std::fill(out.begin() + static_cast<std::ptrdiff_t>(r.start), out.begin() + static_cast<std::ptrdiff_t>(end),
                  uint8_t{1});
        prev_end = end;
    }
    return out;
}

void append_record(std::vector<uint8_t>& out, RleRecord const& r) {
    out.reserve(out.size() + record_size(r.runs.size()));
    put_u32(out, r.index);
    put_u32(out, static_cast<uint32_t>(r.runs.size()));
    for (auto const& run : r.runs) {
        put_u32(out, run.start);
        put_u32(out, run.length);
    }
}

std::vector<uint8_t> serialize_record(RleRecord const& r) {
    std::vector<uint8_t> out;
    append_record(out, r);
    return out;
}

std::vector<RleRecord> parse_records(std::span<uint8_t const> bytes) {
    std::vector<RleRecord> out;
    size_t at = 0;
    while (at < bytes.size()) {
        if (bytes.size() - at < 8) throw FormatError("truncated RLE record header at byte " + std::to_string(at));
        RleRecord r;
        r.index = get_u32(bytes, at);
        uint32_t const count = get_u32(bytes, at + 4);
        at += 8;
        if ((bytes.size() - at) / 8 < count) {
            throw FormatError("truncated RLE record for mask " + std::to_string(r.index));
        }
        r.runs.resize(count);
        for (uint32_t i = 0; i < count; ++i) {
            r.runs[i].start = get_u32(bytes, at);
            r.runs[i].length = get_u32(bytes, at + 4);
            at += 8;
        }
        out.push_back(std::move(r));
    }
    return out;
}

Mask3D rle_roundtrip(Mask3D const& m) {
    if (!m.is_binary()) throw InvalidParameter("rle_roundtrip requires a binary mask");
    RleRecord rec{0, encode_runs(m.voxels)};
    auto const bytes = serialize_record(rec);
    auto const parsed = parse_records(bytes);
    Mask3D out = m;
    out.voxels = decode_runs(parsed.at(0).runs, m.shape());
    return out;
}

uint32_t crc32_of(std::span<uint8_t const> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    size_t at = 0;
    while (at < bytes.size()) {
        auto const chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - at, 1u << 30));
        crc = crc32(crc, bytes.data() + at, chunk);
        at += chunk;
    }
    return static_cast<uint32_t>(crc);
}

} // namespace mass
