#pragma once

#include "mass/core/volume.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace mass {

struct Run {
    uint32_t start = 0;
    uint32_t length = 0;
    bool operator==(Run const&) const = default;
};

/// Foreground runs over the flattened C-order voxel array.
std::vector<Run> encode_runs(BinaryArray const& m);
/// Throws FormatError for runs that overlap, are unsorted, or leave the shape.
BinaryArray decode_runs(std::span<Run const> runs, Shape3 const& shape);

/// One on-disk record: index u32, run count u32, then (start u32, length u32)
/// pairs, all little-endian.
struct RleRecord {
    uint32_t index = 0;
    std::vector<Run> runs;
};

std::vector<uint8_t> serialize_record(RleRecord const& r);
void append_record(std::vector<uint8_t>& out, RleRecord const& r);

/// Parses concatenated records. Throws FormatError on truncation.
std::vector<RleRecord> parse_records(std::span<uint8_t const> bytes);

/// Size in bytes of a serialized record with `n_runs` runs.
inline size_t record_size(size_t n_runs) { return 8 + 8 * n_runs; }

Mask3D rle_roundtrip(Mask3D const& m);

uint32_t crc32_of(std::span<uint8_t const> bytes);

} // namespace mass
