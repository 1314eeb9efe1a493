#include "mass/core/mask_bank.hpp"

#include "mass/core/error.hpp"
#include "mass/core/rle.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <iterator>

namespace mass {

namespace fs = std::filesystem;
using nlohmann::json;

void MaskBank::validate() const {
    for (size_t i = 0; i < masks.size(); ++i) {
        if (masks[i].shape() != shape) {
            throw ShapeError("mask " + std::to_string(i) + " has shape " + format_shape(masks[i].shape()) +
                             ", bank shape is " + format_shape(shape));
        }
        if (masks[i].volume_id != volume_id) {
            throw PreconditionError("mask " + std::to_string(i) + " belongs to volume '" + masks[i].volume_id +
                                    "', bank volume is '" + volume_id + "'");
        }
    }
}

std::vector<MaskMeta> MaskBank::manifest() const {
    std::vector<MaskMeta> out;
    out.reserve(masks.size());
    for (size_t i = 0; i < masks.size(); ++i) {
        auto const& m = masks[i];
        MaskMeta meta;
        meta.index = static_cast<uint32_t>(i);
        meta.voxel_count = m.count();
        meta.bbox = m.bbox();
        meta.seed_axis = m.seed_axis;
        meta.seed_slice = m.seed_slice;
        meta.source = m.source;
        meta.crc32 = crc32_of(serialize_record({meta.index, encode_runs(m.voxels)}));
        out.push_back(meta);
    }
    return out;
}

void save_mask_bank(MaskBank const& bank, fs::path const& dir) {
    bank.validate();
    fs::create_directories(dir);
    std::vector<uint8_t> blob;
    json masks = json::array();
    for (size_t i = 0; i < bank.masks.size(); ++i) {
        auto const& m = bank.masks[i];
        size_t const offset = blob.size();
        RleRecord const rec{static_cast<uint32_t>(i), encode_runs(m.voxels)};
        append_record(blob, rec);
        std::span<uint8_t const> const bytes(blob.data() + offset, blob.size() - offset);
        BBox const b = m.bbox();
        masks.push_back({{"index", i},
                         {"voxel_count", m.count()},
                         {"bbox", {{"lo", b.lo}, {"hi", b.hi}}},
                         {"seed_axis", m.seed_axis},
                         {"seed_slice", m.seed_slice},
                         {"source", to_string(m.source)},
                         {"offset", offset},
                         {"length", bytes.size()},
                         {"crc32", crc32_of(bytes)}});
    }
    json manifest = {{"schema", "mass.maskbank"},
                     {"schema_version", kMaskBankSchemaVersion},
                     {"volume_id", bank.volume_id},
                     {"shape", bank.shape},
                     {"mask_count", bank.masks.size()},
                     {"masks", masks}};
    {
        std::ofstream f(dir / "masks.rle", std::ios::binary | std::ios::trunc);
        f.write(reinterpret_cast<char const*>(blob.data()), static_cast<std::streamsize>(blob.size()));
        if (!f) throw FormatError("cannot write " + (dir / "masks.rle").string());
    }
    std::ofstream f(dir / "manifest.json", std::ios::trunc);
    f << manifest.dump(1) << '\n';
    if (!f) throw FormatError("cannot write " + (dir / "manifest.json").string());
}

MaskBank load_mask_bank(fs::path const& dir) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw FormatError("missing mask bank manifest: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (json::exception const& e) {
        throw FormatError("ill-formed manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    int const version = manifest.value("schema_version", -1);
    if (version != kMaskBankSchemaVersion) {
        throw VersionMismatch("mask bank schema version " + std::to_string(version) + " unsupported (expected " +
                              std::to_string(kMaskBankSchemaVersion) + ")");
    }
    std::ifstream bf(dir / "masks.rle", std::ios::binary);
    if (!bf) throw FormatError("missing " + (dir / "masks.rle").string());
    std::vector<uint8_t> const blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());

    MaskBank bank;
    try {
        bank.volume_id = manifest.at("volume_id").get<std::string>();
        bank.shape = manifest.at("shape").get<Shape3>();
        for (auto const& entry : manifest.at("masks")) {
            auto const index = entry.at("index").get<int64_t>();
            auto const offset = entry.at("offset").get<size_t>();
            auto const length = entry.at("length").get<size_t>();
            if (offset > blob.size() || length > blob.size() - offset) {
                throw ChecksumError("masks.rle truncated: record for mask " + std::to_string(index) + " missing", index);
            }
            std::span<uint8_t const> const bytes(blob.data() + offset, length);
            if (crc32_of(bytes) != entry.at("crc32").get<uint32_t>()) {
                throw ChecksumError("CRC32 mismatch for mask " + std::to_string(index), index);
            }
            auto records = parse_records(bytes);
            if (records.size() != 1 || records[0].index != static_cast<uint32_t>(index)) {
                throw FormatError("record index mismatch for mask " + std::to_string(index));
            }
            Mask3D m;
            m.voxels = decode_runs(records[0].runs, bank.shape);
            m.seed_axis = entry.at("seed_axis").get<int>();
            m.seed_slice = entry.at("seed_slice").get<int64_t>();
            m.source = parse_mask_source(entry.at("source").get<std::string>());
            m.volume_id = bank.volume_id;
            bank.masks.push_back(std::move(m));
        }
    } catch (json::exception const& e) {
        throw FormatError("ill-formed manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    return bank;
}

} // namespace mass
