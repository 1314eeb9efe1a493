#include "mass/core/volume_io.hpp"

#include "mass/core/error.hpp"

#include <nlohmann/json.hpp>
#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

namespace mass {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "NIfTI/raw I/O assumes a little-endian host");

constexpr size_t kNiftiHeaderSize = 348;
constexpr size_t kNiftiDataOffset = 352;

enum NiftiType : int16_t {
    kUint8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUint16 = 512,
};

bool ends_with(std::string const& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

bool is_nifti(fs::path const& p) {
    auto const s = p.string();
    return ends_with(s, ".nii") || ends_with(s, ".nii.gz");
}

struct GzCloser {
    void operator()(gzFile f) const {
        if (f) gzclose(f);
    }
};
using GzHandle = std::unique_ptr<gzFile_s, GzCloser>;

std::vector<uint8_t> read_all_gz(fs::path const& path) {
    GzHandle f(gzopen(path.c_str(), "rb"));
    if (!f) throw FormatError("cannot open " + path.string());
    std::vector<uint8_t> out;
    std::vector<uint8_t> buf(1 << 20);
    for (;;) {
        int const n = gzread(f.get(), buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) throw FormatError("read error in " + path.string());
        if (n == 0) break;
        out.insert(out.end(), buf.begin(), buf.begin() + n);
    }
    return out;
}

template <typename T> T load(std::vector<uint8_t> const& b, size_t at, bool swap) {
    T v;
    std::memcpy(&v, b.data() + at, sizeof(T));
    if (swap) {
        auto* p = reinterpret_cast<uint8_t*>(&v);
        std::reverse(p, p + sizeof(T));
    }
    return v;
}

template <typename T> void store(std::vector<uint8_t>& b, size_t at, T v) { std::memcpy(b.data() + at, &v, sizeof(T)); }

struct NiftiImage {
    Shape3 shape{};
    Spacing3 spacing{};
    std::string descrip;
    std::vector<double> values; ///< NIfTI order (x fastest)
};

NiftiImage read_nifti(fs::path const& path) {
    auto const bytes = read_all_gz(path);
    if (bytes.size() < kNiftiHeaderSize) throw FormatError(path.string() + ": truncated NIfTI header");
    bool swap = false;
    int32_t sizeof_hdr = load<int32_t>(bytes, 0, false);
    if (sizeof_hdr != 348) {
        swap = true;
        sizeof_hdr = load<int32_t>(bytes, 0, true);
        if (sizeof_hdr != 348) throw FormatError(path.string() + ": not a NIfTI-1 file");
    }
    if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0) {
        throw FormatError(path.string() + ": only single-file NIfTI-1 (n+1) is supported");
    }
    NiftiImage img;
    auto const ndim = load<int16_t>(bytes, 40, swap);
    if (ndim < 3) throw FormatError(path.string() + ": expected a 3D image, dim[0]=" + std::to_string(ndim));
    for (size_t a = 0; a < 3; ++a) {
        img.shape[a] = load<int16_t>(bytes, 42 + 2 * a, swap);
        img.spacing[a] = std::abs(static_cast<double>(load<float>(bytes, 80 + 4 * a, swap)));
    }
    for (int d = 4; d <= ndim && d <= 7; ++d) {
        if (load<int16_t>(bytes, 40 + 2 * static_cast<size_t>(d), swap) > 1) {
            throw FormatError(path.string() + ": 4D+ images are not supported");
        }
    }
    auto const datatype = load<int16_t>(bytes, 70, swap);
    auto const vox_offset = static_cast<size_t>(load<float>(bytes, 108, swap));
    float slope = load<float>(bytes, 112, swap);
    float const inter = load<float>(bytes, 116, swap);
    if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;
    char desc[81] = {};
    std::memcpy(desc, bytes.data() + 148, 80);
    img.descrip = desc;

    int64_t const n = voxel_count(img.shape);
    size_t elem = 0;
    switch (datatype) {
    case kUint8:
    case kInt8: elem = 1; break;
    case kInt16:
    case kUint16: elem = 2; break;
    case kInt32:
    case kFloat32: elem = 4; break;
    case kFloat64: elem = 8; break;
    default: throw FormatError(path.string() + ": unsupported NIfTI datatype " + std::to_string(datatype));
    }
    if (bytes.size() < vox_offset + static_cast<size_t>(n) * elem) throw FormatError(path.string() + ": truncated voxel data");
    img.values.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
        size_t const at = vox_offset + static_cast<size_t>(i) * elem;
        double v = 0;
        switch (datatype) {
        case kUint8: v = bytes[at]; break;
        case kInt8: v = static_cast<int8_t>(bytes[at]); break;
        case kInt16: v = load<int16_t>(bytes, at, swap); break;
        case kUint16: v = load<uint16_t>(bytes, at, swap); break;
        case kInt32: v = load<int32_t>(bytes, at, swap); break;
        case kFloat32: v = load<float>(bytes, at, swap); break;
        case kFloat64: v = load<double>(bytes, at, swap); break;
        default: break;
        }
        img.values[static_cast<size_t>(i)] = v * slope + inter;
    }
    return img;
}

void write_nifti(fs::path const& path, Shape3 const& shape, Spacing3 const& spacing, std::string const& descrip,
                 int16_t datatype, std::vector<uint8_t> const& payload) {
    std::vector<uint8_t> hdr(kNiftiDataOffset, 0);
    store<int32_t>(hdr, 0, 348);
    store<int16_t>(hdr, 40, 3);
    for (size_t a = 0; a < 3; ++a) store<int16_t>(hdr, 42 + 2 * a, static_cast<int16_t>(shape[a]));
    for (size_t a = 3; a < 7; ++a) store<int16_t>(hdr, 42 + 2 * a, 1);
    store<int16_t>(hdr, 70, datatype);
    store<int16_t>(hdr, 72, static_cast<int16_t>(datatype == kUint8 ? 8 : 32));
    store<float>(hdr, 76, 1.0f); // qfac
    for (size_t a = 0; a < 3; ++a) store<float>(hdr, 80 + 4 * a, static_cast<float>(spacing[a]));
    store<float>(hdr, 108, static_cast<float>(kNiftiDataOffset));
    store<float>(hdr, 112, 1.0f);
    std::memcpy(hdr.data() + 148, descrip.data(), std::min<size_t>(descrip.size(), 79));
    store<int16_t>(hdr, 254, 1); // sform_code: scanner
    store<float>(hdr, 280, static_cast<float>(spacing[0]));
    store<float>(hdr, 300, static_cast<float>(spacing[1]));
    store<float>(hdr, 320, static_cast<float>(spacing[2]));
    hdr[123] = 10; // xyzt_units: mm + s
    std::memcpy(hdr.data() + 344, "n+1", 4);

    if (path.parent_path() != fs::path()) fs::create_directories(path.parent_path());
    if (ends_with(path.string(), ".gz")) {
        GzHandle f(gzopen(path.c_str(), "wb6"));
        if (!f) throw FormatError("cannot write " + path.string());
        gzwrite(f.get(), hdr.data(), static_cast<unsigned>(hdr.size()));
        gzwrite(f.get(), payload.data(), static_cast<unsigned>(payload.size()));
        return;
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    f.write(reinterpret_cast<char const*>(hdr.data()), static_cast<std::streamsize>(hdr.size()));
    f.write(reinterpret_cast<char const*>(payload.data()), static_cast<std::streamsize>(payload.size()));
    if (!f) throw FormatError("cannot write " + path.string());
}

// NIfTI storage is x-fastest; volumes are C-order (axis 2 fastest).
int64_t nifti_index(Shape3 const& s, int64_t i, int64_t j, int64_t k) { return i + s[0] * (j + s[1] * k); }

std::string descrip_field(std::string const& descrip, std::string const& key) {
    auto const pos = descrip.find(key + "=");
    if (pos == std::string::npos) return {};
    auto const start = pos + key.size() + 1;
    auto const end = descrip.find(';', start);
    return descrip.substr(start, end == std::string::npos ? std::string::npos : end - start);
}

} // namespace

Volume read_volume(fs::path const& path, std::optional<Modality> modality) {
    if (!fs::exists(path)) throw FormatError("volume not found: " + path.string());
    Volume v;
    if (path.extension() == ".json") {
        v = read_raw_volume(path);
        if (modality) v.modality = *modality;
    } else if (is_nifti(path)) {
        auto img = read_nifti(path);
        Array3D<float> a(img.shape);
        auto const& s = img.shape;
        for (int64_t i = 0; i < s[0]; ++i)
            for (int64_t j = 0; j < s[1]; ++j)
                for (int64_t k = 0; k < s[2]; ++k)
                    a(i, j, k) = static_cast<float>(img.values[static_cast<size_t>(nifti_index(s, i, j, k))]);
        v.voxels = std::move(a);
        v.spacing = img.spacing;
        auto const mod = descrip_field(img.descrip, "modality");
        v.modality = modality ? *modality : (mod.empty() ? Modality::CT : parse_modality(mod));
        v.id = descrip_field(img.descrip, "id");
        if (v.id.empty()) {
            auto stem = path.filename().string();
            v.id = stem.substr(0, stem.find('.'));
        }
    } else {
        throw FormatError("unrecognised volume format: " + path.string() + " (expected .nii, .nii.gz or .json)");
    }
    v.validate();
    return v;
}

void write_volume(Volume const& v, fs::path const& path) {
    if (path.extension() == ".json") {
        write_raw_volume(v, path);
        return;
    }
    if (!is_nifti(path)) throw FormatError("unrecognised volume format: " + path.string());
    auto const& s = v.shape();
    std::vector<uint8_t> payload(static_cast<size_t>(v.voxels.size()) * 4);
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j)
            for (int64_t k = 0; k < s[2]; ++k)
                std::memcpy(payload.data() + 4 * nifti_index(s, i, j, k), &v.voxels(i, j, k), 4);
    std::string const descrip = "modality=" + std::string(to_string(v.modality)) + ";id=" + v.id;
    write_nifti(path, s, v.spacing, descrip, kFloat32, payload);
}

Array3D<uint8_t> read_label_map(fs::path const& path) {
    if (!is_nifti(path)) throw FormatError("label maps must be NIfTI: " + path.string());
    auto img = read_nifti(path);
    Array3D<uint8_t> a(img.shape);
    auto const& s = img.shape;
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j)
            for (int64_t k = 0; k < s[2]; ++k) {
                double const x = img.values[static_cast<size_t>(nifti_index(s, i, j, k))];
                if (x < 0 || x > 255 || x != std::floor(x)) throw FormatError(path.string() + ": non-integer label value");
                a(i, j, k) = static_cast<uint8_t>(x);
            }
    return a;
}

void write_label_map(Array3D<uint8_t> const& labels, Spacing3 const& spacing, fs::path const& path) {
    auto const& s = labels.shape();
    std::vector<uint8_t> payload(static_cast<size_t>(labels.size()));
    for (int64_t i = 0; i < s[0]; ++i)
        for (int64_t j = 0; j < s[1]; ++j)
            for (int64_t k = 0; k < s[2]; ++k) payload[static_cast<size_t>(nifti_index(s, i, j, k))] = labels(i, j, k);
    write_nifti(path, s, spacing, "labels", kUint8, payload);
}

Volume read_raw_volume(fs::path const& header) {
    std::ifstream hf(header);
    if (!hf) throw FormatError("cannot open " + header.string());
    nlohmann::json h;
    try {
        h = nlohmann::json::parse(hf);
    } catch (nlohmann::json::exception const& e) {
        throw FormatError(header.string() + ": " + e.what());
    }
    if (h.value("dtype", "") != "float32-le") throw FormatError(header.string() + ": dtype must be \"float32-le\"");
    Volume v;
    Shape3 shape{};
    try {
        shape = h.at("shape").get<Shape3>();
        v.spacing = h.at("spacing").get<Spacing3>();
        v.modality = parse_modality(h.at("modality").get<std::string>());
    } catch (nlohmann::json::exception const& e) {
        throw FormatError(header.string() + ": " + e.what());
    }
    v.id = h.value("id", header.stem().string());
    auto const blob = header.parent_path() / h.value("data_file", header.stem().string() + ".raw");
    std::ifstream bf(blob, std::ios::binary);
    if (!bf) throw FormatError("missing raw voxel blob " + blob.string());
    std::vector<float> data(static_cast<size_t>(voxel_count(shape)));
    bf.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * 4));
    if (bf.gcount() != static_cast<std::streamsize>(data.size() * 4)) throw FormatError(blob.string() + ": truncated");
    v.voxels = Array3D<float>(shape, std::move(data));
    return v;
}

void write_raw_volume(Volume const& v, fs::path const& header) {
    if (header.parent_path() != fs::path()) fs::create_directories(header.parent_path());
    auto const blob_name = header.stem().string() + ".raw";
    nlohmann::json h = {{"shape", v.shape()},
                        {"spacing", v.spacing},
                        {"modality", to_string(v.modality)},
                        {"dtype", "float32-le"},
                        {"id", v.id},
                        {"data_file", blob_name}};
    std::ofstream hf(header, std::ios::trunc);
    hf << h.dump(1) << '\n';
    std::ofstream bf(header.parent_path() / blob_name, std::ios::binary | std::ios::trunc);
    bf.write(reinterpret_cast<char const*>(v.voxels.storage().data()),
             static_cast<std::streamsize>(v.voxels.size() * 4));
    if (!hf || !bf) throw FormatError("cannot write raw volume " + header.string());
}

} // namespace mass
