#include "cli_common.hpp"

#include "mass/core/error.hpp"
#include "mass/core/image_io.hpp"
#include "mass/core/log.hpp"
#include "mass/core/volume_io.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef MASS_VERSION
#define MASS_VERSION "0.0.0"
#endif

namespace mass::cli {

using nlohmann::json;

int guarded(std::function<void()> const& fn) {
    try {
        fn();
        return kOk;
    } catch (ConfigError const& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kUsage;
    } catch (InvalidParameter const& e) {
        std::cerr << "invalid parameter: " << e.what() << "\n";
        return kUsage;
    } catch (Error const& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (fs::filesystem_error const& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (json::exception const& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kData;
    } catch (std::exception const& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
}

std::string git_blob_hash(fs::path const& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw FormatError("cannot read " + file.string());
    std::string const body((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::string const head = "blob " + std::to_string(body.size()) + std::string(1, '\0');
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
    EVP_DigestUpdate(ctx, head.data(), head.size());
    EVP_DigestUpdate(ctx, body.data(), body.size());
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    std::string out;
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", md[i]);
        out += buf;
    }
    return out;
}

void write_json(fs::path const& path, json const& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write " + path.string());
    out << j.dump(2) << "\n";
}

json read_json(fs::path const& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot read " + path.string());
    try {
        return json::parse(in);
    } catch (json::exception const& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

void write_run_manifest(fs::path const& dir, RunManifest const& m, bool overwrite) {
    fs::create_directories(dir);
    fs::path const path = dir / "run-manifest.json";
    if (fs::exists(path) && !overwrite)
        throw PreconditionError("run directory " + dir.string() + " already holds a manifest");
    json inputs = json::array();
    for (auto const& p : m.inputs) {
        if (fs::is_directory(p)) {
            std::vector<fs::path> files;
            for (auto const& e : fs::recursive_directory_iterator(p))
                if (e.is_regular_file() && e.path().filename() != "run-manifest.json") files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (auto const& f : files) inputs.push_back({{"path", f.string()}, {"hash", git_blob_hash(f)}});
        } else if (fs::exists(p)) {
            inputs.push_back({{"path", p.string()}, {"hash", git_blob_hash(p)}});
        }
    }
    write_json(path, json{{"tool", "mass"},
                          {"version", MASS_VERSION},
                          {"command", m.command},
                          {"argv", m.argv},
                          {"seed", m.seed},
                          {"config", m.config},
                          {"inputs", inputs}});
}

fs::path find_image(fs::path const& case_dir) {
    for (char const* name : {"image.nii.gz", "image.nii", "image.json"}) {
        if (fs::exists(case_dir / name)) return case_dir / name;
    }
    throw FormatError("no image.nii.gz, image.nii or image.json in " + case_dir.string());
}

std::vector<fs::path> list_cases(fs::path const& dir) {
    if (!fs::is_directory(dir)) throw FormatError("not a directory: " + dir.string());
    std::vector<fs::path> out;
    for (auto const& e : fs::directory_iterator(dir)) {
        if (!e.is_directory()) continue;
        for (char const* name : {"image.nii.gz", "image.nii", "image.json"})
            if (fs::exists(e.path() / name)) {
                out.push_back(e.path());
                break;
            }
    }
    std::sort(out.begin(), out.end());
    if (out.empty()) throw FormatError("no case directories with an image under " + dir.string());
    return out;
}

Volume load_image(fs::path const& path) {
    Volume v = fs::is_directory(path) ? read_volume(find_image(path)) : read_volume(path);
    v.validate();
    return v;
}

BinaryArray load_mask(fs::path const& path, int label) {
    auto const lm = read_label_map(path);
    BinaryArray out(lm.shape());
    for (int64_t i = 0; i < lm.size(); ++i) out[i] = label < 0 ? (lm[i] != 0) : (lm[i] == label);
    if (count_foreground(out) == 0)
        throw PreconditionError("mask " + path.string() + (label < 0 ? "" : " (label " + std::to_string(label) + ")") +
                                " is empty");
    return out;
}

BinaryArray load_case_mask(fs::path const& case_dir, int label) {
    if (fs::exists(case_dir / "mask.nii.gz")) return load_mask(case_dir / "mask.nii.gz", -1);
    if (fs::exists(case_dir / "labels.nii.gz")) {
        if (label < 0) throw ConfigError("case " + case_dir.string() + " has a label map; pass --label");
        return load_mask(case_dir / "labels.nii.gz", label);
    }
    throw FormatError("no mask.nii.gz or labels.nii.gz in " + case_dir.string());
}

void write_mid_slices(fs::path const& dir, std::string const& prefix, std::vector<Array3D<float> const*> const& ch,
                      float lo, float hi) {
    fs::create_directories(dir);
    int const nc = static_cast<int>(ch.size());
    Shape3 const s = ch.front()->shape();
    for (int axis = 0; axis < 3; ++axis) {
        std::vector<Image2D<float>> sl;
        for (auto const* c : ch) sl.push_back(extract_slice(*c, axis, s[static_cast<size_t>(axis)] / 2));
        auto const rows = sl.front().rows, cols = sl.front().cols;
        std::vector<uint8_t> px(static_cast<size_t>(rows * cols * nc));
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t c = 0; c < cols; ++c)
                for (int k = 0; k < nc; ++k) {
                    double const t = hi > lo ? (sl[static_cast<size_t>(k)](r, c) - lo) / (hi - lo) : 0.0;
                    px[static_cast<size_t>((r * cols + c) * nc + k)] =
                        static_cast<uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
                }
        write_png(dir / (prefix + "_axis" + std::to_string(axis) + ".png"), cols, rows, nc, px);
    }
}

Shape3 parse_shape(std::string const& s) {
    std::vector<int64_t> v;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) {
        try {
            v.push_back(std::stoll(part));
        } catch (std::exception const&) {
            throw InvalidParameter("bad shape '" + s + "'");
        }
    }
    if (v.size() == 1) return {v[0], v[0], v[0]};
    if (v.size() != 3) throw InvalidParameter("shape needs 1 or 3 extents, got '" + s + "'");
    return {v[0], v[1], v[2]};
}

} // namespace mass::cli
