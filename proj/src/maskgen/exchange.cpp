#include "mass/maskgen/maskgen.hpp"

#include "mass/core/error.hpp"
#include "mass/core/image_io.hpp"
#include "mass/core/rle.hpp"

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <fstream>
#include <iterator>
#include <thread>

namespace mass::maskgen {

namespace fs = std::filesystem;

ExternalExchange::ExternalExchange(fs::path dir, ExternalParams params) : dir_(std::move(dir)), params_(params) {}

void ExternalExchange::request(std::string const& volume_id, int axis, std::vector<int64_t> const& indices,
                               std::vector<Slice3> const& slices, MaskGenConfig const& cfg) {
    if (!fs::is_directory(dir_)) throw BackendError("exchange directory does not exist: " + dir_.string());
    if (indices.size() != slices.size()) throw InvalidParameter("one slice image per requested index");
    std::error_code ec;
    fs::remove(dir_ / "done", ec);
    for (int64_t idx : indices) fs::remove(dir_ / ("proposals_" + std::to_string(idx) + ".rle"), ec);

    int64_t rows = 0, cols = 0;
    for (size_t i = 0; i < slices.size(); ++i) {
        Slice3 const& s = slices[i];
        rows = s.rows();
        cols = s.cols();
        std::vector<uint8_t> px(static_cast<size_t>(rows * cols * 3));
        for (int64_t p = 0; p < rows * cols; ++p) {
            for (size_t c = 0; c < 3; ++c) {
                float const v = std::clamp(s.ch[c].data[static_cast<size_t>(p)], 0.0f, 255.0f);
                px[static_cast<size_t>(p * 3) + c] = static_cast<uint8_t>(std::lround(v));
            }
        }
        write_png(dir_ / ("slice_" + std::to_string(axis) + "_" + std::to_string(indices[i]) + ".png"), cols, rows, 3,
                  px);
    }
    nlohmann::json req{
        {"schema", "mass.exchange"},
        {"version", 1},
        {"volume_id", volume_id},
        {"axis", axis},
        {"slices", indices},
        {"rows", rows},
        {"cols", cols},
        {"slice_pattern", "slice_<axis>_<idx>.png"},
        {"proposal_pattern", "proposals_<idx>.rle"},
        {"points_per_side", params_.points_per_side},
        {"pred_iou_thresh", cfg.builtin.pred_iou_thresh},
        {"stability_thresh", cfg.builtin.stability_thresh},
        {"min_area", cfg.builtin.min_area},
        {"max_masks_per_slice", cfg.max_masks_per_slice},
    };
    fs::path const tmp = dir_ / "request.json.tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw BackendError("cannot write " + tmp.string());
        out << req.dump(2) << '\n';
    }
    fs::rename(tmp, dir_ / "request.json");

    auto const start = std::chrono::steady_clock::now();
    auto const interval = std::chrono::duration<double>(params_.poll_interval_s);
    spdlog::info("waiting for external proposals in {}", dir_.string());
    while (!fs::exists(dir_ / "done")) {
        double const waited = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (waited > params_.timeout_s) {
            throw BackendError("timed out after " + std::to_string(params_.timeout_s) + " s waiting for " +
                               (dir_ / "done").string());
        }
        std::this_thread::sleep_for(interval);
    }
}

std::vector<SeedProposal2D> ExternalExchange::read(int axis, int64_t index, int64_t rows, int64_t cols,
                                                   int64_t min_area) const {
    fs::path const path = dir_ / ("proposals_" + std::to_string(index) + ".rle");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw BackendError("missing proposal file " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::vector<SeedProposal2D> out;
    try {
        for (RleRecord const& rec : parse_records(bytes)) {
            BinaryArray const m = decode_runs(rec.runs, Shape3{1, rows, cols});
            SeedProposal2D sp;
            sp.axis = axis;
            sp.slice_index = index;
            sp.mask2d = Image2D<uint8_t>(rows, cols);
            std::copy(m.begin(), m.end(), sp.mask2d.data.begin());
            sp.area = count_foreground(m);
            if (sp.area >= min_area) out.push_back(std::move(sp));
        }
    } catch (FormatError const& e) {
        throw BackendError("ill-formed proposal file " + path.string() + ": " + e.what());
    }
    return out;
}

} // namespace mass::maskgen
