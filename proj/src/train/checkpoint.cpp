#include "mass/core/error.hpp"
#include "mass/core/rle.hpp"
#include "mass/train/train.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace mass::train {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'M', 'A', 'S', 'S', 'C', 'K', 'P', 'T'};

template <typename T> void put(std::vector<uint8_t>& out, T v) {
    for (size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<uint8_t>((static_cast<uint64_t>(v) >> (8 * i)) & 0xFF));
}

template <typename T> T get(std::vector<uint8_t> const& in, size_t& pos) {
    uint64_t v = 0;
    for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(in[pos + i]) << (8 * i);
    pos += sizeof(T);
    return static_cast<T>(v);
}

std::string dtype_name(torch::Dtype d) {
    if (d == torch::kFloat) return "float32";
    if (d == torch::kDouble) return "float64";
    throw FormatError("unsupported tensor dtype in checkpoint");
}

torch::Dtype parse_dtype(std::string const& s) {
    if (s == "float32") return torch::kFloat;
    if (s == "float64") return torch::kDouble;
    throw FormatError("unknown tensor dtype '" + s + "' in checkpoint");
}

std::vector<std::pair<std::string, torch::Tensor>> named_state(TrainState const& s) {
    std::vector<std::pair<std::string, torch::Tensor>> out;
    auto params = s.net->named_parameters();
    size_t i = 0;
    for (auto const& item : params) out.emplace_back("param/" + item.key(), item.value());
    for (auto const& item : params) out.emplace_back("opt.m/" + item.key(), s.opt->first_moments()[i++]);
    i = 0;
    for (auto const& item : params) out.emplace_back("opt.v/" + item.key(), s.opt->second_moments()[i++]);
    return out;
}

json history_json(std::vector<LossRecord> const& h) {
    json a = json::array();
    for (auto const& r : h) a.push_back({r.step, r.lr, r.dice, r.bce, r.total});
    return a;
}

} // namespace

void save_checkpoint(TrainState const& s, fs::path const& path) {
    json manifest{{"schema", "mass.checkpoint"},
                  {"version", kCheckpointVersion},
                  {"train_config", s.cfg},
                  {"step", s.step},
                  {"total_steps", s.total_steps},
                  {"optimizer_t", s.opt->t()},
                  {"rng", {{"scheme", "derived(seed, step, slot)"}, {"seed", s.cfg.seed}}},
                  {"history", history_json(s.history)}};
    std::vector<uint8_t> blob;
    json tensors = json::array();
    for (auto const& [name, t] : named_state(s)) {
        torch::Tensor const c = t.detach().contiguous().cpu();
        size_t const n = static_cast<size_t>(c.numel()) * c.element_size();
        tensors.push_back({{"name", name}, {"dtype", dtype_name(c.scalar_type())}, {"shape", c.sizes().vec()},
                           {"offset", blob.size()}, {"nbytes", n}});
        auto const* p = static_cast<uint8_t const*>(c.data_ptr());
        blob.insert(blob.end(), p, p + n);
    }
    manifest["tensors"] = tensors;
    std::string const mj = manifest.dump();

    std::vector<uint8_t> out(kMagic, kMagic + 8);
    put<uint32_t>(out, kCheckpointVersion);
    put<uint64_t>(out, mj.size());
    out.insert(out.end(), mj.begin(), mj.end());
    put<uint64_t>(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
    put<uint32_t>(out, crc32_of(out));

    fs::create_directories(path.parent_path().empty() ? fs::path(".") : path.parent_path());
    fs::path const tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary);
        if (!f) throw FormatError("cannot write checkpoint " + tmp.string());
        f.write(reinterpret_cast<char const*>(out.data()), static_cast<std::streamsize>(out.size()));
    }
    fs::rename(tmp, path);
}

TrainState load_checkpoint(fs::path const& path, model::ModelConfig const* expected) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open checkpoint " + path.string());
    std::vector<uint8_t> in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (in.size() < 8 + 4 || std::memcmp(in.data(), kMagic, 8) != 0)
        throw ChecksumError("not a checkpoint or truncated header: " + path.string());
    size_t pos = 8;
    auto const version = get<uint32_t>(in, pos);
    if (version != kCheckpointVersion) {
        throw VersionMismatch("checkpoint " + path.string() + " has schema version " + std::to_string(version) +
                              ", this build reads version " + std::to_string(kCheckpointVersion) +
                              "; re-export it with the matching release or retrain");
    }
    if (in.size() < pos + 8 + 4) throw ChecksumError("truncated checkpoint " + path.string());
    uint32_t stored = 0;
    std::memcpy(&stored, in.data() + in.size() - 4, 4);
    if (crc32_of(std::span<uint8_t const>(in.data(), in.size() - 4)) != stored)
        throw ChecksumError("checkpoint CRC mismatch (corrupt or truncated): " + path.string());
    auto const mlen = get<uint64_t>(in, pos);
    if (pos + mlen + 8 > in.size() - 4) throw ChecksumError("truncated checkpoint manifest: " + path.string());
    json const manifest = json::parse(in.begin() + static_cast<std::ptrdiff_t>(pos),
                                      in.begin() + static_cast<std::ptrdiff_t>(pos + mlen));
    pos += mlen;
    auto const blen = get<uint64_t>(in, pos);
    if (pos + blen != in.size() - 4) throw ChecksumError("checkpoint blob length mismatch: " + path.string());
    size_t const blob0 = pos;

    TrainConfig const cfg = manifest.at("train_config").get<TrainConfig>();
    if (expected) {
        json const want = *expected, have = cfg.model;
        std::string diff;
        for (auto const& [k, v] : want.items()) {
            if (!have.contains(k) || have[k] != v) {
                diff += (diff.empty() ? "" : ", ") + k + " (checkpoint " + (have.contains(k) ? have[k].dump() : "missing") +
                        ", expected " + v.dump() + ")";
            }
        }
        if (!diff.empty()) throw ConfigError("checkpoint model config differs: " + diff);
    }
    TrainState s = TrainState::create(cfg, manifest.at("total_steps").get<int64_t>());
    s.step = manifest.at("step").get<int64_t>();
    s.opt->set_t(manifest.at("optimizer_t").get<int64_t>());
    for (auto const& r : manifest.at("history")) {
        s.history.push_back({r[0].get<int64_t>(), r[1].get<double>(), r[2].get<double>(), r[3].get<double>(),
                             r[4].get<double>()});
    }
    std::map<std::string, json> index;
    for (auto const& t : manifest.at("tensors")) index[t.at("name").get<std::string>()] = t;
    torch::NoGradGuard ng;
    for (auto& [name, dst] : named_state(s)) {
        auto it = index.find(name);
        if (it == index.end()) throw FormatError("checkpoint lacks tensor " + name);
        json const& t = it->second;
        auto const shape = t.at("shape").get<std::vector<int64_t>>();
        if (shape != dst.sizes().vec()) throw ConfigError("checkpoint tensor " + name + " has a different shape");
        if (parse_dtype(t.at("dtype").get<std::string>()) != dst.scalar_type())
            throw ConfigError("checkpoint tensor " + name + " has a different dtype");
        size_t const off = t.at("offset").get<size_t>(), n = t.at("nbytes").get<size_t>();
        if (off + n > blen || n != static_cast<size_t>(dst.numel()) * dst.element_size())
            throw FormatError("checkpoint tensor " + name + " is out of bounds");
        std::memcpy(dst.data_ptr(), in.data() + blob0 + off, n);
    }
    return s;
}

} // namespace mass::train
