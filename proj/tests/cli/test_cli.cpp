#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <nlohmann/json.hpp>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

Run mass(std::string const& args) {
    std::string const cmd = std::string(MASS_EXE) + " " + args + " 2>&1";
    Run r;
    FILE* p = popen(cmd.c_str(), "r");
    REQUIRE(p != nullptr);
    std::array<char, 4096> buf{};
    size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.output.append(buf.data(), n);
    int const status = pclose(p);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(fs::path const& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(std::string const& name) {
    fs::path const p = fs::temp_directory_path() / ("mass_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

} // namespace

TEST_CASE("help lists every subcommand") {
    auto const r = mass("--help");
    CHECK(r.code == 0);
    for (char const* s : {"phantom-gen", "gen-masks", "pretrain", "infer-ic", "finetune", "classify", "feature-pca",
                          "eval-bank"})
        CHECK(r.output.find(s) != std::string::npos);
}

TEST_CASE("usage errors exit 2 and name the problem") {
    auto const missing = mass("pretrain");
    CHECK(missing.code == 2);
    CHECK(missing.output.find("--corpus") != std::string::npos);

    auto const unknown = mass("phantom-gen --out /tmp/x --bogus");
    CHECK(unknown.code == 2);
    CHECK(unknown.output.find("--bogus") != std::string::npos);
    CHECK(unknown.output.find("--structures") != std::string::npos);  // flag table

    CHECK(mass("no-such-command").code == 2);
    CHECK(mass("").code == 2);
}

TEST_CASE("data errors exit 3") {
    auto const dir = scratch("data_err");
    auto const r = mass("pretrain --corpus " + (dir / "absent").string() + " --out " + (dir / "run").string());
    CHECK(r.code == 3);
    // Corpus without banks.
    REQUIRE(mass("phantom-gen --out " + (dir / "c").string() + " --n 1 --shape 32").code == 0);
    auto const nobank = mass("pretrain --corpus " + (dir / "c").string() + " --out " + (dir / "run2").string());
    CHECK(nobank.code == 3);
    CHECK(nobank.output.find("bank") != std::string::npos);
}

TEST_CASE("end-to-end smoke run with reproducible metrics") {
    auto const dir = scratch("e2e");
    auto const c = (dir / "corpus").string();
    REQUIRE(mass("phantom-gen --out " + c + " --n 3 --shape 48 --seed 10").code == 0);
    REQUIRE(mass("gen-masks --in " + c + " --jobs 2 --seed 3").code == 0);
    CHECK(fs::exists(dir / "corpus" / "phantom_s10" / "bank" / "masks.rle"));

    // Banks do not depend on the job count.
    auto const again = dir / "again";
    REQUIRE(mass("gen-masks --in " + c + " --out " + again.string() + " --jobs 1 --seed 3").code == 0);
    for (char const* id : {"phantom_s10", "phantom_s11", "phantom_s12"})
        CHECK(slurp(dir / "corpus" / id / "bank" / "masks.rle") == slurp(again / id / "bank" / "masks.rle"));

    REQUIRE(mass("eval-bank --corpus " + c + " --out " + (dir / "eval").string()).code == 0);
    CHECK(fs::exists(dir / "eval" / "best-dice.svg"));

    {
        std::ofstream cfg(dir / "train.json");
        cfg << R"({"max_steps": 200, "batch_size": 2, "base_lr": 0.005, "model": {"base_channels": 4, "stages": 3},
                   "augment": {"crop": [32, 32, 32]}})";
    }
    auto const run = dir / "run";
    auto const pt = mass("pretrain --corpus " + c + " --config " + (dir / "train.json").string() + " --out " +
                         run.string() + " --seed 1");
    REQUIRE(pt.code == 0);
    for (char const* f : {"history.csv", "resolved-config.json", "run-manifest.json", "loss.svg", "metrics.json"})
        CHECK(fs::exists(run / f));
    CHECK(fs::exists(run / "checkpoints" / "last.ckpt"));
    auto const manifest = nlohmann::json::parse(slurp(run / "run-manifest.json"));
    CHECK(manifest["command"] == "pretrain");
    CHECK(manifest["seed"] == 1);
    CHECK(manifest["inputs"].size() > 3);
    CHECK(manifest["inputs"][0]["hash"].get<std::string>().size() == 40);

    fs::create_directories(dir / "refs");
    fs::copy(dir / "corpus" / "phantom_s10", dir / "refs" / "phantom_s10", fs::copy_options::recursive);
    std::string const infer = "infer-ic --ckpt " + (run / "checkpoints" / "last.ckpt").string() + " --refs " +
                              (dir / "refs").string() + " --query " + c + "/phantom_s11 --gt " + c +
                              "/phantom_s11/labels.nii.gz --label 1 --out ";
    REQUIRE(mass(infer + (dir / "ic1").string()).code == 0);
    REQUIRE(mass(infer + (dir / "ic2").string()).code == 0);
    CHECK(slurp(dir / "ic1" / "metrics.json") == slurp(dir / "ic2" / "metrics.json"));
    auto const m = nlohmann::json::parse(slurp(dir / "ic1" / "metrics.json"));
    CHECK(m["dice"].is_number());
    CHECK(fs::exists(dir / "ic1" / "prediction.nii.gz"));
    // Existing run directories are not overwritten.
    CHECK(mass(infer + (dir / "ic1").string()).code == 3);

    auto const pca = mass("feature-pca --ckpt " + (run / "checkpoints" / "last.ckpt").string() + " --in " + c +
                          "/phantom_s12 --out " + (dir / "pca").string());
    CHECK(pca.code == 0);
    CHECK(fs::exists(dir / "pca" / "pca_axis0.png"));
}
