// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "modem/checkpoint.hpp"
#include "modem/cli.hpp"
#include "modem/image.hpp"
#include "modem/synth.hpp"

using namespace modem;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::vector<std::string> lines(const std::string &s) {
    std::vector<std::string> v;
    std::istringstream is(s);
    for (std::string l; std::getline(is, l);) v.push_back(l);
    return v;
}

const fs::path &scratch() {
    static const fs::path dir = [] {
        fs::path d = fs::current_path() / "cli_work";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// A two-step stage-1 then stage-2 run on tiny images, shared by the checkpoint cases.
const fs::path &tiny_run() {
    static const fs::path dir = [] {
        const fs::path d = scratch() / "tiny";
        write_file_atomic(scratch() / "tiny.json",
                          R"({"train": {"iterations": 2, "patch": 16}, "data": {"train": 2, "held_out": 1, "size": 16}})");
        const std::string conf = (scratch() / "tiny.json").string();
        REQUIRE(run({"train", "--stage", "1", "--config", conf, "--out", d.string(), "--quiet"}).code == 0);
        REQUIRE(run({"train", "--stage", "2", "--config", conf, "--out", d.string(), "--quiet", "--from",
                     (d / "stage1.ckpt").string()})
                    .code == 0);
        return d;
    }();
    return dir;
}

}  // namespace

TEST_CASE("scan-compare csv") {
    const auto r = run({"scan-compare", "--size", "64x64", "--kinds", "raster,morton,hilbert", "--repeats", "1"});
    REQUIRE(r.code == 0);
    const auto rows = lines(r.out);
    REQUIRE(rows.size() == 4);
    CHECK(rows[0] == "kind,height,width,mean,median,p95,block_depth,build_ms,gather_ms");
    CHECK(rows[1].rfind("raster,64,64,", 0) == 0);
    CHECK(rows[2].rfind("morton,64,64,", 0) == 0);
    // block_depth is the seventh column.
    auto depth = [](const std::string &row) {
        std::istringstream is(row);
        std::string cell;
        for (int i = 0; i < 7; ++i) std::getline(is, cell, ',');
        return cell;
    };
    CHECK(depth(rows[1]) == "0");
    CHECK(depth(rows[2]) == "6");
    CHECK(depth(rows[3]) == "6");

    const fs::path out = scratch() / "scan.csv";
    REQUIRE(run({"scan-compare", "--size", "8x12", "--repeats", "1", "--out", out.string()}).code == 0);
    CHECK(lines(read_file(out)).size() == 6);
}

TEST_CASE("usage errors exit 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    CHECK(run({"scan-compare", "--size", "64"}).code == 2);
    CHECK(run({"scan-compare", "--size", "0x4"}).code == 2);
    CHECK(run({"scan-compare", "--kinds", "raster,spiral"}).code == 2);
    CHECK(run({"scan-compare", "--repeats", "0"}).code == 2);
    CHECK(run({"train", "--stage", "3"}).code == 2);
    const auto r = run({"train", "--stage", "2"});
    CHECK(r.code == 2);
    CHECK(r.err.find("--from") != std::string::npos);
    CHECK(run({"gradcheck", "--only", "nonexistent"}).code == 2);
    CHECK(run({"params", "--preset", "huge"}).code == 2);
    write_file_atomic(scratch() / "bad.json", R"({"train": {"iterationz": 3}})");
    CHECK(run({"params", "--config", (scratch() / "bad.json").string()}).code == 2);
}

TEST_CASE("help documents the csv columns") {
    const auto r = run({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("block_depth,build_ms,gather_ms") != std::string::npos);
    CHECK(r.out.find("step,l1,l_cor,l_kl,total,lr") != std::string::npos);
}

TEST_CASE("params") {
    const auto toy = run({"params"});
    REQUIRE(toy.code == 0);
    CHECK(toy.out.find("total") != std::string::npos);
    CHECK(toy.out.find("published") == std::string::npos);
    const auto full = run({"params", "--preset", "full"});
    REQUIRE(full.code == 0);
    CHECK(full.out.find("published    19.96 M") != std::string::npos);
}

TEST_CASE("gradcheck exit status") {
    CHECK(run({"gradcheck", "--only", "cab,l1"}).code == 0);
    const auto bad = run({"gradcheck", "--only", "cab,l1", "--inject-fault", "silu"});
    CHECK(bad.code == 1);
    CHECK(bad.out.find("failed for: cab") != std::string::npos);
}

TEST_CASE("train writes its artifacts") {
    const fs::path &d = tiny_run();
    for (const char *f : {"stage1.ckpt", "stage1.ckpt.json", "loss_stage1.csv", "metrics_stage1.json",
                          "stage2.ckpt", "stage2.ckpt.json", "loss_stage2.csv", "manifest.json"})
        CHECK_MESSAGE(fs::exists(d / f), f);
    CHECK(lines(read_file(d / "loss_stage2.csv")).size() == 3);
}

TEST_CASE("restore and decompose") {
    const fs::path &d = tiny_run();
    const auto sample = synth::synth_degrade(synth::clean_image(13, 20, 4), synth::Kind::mixed, 0.5, 4);
    const fs::path in = scratch() / "in.ppm", gt = scratch() / "gt.ppm", out = scratch() / "out.ppm";
    image::write_ppm(in, sample.lq);
    image::write_ppm(gt, sample.gt);

    const auto r = run({"restore", "--checkpoint", (d / "stage2.ckpt").string(), "--in", in.string(), "--out",
                        out.string(), "--ref", gt.string()});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("PSNR") != std::string::npos);
    CHECK(image::read_image(out).same_shape(sample.lq));

    const std::string s1 = (d / "stage1.ckpt").string();
    CHECK(run({"restore", "--checkpoint", s1, "--in", in.string(), "--out", out.string()}).code == 1);
    CHECK(run({"restore", "--checkpoint", s1, "--in", in.string(), "--out", out.string(), "--with-gt", gt.string()})
              .code == 0);
    CHECK(run({"restore", "--checkpoint", (d / "missing.ckpt").string(), "--in", in.string(), "--out", out.string()})
              .code == 1);

    const fs::path dec = scratch() / "dec";
    const auto ok = run({"decompose", "--checkpoint", (d / "stage2.ckpt").string(), "--in", in.string(), "--layer",
                         "1", "--out", dec.string()});
    REQUIRE(ok.code == 0);
    CHECK(ok.out.find("(ok)") != std::string::npos);
    CHECK(ok.out.find("first scanned token: 0.000e+00") != std::string::npos);
    // Layer 1 is the half-resolution bottleneck; the 13-row input is padded to 14 first.
    CHECK(ok.out.find("layer grid 7x10") != std::string::npos);
    for (const char *f : {"longrange.pgm", "local.pgm", "output.pgm"}) {
        const Tensor m = image::read_image(dec / f);
        CHECK(m.dim(0) == 1);
        CHECK(m.dim(1) == 7);
        CHECK(m.dim(2) == 10);
    }
    REQUIRE(run({"decompose", "--checkpoint", (d / "stage2.ckpt").string(), "--in", in.string(), "--layer", "0",
                 "--out", dec.string()})
                .code == 0);
    CHECK(image::read_image(dec / "local.pgm").dim(1) == 14);
    const auto bad = run({"decompose", "--checkpoint", (d / "stage2.ckpt").string(), "--in", in.string(), "--layer",
                          "40", "--out", dec.string()});
    CHECK(bad.code == 2);
    CHECK(bad.err.find("valid layers are 0..") != std::string::npos);
}
