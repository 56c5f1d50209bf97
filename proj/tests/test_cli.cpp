#include <catch2/catch_amalgamated.hpp>

#include <fstream>

#include <json.hpp>

#include "gad/image_io.hpp"
#include "gad/labels.hpp"
#include "test_util.hpp"

using namespace gad;
using testutil::CmdResult;
using testutil::TempDir;
using testutil::run_cmd;

namespace {

const std::string tool = GADTOOL_PATH;

std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

}  // namespace

TEST_CASE("help is help, garbage is garbage") {
    CHECK(run_cmd(tool + " --help").exit_code == 0);
    CHECK(run_cmd(tool + " gad --help").exit_code == 0);
    CHECK(run_cmd(tool + " pipeline --help").exit_code == 0);

    CHECK(run_cmd(tool).exit_code == 2);
    CHECK(run_cmd(tool + " frobnicate").exit_code == 2);
    const CmdResult unknown = run_cmd(tool + " merge --bogus-flag 1");
    CHECK(unknown.exit_code == 2);
}

TEST_CASE("zero iterations reproduce the input byte for byte") {
    TempDir tmp;
    RasterF img(5, 4, 1);
    for (std::size_t i = 0; i < img.size(); ++i) {
        img.data()[i] = static_cast<double>(static_cast<float>(0.37 * (i + 1)));
    }
    write_pfm(img, tmp / "in.pfm");
    const CmdResult r = run_cmd(tool + " pm --input " + q(tmp / "in.pfm") +
                                " --output " + q(tmp / "out.pfm") + " --iterations 0");
    REQUIRE(r.exit_code == 0);
    CHECK(testutil::slurp(tmp / "in.pfm") == testutil::slurp(tmp / "out.pfm"));
}

TEST_CASE("the stability bound is enforced with a helpful message") {
    TempDir tmp;
    write_pfm(RasterF(4, 4, 1, 0.5), tmp / "in.pfm");
    write_png(RasterF(4, 4, 1, 0.5), tmp / "g.png");
    const CmdResult r = run_cmd(tool + " gad --input " + q(tmp / "in.pfm") +
                                " --guide " + q(tmp / "g.png") + " --output " +
                                q(tmp / "out.pfm") + " --iterations 3 --lambda 0.3");
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("0.25") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(tmp / "out.pfm"));
}

TEST_CASE("guided smoothing keeps guide edges and levels regions") {
    TempDir tmp;
    const int w = 24, h = 24;
    RasterF guide(w, h, 1);
    RasterF target(w, h, 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            guide.at(r, c) = (r < h / 2) ? 0.1 : 0.9;
            target.at(r, c) = (r < h / 2 ? 0.2 : 0.8) + ((r + c) % 2) * 0.05;
        }
    }
    write_png(guide, tmp / "guide.png");
    write_pfm(target, tmp / "t.pfm");
    const CmdResult r = run_cmd(tool + " gad --input " + q(tmp / "t.pfm") + " --guide " +
                                q(tmp / "guide.png") + " --output " + q(tmp / "out.pfm") +
                                " --iterations 300 --kappa 0.02");
    REQUIRE(r.exit_code == 0);
    const RasterF out = read_pfm(tmp / "out.pfm");

    auto region_stats = [&](int r0, int r1) {
        double mean = 0.0, var = 0.0;
        const int n = (r1 - r0) * w;
        for (int r = r0; r < r1; ++r) {
            for (int c = 0; c < w; ++c) mean += out.at(r, c);
        }
        mean /= n;
        for (int r = r0; r < r1; ++r) {
            for (int c = 0; c < w; ++c) {
                var += (out.at(r, c) - mean) * (out.at(r, c) - mean);
            }
        }
        return std::pair<double, double>(mean, std::sqrt(var / n));
    };
    const auto top = region_stats(0, h / 2);
    const auto bottom = region_stats(h / 2, h);
    CHECK(top.second < 0.005);
    CHECK(bottom.second < 0.005);
    CHECK(bottom.first - top.first > 0.5);
}

TEST_CASE("classic diffusion mirrors png bit depth") {
    TempDir tmp;
    RasterF img(6, 6, 1, 0.4);
    img.at(2, 3) = 0.8;
    write_png(img, tmp / "in.png", 16);
    const CmdResult r = run_cmd(tool + " pm --input " + q(tmp / "in.png") +
                                " --output " + q(tmp / "out.png") +
                                " --iterations 2 --kappa 0.1");
    REQUIRE(r.exit_code == 0);
    int depth = 0;
    read_png(tmp / "out.png", &depth);
    CHECK(depth == 16);
}

TEST_CASE("merge subcommand applies the strategy truth table") {
    TempDir tmp;
    // All four (reference, prediction) combinations in one 2x2 image.
    LabelMap original(2, 2);
    original.at(0, 0) = 0;
    original.at(0, 1) = 1;
    original.at(1, 0) = 0;
    original.at(1, 1) = 1;
    LabelMap prediction(2, 2);
    prediction.at(0, 0) = 0;
    prediction.at(0, 1) = 0;
    prediction.at(1, 0) = 1;
    prediction.at(1, 1) = 1;
    labelmap_to_png(original, tmp / "orig.png");
    labelmap_to_png(prediction, tmp / "pred.png");

    const CmdResult r = run_cmd(tool + " merge --original " + q(tmp / "orig.png") +
                                " --prediction " + q(tmp / "pred.png") +
                                " --strategy ignore-all --output " + q(tmp / "m.png"));
    REQUIRE(r.exit_code == 0);
    const RasterF raw = read_png(tmp / "m.png");
    CHECK(raw.at(0, 0) == 0.0);
    CHECK(raw.at(0, 1) == 128.0 / 255.0);
    CHECK(raw.at(1, 0) == 128.0 / 255.0);
    CHECK(raw.at(1, 1) == 1.0);

    // Identical inputs are a fixed point for every strategy.
    for (const char* strategy : {"intersection", "ignore-fn", "ignore-all"}) {
        const CmdResult rs = run_cmd(tool + " merge --original " + q(tmp / "orig.png") +
                                     " --prediction " + q(tmp / "orig.png") +
                                     " --strategy " + strategy + " --output " +
                                     q(tmp / "same.png"));
        REQUIRE(rs.exit_code == 0);
        CHECK(labelmap_from_png(tmp / "same.png") == original);
    }

    const CmdResult missing = run_cmd(tool + " merge --original " + q(tmp / "orig.png") +
                                      " --prediction " + q(tmp / "pred.png") +
                                      " --output " + q(tmp / "m2.png"));
    CHECK(missing.exit_code == 2);
    CHECK(missing.err.find("--strategy") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(tmp / "m2.png"));

    const CmdResult bad = run_cmd(tool + " merge --original " + q(tmp / "orig.png") +
                                  " --prediction " + q(tmp / "pred.png") +
                                  " --strategy union --output " + q(tmp / "m3.png"));
    CHECK(bad.exit_code == 2);
}

TEST_CASE("metrics subcommand prints the documented json") {
    TempDir tmp;
    LabelMap a(3, 3, 0);
    a.at(1, 1) = 1;
    labelmap_to_png(a, tmp / "a.png");

    const CmdResult r = run_cmd(tool + " metrics --prediction " + q(tmp / "a.png") +
                                " --reference " + q(tmp / "a.png"));
    REQUIRE(r.exit_code == 0);
    const nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["dice"].get<double>() == 1.0);
    CHECK(j["tp"] == 1);
    CHECK(j["tn"] == 8);
    CHECK(j["ignored"] == 0);
}

TEST_CASE("weights subcommand reports the imbalance ratio") {
    TempDir tmp;
    LabelMap m(131, 1, 0);
    m.at(0, 0) = 1;
    labelmap_to_png(m, tmp / "labels.png");
    const CmdResult r = run_cmd(tool + " weights --labels " + q(tmp / "labels.png"));
    REQUIRE(r.exit_code == 0);
    const nlohmann::json j = nlohmann::json::parse(r.out);
    CHECK(j["n0"] == 130);
    CHECK(j["n1"] == 1);
    CHECK(std::abs(j["ratio"].get<double>() - 130.0) <= 1e-9);

    LabelMap flat(4, 1, 0);
    labelmap_to_png(flat, tmp / "flat.png");
    const CmdResult rd = run_cmd(tool + " weights --labels " + q(tmp / "flat.png"));
    REQUIRE(rd.exit_code == 0);
    CHECK(rd.err.find("warning") != std::string::npos);
    const nlohmann::json jd = nlohmann::json::parse(rd.out);
    CHECK(jd["w1"] == 0.0);
    CHECK(jd["ratio"].is_null());
}

TEST_CASE("pipeline subcommand maps config problems to exit 2") {
    TempDir tmp;
    const CmdResult missing =
        run_cmd(tool + " pipeline --config " + q(tmp / "nope.json"));
    CHECK(missing.exit_code == 2);

    std::ofstream(tmp / "bad.json") << "{\"schema_version\": 1}";
    const CmdResult invalid =
        run_cmd(tool + " pipeline --config " + q(tmp / "bad.json"));
    CHECK(invalid.exit_code == 2);
}

TEST_CASE("failed runs exit 1 and leave a manifest explaining why") {
    TempDir tmp;
    RasterF img(8, 8, 1, 0.5);
    write_png(img, tmp / "a.png");
    write_png(img, tmp / "b.png");
    labelmap_to_png(LabelMap(8, 8, 0), tmp / "l.png");
    nlohmann::json cfg{
        {"schema_version", 1},
        {"output_root", "out"},
        {"hyperepochs", 2},
        {"predictor", {{"kind", "external-command"}, {"command", "false # {train_dir} {labels_dir} {out_dir}"}}},
        {"pairs", {{{"image1", "a.png"}, {"image2", "b.png"}, {"labels", "l.png"}}}},
    };
    std::ofstream(tmp / "cfg.json") << cfg.dump();
    const CmdResult r = run_cmd(tool + " pipeline --config " + q(tmp / "cfg.json"));
    CHECK(r.exit_code == 1);
    const nlohmann::json manifest =
        nlohmann::json::parse(testutil::slurp(tmp / "out" / "manifest.json"));
    CHECK(manifest["status"] == "failed");
}

TEST_CASE("no partial output file appears when writing fails") {
    TempDir tmp;
    write_pfm(RasterF(4, 4, 1, 0.25), tmp / "in.pfm");
    // The output path is a directory, so the final rename cannot succeed.
    std::filesystem::create_directory(tmp / "blocked.pfm");
    const CmdResult r = run_cmd(tool + " pm --input " + q(tmp / "in.pfm") +
                                " --output " + q(tmp / "blocked.pfm") +
                                " --iterations 1");
    CHECK(r.exit_code == 1);
    // Nothing but the input and the (still empty) directory remain.
    int files = 0;
    for (const auto& e : std::filesystem::recursive_directory_iterator(tmp.path())) {
        if (e.is_regular_file()) ++files;
    }
    CHECK(files == 1);
}
