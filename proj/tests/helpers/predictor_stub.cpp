// Minimal stand-in for an external change-detection model, exercising the
// pipeline's process protocol. Invoked as:
//
//   predictor_stub <mode> <train_dir> <labels_dir> <out_dir>
//
// It scans <labels_dir> for label PNGs and, per pair id, writes <id>.pfm to
// <out_dir> containing 0/1 probabilities derived from the labels:
//
//   echo         probabilities equal the labels (ignore counts as 0)
//   dilate       labels grown by one pixel (8-neighborhood) per call
//   badrange     like echo, but the first pixel is 1.5
//   badsize-p0   like echo, but pair "p0" gets a 2x2 map
//   extra        like echo, plus a stray file the pipeline never asked for
//   silent       writes nothing and exits 0
//   fail         writes nothing and exits 3

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "gad/labels.hpp"
#include "gad/pfm_io.hpp"
#include "gad/png_io.hpp"

namespace fs = std::filesystem;

namespace {

gad::RasterF labels_to_probabilities(const gad::LabelMap& labels) {
    gad::RasterF p(labels.width(), labels.height(), 1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        p.data()[i] = (labels.values()[i] == 1) ? 1.0 : 0.0;
    }
    return p;
}

gad::LabelMap grow_by_one(const gad::LabelMap& in) {
    gad::LabelMap out(in.width(), in.height(), 0);
    for (int r = 0; r < in.height(); ++r) {
        for (int c = 0; c < in.width(); ++c) {
            bool hit = false;
            for (int dr = -1; dr <= 1 && !hit; ++dr) {
                for (int dc = -1; dc <= 1 && !hit; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < in.height() && cc >= 0 && cc < in.width() &&
                        in.at(rr, cc) == 1) {
                        hit = true;
                    }
                }
            }
            out.at(r, c) = hit ? 1 : 0;
        }
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    if (argc != 5) {
        std::fprintf(stderr, "usage: predictor_stub <mode> <train_dir> <labels_dir> <out_dir>\n");
        return 2;
    }
    const std::string mode = argv[1];
    const fs::path labels_dir = argv[3];
    const fs::path out_dir = argv[4];

    if (mode == "fail") return 3;
    if (mode == "silent") return 0;

    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(labels_dir)) {
        if (entry.path().extension() == ".png") {
            ids.push_back(entry.path().stem().string());
        }
    }
    std::sort(ids.begin(), ids.end());

    try {
        for (const std::string& id : ids) {
            const gad::LabelMap labels = gad::labelmap_from_png(labels_dir / (id + ".png"));
            gad::RasterF prob(1, 1, 1);
            if (mode == "echo" || mode == "badrange" || mode == "extra") {
                prob = labels_to_probabilities(labels);
            } else if (mode == "dilate") {
                prob = labels_to_probabilities(grow_by_one(labels));
            } else if (mode == "badsize-p0") {
                prob = (id == "p0") ? gad::RasterF(2, 2, 1, 0.0)
                                    : labels_to_probabilities(labels);
            } else {
                std::fprintf(stderr, "unknown mode %s\n", mode.c_str());
                return 2;
            }
            if (mode == "badrange") {
                prob.data()[0] = 1.5;
            }
            gad::write_pfm(prob, out_dir / (id + ".pfm"));
        }
        if (mode == "extra") {
            gad::write_pfm(gad::RasterF(1, 1, 1, 0.0), out_dir / "stray.pfm");
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "predictor_stub: %s\n", e.what());
        return 1;
    }
    return 0;
}
