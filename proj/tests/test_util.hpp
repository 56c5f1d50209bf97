#pragma once

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gad/raster.hpp"

namespace testutil {

namespace fs = std::filesystem;

// Self-deleting scratch directory under the system temp root.
class TempDir {
public:
    TempDir() {
        std::string tmpl = (fs::temp_directory_path() / "gadtest-XXXXXX").string();
        if (!mkdtemp(tmpl.data())) {
            throw std::runtime_error("mkdtemp failed");
        }
        path_ = tmpl;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& name) const { return path_ / name; }

private:
    fs::path path_;
};

struct CmdResult {
    int exit_code;
    std::string out;
    std::string err;
};

inline std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Runs a shell command, capturing exit code and both streams.
inline CmdResult run_cmd(const std::string& command) {
    static int counter = 0;
    const fs::path out = fs::temp_directory_path() /
                         ("gadcmd-" + std::to_string(getpid()) + "-" +
                          std::to_string(counter++) + ".out");
    const fs::path err = out.string() + ".err";
    const std::string full =
        command + " >" + out.string() + " 2>" + err.string();
    const int status = std::system(full.c_str());
    CmdResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    std::error_code ec;
    fs::remove(out, ec);
    fs::remove(err, ec);
    return r;
}

// Binary dilation with a square (Chebyshev) structuring element. Any pixel
// with a 1 within `radius` becomes 1; everything else becomes 0.
inline gad::LabelMap dilate_labels(const gad::LabelMap& in, int radius) {
    const int w = in.width(), h = in.height();
    gad::LabelMap out(w, h, 0);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            bool hit = false;
            for (int dr = -radius; dr <= radius && !hit; ++dr) {
                for (int dc = -radius; dc <= radius && !hit; ++dc) {
                    const int rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < h && cc >= 0 && cc < w && in.at(rr, cc) == 1) {
                        hit = true;
                    }
                }
            }
            out.at(r, c) = hit ? 1 : 0;
        }
    }
    return out;
}

}  // namespace testutil
