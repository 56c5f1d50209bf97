#pragma once

#include <sys/wait.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gad/diffusion.hpp"
#include "gad/image_io.hpp"
#include "gad/labels.hpp"

// Iterative label-cleaning loop. Round 0 materializes the training images and
// the original labels GT_0; every later round asks the predictor (fitted on
// the previous round's labels) for per-pair change probabilities, optionally
// sharpens them with guided diffusion using the two input images as guides,
// thresholds them, and merges the result with GT_0 to produce the next
// training labels. Merging is always against the ORIGINAL labels, never the
// previous round's output; the `no_reference_constraint` switch disables that
// safeguard to demonstrate why it matters. Every artifact is written under
// the output root and digest-recorded in a JSON manifest.

namespace gad {

namespace fs = std::filesystem;

enum class PredictorKind { kExternalCommand, kBuiltinDiff };
enum class PostProcessor { kGad, kNone };

struct PredictorSpec {
    PredictorKind kind = PredictorKind::kBuiltinDiff;
    // EXTERNAL_COMMAND: shell command template; must reference {train_dir},
    // {labels_dir} and {out_dir}, for which absolute paths are substituted.
    std::string command;
    // BUILTIN_DIFF knobs.
    int blur_radius = 1;
    double difference_threshold = 0.1;
};

struct PairSpec {
    std::string id;
    fs::path image1;
    fs::path image2;
    fs::path labels;
};

struct HyperepochConfig {
    std::vector<PairSpec> pairs;
    int hyperepochs = 1;  // total rounds including the fit-only round 0
    MergeStrategy strategy = MergeStrategy::kIntersection;
    PostProcessor post_processor = PostProcessor::kNone;
    GadParams gad{0};
    PredictorSpec predictor;
    double binarize_threshold = 0.5;
    bool no_reference_constraint = false;
    fs::path output_root;
};

struct RunManifest {
    nlohmann::json doc;
    fs::path path;
    bool ok = true;
    std::string error;
};

// ---------------------------------------------------------------------------
// Built-in predictor: thresholded, blurred absolute difference.

namespace detail {

inline RasterF box_blur_1ch(const RasterF& img, int radius) {
    if (radius <= 0) return img;
    const int w = img.width(), h = img.height();
    RasterF tmp(w, h, 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const int lo = std::max(0, c - radius), hi = std::min(w - 1, c + radius);
            double sum = 0.0;
            for (int x = lo; x <= hi; ++x) sum += img.at(r, x);
            tmp.at(r, c) = sum / (hi - lo + 1);
        }
    }
    RasterF out(w, h, 1);
    for (int r = 0; r < h; ++r) {
        const int lo = std::max(0, r - radius), hi = std::min(h - 1, r + radius);
        for (int c = 0; c < w; ++c) {
            double sum = 0.0;
            for (int y = lo; y <= hi; ++y) sum += tmp.at(y, c);
            out.at(r, c) = sum / (hi - lo + 1);
        }
    }
    return out;
}

}  // namespace detail

struct BuiltinPrediction {
    RasterF probabilities;
    double fitted_threshold;
};

/// Change probability from the channel-mean absolute difference of the pair,
/// box-blurred, then squashed through a logistic centered on a threshold
/// fitted against `labels`: the grid {0.02k : k = 1..49} is scanned for the
/// value maximizing the Dice score of (difference >= threshold), ties going
/// to the smallest threshold. When the labels contain no positive pixel the
/// fit is meaningless and `fallback_threshold` is used instead.
inline BuiltinPrediction builtin_diff_predict(const RasterF& image1, const RasterF& image2,
                                              const LabelMap& labels, int blur_radius,
                                              double fallback_threshold) {
    if (!image1.same_shape(image2)) {
        throw validation_error("builtin predictor: image dimension/channel mismatch");
    }
    if (image1.width() != labels.width() || image1.height() != labels.height()) {
        throw validation_error("builtin predictor: image/label dimension mismatch");
    }
    const int w = image1.width(), h = image1.height(), ch = image1.channels();
    RasterF diff(w, h, 1);
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            double sum = 0.0;
            for (int k = 0; k < ch; ++k) {
                sum += std::abs(image1.at(r, c, k) - image2.at(r, c, k));
            }
            diff.at(r, c) = sum / ch;
        }
    }
    const RasterF blurred = detail::box_blur_1ch(diff, blur_radius);

    bool has_positive = false;
    for (std::uint8_t v : labels.values()) {
        if (v == 1) {
            has_positive = true;
            break;
        }
    }
    double theta = fallback_threshold;
    if (has_positive) {
        double best_dice = -1.0;
        for (int k = 1; k <= 49; ++k) {
            const double cand = 0.02 * k;
            const ConfusionCounts counts = confusion(binarize(blurred, cand), labels);
            const double d = dice(counts);
            if (d > best_dice) {
                best_dice = d;
                theta = cand;
            }
        }
    }

    RasterF prob(w, h, 1);
    for (std::size_t i = 0; i < prob.size(); ++i) {
        prob.data()[i] = 1.0 / (1.0 + std::exp(-(blurred.data()[i] - theta) / 0.05));
    }
    return {std::move(prob), theta};
}

// ---------------------------------------------------------------------------
// External predictor protocol.

namespace detail {

inline std::string shell_quote(const std::string& s) {
    std::string out = "'";
    for (char c : s) {
        if (c == '\'') out += "'\\''";
        else out += c;
    }
    out += "'";
    return out;
}

inline std::string substitute_placeholder(std::string templ, const std::string& key,
                                          const std::string& value) {
    std::size_t pos = 0;
    while ((pos = templ.find(key, pos)) != std::string::npos) {
        templ.replace(pos, key.size(), value);
        pos += value.size();
    }
    return templ;
}

}  // namespace detail

inline void validate_predictor_spec(const PredictorSpec& spec) {
    if (spec.kind == PredictorKind::kExternalCommand) {
        for (const char* ph : {"{train_dir}", "{labels_dir}", "{out_dir}"}) {
            if (spec.command.find(ph) == std::string::npos) {
                throw validation_error("external predictor command must contain the " +
                                       std::string(ph) + " placeholder");
            }
        }
    } else {
        if (spec.blur_radius < 0) {
            throw validation_error("builtin predictor: blur_radius must be >= 0");
        }
        if (!(spec.difference_threshold > 0.0) || !(spec.difference_threshold < 1.0)) {
            throw validation_error(
                "builtin predictor: difference_threshold must be in (0, 1)");
        }
    }
}

/// Substitutes the placeholders, runs the command through the shell, and
/// collects one probability map per expected pair id from `out_dir`. The
/// command must leave exactly the files `<id>.pfm` there: a nonzero exit,
/// a missing or unexpected file, a multi-channel map, or any probability
/// outside [0, 1] raises io_error (out-of-range values name the file and the
/// offending pixel rather than being clamped).
inline std::map<std::string, RasterF> run_external_predictor(
    const PredictorSpec& spec, const fs::path& train_dir, const fs::path& labels_dir,
    const fs::path& out_dir, const std::vector<std::string>& expected_ids) {
    std::string cmd = spec.command;
    cmd = detail::substitute_placeholder(cmd, "{train_dir}",
                                         detail::shell_quote(train_dir.string()));
    cmd = detail::substitute_placeholder(cmd, "{labels_dir}",
                                         detail::shell_quote(labels_dir.string()));
    cmd = detail::substitute_placeholder(cmd, "{out_dir}",
                                         detail::shell_quote(out_dir.string()));

    const int status = std::system(cmd.c_str());
    if (status == -1) {
        throw io_error("failed to launch external predictor: " + cmd);
    }
    if (WIFSIGNALED(status)) {
        throw io_error("external predictor killed by signal " +
                       std::to_string(WTERMSIG(status)) + " (command: " + cmd + ")");
    }
    const int exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    if (exit_code != 0) {
        throw io_error("external predictor exited with status " +
                       std::to_string(exit_code) + " (command: " + cmd + ")");
    }

    std::set<std::string> expected(expected_ids.begin(), expected_ids.end());
    std::set<std::string> present;
    for (const auto& entry : fs::directory_iterator(out_dir)) {
        present.insert(entry.path().filename().string());
    }
    std::vector<std::string> missing, extra;
    for (const std::string& id : expected) {
        if (!present.count(id + ".pfm")) missing.push_back(id + ".pfm");
    }
    for (const std::string& name : present) {
        bool known = false;
        for (const std::string& id : expected) {
            if (name == id + ".pfm") {
                known = true;
                break;
            }
        }
        if (!known) extra.push_back(name);
    }
    if (!missing.empty()) {
        std::string msg = "external predictor did not produce:";
        for (const std::string& m : missing) msg += " " + m;
        throw io_error(msg);
    }
    if (!extra.empty()) {
        std::string msg = "unexpected files in predictor output directory:";
        for (const std::string& e : extra) msg += " " + e;
        throw io_error(msg);
    }

    std::map<std::string, RasterF> result;
    for (const std::string& id : expected) {
        const fs::path file = out_dir / (id + ".pfm");
        RasterF map = read_pfm(file);
        if (map.channels() != 1) {
            throw io_error("prediction " + file.string() + ": expected 1 channel, got " +
                           std::to_string(map.channels()));
        }
        for (int r = 0; r < map.height(); ++r) {
            for (int c = 0; c < map.width(); ++c) {
                const double v = map.at(r, c);
                if (v < 0.0 || v > 1.0) {
                    throw io_error("prediction " + file.string() + ": probability " +
                                   std::to_string(v) + " out of [0, 1] at (" +
                                   std::to_string(r) + ", " + std::to_string(c) + ")");
                }
            }
        }
        result.emplace(id, std::move(map));
    }
    return result;
}

// ---------------------------------------------------------------------------
// Config file.

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj,
                                const std::set<std::string>& allowed,
                                const std::string& context) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw validation_error("config: unknown key '" + it.key() + "' in " + context);
        }
    }
}

inline const nlohmann::json& require_key(const nlohmann::json& obj, const std::string& key,
                                         const std::string& context) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        throw validation_error("config: missing required key '" + key + "' in " + context);
    }
    return *it;
}

inline double as_number(const nlohmann::json& v, const std::string& what) {
    if (!v.is_number()) {
        throw validation_error("config: " + what + " must be a number");
    }
    return v.get<double>();
}

inline int as_int(const nlohmann::json& v, const std::string& what) {
    if (!v.is_number_integer()) {
        throw validation_error("config: " + what + " must be an integer");
    }
    return v.get<int>();
}

inline std::string as_string(const nlohmann::json& v, const std::string& what) {
    if (!v.is_string()) {
        throw validation_error("config: " + what + " must be a string");
    }
    return v.get<std::string>();
}

inline bool as_bool(const nlohmann::json& v, const std::string& what) {
    if (!v.is_boolean()) {
        throw validation_error("config: " + what + " must be a boolean");
    }
    return v.get<bool>();
}

inline void check_pair_id(const std::string& id) {
    if (id.empty()) {
        throw validation_error("config: pair id must not be empty");
    }
    for (char c : id) {
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' &&
            c != '-') {
            throw validation_error("config: pair id '" + id +
                                   "' contains a character outside [A-Za-z0-9._-]");
        }
    }
    if (id == "." || id == "..") {
        throw validation_error("config: pair id '" + id + "' is not a valid file name");
    }
}

}  // namespace detail

/// Parses and validates a pipeline config file (strict JSON schema,
/// `schema_version` 1, unknown keys rejected). Relative paths are resolved
/// against the config file's directory; pair paths additionally go through
/// the optional `dataset_root`.
inline HyperepochConfig load_pipeline_config(const fs::path& config_path) {
    if (!fs::exists(config_path)) {
        throw validation_error("config file does not exist: " + config_path.string());
    }
    nlohmann::json j;
    try {
        const std::vector<unsigned char> bytes = read_file_bytes(config_path);
        j = nlohmann::json::parse(bytes.begin(), bytes.end());
    } catch (const nlohmann::json::exception& e) {
        throw validation_error("config: invalid JSON in " + config_path.string() + ": " +
                               e.what());
    }
    if (!j.is_object()) {
        throw validation_error("config: top level must be a JSON object");
    }
    detail::reject_unknown_keys(
        j,
        {"schema_version", "dataset_root", "output_root", "pairs", "hyperepochs",
         "strategy", "post_processor", "gad", "predictor", "binarize_threshold",
         "no_reference_constraint"},
        "top level");

    const int version = detail::as_int(detail::require_key(j, "schema_version", "top level"),
                                       "schema_version");
    if (version != 1) {
        throw validation_error("config: unsupported schema_version " +
                               std::to_string(version) + " (expected 1)");
    }

    const fs::path base = fs::absolute(config_path).parent_path();
    auto resolve = [](const fs::path& root, const fs::path& p) {
        return (p.is_absolute() ? p : root / p).lexically_normal();
    };

    HyperepochConfig cfg;

    fs::path dataset_root = base;
    if (j.contains("dataset_root")) {
        dataset_root = resolve(base, detail::as_string(j["dataset_root"], "dataset_root"));
    }
    cfg.output_root =
        resolve(base, detail::as_string(detail::require_key(j, "output_root", "top level"),
                                        "output_root"));

    if (j.contains("hyperepochs")) {
        cfg.hyperepochs = detail::as_int(j["hyperepochs"], "hyperepochs");
    }
    if (cfg.hyperepochs < 1) {
        throw validation_error("config: hyperepochs must be >= 1");
    }

    if (j.contains("strategy")) {
        cfg.strategy = parse_merge_strategy(detail::as_string(j["strategy"], "strategy"));
    }

    if (j.contains("post_processor")) {
        const std::string pp = detail::as_string(j["post_processor"], "post_processor");
        if (pp == "gad") cfg.post_processor = PostProcessor::kGad;
        else if (pp == "none") cfg.post_processor = PostProcessor::kNone;
        else {
            throw validation_error("config: post_processor must be 'gad' or 'none', got '" +
                                   pp + "'");
        }
    }

    if (cfg.post_processor == PostProcessor::kGad || j.contains("gad")) {
        const nlohmann::json& g = detail::require_key(j, "gad", "top level");
        if (!g.is_object()) {
            throw validation_error("config: 'gad' must be an object");
        }
        detail::reject_unknown_keys(g, {"iterations", "kappa", "lambda", "freeze_guides"},
                                    "'gad'");
        const int iterations =
            detail::as_int(detail::require_key(g, "iterations", "'gad'"), "gad.iterations");
        double kappa = 5.0, lambda = 0.24;
        bool freeze = false;
        if (g.contains("kappa")) kappa = detail::as_number(g["kappa"], "gad.kappa");
        if (g.contains("lambda")) lambda = detail::as_number(g["lambda"], "gad.lambda");
        if (g.contains("freeze_guides")) {
            freeze = detail::as_bool(g["freeze_guides"], "gad.freeze_guides");
        }
        cfg.gad = GadParams(iterations, kappa, lambda, freeze);
    }

    {
        const nlohmann::json& p = detail::require_key(j, "predictor", "top level");
        if (!p.is_object()) {
            throw validation_error("config: 'predictor' must be an object");
        }
        const std::string kind =
            detail::as_string(detail::require_key(p, "kind", "'predictor'"), "predictor.kind");
        if (kind == "external-command") {
            detail::reject_unknown_keys(p, {"kind", "command"}, "'predictor'");
            cfg.predictor.kind = PredictorKind::kExternalCommand;
            cfg.predictor.command = detail::as_string(
                detail::require_key(p, "command", "'predictor'"), "predictor.command");
        } else if (kind == "builtin-diff") {
            detail::reject_unknown_keys(p, {"kind", "blur_radius", "difference_threshold"},
                                        "'predictor'");
            cfg.predictor.kind = PredictorKind::kBuiltinDiff;
            if (p.contains("blur_radius")) {
                cfg.predictor.blur_radius =
                    detail::as_int(p["blur_radius"], "predictor.blur_radius");
            }
            if (p.contains("difference_threshold")) {
                cfg.predictor.difference_threshold = detail::as_number(
                    p["difference_threshold"], "predictor.difference_threshold");
            }
        } else {
            throw validation_error(
                "config: predictor.kind must be 'external-command' or 'builtin-diff', got '" +
                kind + "'");
        }
        validate_predictor_spec(cfg.predictor);
    }

    if (j.contains("binarize_threshold")) {
        cfg.binarize_threshold =
            detail::as_number(j["binarize_threshold"], "binarize_threshold");
        if (!std::isfinite(cfg.binarize_threshold) || cfg.binarize_threshold < 0.0 ||
            cfg.binarize_threshold > 1.0) {
            throw validation_error("config: binarize_threshold must be in [0, 1]");
        }
    }
    if (j.contains("no_reference_constraint")) {
        cfg.no_reference_constraint =
            detail::as_bool(j["no_reference_constraint"], "no_reference_constraint");
    }

    const nlohmann::json& pairs = detail::require_key(j, "pairs", "top level");
    if (!pairs.is_array() || pairs.empty()) {
        throw validation_error("config: 'pairs' must be a non-empty array");
    }
    std::set<std::string> seen_ids;
    int index = 0;
    for (const nlohmann::json& pj : pairs) {
        if (!pj.is_object()) {
            throw validation_error("config: each pair must be an object");
        }
        detail::reject_unknown_keys(pj, {"id", "image1", "image2", "labels"}, "pair entry");
        PairSpec pair;
        pair.id = pj.contains("id") ? detail::as_string(pj["id"], "pair.id")
                                    : "pair-" + std::to_string(index);
        detail::check_pair_id(pair.id);
        if (!seen_ids.insert(pair.id).second) {
            throw validation_error("config: duplicate pair id '" + pair.id + "'");
        }
        pair.image1 = resolve(dataset_root,
                              detail::as_string(detail::require_key(pj, "image1", "pair"),
                                                "pair.image1"));
        pair.image2 = resolve(dataset_root,
                              detail::as_string(detail::require_key(pj, "image2", "pair"),
                                                "pair.image2"));
        pair.labels = resolve(dataset_root,
                              detail::as_string(detail::require_key(pj, "labels", "pair"),
                                                "pair.labels"));
        for (const fs::path* p : {&pair.image1, &pair.image2}) {
            const std::string ext = lowercase_extension(*p);
            if (ext != ".png" && ext != ".pfm") {
                throw validation_error("config: pair '" + pair.id + "' image " +
                                       p->string() + " must be .png or .pfm");
            }
        }
        if (lowercase_extension(pair.labels) != ".png") {
            throw validation_error("config: pair '" + pair.id + "' labels " +
                                   pair.labels.string() + " must be .png");
        }
        cfg.pairs.push_back(std::move(pair));
        ++index;
    }
    return cfg;
}

inline nlohmann::json config_to_json(const HyperepochConfig& cfg) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["output_root"] = cfg.output_root.string();
    j["hyperepochs"] = cfg.hyperepochs;
    j["strategy"] = merge_strategy_name(cfg.strategy);
    j["post_processor"] = cfg.post_processor == PostProcessor::kGad ? "gad" : "none";
    if (cfg.post_processor == PostProcessor::kGad) {
        j["gad"] = {{"iterations", cfg.gad.iterations},
                    {"kappa", cfg.gad.kappa},
                    {"lambda", cfg.gad.lambda},
                    {"freeze_guides", cfg.gad.freeze_guides}};
    }
    if (cfg.predictor.kind == PredictorKind::kExternalCommand) {
        j["predictor"] = {{"kind", "external-command"}, {"command", cfg.predictor.command}};
    } else {
        j["predictor"] = {{"kind", "builtin-diff"},
                          {"blur_radius", cfg.predictor.blur_radius},
                          {"difference_threshold", cfg.predictor.difference_threshold}};
    }
    j["binarize_threshold"] = cfg.binarize_threshold;
    j["no_reference_constraint"] = cfg.no_reference_constraint;
    j["pairs"] = nlohmann::json::array();
    for (const PairSpec& p : cfg.pairs) {
        j["pairs"].push_back({{"id", p.id},
                              {"image1", p.image1.string()},
                              {"image2", p.image2.string()},
                              {"labels", p.labels.string()}});
    }
    return j;
}

// ---------------------------------------------------------------------------
// The loop.

namespace detail {

struct PairState {
    PairSpec spec;
    bool alive = true;
    LabelMap gt0{1, 1};
    LabelMap gt_prev{1, 1};
    std::optional<RasterF> image1;
    std::optional<RasterF> image2;
    std::string gt0_digest;
};

inline void write_json_file(const nlohmann::json& j, const fs::path& path) {
    const std::string text = j.dump(2) + "\n";
    write_file_atomic(path, text.data(), text.size());
}

inline void copy_bytes(const fs::path& from, const fs::path& to) {
    const std::vector<unsigned char> bytes = read_file_bytes(from);
    write_file_atomic(to, bytes.data(), bytes.size());
}

inline void make_dirs(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw io_error("cannot create directory " + dir.string() + ": " + ec.message());
    }
}

}  // namespace detail

/// Runs the full loop and returns the manifest that was also written to
/// `<output_root>/manifest.json`. Configuration problems throw
/// validation_error before anything is written; stage failures at run time
/// (predictor exit codes, protocol violations, unreadable data) are recorded
/// in the manifest instead, with `ok` cleared and the first fatal error in
/// `error`. Per-pair problems drop only that pair; predictor-level problems
/// end the run.
inline RunManifest run_pipeline(const HyperepochConfig& cfg, int threads = 1) {
    if (cfg.hyperepochs < 1) {
        throw validation_error("pipeline: hyperepochs must be >= 1");
    }
    if (cfg.pairs.empty()) {
        throw validation_error("pipeline: no pairs configured");
    }
    if (threads < 1) {
        throw validation_error("pipeline: threads must be >= 1");
    }
    validate_predictor_spec(cfg.predictor);
    {
        std::set<std::string> ids;
        for (const PairSpec& p : cfg.pairs) {
            detail::check_pair_id(p.id);
            if (!ids.insert(p.id).second) {
                throw validation_error("pipeline: duplicate pair id '" + p.id + "'");
            }
        }
    }
    for (const PairSpec& p : cfg.pairs) {
        for (const fs::path* path : {&p.image1, &p.image2, &p.labels}) {
            if (!fs::exists(*path)) {
                throw validation_error("pipeline: pair '" + p.id +
                                       "' references a missing file: " + path->string());
            }
        }
    }

    const bool needs_images = cfg.predictor.kind == PredictorKind::kBuiltinDiff ||
                              cfg.post_processor == PostProcessor::kGad;

    RunManifest manifest;
    manifest.path = cfg.output_root / "manifest.json";
    nlohmann::json& doc = manifest.doc;
    doc["schema_version"] = 1;
    doc["config"] = config_to_json(cfg);
    doc["hyperepochs"] = nlohmann::json::array();
    doc["status"] = "running";

    auto fail_run = [&](const std::string& error) {
        manifest.ok = false;
        manifest.error = error;
        doc["status"] = "failed";
        doc["error"] = error;
        detail::write_json_file(doc, manifest.path);
    };

    const fs::path train_dir = cfg.output_root / "train";
    detail::make_dirs(train_dir);

    std::vector<detail::PairState> pairs;
    for (const PairSpec& spec : cfg.pairs) {
        detail::PairState st;
        st.spec = spec;
        pairs.push_back(std::move(st));
    }
    auto alive_ids = [&] {
        std::vector<std::string> ids;
        for (const detail::PairState& st : pairs) {
            if (st.alive) ids.push_back(st.spec.id);
        }
        return ids;
    };

    using clock = std::chrono::steady_clock;

    // Round 0: copy the inputs into the run directory and freeze GT_0.
    fs::path labels_dir = cfg.output_root / "hyperepoch-0" / "labels";
    {
        const auto t0 = clock::now();
        detail::make_dirs(labels_dir);
        nlohmann::json round;
        round["index"] = 0;
        round["labels_dir"] = labels_dir.string();
        round["pairs"] = nlohmann::json::array();
        round["failures"] = nlohmann::json::array();
        for (detail::PairState& st : pairs) {
            try {
                const fs::path train1 =
                    train_dir / (st.spec.id + "_1" + lowercase_extension(st.spec.image1));
                const fs::path train2 =
                    train_dir / (st.spec.id + "_2" + lowercase_extension(st.spec.image2));
                detail::copy_bytes(st.spec.image1, train1);
                detail::copy_bytes(st.spec.image2, train2);

                st.gt0 = labelmap_from_png(st.spec.labels);
                if (needs_images) {
                    st.image1 = read_image(train1);
                    st.image2 = read_image(train2);
                    if (st.image1->width() != st.image2->width() ||
                        st.image1->height() != st.image2->height() ||
                        st.image1->width() != st.gt0.width() ||
                        st.image1->height() != st.gt0.height()) {
                        throw validation_error("dimension mismatch between images and labels");
                    }
                    if (cfg.post_processor == PostProcessor::kGad) {
                        for (const std::optional<RasterF>* img : {&st.image1, &st.image2}) {
                            const int c = (*img)->channels();
                            if (c != 1 && c != 3) {
                                throw validation_error(
                                    "guide images must have 1 or 3 channels, got " +
                                    std::to_string(c));
                            }
                        }
                    }
                }
                const fs::path gt0_path = labels_dir / (st.spec.id + ".png");
                labelmap_to_png(st.gt0, gt0_path);
                st.gt0_digest = digest_file(gt0_path);
                st.gt_prev = st.gt0;
                round["pairs"].push_back({{"id", st.spec.id},
                                          {"image1_digest", digest_file(st.spec.image1)},
                                          {"image2_digest", digest_file(st.spec.image2)},
                                          {"labels_digest", st.gt0_digest}});
            } catch (const std::exception& e) {
                st.alive = false;
                round["failures"].push_back({{"id", st.spec.id}, {"error", e.what()}});
            }
        }
        round["wall_clock_seconds"] =
            std::chrono::duration<double>(clock::now() - t0).count();
        doc["hyperepochs"].push_back(std::move(round));
        detail::write_json_file(doc, manifest.path);
        if (alive_ids().empty()) {
            fail_run("no usable pairs after materialization");
            return manifest;
        }
    }

    // Rounds 1..N-1: predict on the previous labels, post-process, threshold,
    // merge against GT_0 (or skip the merge when the ablation flag is set).
    for (int i = 1; i < cfg.hyperepochs; ++i) {
        const auto t0 = clock::now();
        const fs::path round_dir = cfg.output_root / ("hyperepoch-" + std::to_string(i));
        const fs::path pred_dir = round_dir / "predictions";
        const fs::path merged_dir = round_dir / "merged";
        const fs::path metrics_dir = round_dir / "metrics";
        detail::make_dirs(pred_dir);
        detail::make_dirs(merged_dir);
        detail::make_dirs(metrics_dir);

        nlohmann::json round;
        round["index"] = i;
        round["labels_dir"] = labels_dir.string();
        round["pairs"] = nlohmann::json::array();
        round["failures"] = nlohmann::json::array();

        std::map<std::string, RasterF> predictions;
        std::map<std::string, double> fitted;
        if (cfg.predictor.kind == PredictorKind::kExternalCommand) {
            try {
                predictions = run_external_predictor(cfg.predictor, train_dir, labels_dir,
                                                     pred_dir, alive_ids());
            } catch (const std::exception& e) {
                round["failures"].push_back({{"stage", "predict"}, {"error", e.what()}});
                round["wall_clock_seconds"] =
                    std::chrono::duration<double>(clock::now() - t0).count();
                doc["hyperepochs"].push_back(std::move(round));
                fail_run(std::string("hyperepoch ") + std::to_string(i) +
                         " predictor failure: " + e.what());
                return manifest;
            }
        } else {
            for (detail::PairState& st : pairs) {
                if (!st.alive) continue;
                try {
                    BuiltinPrediction bp =
                        builtin_diff_predict(*st.image1, *st.image2, st.gt_prev,
                                             cfg.predictor.blur_radius,
                                             cfg.predictor.difference_threshold);
                    write_pfm(bp.probabilities, pred_dir / (st.spec.id + ".pfm"));
                    predictions.emplace(st.spec.id, std::move(bp.probabilities));
                    fitted[st.spec.id] = bp.fitted_threshold;
                } catch (const std::exception& e) {
                    st.alive = false;
                    round["failures"].push_back({{"id", st.spec.id}, {"error", e.what()}});
                }
            }
        }

        for (detail::PairState& st : pairs) {
            if (!st.alive) continue;
            try {
                nlohmann::json entry;
                entry["id"] = st.spec.id;
                entry["input_labels_digest"] =
                    digest_file(labels_dir / (st.spec.id + ".png"));
                entry["prediction_digest"] =
                    digest_file(pred_dir / (st.spec.id + ".pfm"));
                if (fitted.count(st.spec.id)) {
                    entry["fitted_threshold"] = fitted[st.spec.id];
                }

                RasterF prob = std::move(predictions.at(st.spec.id));
                if (cfg.post_processor == PostProcessor::kGad) {
                    if (prob.width() != st.image1->width() ||
                        prob.height() != st.image1->height()) {
                        throw validation_error("prediction/image dimension mismatch");
                    }
                    std::vector<RasterF> guides{*st.image1, *st.image2};
                    prob = guided_diffusion(guides, prob, cfg.gad, threads);
                    const fs::path post_path = pred_dir / (st.spec.id + ".post.pfm");
                    write_pfm(prob, post_path);
                    entry["post_processed_digest"] = digest_file(post_path);
                }

                LabelMap binary = binarize(prob, cfg.binarize_threshold);
                LabelMap merged = cfg.no_reference_constraint
                                      ? binary
                                      : merge_labels(st.gt0, binary, cfg.strategy);
                const fs::path merged_path = merged_dir / (st.spec.id + ".png");
                labelmap_to_png(merged, merged_path);
                entry["merged_digest"] = digest_file(merged_path);

                const ConfusionCounts counts = confusion(merged, st.gt0);
                const nlohmann::json metrics = metrics_json(counts);
                detail::write_json_file(metrics, metrics_dir / (st.spec.id + ".json"));
                entry["metrics_vs_original"] = metrics;

                st.gt_prev = std::move(merged);
                round["pairs"].push_back(std::move(entry));
            } catch (const std::exception& e) {
                st.alive = false;
                round["failures"].push_back({{"id", st.spec.id}, {"error", e.what()}});
            }
        }

        round["wall_clock_seconds"] =
            std::chrono::duration<double>(clock::now() - t0).count();
        doc["hyperepochs"].push_back(std::move(round));
        detail::write_json_file(doc, manifest.path);
        if (alive_ids().empty()) {
            fail_run("no usable pairs left after hyperepoch " + std::to_string(i));
            return manifest;
        }
        labels_dir = merged_dir;
    }

    // Ablation bookkeeping: without the reference constraint the original
    // label digests must not resurface in any merged stage.
    nlohmann::json integrity;
    integrity["no_reference_constraint"] = cfg.no_reference_constraint;
    if (cfg.no_reference_constraint) {
        bool reappears = false;
        std::set<std::string> gt0_digests;
        for (const detail::PairState& st : pairs) {
            if (!st.gt0_digest.empty()) gt0_digests.insert(st.gt0_digest);
        }
        for (const nlohmann::json& round : doc["hyperepochs"]) {
            if (round["index"].get<int>() == 0) continue;
            for (const nlohmann::json& entry : round["pairs"]) {
                if (entry.contains("merged_digest") &&
                    gt0_digests.count(entry["merged_digest"].get<std::string>())) {
                    reappears = true;
                }
            }
        }
        integrity["original_label_digests_reappear"] = reappears;
    }
    doc["ablation_integrity"] = std::move(integrity);
    doc["status"] = "ok";
    detail::write_json_file(doc, manifest.path);
    return manifest;
}

}  // namespace gad
