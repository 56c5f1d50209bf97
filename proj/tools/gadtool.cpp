// Command-line front end: anisotropic diffusion (classic and guided), label
// merging, confusion metrics, class weights, and the iterative label-cleaning
// pipeline. Exit codes: 0 success, 1 I/O or runtime failure, 2 invalid
// arguments or data validation failure.

#include <cstdio>
#include <exception>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "gad/gad.hpp"

namespace {

int default_threads() {
    const unsigned n = std::thread::hardware_concurrency();
    return n > 0 ? static_cast<int>(n) : 1;
}

void add_threads_option(CLI::App* cmd, int& threads) {
    cmd->add_option("--threads", threads, "Worker thread cap")
        ->default_val(default_threads())
        ->check(CLI::PositiveNumber);
}

// Shared flags for the two diffusion subcommands.
struct DiffusionArgs {
    std::string input;
    std::string output;
    int iterations = 0;
    double kappa = 5.0;
    double lambda = 0.24;
    int threads = 1;
};

void add_diffusion_options(CLI::App* cmd, DiffusionArgs& args) {
    cmd->add_option("--input", args.input, "Image to filter (.png or .pfm)")->required();
    cmd->add_option("--output", args.output, "Destination (same format as input)")
        ->required();
    cmd->add_option("--iterations", args.iterations, "Diffusion steps")->required();
    cmd->add_option("--kappa", args.kappa,
                    "Contrast scale of the edge-stopping function")
        ->default_val(5.0);
    cmd->add_option("--lambda", args.lambda, "Step size, in (0, 0.25]")
        ->default_val(0.24);
    add_threads_option(cmd, args.threads);
}

void print_json(const nlohmann::json& j) {
    std::fputs((j.dump(2) + "\n").c_str(), stdout);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Edge-preserving diffusion and label cleaning for change maps"};
    app.require_subcommand(1);

    DiffusionArgs pm_args;
    CLI::App* pm = app.add_subcommand(
        "pm", "Classic anisotropic diffusion (image guides itself)");
    add_diffusion_options(pm, pm_args);

    DiffusionArgs gad_args;
    std::vector<std::string> guide_paths;
    bool freeze_guides = false;
    CLI::App* gad_cmd = app.add_subcommand(
        "gad", "Guided anisotropic diffusion (edges come from guide images)");
    add_diffusion_options(gad_cmd, gad_args);
    gad_cmd->add_option("--guide", guide_paths, "Guide image (.png); repeat for two")
        ->required()
        ->expected(1, 2);
    gad_cmd->add_flag("--freeze-guides", freeze_guides,
                      "Do not diffuse the guides between steps");

    std::string merge_original, merge_prediction, merge_strategy, merge_output;
    CLI::App* merge = app.add_subcommand("merge", "Merge a prediction into reference labels");
    merge->add_option("--original", merge_original, "Reference label map (.png)")
        ->required();
    merge->add_option("--prediction", merge_prediction, "Predicted label map (.png)")
        ->required();
    merge->add_option("--strategy", merge_strategy,
                      "intersection | ignore-fn | ignore-all")
        ->required();
    merge->add_option("--output", merge_output, "Merged label map (.png)")->required();

    std::string metrics_prediction, metrics_reference;
    CLI::App* metrics = app.add_subcommand(
        "metrics", "Confusion counts and scores of a prediction against a reference");
    metrics->add_option("--prediction", metrics_prediction, "Predicted label map (.png)")
        ->required();
    metrics->add_option("--reference", metrics_reference, "Reference label map (.png)")
        ->required();

    std::string weights_labels;
    CLI::App* weights = app.add_subcommand(
        "weights", "Inverse-frequency class weights of a label map");
    weights->add_option("--labels", weights_labels, "Label map (.png)")->required();

    std::string pipeline_config;
    int pipeline_threads = 1;
    CLI::App* pipeline = app.add_subcommand(
        "pipeline", "Run the iterative label-cleaning loop from a config file");
    pipeline->add_option("--config", pipeline_config, "JSON config file")->required();
    add_threads_option(pipeline, pipeline_threads);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*pm) {
            const gad::GadParams params(pm_args.iterations, pm_args.kappa, pm_args.lambda);
            const gad::LoadedImage input = gad::load_image(pm_args.input);
            const gad::RasterF out =
                gad::perona_malik(input.raster, params, pm_args.threads);
            gad::save_image(out, pm_args.output, input.format);
        } else if (*gad_cmd) {
            const gad::GadParams params(gad_args.iterations, gad_args.kappa,
                                        gad_args.lambda, freeze_guides);
            const gad::LoadedImage input = gad::load_image(gad_args.input);
            std::vector<gad::RasterF> guides;
            for (const std::string& path : guide_paths) {
                guides.push_back(gad::read_png(path));
            }
            const gad::RasterF out =
                gad::guided_diffusion(guides, input.raster, params, gad_args.threads);
            gad::save_image(out, gad_args.output, input.format);
        } else if (*merge) {
            const gad::LabelMap original = gad::labelmap_from_png(merge_original);
            const gad::LabelMap prediction = gad::labelmap_from_png(merge_prediction);
            const gad::LabelMap merged = gad::merge_labels(
                original, prediction, gad::parse_merge_strategy(merge_strategy));
            gad::labelmap_to_png(merged, merge_output);
        } else if (*metrics) {
            const gad::LabelMap prediction = gad::labelmap_from_png(metrics_prediction);
            const gad::LabelMap reference = gad::labelmap_from_png(metrics_reference);
            print_json(gad::metrics_json(gad::confusion(prediction, reference)));
        } else if (*weights) {
            const gad::ClassWeights w = gad::class_weights(gad::labelmap_from_png(weights_labels));
            if (w.n0 == 0 || w.n1 == 0) {
                std::fprintf(stderr,
                             "warning: class %d has no pixels; its weight is 0\n",
                             w.n0 == 0 ? 0 : 1);
            }
            nlohmann::json j{{"w0", w.w0},
                             {"w1", w.w1},
                             {"n0", w.n0},
                             {"n1", w.n1}};
            if (w.n0 > 0 && w.n1 > 0) {
                j["ratio"] = w.w1 / w.w0;
            } else {
                j["ratio"] = nullptr;
            }
            print_json(j);
        } else if (*pipeline) {
            const gad::HyperepochConfig cfg = gad::load_pipeline_config(pipeline_config);
            const gad::RunManifest manifest = gad::run_pipeline(cfg, pipeline_threads);
            std::fprintf(stderr, "manifest: %s\n", manifest.path.string().c_str());
            if (!manifest.ok) {
                std::fprintf(stderr, "error: %s\n", manifest.error.c_str());
                return 1;
            }
        }
    } catch (const gad::validation_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const gad::io_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
