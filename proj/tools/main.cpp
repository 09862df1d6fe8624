#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "commands.hpp"
#include "refblend/errors.hpp"

using namespace refblend;

namespace {

// Single-line machine-parsable error, stable exit statuses:
// usage 2, data 3, numeric 4.
int report_error(const char* cls, const std::string& code, const std::string& msg, int status) {
    std::fprintf(stderr, "ERROR %s/%s: %s\n", cls, code.c_str(), msg.c_str());
    return status;
}

void add_gen_flags(CLI::App* cmd, cli::GenOverrides& ov) {
    cmd->add_option_function<double>("--alpha", [&](double v) { ov.alpha = v; },
                                     "Stage split: RSA for the first ceil(alpha*steps) iterations");
    cmd->add_option_function<double>("--weight", [&](double v) { ov.weight = v; },
                                     "Mask weight applied to every reference concept");
    cmd->add_option_function<int>("--steps", [&](int v) { ov.steps = v; }, "Sampler steps");
    cmd->add_option_function<double>("--cfg-scale", [&](double v) { ov.cfg_scale = v; },
                                     "Classifier-free guidance scale");
    cmd->add_option_function<std::vector<int>>("--blocks", [&](std::vector<int> v) { ov.blocks = v; },
                                               "Hooked attention block indices")
        ->delimiter(',');
    cmd->add_option_function<uint64_t>("--seed", [&](uint64_t v) { ov.seed = v; }, "Sampling seed");
    cmd->add_flag_function("--strict-mask", [&](int64_t) { ov.strict_mask = true; },
                           "Masked-out reference logits become -inf instead of 0");
    cmd->add_option_function<std::string>("--seg-source", [&](std::string v) { ov.seg_source = v; },
                                          "Segmentation source: refined or raw")
        ->check(CLI::IsMember({"refined", "raw"}));
    cmd->add_flag_function("--inject-uncond", [&](int64_t) { ov.inject_uncond = true; },
                           "Apply attention overrides to the unconditional branch too");
    cmd->add_option("--out", ov.out_dir, "Output directory");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"training-free attention-controlled image generation on a toy diffusion model"};
    app.require_subcommand(1);

    cli::TrainArgs train_args;
    CLI::App* train = app.add_subcommand("train", "Train the toy denoiser on the shapes dataset");
    train->add_option("--out", train_args.out_path, "Checkpoint output path")->required();
    train->add_option("--epochs", train_args.epochs, "Training epochs");
    train->add_option("--seed", train_args.seed, "Master seed (dataset, init, training)");
    train->add_option("--images", train_args.images, "Dataset size");
    train->add_option("--image-size", train_args.image_size, "Canvas resolution");
    train->add_option("--batch", train_args.batch_size, "Batch size");
    train->add_option("--lr", train_args.lr, "Adam learning rate");
    train->add_option("--sched-steps", train_args.sched_steps, "Diffusion schedule length T");
    train->add_option("--base-channels", train_args.base_channels, "U-Net base channel count");
    train->add_option("--levels", train_args.levels, "U-Net resolution levels");
    train->add_option("--head-dim", train_args.head_dim, "Attention projection width");
    train->add_option("--attn-layers", train_args.attn_layers,
                      "Attention-bearing block indices (default: two coarsest levels)")
        ->delimiter(',');
    train->add_option("--shapes", train_args.shapes, "Comma list of shape kinds");
    train->add_option("--min-shapes", train_args.min_shapes, "Minimum shapes per image");
    train->add_option("--max-shapes", train_args.max_shapes, "Maximum shapes per image");
    train->add_option("--colors", train_args.colors, "Comma list of colors");
    train->add_option("--export-dataset", train_args.export_dataset_dir,
                      "Also write the dataset as images plus a JSON index");

    std::string gen_config;
    cli::GenOverrides gen_ov;
    CLI::App* gen = app.add_subcommand("generate", "Run the dual-path sampler");
    gen->add_option("--config", gen_config, "Run configuration JSON")->required();
    add_gen_flags(gen, gen_ov);
    gen->add_option("--mode", gen_ov.mode, "inject (default), baseline, or plain")
        ->check(CLI::IsMember({"inject", "baseline", "plain"}));
    gen->add_flag("--with-baseline", gen_ov.with_baseline,
                  "Also run the no-injection baseline and report metric deltas");

    std::string sweep_config;
    cli::GenOverrides sweep_ov;
    cli::SweepArgs sweep_args;
    CLI::App* sweep = app.add_subcommand("sweep", "Grid of runs over alpha, weight, or blocks");
    sweep->add_option("--config", sweep_config, "Run configuration JSON")->required();
    sweep->add_option("--axis", sweep_args.axis, "alpha | weight | blocks")->required();
    sweep->add_option("--values", sweep_args.values, "Axis values (blocks values use 4+5 syntax)")
        ->required()
        ->delimiter(',');
    sweep->add_option("--sweep-out", sweep_args.out_dir, "Sweep output root");
    add_gen_flags(sweep, sweep_ov);

    std::string viz_config;
    cli::GenOverrides viz_ov;
    cli::VisualizeArgs viz_args;
    CLI::App* viz = app.add_subcommand("visualize",
                                       "Emit attention heatmaps, correspondence and semantic maps");
    viz->add_option("--config", viz_config, "Run configuration JSON")->required();
    viz->add_option("--step", viz_args.steps, "Sampling iteration indices to visualize");
    viz->add_option("--viz-out", viz_args.out_dir, "Output directory");
    add_gen_flags(viz, viz_ov);

    std::string metrics_config;
    cli::MetricsArgs metrics_args;
    CLI::App* metrics = app.add_subcommand("metrics", "Score an image against reference concepts");
    metrics->add_option("--config", metrics_config, "Run configuration JSON")->required();
    metrics->add_option("--image", metrics_args.image_path, "Generated image (ppm)")->required();
    metrics->add_option("--map", metrics_args.map_path, "Rendered semantic map (ppm)")->required();
    metrics->add_option("--report-out", metrics_args.out_path, "Report path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        std::fprintf(stderr, "ERROR usage/bad_flags: %s\n", e.what());
        return 2;
    }

    try {
        if (*train) return cli::cmd_train(train_args);
        if (*gen) return cli::cmd_generate(gen_config, gen_ov);
        if (*sweep) return cli::cmd_sweep(sweep_config, sweep_ov, sweep_args);
        if (*viz) return cli::cmd_visualize(viz_config, viz_ov, viz_args);
        if (*metrics) return cli::cmd_metrics(metrics_config, metrics_args);
    } catch (const UsageError& e) {
        return report_error("usage", e.code(), e.what(), 2);
    } catch (const DataError& e) {
        return report_error("data", e.code(), e.what(), 3);
    } catch (const NumericError& e) {
        return report_error("numeric", e.code(), e.what(), 4);
    } catch (const std::exception& e) {
        return report_error("numeric", "unexpected", e.what(), 4);
    }
    return 2;
}
