#pragma once

#include <optional>
#include <string>
#include <vector>

namespace refblend::cli {

struct TrainArgs {
    std::string out_path;
    int epochs = 30;
    uint64_t seed = 0;
    int images = 256;
    int image_size = 32;
    int batch_size = 8;
    double lr = 2e-3;
    int sched_steps = 1000;
    int base_channels = 16;
    int levels = 3;
    int head_dim = 16;
    std::string shapes = "triangle,square,circle";
    std::string colors = "red,green,blue";
    int min_shapes = 1;
    int max_shapes = 3;
    std::vector<int> attn_layers; // empty: derived from levels
    std::string export_dataset_dir;
};

// Flag overrides shared by generate/sweep/visualize/metrics.
struct GenOverrides {
    std::optional<double> alpha;
    std::optional<double> weight;
    std::optional<int> steps;
    std::optional<double> cfg_scale;
    std::optional<std::vector<int>> blocks;
    std::optional<uint64_t> seed;
    std::optional<bool> strict_mask;
    std::optional<std::string> seg_source;
    std::optional<bool> inject_uncond;
    std::string mode = "inject"; // inject | baseline | plain
    bool with_baseline = false;
    std::string out_dir;
};

struct SweepArgs {
    std::string axis; // alpha | weight | blocks
    std::vector<std::string> values;
    std::string out_dir;
};

struct VisualizeArgs {
    std::vector<int> steps; // sampling iteration indices; empty = auto
    std::string out_dir;
};

struct MetricsArgs {
    std::string image_path;
    std::string map_path;
    std::string out_path; // empty = stdout
};

int cmd_train(const TrainArgs& args);
int cmd_generate(const std::string& config_path, const GenOverrides& ov);
int cmd_sweep(const std::string& config_path, const GenOverrides& ov, const SweepArgs& sweep);
int cmd_visualize(const std::string& config_path, const GenOverrides& ov, const VisualizeArgs& viz);
int cmd_metrics(const std::string& config_path, const MetricsArgs& args);

} // namespace refblend::cli
