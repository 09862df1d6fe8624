#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "refblend/checkpoint.hpp"
#include "refblend/dataset.hpp"
#include "refblend/image_io.hpp"
#include "refblend/metrics.hpp"
#include "refblend/pipeline.hpp"
#include "refblend/run_config.hpp"
#include "refblend/train.hpp"
#include "refblend/viz.hpp"

namespace fs = std::filesystem;

namespace refblend::cli {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot write " + path);
    out << content;
}

// Wall-clock sidecar; the only artifact allowed to differ between reruns.
struct TimingScope {
    std::string path;
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
    ~TimingScope() {
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::ofstream out(path, std::ios::trunc);
        out << "wall_seconds=" << fmt_double(secs) << "\n";
    }
};

void export_dataset(const ShapesDataset& ds, const std::string& dir) {
    fs::create_directories(dir);
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    for (size_t i = 0; i < ds.items.size(); ++i) {
        const DatasetItem& item = ds.items[i];
        char name[64];
        std::snprintf(name, sizeof(name), "item_%04zu.ppm", i);
        write_ppm(image_from_latent(item.image), dir + "/" + name);
        nlohmann::ordered_json entry;
        entry["image"] = name;
        std::vector<std::string> words;
        for (int t : item.tokens) words.push_back(vocab::names()[static_cast<size_t>(t)]);
        entry["tokens"] = words;
        nlohmann::ordered_json masks = nlohmann::ordered_json::array();
        for (size_t mi = 0; mi < item.masks.size(); ++mi) {
            char mname[64];
            std::snprintf(mname, sizeof(mname), "item_%04zu_mask_%zu.pgm", i, mi);
            write_pgm(gray_from_mask(item.masks[mi]), dir + "/" + mname);
            masks.push_back(mname);
        }
        entry["masks"] = masks;
        index.push_back(entry);
    }
    write_text(dir + "/index.json", index.dump(2) + "\n");
}

RunConfig apply_overrides(RunConfig c, const GenOverrides& ov) {
    if (ov.alpha) c.alpha = *ov.alpha;
    if (ov.steps) c.steps = *ov.steps;
    if (ov.cfg_scale) c.cfg_scale = *ov.cfg_scale;
    if (ov.blocks) c.blocks = *ov.blocks;
    if (ov.seed) c.seed = *ov.seed;
    if (ov.strict_mask) c.strict_mask = *ov.strict_mask;
    if (ov.seg_source) c.seg_source = *ov.seg_source;
    if (ov.inject_uncond) c.inject_uncond = *ov.inject_uncond;
    if (ov.weight)
        for (ReferenceEntry& r : c.references) r.weight = *ov.weight;
    if (!ov.out_dir.empty()) c.output_dir = ov.out_dir;
    if (ov.mode == "plain") {
        c.references.clear();
        c.grouping.clear();
    }
    return c;
}

const StepInfo* final_semantic_step(const GenerationArtifacts& art) {
    for (auto it = art.steps.rbegin(); it != art.steps.rend(); ++it)
        if (it->has_semantic_map) return &*it;
    return nullptr;
}

MetricsReport score_run(const LoadedRun& run, const GenerationArtifacts& art, uint64_t seed,
                        const std::string& config_echo) {
    MetricsReport report;
    report.seed = seed;
    report.config_echo = config_echo;
    const StepInfo* final_step = final_semantic_step(art);
    for (size_t i = 0; i < run.refs.size(); ++i) {
        ConceptScores s;
        if (final_step)
            s = concept_fidelity(art.final_latent, final_step->semantic_map,
                                 static_cast<int>(i) + 1, run.refs[i]);
        report.concepts.push_back(s);
    }
    report.baseline_color_distance.resize(report.concepts.size());
    report.baseline_patch_cosine.resize(report.concepts.size());
    return report;
}

std::string stage_log_text(const GenerationArtifacts& art) {
    std::ostringstream log;
    int rsa = 0, rba = 0;
    for (const StepInfo& s : art.steps) {
        char line[128];
        std::snprintf(line, sizeof(line), "step=%02d t=%04d stage=%s", s.index, s.t,
                      stage_name(s.stage));
        log << line;
        if (s.has_semantic_map) {
            log << " groups=";
            for (size_t g = 0; g < s.group_sizes.size(); ++g) {
                if (g) log << ",";
                log << s.group_sizes[g];
            }
        }
        log << "\n";
        (s.stage == Stage::RSA ? rsa : rba)++;
    }
    log << "summary rsa=" << rsa << " rba=" << rba << "\n";
    for (size_t i = 0; i < art.concept_diag.size(); ++i)
        log << "concept=" << i + 1 << " steps_present=" << art.concept_diag[i].steps_present
            << " degenerate=" << (art.concept_diag[i].degenerate ? 1 : 0) << "\n";
    return log.str();
}

// Shared by generate and sweep: run one configuration into one directory.
GenerationArtifacts run_one(const RunConfig& config, const std::string& dir, bool inject,
                            MetricsReport* report_out) {
    LoadedRun run = assemble_run(config);
    NoiseSchedule sched = build_schedule(config.sched_steps, config.sched_beta_min, config.sched_beta_max);
    run.pipeline.injection_enabled = inject;

    fs::create_directories(dir);
    fs::create_directories(dir + "/steps");
    GenerationArtifacts art = generate(run.model, run.refs, run.prompt_tokens, run.grouping,
                                       run.pipeline, sched);

    ImageU8 final_img = image_from_latent(art.final_latent);
    write_ppm(final_img, dir + "/final.ppm");
    write_png(upscale_nearest(final_img, 8), dir + "/final.png");

    for (const StepInfo& s : art.steps) {
        if (!s.has_semantic_map) continue;
        char name[64];
        std::snprintf(name, sizeof(name), "/steps/semantic_t%04d", s.t);
        ImageU8 sem = render_semantic_map(s.semantic_map);
        write_ppm(sem, dir + name + std::string(".ppm"));
        write_png(upscale_nearest(sem, 16), dir + name + std::string(".png"));
    }

    write_text(dir + "/stage_log.txt", stage_log_text(art));

    MetricsReport report = score_run(run, art, config.seed, run_config_to_json(config));
    if (report_out) *report_out = report;
    write_text(dir + "/metrics.json", metrics_to_json(report));
    write_text(dir + "/run_echo.json", run_config_to_json(config));
    return art;
}

} // namespace

int cmd_train(const TrainArgs& args) {
    if (args.out_path.empty()) throw UsageError("bad_flags", "--out checkpoint path is required");
    fs::path out(args.out_path);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    TimingScope timing{args.out_path + ".timing.txt"};

    UNetConfig mc;
    mc.image_size = args.image_size;
    mc.base_channels = args.base_channels;
    mc.levels = args.levels;
    mc.head_dim = args.head_dim;
    mc.attn_layers = args.attn_layers.empty() ? UNetConfig::default_attn_layers(args.levels)
                                              : args.attn_layers;

    DatasetSpec ds;
    ds.shapes = split_csv(args.shapes);
    ds.colors = split_csv(args.colors);
    ds.count = args.images;
    ds.image_size = args.image_size;
    ds.min_shapes = args.min_shapes;
    ds.max_shapes = args.max_shapes;

    Rng root(args.seed);
    Rng data_rng = root.fork(10);
    Rng init_rng = root.fork(11);
    Rng train_rng = root.fork(12);

    ShapesDataset data = make_shapes_dataset(ds, data_rng);
    if (!args.export_dataset_dir.empty()) export_dataset(data, args.export_dataset_dir);

    UNetModel model = build_unet(mc, init_rng);
    NoiseSchedule sched = build_schedule(args.sched_steps, 1e-4, 0.02);

    std::ostringstream log;
    log << "images=" << data.items.size() << " params=" << model.parameter_count()
        << " sched_steps=" << args.sched_steps << " seed=" << args.seed << "\n";

    TrainOptions opts;
    opts.batch_size = args.batch_size;
    opts.lr = args.lr;
    opts.on_epoch = [&](int epoch, double loss) {
        log << "epoch=" << epoch << " loss=" << fmt_double(loss) << "\n";
        std::fprintf(stderr, "epoch=%d loss=%s\n", epoch, fmt_double(loss).c_str());
    };
    TrainStats stats = train_toy(model, data, sched, args.epochs, train_rng, opts);
    if (!stats.epoch_loss.empty())
        log << "first_loss=" << fmt_double(stats.epoch_loss.front())
            << " final_loss=" << fmt_double(stats.epoch_loss.back()) << "\n";

    save_checkpoint(model, args.out_path);
    write_text(args.out_path + ".log", log.str());
    return 0;
}

int cmd_generate(const std::string& config_path, const GenOverrides& ov) {
    RunConfig config = apply_overrides(load_run_config(config_path), ov);
    std::string dir = !ov.out_dir.empty() ? ov.out_dir : resolve_output_dir(config);
    TimingScope timing{dir + "/timing.txt"};
    fs::create_directories(dir);

    MetricsReport report;
    GenerationArtifacts art = run_one(config, dir, ov.mode != "baseline", &report);

    if (ov.with_baseline && !config.references.empty()) {
        LoadedRun run = assemble_run(config);
        run.pipeline.injection_enabled = false;
        NoiseSchedule sched =
            build_schedule(config.sched_steps, config.sched_beta_min, config.sched_beta_max);
        GenerationArtifacts base = generate(run.model, run.refs, run.prompt_tokens, run.grouping,
                                            run.pipeline, sched);
        MetricsReport base_report = score_run(run, base, config.seed, "");
        for (size_t i = 0; i < report.concepts.size(); ++i) {
            if (i < base_report.concepts.size() && base_report.concepts[i].defined) {
                report.baseline_color_distance[i] = base_report.concepts[i].color_distance;
                report.baseline_patch_cosine[i] = base_report.concepts[i].patch_cosine;
            }
        }
        write_text(dir + "/metrics.json", metrics_to_json(report));
    }
    (void)art;
    return 0;
}

int cmd_sweep(const std::string& config_path, const GenOverrides& ov, const SweepArgs& sweep) {
    if (sweep.values.empty()) throw UsageError("bad_flags", "sweep needs at least one value");
    if (sweep.axis != "alpha" && sweep.axis != "weight" && sweep.axis != "blocks")
        throw UsageError("bad_flags", "sweep axis must be alpha, weight, or blocks");

    RunConfig base = apply_overrides(load_run_config(config_path), ov);
    std::string root = !sweep.out_dir.empty()
                           ? sweep.out_dir
                           : resolve_output_dir(base) + "/sweep_" + sweep.axis;
    TimingScope timing{root + "/timing.txt"};
    fs::create_directories(root);

    nlohmann::ordered_json summary = nlohmann::ordered_json::array();
    std::ostringstream table;
    for (const std::string& value : sweep.values) {
        RunConfig c = base;
        std::string label;
        if (sweep.axis == "alpha") {
            c.alpha = std::stod(value);
            label = "alpha_" + value;
        } else if (sweep.axis == "weight") {
            for (ReferenceEntry& r : c.references) r.weight = std::stod(value);
            label = "weight_" + value;
        } else {
            std::vector<int> blocks;
            std::string cur;
            for (char ch : value + "+") {
                if (ch == '+') {
                    if (!cur.empty()) blocks.push_back(std::stoi(cur));
                    cur.clear();
                } else {
                    cur.push_back(ch);
                }
            }
            c.blocks = blocks;
            label = "blocks_" + value;
        }
        std::string dir = root + "/" + label;
        MetricsReport report;
        GenerationArtifacts art = run_one(c, dir, true, &report);

        int rsa = 0, rba = 0;
        for (Stage s : art.stage_tags) (s == Stage::RSA ? rsa : rba)++;
        nlohmann::ordered_json row;
        row["value"] = value;
        row["dir"] = label;
        row["rsa_steps"] = rsa;
        row["rba_steps"] = rba;
        table << sweep.axis << "=" << value << " rsa=" << rsa << " rba=" << rba;
        for (size_t i = 0; i < report.concepts.size(); ++i) {
            const ConceptScores& s = report.concepts[i];
            if (s.defined) {
                row["concept" + std::to_string(i + 1) + "_color_distance"] = s.color_distance;
                row["concept" + std::to_string(i + 1) + "_patch_cosine"] = s.patch_cosine;
                table << " c" << i + 1 << "_color=" << fmt_double(s.color_distance)
                      << " c" << i + 1 << "_cosine=" << fmt_double(s.patch_cosine);
            } else {
                table << " c" << i + 1 << "_color=undefined c" << i + 1 << "_cosine=undefined";
            }
        }
        table << "\n";
        summary.push_back(row);
    }
    write_text(root + "/summary.txt", table.str());
    write_text(root + "/summary.json", summary.dump(2) + "\n");
    return 0;
}

int cmd_visualize(const std::string& config_path, const GenOverrides& ov, const VisualizeArgs& viz) {
    RunConfig config = apply_overrides(load_run_config(config_path), ov);
    std::string dir = !viz.out_dir.empty() ? viz.out_dir : resolve_output_dir(config) + "/viz";
    TimingScope timing{dir + "/timing.txt"};
    fs::create_directories(dir);

    LoadedRun run = assemble_run(config);
    NoiseSchedule sched = build_schedule(config.sched_steps, config.sched_beta_min, config.sched_beta_max);
    run.pipeline.keep_records = true;
    GenerationArtifacts art =
        generate(run.model, run.refs, run.prompt_tokens, run.grouping, run.pipeline, sched);

    std::vector<int> chosen = viz.steps;
    if (chosen.empty()) {
        int first_rba = -1;
        for (const StepInfo& s : art.steps)
            if (s.stage == Stage::RBA) {
                first_rba = s.index;
                break;
            }
        if (first_rba >= 0) chosen.push_back(first_rba);
        chosen.push_back(static_cast<int>(art.steps.size()) - 1);
    }

    // Reference K/V recomputed with the reference-path stream (fork tag 1).
    KVCache cache;
    std::vector<int> timesteps = sample_timesteps(sched, run.pipeline.steps);
    if (!run.refs.empty()) {
        Rng ref_rng = Rng(run.pipeline.seed).fork(1);
        cache = extract_reference_kv(run.model, run.refs, sched, timesteps,
                                     run.pipeline.hooked_layers, ref_rng);
    }

    std::ostringstream index;
    for (int k : chosen) {
        if (k < 0 || k >= static_cast<int>(art.steps.size()))
            throw UsageError("bad_flags", "step index outside the sampled range");
        const StepInfo& step = art.steps[static_cast<size_t>(k)];
        const AttnRecord& rec = art.records[static_cast<size_t>(k)];
        for (int layer : run.pipeline.hooked_layers) {
            const AttnLayerRecord& lr = rec.layers.at(layer);
            char base[96];
            std::snprintf(base, sizeof(base), "step%02d_layer%d", k, layer);

            for (int tok = 0; tok < lr.cross_map.dim(1); ++tok) {
                Tensor plane({lr.h, lr.w});
                for (int i = 0; i < lr.h * lr.w; ++i) plane.data[static_cast<size_t>(i)] = lr.cross_map(i, tok);
                std::string name = std::string(base) + "_token" + std::to_string(tok) + "_cross.png";
                write_png(upscale_nearest(render_heatmap(plane), 16), dir + "/" + name);
                index << name << "\n";
            }
            if (!run.refs.empty()) {
                std::vector<Tensor> ref_keys;
                std::vector<int> key_counts;
                for (size_t ci = 0; ci < run.refs.size(); ++ci) {
                    const KVEntry& e = cache.at(layer, step.t, static_cast<int>(ci));
                    ref_keys.push_back(e.k);
                    key_counts.push_back(e.k.dim(0));
                }
                auto corr = correspondence_map(lr.q, ref_keys);
                std::string name = std::string(base) + "_correspondence";
                write_png(upscale_nearest(render_correspondence(corr, lr.h, lr.w, key_counts), 16),
                          dir + "/" + name + ".png");
                std::ostringstream txt;
                for (size_t i = 0; i < corr.size(); ++i)
                    txt << i << " concept=" << corr[i].concept_index + 1
                        << " position=" << corr[i].key_position << "\n";
                write_text(dir + "/" + name + ".txt", txt.str());
                index << name << ".png\n";
            }
        }
        if (step.has_semantic_map) {
            char name[64];
            std::snprintf(name, sizeof(name), "step%02d_semantic.png", k);
            write_png(upscale_nearest(render_semantic_map(step.semantic_map), 16), dir + "/" + name);
            index << name << "\n";
        }
    }
    write_text(dir + "/index.txt", index.str());
    return 0;
}

int cmd_metrics(const std::string& config_path, const MetricsArgs& args) {
    RunConfig config = load_run_config(config_path);
    LoadedRun run = assemble_run(config);
    Tensor image = latent_from_image(read_ppm(args.image_path));
    SemanticMap map = decode_semantic_map(read_ppm(args.map_path));

    MetricsReport report;
    report.seed = config.seed;
    report.config_echo = run_config_to_json(config);
    for (size_t i = 0; i < run.refs.size(); ++i)
        report.concepts.push_back(concept_fidelity(image, map, static_cast<int>(i) + 1, run.refs[i]));
    report.baseline_color_distance.resize(report.concepts.size());
    report.baseline_patch_cosine.resize(report.concepts.size());

    std::string out = metrics_to_json(report);
    if (args.out_path.empty()) {
        std::fputs(out.c_str(), stdout);
    } else {
        write_text(args.out_path, out);
    }
    return 0;
}

} // namespace refblend::cli
