#include "refblend/run_config.hpp"

#include <cstdlib>
#include <fstream>

#include <json.hpp>

#include "refblend/checkpoint.hpp"
#include "refblend/dataset.hpp"
#include "refblend/image_io.hpp"

namespace refblend {

using nlohmann::ordered_json;

std::string run_config_to_json(const RunConfig& c) {
    ordered_json j;
    j["version"] = c.version;
    j["checkpoint"] = c.checkpoint;
    j["prompt"] = c.prompt;
    j["references"] = ordered_json::array();
    for (const auto& r : c.references) {
        ordered_json e;
        e["image"] = r.image_path;
        e["mask"] = r.mask_path;
        e["tokens"] = r.tokens;
        e["weight"] = r.weight;
        j["references"].push_back(e);
    }
    if (!c.grouping.empty()) j["grouping"] = c.grouping;
    ordered_json s;
    s["steps"] = c.steps;
    s["alpha"] = c.alpha;
    s["cfg_scale"] = c.cfg_scale;
    s["blocks"] = c.blocks;
    s["seed"] = c.seed;
    s["strict_mask"] = c.strict_mask;
    s["seg_source"] = c.seg_source;
    s["inject_uncond"] = c.inject_uncond;
    s["seg_ema"] = c.seg_ema;
    s["sched_steps"] = c.sched_steps;
    s["sched_beta_min"] = c.sched_beta_min;
    s["sched_beta_max"] = c.sched_beta_max;
    j["sampler"] = s;
    if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
    return j.dump(2) + "\n";
}

void save_run_config(const RunConfig& config, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot write " + path);
    out << run_config_to_json(config);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("file_missing", "cannot open run config: " + path);
    ordered_json j;
    try {
        j = ordered_json::parse(in);
    } catch (const std::exception& e) {
        throw DataError("bad_config_file", "run config is not valid JSON: " + std::string(e.what()));
    }

    RunConfig c;
    try {
        c.version = j.at("version").get<int>();
        if (c.version != 1)
            throw DataError("bad_config_file", "unsupported run config version " + std::to_string(c.version));
        c.checkpoint = j.at("checkpoint").get<std::string>();
        c.prompt = j.at("prompt").get<std::vector<std::string>>();
        if (j.contains("references")) {
            for (const auto& e : j.at("references")) {
                ReferenceEntry r;
                r.image_path = e.at("image").get<std::string>();
                r.mask_path = e.at("mask").get<std::string>();
                r.tokens = e.at("tokens").get<std::vector<std::string>>();
                if (e.contains("weight")) r.weight = e.at("weight").get<double>();
                c.references.push_back(std::move(r));
            }
        }
        if (j.contains("grouping")) c.grouping = j.at("grouping").get<std::vector<std::vector<int>>>();
        if (j.contains("sampler")) {
            const auto& s = j.at("sampler");
            if (s.contains("steps")) c.steps = s.at("steps").get<int>();
            if (s.contains("alpha")) c.alpha = s.at("alpha").get<double>();
            if (s.contains("cfg_scale")) c.cfg_scale = s.at("cfg_scale").get<double>();
            if (s.contains("blocks")) c.blocks = s.at("blocks").get<std::vector<int>>();
            if (s.contains("seed")) c.seed = s.at("seed").get<uint64_t>();
            if (s.contains("strict_mask")) c.strict_mask = s.at("strict_mask").get<bool>();
            if (s.contains("seg_source")) c.seg_source = s.at("seg_source").get<std::string>();
            if (s.contains("inject_uncond")) c.inject_uncond = s.at("inject_uncond").get<bool>();
            if (s.contains("seg_ema")) c.seg_ema = s.at("seg_ema").get<double>();
            if (s.contains("sched_steps")) c.sched_steps = s.at("sched_steps").get<int>();
            if (s.contains("sched_beta_min")) c.sched_beta_min = s.at("sched_beta_min").get<double>();
            if (s.contains("sched_beta_max")) c.sched_beta_max = s.at("sched_beta_max").get<double>();
        }
        if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    } catch (const DataError&) {
        throw;
    } catch (const std::exception& e) {
        throw DataError("bad_config_file", "run config field error: " + std::string(e.what()));
    }
    if (c.seg_source != "refined" && c.seg_source != "raw")
        throw DataError("bad_config_file", "seg_source must be 'refined' or 'raw'");
    return c;
}

LoadedRun assemble_run(const RunConfig& config) {
    LoadedRun run;
    run.model = load_checkpoint(config.checkpoint);

    run.prompt_tokens.push_back(kNullToken);
    for (const std::string& word : config.prompt) {
        int id = vocab::id_of(word);
        if (id >= run.model.config.vocab_size)
            throw DataError("vocab_mismatch", "token '" + word + "' outside the model vocabulary");
        run.prompt_tokens.push_back(id);
    }

    int S = run.model.config.image_size;
    for (const ReferenceEntry& e : config.references) {
        ReferenceConcept ref;
        ref.image = latent_from_image(read_ppm(e.image_path));
        ref.mask = mask_from_gray(read_pgm(e.mask_path));
        ref.weight = e.weight;
        ref.tokens.push_back(kNullToken);
        for (const std::string& word : e.tokens) ref.tokens.push_back(vocab::id_of(word));
        ref.validate(S);
        run.refs.push_back(std::move(ref));
    }

    if (!config.grouping.empty()) {
        if (config.grouping.size() != config.references.size())
            throw DataError("bad_config_file", "grouping size does not match reference count");
        run.grouping.concept_tokens = config.grouping;
    } else {
        // Each concept claims the prompt positions of its own token names.
        for (const ReferenceEntry& e : config.references) {
            std::vector<int> positions;
            for (const std::string& word : e.tokens) {
                for (size_t p = 0; p < config.prompt.size(); ++p) {
                    if (config.prompt[p] == word) positions.push_back(static_cast<int>(p) + 1);
                }
            }
            if (positions.empty())
                throw DataError("vocab_mismatch",
                                "reference tokens do not occur in the prompt; provide an explicit grouping");
            run.grouping.concept_tokens.push_back(std::move(positions));
        }
    }
    run.grouping.validate(static_cast<int>(run.prompt_tokens.size()));

    run.pipeline.steps = config.steps;
    run.pipeline.alpha = config.alpha;
    run.pipeline.cfg_scale = config.cfg_scale;
    run.pipeline.hooked_layers = config.blocks;
    run.pipeline.seed = config.seed;
    run.pipeline.strict_mask = config.strict_mask;
    run.pipeline.use_refined_seg = config.seg_source == "refined";
    run.pipeline.inject_uncond = config.inject_uncond;
    run.pipeline.seg_ema = config.seg_ema;
    run.pipeline.validate(run.model);
    return run;
}

std::string resolve_output_dir(const RunConfig& config) {
    if (!config.output_dir.empty()) return config.output_dir;
    const char* root = std::getenv("REFBLEND_OUT_ROOT");
    if (root && *root) return std::string(root) + "/run";
    return "out";
}

} // namespace refblend
