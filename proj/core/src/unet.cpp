#include "refblend/unet.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "refblend/numerics.hpp"

namespace refblend {

std::vector<int> UNetConfig::default_attn_layers(int levels) {
    UNetConfig probe;
    probe.levels = levels;
    int min_level = std::max(levels == 1 ? 0 : 1, levels - 2);
    std::vector<int> out;
    for (int idx = 0; idx < probe.num_blocks(); ++idx)
        if (probe.block_level(idx) >= min_level) out.push_back(idx);
    return out;
}

int UNetConfig::block_level(int idx) const {
    if (idx < 0 || idx >= num_blocks())
        throw UsageError("bad_block", "block index out of range");
    if (idx < levels) return idx;
    if (idx == levels) return levels - 1;
    return 2 * levels - idx;
}

int UNetConfig::block_channels(int idx) const { return channels_at_level(block_level(idx)); }

bool UNetConfig::has_attention(int idx) const {
    return std::find(attn_layers.begin(), attn_layers.end(), idx) != attn_layers.end();
}

void UNetConfig::validate() const {
    if (levels < 1) throw UsageError("bad_config", "levels must be >= 1");
    if (image_size < 2 || image_size % (1 << (levels - 1)) != 0)
        throw UsageError("bad_config", "image size must be divisible by 2^(levels-1)");
    if ((image_size >> (levels - 1)) < 2)
        throw UsageError("bad_config", "coarsest resolution must be >= 2");
    if (base_channels < 1) throw UsageError("bad_config", "base_channels must be >= 1");
    if (head_dim < 1) throw UsageError("bad_config", "head_dim must be >= 1");
    if (vocab_size < 1 || token_embed_dim < 1 || max_tokens < 1)
        throw UsageError("bad_config", "vocabulary fields must be positive");
    if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
        throw UsageError("bad_config", "time_embed_dim must be even and >= 2");
    if (norm_groups < 1 || base_channels % norm_groups != 0 ||
        channels_at_level(levels - 1) % norm_groups != 0)
        throw UsageError("bad_config", "norm_groups must divide channel counts");
    std::set<int> seen;
    for (int idx : attn_layers) {
        if (idx < 0 || idx >= num_blocks())
            throw UsageError("bad_config", "attention layer index out of range");
        if (!seen.insert(idx).second)
            throw UsageError("bad_config", "attention layer indices must be unique");
    }
}

const Tensor& UNetModel::p(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw UsageError("bad_param", "unknown parameter " + name);
    return params[static_cast<size_t>(it->second)].value;
}

Tensor& UNetModel::p(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw UsageError("bad_param", "unknown parameter " + name);
    return params[static_cast<size_t>(it->second)].value;
}

int64_t UNetModel::parameter_count() const {
    int64_t n = 0;
    for (const auto& pr : params) n += pr.value.numel();
    return n;
}

bool AttnOverride::applies_to(int layer) const {
    return std::find(layers.begin(), layers.end(), layer) != layers.end();
}

namespace {

// std > 0: gaussian * std; std == 0: zeros; std < 0: ones.
struct PSpec {
    std::string name;
    std::vector<int> shape;
    double std;
};

template <class F>
void for_each_param_spec(const UNetConfig& c, F&& f) {
    auto fanin = [](int n) { return 1.0 / std::sqrt(static_cast<double>(n)); };
    int Et = c.time_embed_dim, E = c.token_embed_dim, d = c.head_dim;
    double zi = c.zero_init_out ? 0.0 : -2.0; // -2 sentinel: use fan-in at consumer site

    f(PSpec{"token_table", {c.vocab_size, E}, 0.5});
    f(PSpec{"time_mlp.w1", {Et, Et}, fanin(Et)});
    f(PSpec{"time_mlp.b1", {Et}, 0.0});
    f(PSpec{"time_mlp.w2", {Et, Et}, fanin(Et)});
    f(PSpec{"time_mlp.b2", {Et}, 0.0});
    f(PSpec{"in_conv.w", {c.base_channels, 3, 3, 3}, fanin(27)});
    f(PSpec{"in_conv.b", {c.base_channels}, 0.0});

    for (int idx = 0; idx < c.num_blocks(); ++idx) {
        int ch = c.block_channels(idx);
        std::string pre = "block" + std::to_string(idx) + ".";
        f(PSpec{pre + "res.gn1.g", {ch}, -1.0});
        f(PSpec{pre + "res.gn1.b", {ch}, 0.0});
        f(PSpec{pre + "res.conv1.w", {ch, ch, 3, 3}, fanin(9 * ch)});
        f(PSpec{pre + "res.conv1.b", {ch}, 0.0});
        f(PSpec{pre + "res.tproj.w", {Et, ch}, fanin(Et)});
        f(PSpec{pre + "res.tproj.b", {ch}, 0.0});
        f(PSpec{pre + "res.gn2.g", {ch}, -1.0});
        f(PSpec{pre + "res.gn2.b", {ch}, 0.0});
        f(PSpec{pre + "res.conv2.w", {ch, ch, 3, 3}, zi == 0.0 ? 0.0 : fanin(9 * ch)});
        f(PSpec{pre + "res.conv2.b", {ch}, 0.0});
        if (c.has_attention(idx)) {
            f(PSpec{pre + "attn.gn.g", {ch}, -1.0});
            f(PSpec{pre + "attn.gn.b", {ch}, 0.0});
            f(PSpec{pre + "attn.wq", {ch, d}, fanin(ch)});
            f(PSpec{pre + "attn.wk", {ch, d}, fanin(ch)});
            f(PSpec{pre + "attn.wv", {ch, d}, fanin(ch)});
            f(PSpec{pre + "attn.wo", {d, ch}, zi == 0.0 ? 0.0 : fanin(d)});
            f(PSpec{pre + "attn.wo_b", {ch}, 0.0});
            f(PSpec{pre + "xattn.gn.g", {ch}, -1.0});
            f(PSpec{pre + "xattn.gn.b", {ch}, 0.0});
            f(PSpec{pre + "xattn.wq", {ch, d}, fanin(ch)});
            f(PSpec{pre + "xattn.wk", {E, d}, fanin(E)});
            f(PSpec{pre + "xattn.wv", {E, d}, fanin(E)});
            f(PSpec{pre + "xattn.wo", {d, ch}, zi == 0.0 ? 0.0 : fanin(d)});
            f(PSpec{pre + "xattn.wo_b", {ch}, 0.0});
        }
    }
    for (int v = 0; v + 1 < c.levels; ++v) {
        f(PSpec{"down" + std::to_string(v) + ".w",
                {c.channels_at_level(v + 1), c.channels_at_level(v)}, fanin(c.channels_at_level(v))});
        f(PSpec{"down" + std::to_string(v) + ".b", {c.channels_at_level(v + 1)}, 0.0});
    }
    for (int v = c.levels - 2; v >= 0; --v) {
        f(PSpec{"up" + std::to_string(v) + ".w",
                {c.channels_at_level(v), c.channels_at_level(v + 1)}, fanin(c.channels_at_level(v + 1))});
        f(PSpec{"up" + std::to_string(v) + ".b", {c.channels_at_level(v)}, 0.0});
    }
    f(PSpec{"out.gn.g", {c.base_channels}, -1.0});
    f(PSpec{"out.gn.b", {c.base_channels}, 0.0});
    f(PSpec{"out_conv.w", {3, c.base_channels, 3, 3}, zi == 0.0 ? 0.0 : fanin(9 * c.base_channels)});
    f(PSpec{"out_conv.b", {3}, 0.0});
}

Tensor sinusoidal_embedding(int t, int dim) {
    Tensor emb({1, dim});
    int half = dim / 2;
    double logb = std::log(10000.0) / (half > 1 ? half - 1 : 1);
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-logb * i);
        double angle = static_cast<double>(t) * freq;
        emb(0, i) = std::cos(angle);
        emb(0, half + i) = std::sin(angle);
    }
    return emb;
}

ag::Val forward_impl(const UNetModel& m, ag::Tape* tape, const Tensor& z_t, int t,
                     const std::vector<int>& tokens, const AttnOverride* hook,
                     AttnRecord* record, std::vector<int>* param_nodes) {
    const UNetConfig& c = m.config;
    if (z_t.rank() != 3 || z_t.dim(0) != 3 || z_t.dim(1) != c.image_size || z_t.dim(2) != c.image_size)
        throw UsageError("shape_mismatch", "denoise expects a (3," + std::to_string(c.image_size) +
                                               "," + std::to_string(c.image_size) + ") latent");
    if (tokens.empty()) throw UsageError("token_overflow", "token sequence must be nonempty");
    if (static_cast<int>(tokens.size()) > c.max_tokens)
        throw UsageError("token_overflow", "token sequence exceeds max_tokens");
    if (hook && tape) throw UsageError("hook_in_training", "attention overrides are inference-only");

    // Wrap every parameter once, in canonical order.
    std::vector<ag::Val> pv;
    pv.reserve(m.params.size());
    for (const auto& pr : m.params) pv.push_back(ag::leaf(tape, pr.value));
    if (param_nodes) {
        param_nodes->clear();
        for (const auto& v : pv) param_nodes->push_back(v.node);
    }
    auto P = [&](const std::string& name) -> const ag::Val& {
        auto it = m.index.find(name);
        if (it == m.index.end()) throw UsageError("bad_param", "unknown parameter " + name);
        return pv[static_cast<size_t>(it->second)];
    };

    double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(c.head_dim));

    ag::Val tok_e = ag::embed_rows(tape, P("token_table"), tokens); // (K, E)
    ag::Val t_hidden = ag::linear_bias(tape, ag::constant(sinusoidal_embedding(t, c.time_embed_dim)),
                                       P("time_mlp.w1"), P("time_mlp.b1"));
    t_hidden = ag::silu(tape, t_hidden);
    t_hidden = ag::linear_bias(tape, t_hidden, P("time_mlp.w2"), P("time_mlp.b2"));

    auto resblock = [&](int idx, ag::Val x) {
        std::string pre = "block" + std::to_string(idx) + ".res.";
        int ch = c.block_channels(idx);
        ag::Val h = ag::group_norm(tape, x, P(pre + "gn1.g"), P(pre + "gn1.b"), c.norm_groups);
        h = ag::silu(tape, h);
        h = ag::conv3x3(tape, h, P(pre + "conv1.w"), P(pre + "conv1.b"));
        ag::Val temb = ag::linear_bias(tape, t_hidden, P(pre + "tproj.w"), P(pre + "tproj.b"));
        h = ag::add_channel_bias(tape, h, ag::reshape(tape, temb, {ch}));
        h = ag::group_norm(tape, h, P(pre + "gn2.g"), P(pre + "gn2.b"), c.norm_groups);
        h = ag::silu(tape, h);
        h = ag::conv3x3(tape, h, P(pre + "conv2.w"), P(pre + "conv2.b"));
        return ag::add(tape, x, h);
    };

    auto attention = [&](int idx, ag::Val x) {
        std::string spre = "block" + std::to_string(idx) + ".attn.";
        std::string xpre = "block" + std::to_string(idx) + ".xattn.";
        int res = c.block_resolution(idx);

        ag::Val a = ag::group_norm(tape, x, P(spre + "gn.g"), P(spre + "gn.b"), c.norm_groups);
        ag::Val rows = ag::rows_from_chw(tape, a);
        ag::Val q = ag::linear(tape, rows, P(spre + "wq"));
        ag::Val k = ag::linear(tape, rows, P(spre + "wk"));
        ag::Val v = ag::linear(tape, rows, P(spre + "wv"));
        ag::Val smap = ag::softmax_rows(tape, ag::scale(tape, ag::matmul_nt(tape, q, k), inv_sqrt_d));

        ag::Val core;
        if (hook && hook->applies_to(idx)) {
            Tensor rep = hook->fn(idx, q.v(), k.v(), v.v());
            if (!rep.same_shape(q.v()))
                throw UsageError("shape_mismatch", "attention override returned wrong shape");
            core = ag::constant(std::move(rep));
        } else {
            core = ag::matmul(tape, smap, v);
        }
        if (record) {
            AttnLayerRecord& lr = record->layers[idx];
            lr.h = res;
            lr.w = res;
            lr.q = q.v();
            lr.k = k.v();
            lr.v = v.v();
            lr.self_map = smap.v();
            lr.self_core = core.v();
        }
        ag::Val o = ag::linear_bias(tape, core, P(spre + "wo"), P(spre + "wo_b"));
        x = ag::add(tape, x, ag::chw_from_rows(tape, o, res, res));

        ag::Val a2 = ag::group_norm(tape, x, P(xpre + "gn.g"), P(xpre + "gn.b"), c.norm_groups);
        ag::Val rows2 = ag::rows_from_chw(tape, a2);
        ag::Val qc = ag::linear(tape, rows2, P(xpre + "wq"));
        ag::Val kc = ag::linear(tape, tok_e, P(xpre + "wk"));
        ag::Val vc = ag::linear(tape, tok_e, P(xpre + "wv"));
        ag::Val cmap = ag::softmax_rows(tape, ag::scale(tape, ag::matmul_nt(tape, qc, kc), inv_sqrt_d));
        if (record) record->layers[idx].cross_map = cmap.v();
        ag::Val o2 = ag::linear_bias(tape, ag::matmul(tape, cmap, vc), P(xpre + "wo"), P(xpre + "wo_b"));
        return ag::add(tape, x, ag::chw_from_rows(tape, o2, res, res));
    };

    auto block = [&](int idx, ag::Val x) {
        x = resblock(idx, x);
        if (c.has_attention(idx)) x = attention(idx, x);
        return x;
    };

    ag::Val x = ag::conv3x3(tape, ag::constant(z_t), P("in_conv.w"), P("in_conv.b"));
    std::vector<ag::Val> skips(static_cast<size_t>(c.levels));
    for (int v = 0; v < c.levels; ++v) {
        x = block(v, x);
        skips[static_cast<size_t>(v)] = x;
        if (v + 1 < c.levels) {
            x = ag::avgpool2(tape, x);
            x = ag::conv1x1(tape, x, P("down" + std::to_string(v) + ".w"),
                            P("down" + std::to_string(v) + ".b"));
        }
    }
    x = block(c.levels, x);
    for (int v = c.levels - 1; v >= 0; --v) {
        if (v + 1 < c.levels) {
            x = ag::upsample_nearest2(tape, x);
            x = ag::conv1x1(tape, x, P("up" + std::to_string(v) + ".w"),
                            P("up" + std::to_string(v) + ".b"));
        }
        x = ag::add(tape, x, skips[static_cast<size_t>(v)]);
        x = block(2 * c.levels - v, x);
    }
    x = ag::group_norm(tape, x, P("out.gn.g"), P("out.gn.b"), c.norm_groups);
    x = ag::silu(tape, x);
    x = ag::conv3x3(tape, x, P("out_conv.w"), P("out_conv.b"));
    return x;
}

} // namespace

UNetModel build_unet(const UNetConfig& config, Rng& rng) {
    config.validate();
    UNetModel m;
    m.config = config;
    for_each_param_spec(config, [&](const PSpec& spec) {
        Tensor t(spec.shape);
        if (spec.std > 0.0) {
            for (double& v : t.data) v = rng.next_gaussian() * spec.std;
        } else if (spec.std < 0.0) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        }
        m.index[spec.name] = static_cast<int>(m.params.size());
        m.params.push_back(Param{spec.name, std::move(t)});
    });
    return m;
}

DenoiseResult denoise(const UNetModel& model, const Tensor& z_t, int t,
                      const std::vector<int>& tokens, const AttnOverride* override_hook) {
    DenoiseResult out;
    ag::Val eps = forward_impl(model, nullptr, z_t, t, tokens, override_hook, &out.record, nullptr);
    out.eps = eps.v();
    check_finite(out.eps, "denoise");
    return out;
}

ag::Val forward_train(const UNetModel& model, ag::Tape& tape, const Tensor& z_t, int t,
                      const std::vector<int>& tokens, std::vector<int>& param_nodes) {
    return forward_impl(model, &tape, z_t, t, tokens, nullptr, nullptr, &param_nodes);
}

} // namespace refblend
