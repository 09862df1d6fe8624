#include "refblend/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace refblend {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian; big-endian hosts are unsupported");

namespace {

constexpr char kMagic[8] = {'R', 'B', 'L', 'E', 'N', 'D', 'C', 'K'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& out, uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
void put_i32(std::ostream& out, int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

uint32_t get_u32(std::istream& in) {
    uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
int32_t get_i32(std::istream& in) {
    int32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
}

} // namespace

void save_checkpoint(const UNetModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot open checkpoint for writing: " + path);

    out.write(kMagic, 8);
    put_u32(out, kVersion);
    const UNetConfig& c = model.config;
    put_i32(out, c.image_size);
    put_i32(out, c.base_channels);
    put_i32(out, c.levels);
    put_i32(out, c.head_dim);
    put_i32(out, c.vocab_size);
    put_i32(out, c.token_embed_dim);
    put_i32(out, c.max_tokens);
    put_i32(out, c.time_embed_dim);
    put_i32(out, c.norm_groups);
    put_i32(out, c.zero_init_out ? 1 : 0);
    put_u32(out, static_cast<uint32_t>(c.attn_layers.size()));
    for (int idx : c.attn_layers) put_i32(out, idx);

    put_u32(out, static_cast<uint32_t>(model.params.size()));
    for (const auto& pr : model.params) {
        put_u32(out, static_cast<uint32_t>(pr.name.size()));
        out.write(pr.name.data(), static_cast<std::streamsize>(pr.name.size()));
        put_u32(out, static_cast<uint32_t>(pr.value.rank()));
        for (int e : pr.value.shape) put_i32(out, e);
        out.write(reinterpret_cast<const char*>(pr.value.data.data()),
                  static_cast<std::streamsize>(pr.value.data.size() * sizeof(double)));
    }
    if (!out) throw DataError("file_write", "failed writing checkpoint: " + path);
}

UNetModel load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("file_missing", "cannot open checkpoint: " + path);

    char magic[8] = {};
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0)
        throw DataError("bad_checkpoint", "not a model checkpoint: " + path);
    uint32_t version = get_u32(in);
    if (version != kVersion)
        throw DataError("bad_checkpoint", "unsupported checkpoint version " + std::to_string(version));

    UNetConfig c;
    c.image_size = get_i32(in);
    c.base_channels = get_i32(in);
    c.levels = get_i32(in);
    c.head_dim = get_i32(in);
    c.vocab_size = get_i32(in);
    c.token_embed_dim = get_i32(in);
    c.max_tokens = get_i32(in);
    c.time_embed_dim = get_i32(in);
    c.norm_groups = get_i32(in);
    c.zero_init_out = get_i32(in) != 0;
    uint32_t n_attn = get_u32(in);
    c.attn_layers.clear();
    for (uint32_t i = 0; i < n_attn; ++i) c.attn_layers.push_back(get_i32(in));
    if (!in) throw DataError("bad_checkpoint", "truncated checkpoint header: " + path);
    c.validate();

    UNetModel m;
    m.config = c;
    uint32_t n_params = get_u32(in);
    for (uint32_t i = 0; i < n_params; ++i) {
        uint32_t name_len = get_u32(in);
        if (!in || name_len > 4096) throw DataError("bad_checkpoint", "corrupt parameter name");
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        uint32_t rank = get_u32(in);
        if (!in || rank > 8) throw DataError("bad_checkpoint", "corrupt parameter rank");
        std::vector<int> shape;
        for (uint32_t r = 0; r < rank; ++r) shape.push_back(get_i32(in));
        Tensor t(shape);
        in.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(double)));
        if (!in) throw DataError("bad_checkpoint", "truncated parameter payload: " + name);
        m.index[name] = static_cast<int>(m.params.size());
        m.params.push_back(Param{name, std::move(t)});
    }

    // The stored inventory must match what the config implies.
    Rng probe(0);
    UNetModel expect = build_unet(c, probe);
    if (expect.params.size() != m.params.size())
        throw DataError("bad_checkpoint", "parameter inventory does not match config");
    for (size_t i = 0; i < expect.params.size(); ++i) {
        if (expect.params[i].name != m.params[i].name ||
            expect.params[i].value.shape != m.params[i].value.shape)
            throw DataError("bad_checkpoint", "parameter mismatch at " + expect.params[i].name);
    }
    return m;
}

} // namespace refblend
