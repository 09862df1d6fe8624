#include "refblend/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "refblend/errors.hpp"

namespace refblend {

namespace {

void skip_pnm_space(std::istream& in) {
    for (;;) {
        int c = in.peek();
        if (c == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(c)) {
            in.get();
        } else {
            return;
        }
    }
}

void read_pnm_header(std::istream& in, const char* magic, int& w, int& h, const std::string& path) {
    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (m0 != magic[0] || m1 != magic[1])
        throw DataError("bad_image", "not a " + std::string(magic) + " file: " + path);
    skip_pnm_space(in);
    in >> w;
    skip_pnm_space(in);
    in >> h;
    skip_pnm_space(in);
    int maxval = 0;
    in >> maxval;
    if (!in || w < 1 || h < 1 || maxval != 255)
        throw DataError("bad_image", "unsupported pnm header in " + path);
    in.get(); // single whitespace before payload
}

} // namespace

void write_ppm(const ImageU8& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot write " + path);
    out << "P6\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!out) throw DataError("file_write", "failed writing " + path);
}

ImageU8 read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("file_missing", "cannot open " + path);
    ImageU8 img;
    read_pnm_header(in, "P6", img.w, img.h, path);
    img.rgb.resize(static_cast<size_t>(img.w) * img.h * 3);
    in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!in) throw DataError("bad_image", "truncated pixel payload in " + path);
    return img;
}

void write_pgm(const GrayU8& img, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot write " + path);
    out << "P5\n" << img.w << " " << img.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!out) throw DataError("file_write", "failed writing " + path);
}

GrayU8 read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("file_missing", "cannot open " + path);
    GrayU8 img;
    read_pnm_header(in, "P5", img.w, img.h, path);
    img.px.resize(static_cast<size_t>(img.w) * img.h);
    in.read(reinterpret_cast<char*>(img.px.data()), static_cast<std::streamsize>(img.px.size()));
    if (!in) throw DataError("bad_image", "truncated pixel payload in " + path);
    return img;
}

namespace {

void put_be32(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v >> 24));
    out.push_back(static_cast<uint8_t>(v >> 16));
    out.push_back(static_cast<uint8_t>(v >> 8));
    out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
    put_be32(out, static_cast<uint32_t>(payload.size()));
    size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    uint32_t crc = crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start));
    put_be32(out, crc);
}

} // namespace

void write_png(const ImageU8& img, const std::string& path) {
    std::vector<uint8_t> raw;
    raw.reserve(static_cast<size_t>(img.h) * (1 + static_cast<size_t>(img.w) * 3));
    for (int y = 0; y < img.h; ++y) {
        raw.push_back(0); // filter: none
        const uint8_t* row = img.rgb.data() + static_cast<size_t>(y) * img.w * 3;
        raw.insert(raw.end(), row, row + static_cast<size_t>(img.w) * 3);
    }
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<uint8_t> compressed(bound);
    if (compress2(compressed.data(), &bound, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw NumericError("png_compress", "deflate failed for " + path);
    compressed.resize(bound);

    std::vector<uint8_t> file = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
    std::vector<uint8_t> ihdr;
    put_be32(ihdr, static_cast<uint32_t>(img.w));
    put_be32(ihdr, static_cast<uint32_t>(img.h));
    ihdr.push_back(8);  // bit depth
    ihdr.push_back(2);  // color type: truecolor
    ihdr.push_back(0);  // compression
    ihdr.push_back(0);  // filter
    ihdr.push_back(0);  // interlace
    put_chunk(file, "IHDR", ihdr);
    put_chunk(file, "IDAT", compressed);
    put_chunk(file, "IEND", {});

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("file_write", "cannot write " + path);
    out.write(reinterpret_cast<const char*>(file.data()), static_cast<std::streamsize>(file.size()));
    if (!out) throw DataError("file_write", "failed writing " + path);
}

Tensor mask_from_gray(const GrayU8& g) {
    Tensor mask({g.h, g.w});
    for (int i = 0; i < g.h * g.w; ++i)
        mask.data[static_cast<size_t>(i)] = g.px[static_cast<size_t>(i)] >= 128 ? 1.0 : 0.0;
    return mask;
}

GrayU8 gray_from_mask(const Tensor& mask) {
    if (mask.rank() != 2) throw UsageError("shape_mismatch", "mask must be rank-2");
    GrayU8 g;
    g.h = mask.dim(0);
    g.w = mask.dim(1);
    g.px.resize(static_cast<size_t>(g.w) * g.h);
    for (int i = 0; i < g.h * g.w; ++i)
        g.px[static_cast<size_t>(i)] = mask.data[static_cast<size_t>(i)] != 0.0 ? 255 : 0;
    return g;
}

ImageU8 image_from_latent(const Tensor& z) {
    if (z.rank() != 3 || z.dim(0) != 3) throw UsageError("shape_mismatch", "latent must be (3,H,W)");
    ImageU8 img;
    img.h = z.dim(1);
    img.w = z.dim(2);
    img.rgb.resize(static_cast<size_t>(img.w) * img.h * 3);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c) {
                double v = std::clamp((z(c, y, x) + 1.0) * 0.5, 0.0, 1.0);
                img.at(y, x, c) = static_cast<uint8_t>(std::lround(v * 255.0));
            }
    return img;
}

Tensor latent_from_image(const ImageU8& img) {
    Tensor z({3, img.h, img.w});
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                z(c, y, x) = static_cast<double>(img.at(y, x, c)) / 255.0 * 2.0 - 1.0;
    return z;
}

ImageU8 upscale_nearest(const ImageU8& img, int factor) {
    if (factor < 1) throw UsageError("bad_config", "upscale factor must be >= 1");
    ImageU8 out;
    out.w = img.w * factor;
    out.h = img.h * factor;
    out.rgb.resize(static_cast<size_t>(out.w) * out.h * 3);
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y / factor, x / factor, c);
    return out;
}

} // namespace refblend
