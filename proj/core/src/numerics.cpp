#include "refblend/numerics.hpp"

#include <algorithm>
#include <cmath>

namespace refblend {

void check_finite(const Tensor& t, const char* what) {
    for (double v : t.data) {
        if (!std::isfinite(v))
            throw NumericError("non_finite", std::string(what) + " produced a non-finite value");
    }
}

Tensor softmax(const Tensor& logits, int axis) {
    if (axis < 0 || axis >= logits.rank())
        throw UsageError("bad_axis", "softmax axis out of range for rank " + std::to_string(logits.rank()));

    // Iterate slices along `axis` via outer/inner strides.
    int64_t axis_len = logits.shape[static_cast<size_t>(axis)];
    int64_t inner = 1;
    for (int i = axis + 1; i < logits.rank(); ++i) inner *= logits.shape[static_cast<size_t>(i)];
    int64_t outer = logits.numel() / (axis_len * inner);

    Tensor out(logits.shape);
    const double* in = logits.data.data();
    double* o = out.data.data();
    for (int64_t a = 0; a < outer; ++a) {
        for (int64_t b = 0; b < inner; ++b) {
            const double* slice = in + a * axis_len * inner + b;
            double* oslice = o + a * axis_len * inner + b;
            double mx = slice[0];
            for (int64_t k = 1; k < axis_len; ++k) mx = std::max(mx, slice[k * inner]);
            double sum = 0.0;
            for (int64_t k = 0; k < axis_len; ++k) {
                double e = std::exp(slice[k * inner] - mx);
                oslice[k * inner] = e;
                sum += e;
            }
            double inv = 1.0 / sum;
            for (int64_t k = 0; k < axis_len; ++k) oslice[k * inner] *= inv;
        }
    }
    check_finite(out, "softmax");
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw UsageError("matmul_shape", "matmul expects (n,k)x(k,m), got " + a.shape_str() + " x " + b.shape_str());
    int n = a.dim(0), k = a.dim(1), m = b.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * k;
        double* orow = out.data.data() + static_cast<size_t>(i) * m;
        for (int p = 0; p < k; ++p) {
            double av = arow[p];
            const double* brow = b.data.data() + static_cast<size_t>(p) * m;
            for (int j = 0; j < m; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw UsageError("matmul_shape", "matmul_nt expects (n,k)x(m,k), got " + a.shape_str() + " x " + b.shape_str());
    int n = a.dim(0), k = a.dim(1), m = b.dim(0);
    Tensor out({n, m});
    for (int i = 0; i < n; ++i) {
        const double* arow = a.data.data() + static_cast<size_t>(i) * k;
        double* orow = out.data.data() + static_cast<size_t>(i) * m;
        for (int j = 0; j < m; ++j) {
            const double* brow = b.data.data() + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            orow[j] = acc;
        }
    }
    return out;
}

Tensor resize_bilinear(const Tensor& map, int out_h, int out_w) {
    if (map.rank() != 2) throw UsageError("resize_shape", "resize_bilinear expects a rank-2 map");
    if (out_h < 1 || out_w < 1) throw UsageError("resize_shape", "target extents must be >= 1");
    int h = map.dim(0), w = map.dim(1);
    if (h == out_h && w == out_w) return map;

    Tensor out({out_h, out_w});
    double sy = static_cast<double>(h) / out_h;
    double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double src_y = (y + 0.5) * sy - 0.5;
        src_y = std::clamp(src_y, 0.0, static_cast<double>(h - 1));
        int y0 = static_cast<int>(std::floor(src_y));
        int y1 = std::min(y0 + 1, h - 1);
        double fy = src_y - y0;
        for (int x = 0; x < out_w; ++x) {
            double src_x = (x + 0.5) * sx - 0.5;
            src_x = std::clamp(src_x, 0.0, static_cast<double>(w - 1));
            int x0 = static_cast<int>(std::floor(src_x));
            int x1 = std::min(x0 + 1, w - 1);
            double fx = src_x - x0;
            double v = (1.0 - fy) * ((1.0 - fx) * map(y0, x0) + fx * map(y0, x1)) +
                       fy * ((1.0 - fx) * map(y1, x0) + fx * map(y1, x1));
            out(y, x) = v;
        }
    }
    check_finite(out, "resize_bilinear");
    return out;
}

Tensor row_normalize(const Tensor& map) {
    if (map.rank() != 2) throw UsageError("rownorm_shape", "row_normalize expects a rank-2 map");
    int r = map.dim(0), c = map.dim(1);
    Tensor out({r, c});
    for (int i = 0; i < r; ++i) {
        double sum = 0.0;
        for (int j = 0; j < c; ++j) sum += map(i, j);
        if (sum <= 0.0)
            throw NumericError("degenerate_row", "row " + std::to_string(i) + " sums to zero");
        double inv = 1.0 / sum;
        for (int j = 0; j < c; ++j) out(i, j) = map(i, j) * inv;
    }
    check_finite(out, "row_normalize");
    return out;
}

Tensor gaussian(Rng& rng, std::vector<int> shape) {
    Tensor out(std::move(shape));
    for (double& v : out.data) v = rng.next_gaussian();
    check_finite(out, "gaussian");
    return out;
}

} // namespace refblend
