#include "refblend/dataset.hpp"

#include <algorithm>
#include <cmath>

#include "refblend/errors.hpp"

namespace refblend {

namespace vocab {

const std::vector<std::string>& names() {
    static const std::vector<std::string> kNames = {"<null>",   "red",    "green", "blue",
                                                    "triangle", "square", "circle"};
    return kNames;
}

int id_of(const std::string& name) {
    const auto& n = names();
    for (size_t i = 0; i < n.size(); ++i)
        if (n[i] == name) return static_cast<int>(i);
    throw DataError("vocab_mismatch", "unknown token name '" + name + "'");
}

bool is_color(int id) { return id >= 1 && id <= 3; }
bool is_shape(int id) { return id >= 4 && id <= 6; }

} // namespace vocab

std::vector<double> base_color_rgb(const std::string& color_name) {
    if (color_name == "red") return {0.85, 0.18, 0.18};
    if (color_name == "green") return {0.18, 0.78, 0.22};
    if (color_name == "blue") return {0.20, 0.30, 0.85};
    throw DataError("vocab_mismatch", "unknown color '" + color_name + "'");
}

double analytic_shape_area(const std::string& kind, double r) {
    if (kind == "circle") return 3.14159265358979323846 * r * r;
    if (kind == "square") return 4.0 * r * r;
    if (kind == "triangle") return 3.0 * std::sqrt(3.0) / 4.0 * r * r;
    throw DataError("vocab_mismatch", "unknown shape '" + kind + "'");
}

namespace {

constexpr double kBackground = 0.82;

struct Placed {
    double cx, cy, r, bound;
};

bool inside_shape(const std::string& kind, double cx, double cy, double r, double px, double py) {
    double dx = px - cx, dy = py - cy;
    if (kind == "circle") return dx * dx + dy * dy <= r * r;
    if (kind == "square") return std::abs(dx) <= r && std::abs(dy) <= r;
    // Equilateral triangle, apex up (smaller y), circumradius r.
    double x0 = cx, y0 = cy - r;
    double x1 = cx - 0.8660254037844386 * r, y1 = cy + 0.5 * r;
    double x2 = cx + 0.8660254037844386 * r, y2 = cy + 0.5 * r;
    auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
    };
    double s0 = side(x0, y0, x1, y1), s1 = side(x1, y1, x2, y2), s2 = side(x2, y2, x0, y0);
    return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
}

double bounding_radius(const std::string& kind, double r) {
    if (kind == "square") return r * 1.4142135623730951;
    return r;
}

} // namespace

ShapesDataset make_shapes_dataset(const DatasetSpec& spec, Rng& rng) {
    if (spec.shapes.empty() || spec.colors.empty())
        throw UsageError("bad_config", "dataset needs at least one shape kind and one color");
    if (spec.count < 1 || spec.image_size < 8)
        throw UsageError("bad_config", "dataset count must be >= 1 and image size >= 8");
    if (spec.min_shapes < 1 || spec.max_shapes < spec.min_shapes)
        throw UsageError("bad_config", "invalid shape count range");
    for (const auto& s : spec.shapes)
        if (!vocab::is_shape(vocab::id_of(s))) throw DataError("vocab_mismatch", s + " is not a shape");
    for (const auto& c : spec.colors)
        if (!vocab::is_color(vocab::id_of(c))) throw DataError("vocab_mismatch", c + " is not a color");

    int S = spec.image_size;
    double r_min = std::max(3.0, S / 8.0);
    double r_max = std::max(r_min, S / 4.5);

    ShapesDataset ds;
    ds.image_size = S;
    ds.items.reserve(static_cast<size_t>(spec.count));

    for (int n = 0; n < spec.count; ++n) {
        int want = rng.next_int(spec.min_shapes, spec.max_shapes);
        // Crowded scenes draw smaller shapes so placement stays feasible.
        double r_hi = want <= 1 ? r_max : std::max(r_min, r_max * (want == 2 ? 0.75 : 0.6));

        DatasetItem item;
        bool image_done = false;
        for (int restart = 0; restart < 40 && !image_done; ++restart) {
            item = DatasetItem{};
            item.image = Tensor({3, S, S});
            for (int c = 0; c < 3; ++c)
                for (int i = 0; i < S * S; ++i)
                    item.image.data[static_cast<size_t>(c) * S * S + i] = kBackground * 2.0 - 1.0;
            item.tokens.push_back(vocab::kNull);

            std::vector<Placed> placed;
            bool all_placed = true;
            for (int si = 0; si < want && all_placed; ++si) {
                const std::string& kind = spec.shapes[static_cast<size_t>(
                    rng.next_int(0, static_cast<int>(spec.shapes.size()) - 1))];
                const std::string& color = spec.colors[static_cast<size_t>(
                    rng.next_int(0, static_cast<int>(spec.colors.size()) - 1))];
                std::vector<double> rgb = base_color_rgb(color);
                for (double& v : rgb)
                    v = std::clamp(v + (rng.next_uniform() * 2.0 - 1.0) * 0.15, 0.05, 0.98);

                bool ok = false;
                double cx = 0, cy = 0, r = 0;
                for (int attempt = 0; attempt < 200 && !ok; ++attempt) {
                    r = r_min + rng.next_uniform() * (r_hi - r_min);
                    double bound = bounding_radius(kind, r);
                    if (2.0 * bound + 2.0 >= S) continue;
                    cx = bound + 1.0 + rng.next_uniform() * (S - 2.0 * (bound + 1.0));
                    cy = bound + 1.0 + rng.next_uniform() * (S - 2.0 * (bound + 1.0));
                    ok = true;
                    for (const Placed& p : placed) {
                        double dx = cx - p.cx, dy = cy - p.cy;
                        if (std::sqrt(dx * dx + dy * dy) < bound + p.bound + 2.0) {
                            ok = false;
                            break;
                        }
                    }
                }
                if (!ok) {
                    all_placed = false;
                    break;
                }

                Tensor mask({S, S});
                int area = 0;
                for (int y = 0; y < S; ++y) {
                    for (int x = 0; x < S; ++x) {
                        if (inside_shape(kind, cx, cy, r, x + 0.5, y + 0.5)) {
                            mask(y, x) = 1.0;
                            ++area;
                            for (int c = 0; c < 3; ++c)
                                item.image(c, y, x) = rgb[static_cast<size_t>(c)] * 2.0 - 1.0;
                        }
                    }
                }
                if (area == 0) {
                    all_placed = false;
                    break;
                }

                placed.push_back(Placed{cx, cy, r, bounding_radius(kind, r)});
                item.masks.push_back(std::move(mask));
                int color_id = vocab::id_of(color), shape_id = vocab::id_of(kind);
                item.color_ids.push_back(color_id);
                item.shape_ids.push_back(shape_id);
                item.tokens.push_back(color_id);
                item.tokens.push_back(shape_id);
            }
            image_done = all_placed;
        }
        if (!image_done)
            throw DataError("packing_failed", "could not place " + std::to_string(want) +
                                                  " shapes on a " + std::to_string(S) + "px canvas");
        ds.items.push_back(std::move(item));
    }
    return ds;
}

} // namespace refblend
