#pragma once

#include <string>
#include <vector>

#include "refblend/rng.hpp"
#include "refblend/tensor.hpp"

namespace refblend {

// Fixed toy vocabulary. Id 0 is the null token used for unconditional
// passes and as the background carrier in every prompt.
namespace vocab {

constexpr int kNull = 0;

const std::vector<std::string>& names();
int id_of(const std::string& name); // throws DataError("vocab_mismatch")
bool is_color(int id);
bool is_shape(int id);

} // namespace vocab

struct DatasetSpec {
    std::vector<std::string> shapes = {"triangle", "square", "circle"};
    std::vector<std::string> colors = {"red", "green", "blue"};
    int count = 256;
    int image_size = 32;
    int min_shapes = 1;
    int max_shapes = 3;
};

struct DatasetItem {
    Tensor image;                 // (3,S,S), values in [-1,1]
    std::vector<int> tokens;      // [null, color, shape, color, shape, ...]
    std::vector<Tensor> masks;    // one exact binary (S,S) mask per drawn shape
    std::vector<int> shape_ids;   // vocab id of each shape
    std::vector<int> color_ids;   // vocab id of each color
};

struct ShapesDataset {
    int image_size = 0;
    std::vector<DatasetItem> items;
};

// Base palette colors in [0,1]; per-instance jitter is applied on top.
std::vector<double> base_color_rgb(const std::string& color_name);

// 1..3 non-overlapping colored shapes per image on a plain background.
// Deterministic given the rng seed. Throws DataError("packing_failed")
// when shapes cannot be placed.
ShapesDataset make_shapes_dataset(const DatasetSpec& spec, Rng& rng);

// Exact analytic area of a rasterized shape kind with size parameter r
// (circumradius for triangle, half-side for square, radius for circle).
double analytic_shape_area(const std::string& kind, double r);

} // namespace refblend
