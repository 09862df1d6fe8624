#pragma once

#include <cassert>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "refblend/errors.hpp"

namespace refblend {

// Dense row-major array of doubles with an explicit shape. The universal
// value carrier: latents, Q/K/V projections, attention maps, parameters.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;

    explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), 0.0);
    }

    Tensor(std::vector<int> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw UsageError("tensor_shape", "data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int>& s) {
        int64_t n = 1;
        for (int e : s) {
            if (e <= 0) throw UsageError("tensor_shape", "extents must be positive");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }

    static Tensor full(std::vector<int> s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const {
        assert(i >= 0 && i < rank());
        return shape[static_cast<size_t>(i)];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double& operator()(int i) {
        assert(rank() == 1);
        return data[static_cast<size_t>(i)];
    }
    double operator()(int i) const {
        assert(rank() == 1);
        return data[static_cast<size_t>(i)];
    }
    double& operator()(int i, int j) {
        assert(rank() == 2);
        return data[static_cast<size_t>(i) * shape[1] + j];
    }
    double operator()(int i, int j) const {
        assert(rank() == 2);
        return data[static_cast<size_t>(i) * shape[1] + j];
    }
    double& operator()(int c, int y, int x) {
        assert(rank() == 3);
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double operator()(int c, int y, int x) const {
        assert(rank() == 3);
        return data[(static_cast<size_t>(c) * shape[1] + y) * shape[2] + x];
    }
    double& operator()(int a, int b, int c, int d) {
        assert(rank() == 4);
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }
    double operator()(int a, int b, int c, int d) const {
        assert(rank() == 4);
        return data[((static_cast<size_t>(a) * shape[1] + b) * shape[2] + c) * shape[3] + d];
    }

    // Same data, new shape. Element count must match.
    Tensor reshaped(std::vector<int> s) const {
        if (numel_of(s) != numel()) throw UsageError("tensor_reshape", "element count mismatch");
        return Tensor(std::move(s), data);
    }

    std::string shape_str() const {
        std::string out = "(";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(shape[i]);
        }
        return out + ")";
    }
};

} // namespace refblend
