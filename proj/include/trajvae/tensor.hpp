#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace trajvae {

struct TensorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Dense row-major array of doubles with an explicit shape.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<int> shp, std::vector<double> d) : shape(std::move(shp)), data(std::move(d)) {
        if (static_cast<std::size_t>(shape_size(shape)) != data.size())
            throw TensorError("tensor shape/data size mismatch");
    }

    static long shape_size(const std::vector<int>& shp) {
        long n = 1;
        for (int s : shp) {
            if (s < 0) throw TensorError("negative dimension");
            n *= s;
        }
        return n;
    }

    static Tensor zeros(std::vector<int> shp) {
        long n = shape_size(shp);
        return Tensor(std::move(shp), std::vector<double>(static_cast<std::size_t>(n), 0.0));
    }
    static Tensor full(std::vector<int> shp, double v) {
        long n = shape_size(shp);
        return Tensor(std::move(shp), std::vector<double>(static_cast<std::size_t>(n), v));
    }
    static Tensor scalar(double v) { return Tensor({1}, {v}); }
    static Tensor vec(std::vector<double> d) {
        int n = static_cast<int>(d.size());
        return Tensor({n}, std::move(d));
    }

    int size() const { return static_cast<int>(data.size()); }
    int rows() const { return shape.empty() ? 0 : shape[0]; }
    int cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    double& operator[](int i) { return data[static_cast<std::size_t>(i)]; }
    double operator[](int i) const { return data[static_cast<std::size_t>(i)]; }
    double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols() + c]; }
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    void fill(double v) { std::fill(data.begin(), data.end(), v); }
};

}  // namespace trajvae
