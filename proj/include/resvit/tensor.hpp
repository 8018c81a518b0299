#pragma once

#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace resvit {

using i64 = std::int64_t;

// Error hierarchy mirrored by CLI exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct DataError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericError : Error {
    using Error::Error;
};

std::string shape_str(const std::vector<i64>& s);

// Dense row-major tensor of doubles. All layers compute in float64 so the
// finite-difference gradient checks and bit-stable training contracts hold
// without a mixed-precision story.
struct Tensor {
    std::vector<i64> shape;
    std::vector<double> v;

    Tensor() = default;
    explicit Tensor(std::vector<i64> s) : shape(std::move(s)), v(count(shape), 0.0) {}
    Tensor(std::vector<i64> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
        if (static_cast<i64>(v.size()) != count(shape))
            throw ShapeError("tensor data size does not match shape " + shape_str(shape));
    }

    static i64 count(const std::vector<i64>& s) {
        i64 n = 1;
        for (i64 d : s) {
            if (d < 0) throw ShapeError("negative dimension in shape " + shape_str(s));
            n *= d;
        }
        return n;
    }

    static Tensor zeros(std::vector<i64> s) { return Tensor(std::move(s)); }
    static Tensor full(std::vector<i64> s, double value) {
        Tensor t(std::move(s));
        std::fill(t.v.begin(), t.v.end(), value);
        return t;
    }
    static Tensor scalar(double value) { return Tensor({1}, {value}); }

    i64 numel() const { return static_cast<i64>(v.size()); }
    int ndim() const { return static_cast<int>(shape.size()); }
    i64 dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
    double* data() { return v.data(); }
    const double* data() const { return v.data(); }
    double& operator[](i64 i) { return v[static_cast<std::size_t>(i)]; }
    double operator[](i64 i) const { return v[static_cast<std::size_t>(i)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    double item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
        return v[0];
    }

    Tensor reshaped(std::vector<i64> s) const {
        if (count(s) != numel())
            throw ShapeError("cannot reshape " + shape_str(shape) + " to " + shape_str(s));
        Tensor t;
        t.shape = std::move(s);
        t.v = v;
        return t;
    }

    void fill(double value) { std::fill(v.begin(), v.end(), value); }
};

inline i64 id3(i64 a, i64 b, i64 c, i64 B, i64 C) { return (a * B + b) * C + c; }
inline i64 id4(i64 a, i64 b, i64 c, i64 d, i64 B, i64 C, i64 D) {
    return ((a * B + b) * C + c) * D + d;
}

bool all_finite(const Tensor& t);

// Runs fn(lo, hi) over a static partition of [0, n). Every output index is
// written by exactly one chunk with a sequential inner loop, so results do not
// depend on the worker count.
void parallel_for(i64 n, const std::function<void(i64, i64)>& fn);

// Worker count: RESVIT_THREADS env var if set, else hardware concurrency.
int thread_count();

}  // namespace resvit
