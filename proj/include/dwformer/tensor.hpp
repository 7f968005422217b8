#pragma once

#include <cstdint>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dwformer/error.hpp"

namespace dwformer {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

// Dense row-major tensor of 64-bit floats. Plain value type; autodiff lives in
// Var (autodiff.hpp), which wraps Tensors into tape nodes.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        check_invariants();
    }

    explicit Tensor(Shape s) : shape(std::move(s)) {
        for (int64_t d : shape)
            if (d < 1) throw ShapeError("tensor dimension must be >= 1, got shape " + shape_str(shape));
        data.assign(static_cast<size_t>(numel(shape)), 0.0);
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }

    static Tensor full(Shape s, double v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }

    static Tensor scalar(double v) { return Tensor({1}, {v}); }

    static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng) {
        Tensor t(std::move(s));
        std::uniform_real_distribution<double> dist(lo, hi);
        for (double& v : t.data) v = dist(rng);
        return t;
    }

    int64_t size() const { return static_cast<int64_t>(data.size()); }
    int64_t rank() const { return static_cast<int64_t>(shape.size()); }
    int64_t dim(int64_t i) const { return shape[static_cast<size_t>(i >= 0 ? i : rank() + i)]; }

    double& operator[](size_t i) { return data[i]; }
    double operator[](size_t i) const { return data[i]; }

    // Row-major offset of a multi-index.
    double& at(std::initializer_list<int64_t> idx) { return data[offset(idx)]; }
    double at(std::initializer_list<int64_t> idx) const { return data[offset(idx)]; }

    void check_invariants() const {
        for (int64_t d : shape)
            if (d < 1) throw ShapeError("tensor dimension must be >= 1, got shape " + shape_str(shape));
        if (numel(shape) != size())
            throw ShapeError("tensor data length " + std::to_string(size()) +
                             " does not match shape " + shape_str(shape));
    }

private:
    size_t offset(std::initializer_list<int64_t> idx) const {
        if (static_cast<int64_t>(idx.size()) != rank())
            throw IndexError("index rank " + std::to_string(idx.size()) + " vs tensor rank " +
                             std::to_string(rank()));
        size_t off = 0;
        size_t axis = 0;
        for (int64_t i : idx) {
            if (i < 0 || i >= shape[axis])
                throw IndexError("index " + std::to_string(i) + " out of range for axis " +
                                 std::to_string(axis) + " of " + shape_str(shape));
            off = off * static_cast<size_t>(shape[axis]) + static_cast<size_t>(i);
            ++axis;
        }
        return off;
    }
};

// ---------------------------------------------------------------------------
// Raw kernels. Marked noinline so every caller in the binary shares one
// machine-code instance; with fp-contraction enabled this keeps results
// bit-identical no matter which code path invokes them.
// ---------------------------------------------------------------------------
namespace kernel {

#if defined(__GNUC__)
#define DWF_NOINLINE __attribute__((noinline))
#else
#define DWF_NOINLINE
#endif

// c[m,n] (+)= a[m,k] * b[k,n]
DWF_NOINLINE inline void gemm_nn(const double* a, const double* b, double* c, int64_t m,
                                 int64_t k, int64_t n, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < m * n; ++i) c[i] = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        double* cr = c + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ar[p];
            const double* br = b + p * n;
            for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

// c[m,n] (+)= a[m,k] * b[n,k]^T. Transposing b first keeps the hot loop on
// the contiguous gemm_nn path; the transpose is O(k*n) against O(m*k*n) work.
DWF_NOINLINE inline void gemm_nt(const double* a, const double* b, double* c, int64_t m,
                                 int64_t k, int64_t n, bool accumulate) {
    if (m > 2 && k >= 8) {
        thread_local std::vector<double> scratch;
        scratch.resize(static_cast<size_t>(k * n));
        for (int64_t j = 0; j < n; ++j)
            for (int64_t p = 0; p < k; ++p) scratch[p * n + j] = b[j * k + p];
        if (!accumulate)
            for (int64_t i = 0; i < m * n; ++i) c[i] = 0.0;
        for (int64_t i = 0; i < m; ++i) {
            const double* ar = a + i * k;
            double* cr = c + i * n;
            for (int64_t p = 0; p < k; ++p) {
                const double av = ar[p];
                const double* br = scratch.data() + p * n;
                for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
            }
        }
        return;
    }
    for (int64_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        for (int64_t j = 0; j < n; ++j) {
            const double* br = b + j * k;
            double s = 0.0;
            for (int64_t p = 0; p < k; ++p) s += ar[p] * br[p];
            double* cp = c + i * n + j;
            *cp = accumulate ? *cp + s : s;
        }
    }
}

// c[k,n] (+)= a[m,k]^T * b[m,n]
DWF_NOINLINE inline void gemm_tn(const double* a, const double* b, double* c, int64_t m,
                                 int64_t k, int64_t n, bool accumulate) {
    if (!accumulate)
        for (int64_t i = 0; i < k * n; ++i) c[i] = 0.0;
    for (int64_t i = 0; i < m; ++i) {
        const double* ar = a + i * k;
        const double* br = b + i * n;
        for (int64_t p = 0; p < k; ++p) {
            const double av = ar[p];
            double* cr = c + p * n;
            for (int64_t j = 0; j < n; ++j) cr[j] += av * br[j];
        }
    }
}

DWF_NOINLINE inline void axpy(double alpha, const double* x, double* y, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

} // namespace kernel

} // namespace dwformer
