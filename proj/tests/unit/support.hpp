#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include <doctest.h>

#include "mvil/rng.hpp"
#include "mvil/tensor.hpp"

namespace mvil::test {

inline Tensor random_tensor(Shape shape, Rng& rng, double sd = 1.0, bool requires_grad = false) {
    std::vector<double> v(shape_numel(shape));
    for (auto& x : v) x = rng.normal(0.0, sd);
    return Tensor::from(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    REQUIRE(a.size() == b.size());
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape() == b.shape());
    return max_abs_diff(a.values(), b.values());
}

inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) return false;
    const auto x = a.values(), y = b.values();
    return std::equal(x.begin(), x.end(), y.begin());
}

// Naive triple loop used as an independent reference for matrix products.
inline std::vector<double> reference_matmul(std::span<const double> a, std::span<const double> b, std::size_t m,
                                            std::size_t k, std::size_t n) {
    std::vector<double> c(m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            long double acc = 0.0L;
            for (std::size_t p = 0; p < k; ++p) acc += static_cast<long double>(a[i * k + p]) * b[p * n + j];
            c[i * n + j] = static_cast<double>(acc);
        }
    return c;
}

// Scratch directory below the build tree, emptied on creation.
inline std::filesystem::path scratch_dir(const std::string& name) {
    const char* root = std::getenv("MVIL_TEST_TMP");
    std::filesystem::path dir = std::filesystem::path(root ? root : std::filesystem::temp_directory_path().string()) / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace mvil::test
