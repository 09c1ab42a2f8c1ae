#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace lcnn {

// Dense rank-4 tensor, row-major (N, C, H, W). float for production paths,
// double for gradient-check builds.
template <typename T>
class TensorT {
public:
    TensorT() : shape_{0, 0, 0, 0} {}

    TensorT(int n, int c, int h, int w) : shape_{n, c, h, w} {
        if (n < 1 || c < 1 || h < 1 || w < 1)
            throw std::invalid_argument("tensor: all extents must be >= 1, got " +
                                        shape_string());
        data_.assign(static_cast<size_t>(n) * c * h * w, T(0));
    }

    int n() const { return shape_[0]; }
    int c() const { return shape_[1]; }
    int h() const { return shape_[2]; }
    int w() const { return shape_[3]; }
    const std::array<int, 4>& shape() const { return shape_; }

    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    size_t index(int n, int c, int h, int w) const {
        return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
    }

    T& at(int n, int c, int h, int w) { return data_[index(n, c, h, w)]; }
    const T& at(int n, int c, int h, int w) const { return data_[index(n, c, h, w)]; }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

    void fill(T v) { data_.assign(data_.size(), v); }

    std::string shape_string() const {
        return std::to_string(shape_[0]) + "x" + std::to_string(shape_[1]) + "x" +
               std::to_string(shape_[2]) + "x" + std::to_string(shape_[3]);
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_[0], shape_[1], shape_[2], shape_[3]);
        for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

private:
    std::array<int, 4> shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

// Deterministic 64-bit random stream. mt19937_64 output is fixed by the
// standard; the distributions below are hand-rolled so the sequence is
// identical across platforms and library versions.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [lo, hi], inclusive, via rejection sampling
    int uniform_int(int lo, int hi) {
        uint64_t range = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
        uint64_t limit = UINT64_MAX - UINT64_MAX % range;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return lo + static_cast<int>(v % range);
    }

    bool bernoulli(double p) { return uniform() < p; }

    // Box-Muller; u1 drawn in (0, 1] so the log is finite
    double normal(double mean = 0.0, double stddev = 1.0) {
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

    template <typename It>
    void shuffle(It first, It last) {
        auto n = static_cast<int>(last - first);
        for (int i = n - 1; i > 0; --i) std::swap(first[i], first[uniform_int(0, i)]);
    }

private:
    std::mt19937_64 eng_;
};

// splitmix64; used to derive independent per-iteration streams from one seed
inline uint64_t mix_seed(uint64_t seed, uint64_t n) {
    uint64_t z = seed + (n + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace lcnn
