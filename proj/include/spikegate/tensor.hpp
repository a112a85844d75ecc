#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikegate {

// Error taxonomy used across the toolkit. ConfigError maps to exit code 3 in
// the CLI, everything else to exit code 1.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ShapeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Dense row-major tensor of doubles. Rank is dynamic; most of the toolkit
/// works with rank-3 [C][H][W] feature maps and rank-1 vectors.
class Tensor {
  public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
        std::size_t n = 1;
        for (int d : shape_) {
            if (d <= 0) throw ShapeError("Tensor: non-positive dimension");
            n *= static_cast<std::size_t>(d);
        }
        v_.assign(n, fill);
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    int rank() const { return static_cast<int>(shape_.size()); }
    const std::vector<int>& shape() const { return shape_; }
    int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
    std::size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    double* data() { return v_.data(); }
    const double* data() const { return v_.data(); }

    double& operator[](std::size_t i) { return v_[i]; }
    double operator[](std::size_t i) const { return v_[i]; }

    // Rank-3 accessors, the hot path for feature maps.
    double& at(int c, int h, int w) {
        assert(rank() == 3);
        return v_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }
    double at(int c, int h, int w) const {
        assert(rank() == 3);
        return v_[(static_cast<std::size_t>(c) * shape_[1] + h) * shape_[2] + w];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    Tensor& operator+=(const Tensor& o) {
        require_same(o);
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
        return *this;
    }
    Tensor& operator-=(const Tensor& o) {
        require_same(o);
        for (std::size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
        return *this;
    }
    Tensor& scale(double s) {
        for (double& x : v_) x *= s;
        return *this;
    }
    void fill(double x) { std::fill(v_.begin(), v_.end(), x); }

    double sum() const { return std::accumulate(v_.begin(), v_.end(), 0.0); }
    double max_abs() const {
        double m = 0.0;
        for (double x : v_) m = std::max(m, std::fabs(x));
        return m;
    }
    bool all_finite() const {
        for (double x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) {
            if (i) s += "x";
            s += std::to_string(shape_[i]);
        }
        return s + "]";
    }

  private:
    void require_same(const Tensor& o) const {
        if (!same_shape(o))
            throw ShapeError("Tensor op: shape mismatch " + shape_str() + " vs " + o.shape_str());
    }

    std::vector<double> v_;
    std::vector<int> shape_;
};

inline Tensor operator+(Tensor a, const Tensor& b) { return a += b; }
inline Tensor operator-(Tensor a, const Tensor& b) { return a -= b; }

/// Euclidean norm over all entries.
inline double l2_norm(const Tensor& t) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) s += t[i] * t[i];
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Deterministic RNG. One root seed is split per consumer so that adding a new
// consumer never perturbs the streams of existing ones.
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
  public:
    explicit Rng(std::uint64_t seed = 0) : state_(seed) {
        // burn-in so that nearby seeds decorrelate
        (void)splitmix64(state_);
        (void)splitmix64(state_);
    }

    /// Derive an independent child stream; `tag` identifies the consumer.
    Rng split(std::uint64_t tag) const {
        std::uint64_t s = state_ ^ (0x9e3779b97f4a7c15ULL * (tag + 1));
        return Rng(s);
    }

    std::uint64_t next_u64() { return splitmix64(state_); }

    /// Uniform in [0, 1).
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Integer in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    /// Standard normal via Box-Muller (no cached spare, call order stable).
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }
    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::uint64_t state_ = 0;
};

/// Fill with N(0, stddev^2).
inline void fill_normal(Tensor& t, Rng& rng, double stddev) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
}

/// Fill a rank-2 [rows][cols] tensor with gamma * (semi-)orthogonal rows or
/// columns, produced by Gram-Schmidt on a Gaussian draw. For rows <= cols the
/// rows are orthonormal, otherwise the columns are.
inline void fill_orthogonal(Tensor& m, Rng& rng, double gamma) {
    if (m.rank() != 2) throw ShapeError("fill_orthogonal: rank-2 tensor expected");
    const int rows = m.dim(0), cols = m.dim(1);
    const bool tall = rows > cols;
    const int nvec = tall ? cols : rows;   // number of vectors to orthonormalize
    const int dim = tall ? rows : cols;    // their dimension
    std::vector<std::vector<double>> q(nvec, std::vector<double>(dim));
    for (auto& v : q)
        for (double& x : v) x = rng.normal();
    for (int i = 0; i < nvec; ++i) {
        for (int j = 0; j < i; ++j) {
            double d = 0.0;
            for (int k = 0; k < dim; ++k) d += q[i][k] * q[j][k];
            for (int k = 0; k < dim; ++k) q[i][k] -= d * q[j][k];
        }
        double n = 0.0;
        for (double x : q[i]) n += x * x;
        n = std::sqrt(n);
        if (n < 1e-12) throw NumericError("fill_orthogonal: degenerate draw");
        for (double& x : q[i]) x /= n;
    }
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) {
            double v = tall ? q[c][r] : q[r][c];
            m[static_cast<std::size_t>(r) * cols + c] = gamma * v;
        }
}

}  // namespace spikegate
