#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spikegate/conv.hpp"
#include "spikegate/param.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

enum class AttnDim { TA, CA, SA };
enum class AttnLocation { ConvPRE, ConvPOST, ActivatePRE };

inline const char* to_string(AttnDim d) {
    switch (d) {
        case AttnDim::TA: return "TA";
        case AttnDim::CA: return "CA";
        case AttnDim::SA: return "SA";
    }
    return "?";
}
inline const char* to_string(AttnLocation l) {
    switch (l) {
        case AttnLocation::ConvPRE: return "Conv-PRE";
        case AttnLocation::ConvPOST: return "Conv-POST";
        case AttnLocation::ActivatePRE: return "Activate-PRE";
    }
    return "?";
}

/// Wiring descriptor for one attention dimension. Temporal attention cannot
/// act on the membrane potential: once spatio-temporal information is
/// integrated the past steps cannot be recalibrated.
struct AttentionPlacement {
    AttnDim dim;
    AttnLocation loc;
};

inline AttentionPlacement place_attention(AttnDim dim, AttnLocation loc) {
    if (dim == AttnDim::TA && loc == AttnLocation::ActivatePRE)
        throw ConfigError("attention: TA location cannot be Activate-PRE");
    return {dim, loc};
}

struct AttentionConfig {
    bool ta = false;
    bool ca = false;
    bool sa = false;
    int r_t = 2;
    int r_c = 4;
    int sa_kernel = 7;
    AttnLocation ta_loc = AttnLocation::ConvPOST;
    AttnLocation ca_loc = AttnLocation::ActivatePRE;
    AttnLocation sa_loc = AttnLocation::ActivatePRE;
    /// Forces every gate to the exact constant 1 (ablation/identity checks).
    bool pin_identity = false;

    bool any() const { return ta || ca || sa; }

    void validate() const {
        if (sa_kernel < 1 || sa_kernel % 2 == 0)
            throw ConfigError("attention: sa_kernel must be odd");
        if (r_t < 1 || r_c < 1) throw ConfigError("attention: reduction factors must be >= 1");
        if (ta) place_attention(AttnDim::TA, ta_loc);
    }
};

/// Largest divisor of `dim` that does not exceed the requested reduction
/// factor; keeps D/r integral without failing on awkward widths.
inline int effective_reduction(int requested, int dim) {
    int best = 1;
    for (int r = 1; r <= std::min(requested, dim); ++r)
        if (dim % r == 0) best = r;
    return best;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

namespace detail {

// Shared two-layer bottleneck used by TA and CA: sigma(W1 relu(W0 a) + W1 relu(W0 m)).
struct GateMlp {
    Tensor w0, w1, gw0, gw1;  // w0: [D/r][D], w1: [D][D/r]

    void init(int d, int r, Rng& rng) {
        int dr = d / r;
        w0 = Tensor({dr, d});
        w1 = Tensor({d, dr});
        fill_normal(w0, rng, std::sqrt(2.0 / d));
        fill_normal(w1, rng, std::sqrt(2.0 / dr));
        gw0 = Tensor::zeros_like(w0);
        gw1 = Tensor::zeros_like(w1);
    }
    void init_orthogonal(Rng& rng, double gamma0, double gamma1) {
        fill_orthogonal(w0, rng, gamma0);
        fill_orthogonal(w1, rng, gamma1);
    }

    std::vector<double> path(const std::vector<double>& in, std::vector<double>& hidden) const {
        const int dr = w0.dim(0), d = w0.dim(1);
        hidden.assign(static_cast<std::size_t>(dr), 0.0);
        for (int i = 0; i < dr; ++i) {
            double acc = 0.0;
            const double* row = w0.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) acc += row[j] * in[static_cast<std::size_t>(j)];
            hidden[static_cast<std::size_t>(i)] = std::max(0.0, acc);
        }
        std::vector<double> out(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < d; ++i) {
            double acc = 0.0;
            const double* row = w1.data() + static_cast<std::size_t>(i) * dr;
            for (int j = 0; j < dr; ++j) acc += row[j] * hidden[static_cast<std::size_t>(j)];
            out[static_cast<std::size_t>(i)] = acc;
        }
        return out;
    }

    // dz -> d(in); weight grads accumulate. `hidden` is the cached relu output.
    std::vector<double> path_backward(const std::vector<double>& in,
                                      const std::vector<double>& hidden,
                                      const std::vector<double>& dz) {
        const int dr = w0.dim(0), d = w0.dim(1);
        std::vector<double> dh(static_cast<std::size_t>(dr), 0.0);
        for (int i = 0; i < d; ++i) {
            const double g = dz[static_cast<std::size_t>(i)];
            double* grow = gw1.data() + static_cast<std::size_t>(i) * dr;
            const double* row = w1.data() + static_cast<std::size_t>(i) * dr;
            for (int j = 0; j < dr; ++j) {
                grow[j] += g * hidden[static_cast<std::size_t>(j)];
                dh[static_cast<std::size_t>(j)] += g * row[j];
            }
        }
        std::vector<double> din(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < dr; ++i) {
            if (hidden[static_cast<std::size_t>(i)] <= 0.0) continue;  // relu gate
            const double g = dh[static_cast<std::size_t>(i)];
            double* grow = gw0.data() + static_cast<std::size_t>(i) * d;
            const double* row = w0.data() + static_cast<std::size_t>(i) * d;
            for (int j = 0; j < d; ++j) {
                grow[j] += g * in[static_cast<std::size_t>(j)];
                din[static_cast<std::size_t>(j)] += g * row[j];
            }
        }
        return din;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Temporal-wise attention: one gate value per time step, inferred from the
// whole [T] feature block (avg- and max-pooled to a scalar per step).
// ---------------------------------------------------------------------------

class TemporalGate {
  public:
    struct Cache {
        std::vector<Tensor> input;       // the gated block
        std::vector<double> avg, mx, ta;
        std::vector<std::size_t> argmax;
        std::vector<double> hidden_avg, hidden_max;
        bool pinned = false;
    };

    TemporalGate() = default;
    TemporalGate(int t_steps, int r_t, Rng& rng) : t_(t_steps) {
        mlp_.init(t_steps, effective_reduction(r_t, t_steps), rng);
    }

    int t_steps() const { return t_; }
    void init_orthogonal(Rng& rng, double g0, double g1) { mlp_.init_orthogonal(rng, g0, g1); }

    /// Gate vector only (no application).
    std::vector<double> weights(const std::vector<Tensor>& x_all) const {
        Cache c;
        return compute(x_all, c);
    }

    std::vector<Tensor> apply(const std::vector<Tensor>& x_all, Cache& cache,
                              bool pin_identity = false) const {
        if (pin_identity) {
            cache.pinned = true;
            return x_all;
        }
        cache.input = x_all;
        std::vector<double> ta = compute(x_all, cache);
        std::vector<Tensor> out;
        out.reserve(x_all.size());
        for (std::size_t t = 0; t < x_all.size(); ++t) {
            Tensor y = x_all[t];
            y.scale(ta[t]);
            out.push_back(std::move(y));
        }
        return out;
    }

    std::vector<Tensor> backward(const std::vector<Tensor>& dout, const Cache& cache) {
        if (cache.pinned) return dout;
        const std::size_t t_steps = dout.size();
        std::vector<Tensor> dx;
        dx.reserve(t_steps);
        std::vector<double> dta(t_steps, 0.0);
        for (std::size_t t = 0; t < t_steps; ++t) {
            Tensor d = dout[t];
            double acc = 0.0;
            for (std::size_t i = 0; i < d.size(); ++i) acc += d[i] * cache.input[t][i];
            dta[t] = acc;
            d.scale(cache.ta[t]);
            dx.push_back(std::move(d));
        }
        std::vector<double> dz(t_steps);
        for (std::size_t t = 0; t < t_steps; ++t)
            dz[t] = dta[t] * cache.ta[t] * (1.0 - cache.ta[t]);
        std::vector<double> davg = mlp_.path_backward(cache.avg, cache.hidden_avg, dz);
        std::vector<double> dmax = mlp_.path_backward(cache.mx, cache.hidden_max, dz);
        for (std::size_t t = 0; t < t_steps; ++t) {
            const double spread = davg[t] / static_cast<double>(cache.input[t].size());
            for (std::size_t i = 0; i < dx[t].size(); ++i) dx[t][i] += spread;
            dx[t][cache.argmax[t]] += dmax[t];
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".w0", &mlp_.w0, &mlp_.gw0, true});
        out.push_back({prefix + ".w1", &mlp_.w1, &mlp_.gw1, true});
    }

  private:
    std::vector<double> compute(const std::vector<Tensor>& x_all, Cache& c) const {
        if (static_cast<int>(x_all.size()) != t_)
            throw ShapeError("TemporalGate: block has " + std::to_string(x_all.size()) +
                             " steps, gate built for " + std::to_string(t_));
        const std::size_t n = x_all.size();
        c.avg.assign(n, 0.0);
        c.mx.assign(n, 0.0);
        c.argmax.assign(n, 0);
        for (std::size_t t = 0; t < n; ++t) {
            const Tensor& x = x_all[t];
            double s = 0.0, m = x[0];
            std::size_t am = 0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                s += x[i];
                if (x[i] > m) {
                    m = x[i];
                    am = i;
                }
            }
            c.avg[t] = s / static_cast<double>(x.size());
            c.mx[t] = m;
            c.argmax[t] = am;
        }
        std::vector<double> za = mlp_.path(c.avg, c.hidden_avg);
        std::vector<double> zm = mlp_.path(c.mx, c.hidden_max);
        c.ta.assign(n, 0.0);
        for (std::size_t t = 0; t < n; ++t) c.ta[t] = sigmoid(za[t] + zm[t]);
        return c.ta;
    }

    int t_ = 0;
    mutable detail::GateMlp mlp_;
};

// ---------------------------------------------------------------------------
// Channel-wise attention (CBAM channel gate), parameters shared across time.
// ---------------------------------------------------------------------------

class ChannelGate {
  public:
    struct Cache {
        Tensor input;
        std::vector<double> avg, mx, ca;
        std::vector<std::size_t> argmax;  // flat (h,w) index per channel
        std::vector<double> hidden_avg, hidden_max;
        bool pinned = false;
    };

    ChannelGate() = default;
    ChannelGate(int channels, int r_c, Rng& rng) : c_(channels) {
        mlp_.init(channels, effective_reduction(r_c, channels), rng);
    }

    int channels() const { return c_; }
    void init_orthogonal(Rng& rng, double g0, double g1) { mlp_.init_orthogonal(rng, g0, g1); }

    std::vector<double> weights(const Tensor& u) const {
        Cache c;
        return compute(u, c);
    }

    Tensor apply(const Tensor& u, Cache& cache, bool pin_identity = false) const {
        if (pin_identity) {
            cache.pinned = true;
            return u;
        }
        cache.input = u;
        std::vector<double> ca = compute(u, cache);
        Tensor y = u;
        const int hw = u.dim(1) * u.dim(2);
        for (int ch = 0; ch < c_; ++ch) {
            double* p = y.data() + static_cast<std::size_t>(ch) * hw;
            for (int i = 0; i < hw; ++i) p[i] *= ca[static_cast<std::size_t>(ch)];
        }
        return y;
    }

    Tensor backward(const Tensor& dout, const Cache& cache) {
        if (cache.pinned) return dout;
        const int hw = cache.input.dim(1) * cache.input.dim(2);
        Tensor dx = dout;
        std::vector<double> dca(static_cast<std::size_t>(c_), 0.0);
        for (int ch = 0; ch < c_; ++ch) {
            const double* g = dout.data() + static_cast<std::size_t>(ch) * hw;
            const double* x = cache.input.data() + static_cast<std::size_t>(ch) * hw;
            double acc = 0.0;
            for (int i = 0; i < hw; ++i) acc += g[i] * x[i];
            dca[static_cast<std::size_t>(ch)] = acc;
            double* d = dx.data() + static_cast<std::size_t>(ch) * hw;
            for (int i = 0; i < hw; ++i) d[i] *= cache.ca[static_cast<std::size_t>(ch)];
        }
        std::vector<double> dz(static_cast<std::size_t>(c_));
        for (int ch = 0; ch < c_; ++ch)
            dz[static_cast<std::size_t>(ch)] = dca[static_cast<std::size_t>(ch)] *
                                               cache.ca[static_cast<std::size_t>(ch)] *
                                               (1.0 - cache.ca[static_cast<std::size_t>(ch)]);
        std::vector<double> davg = mlp_.path_backward(cache.avg, cache.hidden_avg, dz);
        std::vector<double> dmax = mlp_.path_backward(cache.mx, cache.hidden_max, dz);
        for (int ch = 0; ch < c_; ++ch) {
            double* d = dx.data() + static_cast<std::size_t>(ch) * hw;
            const double spread = davg[static_cast<std::size_t>(ch)] / hw;
            for (int i = 0; i < hw; ++i) d[i] += spread;
            // argmax indices are flat over the whole tensor
            dx[cache.argmax[static_cast<std::size_t>(ch)]] += dmax[static_cast<std::size_t>(ch)];
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".w0", &mlp_.w0, &mlp_.gw0, true});
        out.push_back({prefix + ".w1", &mlp_.w1, &mlp_.gw1, true});
    }

  private:
    std::vector<double> compute(const Tensor& u, Cache& c) const {
        if (u.rank() != 3 || u.dim(0) != c_)
            throw ShapeError("ChannelGate: expected [" + std::to_string(c_) + "][H][W], got " +
                             u.shape_str());
        const int hw = u.dim(1) * u.dim(2);
        c.avg.assign(static_cast<std::size_t>(c_), 0.0);
        c.mx.assign(static_cast<std::size_t>(c_), 0.0);
        c.argmax.assign(static_cast<std::size_t>(c_), 0);
        for (int ch = 0; ch < c_; ++ch) {
            const double* p = u.data() + static_cast<std::size_t>(ch) * hw;
            double s = 0.0, m = p[0];
            std::size_t am = 0;
            for (int i = 0; i < hw; ++i) {
                s += p[i];
                if (p[i] > m) {
                    m = p[i];
                    am = static_cast<std::size_t>(i);
                }
            }
            c.avg[static_cast<std::size_t>(ch)] = s / hw;
            c.mx[static_cast<std::size_t>(ch)] = m;
            c.argmax[static_cast<std::size_t>(ch)] = static_cast<std::size_t>(ch) * hw + am;
        }
        std::vector<double> za = mlp_.path(c.avg, c.hidden_avg);
        std::vector<double> zm = mlp_.path(c.mx, c.hidden_max);
        c.ca.assign(static_cast<std::size_t>(c_), 0.0);
        for (int ch = 0; ch < c_; ++ch)
            c.ca[static_cast<std::size_t>(ch)] =
                sigmoid(za[static_cast<std::size_t>(ch)] + zm[static_cast<std::size_t>(ch)]);
        return c.ca;
    }

    int c_ = 0;
    mutable detail::GateMlp mlp_;
};

// ---------------------------------------------------------------------------
// Spatial-wise attention (CBAM spatial gate): a k x k convolution over the
// stacked channel-avg / channel-max maps, same padding, shared across time.
// ---------------------------------------------------------------------------

class SpatialGate {
  public:
    struct Cache {
        Tensor input;
        Tensor maps;  // [2][H][W]: avg over channels, max over channels
        Tensor sa;    // [H][W]
        std::vector<int> argmax;  // channel index per pixel
        bool pinned = false;
    };

    SpatialGate() = default;
    SpatialGate(int kernel, Rng& rng) : k_(kernel) {
        if (kernel < 1 || kernel % 2 == 0) throw ConfigError("SpatialGate: kernel must be odd");
        w_ = Tensor({2, kernel, kernel});
        gw_ = Tensor::zeros_like(w_);
        fill_normal(w_, rng, std::sqrt(2.0 / (2.0 * kernel * kernel)));
    }

    int kernel() const { return k_; }
    Tensor& weights() { return w_; }
    void init_normal(Rng& rng, double stddev) { fill_normal(w_, rng, stddev); }

    Tensor sa_map(const Tensor& u) const {
        Cache c;
        compute(u, c);
        return c.sa;
    }

    Tensor apply(const Tensor& u, Cache& cache, bool pin_identity = false) const {
        if (pin_identity) {
            cache.pinned = true;
            return u;
        }
        cache.input = u;
        compute(u, cache);
        Tensor y = u;
        const int c = u.dim(0), h = u.dim(1), w = u.dim(2);
        for (int ch = 0; ch < c; ++ch)
            for (int yy = 0; yy < h; ++yy)
                for (int xx = 0; xx < w; ++xx) y.at(ch, yy, xx) *= cache.sa.at(0, yy, xx);
        return y;
    }

    Tensor backward(const Tensor& dout, const Cache& cache) {
        if (cache.pinned) return dout;
        const int c = cache.input.dim(0), h = cache.input.dim(1), w = cache.input.dim(2);
        Tensor dx = dout;
        Tensor dsa({1, h, w});
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                double acc = 0.0;
                for (int ch = 0; ch < c; ++ch)
                    acc += dout.at(ch, yy, xx) * cache.input.at(ch, yy, xx);
                dsa.at(0, yy, xx) = acc;
                for (int ch = 0; ch < c; ++ch) dx.at(ch, yy, xx) *= cache.sa.at(0, yy, xx);
            }
        // through the sigmoid and the k x k convolution
        Tensor dz({1, h, w});
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                double s = cache.sa.at(0, yy, xx);
                dz.at(0, yy, xx) = dsa.at(0, yy, xx) * s * (1.0 - s);
            }
        Tensor dmaps({2, h, w});
        const int p = k_ / 2;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                const double g = dz.at(0, oy, ox);
                if (g == 0.0) continue;
                for (int ic = 0; ic < 2; ++ic)
                    for (int ky = 0; ky < k_; ++ky) {
                        int iy = oy + ky - p;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            int ix = ox + kx - p;
                            if (ix < 0 || ix >= w) continue;
                            gw_[(static_cast<std::size_t>(ic) * k_ + ky) * k_ + kx] +=
                                g * cache.maps.at(ic, iy, ix);
                            dmaps.at(ic, iy, ix) +=
                                g * w_[(static_cast<std::size_t>(ic) * k_ + ky) * k_ + kx];
                        }
                    }
            }
        // pooled maps back to the input
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                const double spread = dmaps.at(0, yy, xx) / c;
                for (int ch = 0; ch < c; ++ch) dx.at(ch, yy, xx) += spread;
                dx.at(cache.argmax[static_cast<std::size_t>(yy) * w + xx], yy, xx) +=
                    dmaps.at(1, yy, xx);
            }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".k", &w_, &gw_, true});
    }

  private:
    void compute(const Tensor& u, Cache& c) const {
        if (u.rank() != 3) throw ShapeError("SpatialGate: [C][H][W] expected, got " + u.shape_str());
        const int ch_n = u.dim(0), h = u.dim(1), w = u.dim(2);
        c.maps = Tensor({2, h, w});
        c.argmax.assign(static_cast<std::size_t>(h) * w, 0);
        for (int yy = 0; yy < h; ++yy)
            for (int xx = 0; xx < w; ++xx) {
                double s = 0.0, m = u.at(0, yy, xx);
                int am = 0;
                for (int ch = 0; ch < ch_n; ++ch) {
                    double v = u.at(ch, yy, xx);
                    s += v;
                    if (v > m) {
                        m = v;
                        am = ch;
                    }
                }
                c.maps.at(0, yy, xx) = s / ch_n;
                c.maps.at(1, yy, xx) = m;
                c.argmax[static_cast<std::size_t>(yy) * w + xx] = am;
            }
        c.sa = Tensor({1, h, w});
        const int p = k_ / 2;
        for (int oy = 0; oy < h; ++oy)
            for (int ox = 0; ox < w; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < 2; ++ic)
                    for (int ky = 0; ky < k_; ++ky) {
                        int iy = oy + ky - p;
                        if (iy < 0 || iy >= h) continue;
                        for (int kx = 0; kx < k_; ++kx) {
                            int ix = ox + kx - p;
                            if (ix < 0 || ix >= w) continue;
                            acc += w_[(static_cast<std::size_t>(ic) * k_ + ky) * k_ + kx] *
                                   c.maps.at(ic, iy, ix);
                        }
                    }
                c.sa.at(0, oy, ox) = sigmoid(acc);
            }
    }

    int k_ = 7;
    Tensor w_, gw_;
};

// ---------------------------------------------------------------------------
// TCSA composition over one sample's block: TA on the spatial features,
// then CA and SA on the coupled membrane potential, serially.
// ---------------------------------------------------------------------------

/// Membrane refinement with the carried states supplied explicitly:
///   X_TA   = g_t(X) (.) X
///   U_CA^t = g_c(H^{t-1} + X_TA^t) (.) (H^{t-1} + X_TA^t)
///   U^t    = g_s(U_CA^t) (.) U_CA^t
/// Disabled dimensions behave as the constant-1 gate.
inline std::vector<Tensor> apply_tcsa(const std::vector<Tensor>& x_all,
                                      const std::vector<Tensor>& h_prev,
                                      const AttentionConfig& cfg, const TemporalGate* ta,
                                      const ChannelGate* ca, const SpatialGate* sa) {
    if (x_all.size() != h_prev.size())
        throw ShapeError("apply_tcsa: feature block and state block lengths differ");
    std::vector<Tensor> x_ta;
    if (cfg.ta && ta != nullptr && !cfg.pin_identity) {
        TemporalGate::Cache c;
        x_ta = ta->apply(x_all, c);
    } else {
        x_ta = x_all;
    }
    std::vector<Tensor> u_seq;
    u_seq.reserve(x_all.size());
    for (std::size_t t = 0; t < x_all.size(); ++t) {
        Tensor pre = h_prev[t] + x_ta[t];
        if (cfg.ca && ca != nullptr && !cfg.pin_identity) {
            ChannelGate::Cache c;
            pre = ca->apply(pre, c);
        }
        if (cfg.sa && sa != nullptr && !cfg.pin_identity) {
            SpatialGate::Cache c;
            pre = sa->apply(pre, c);
        }
        u_seq.push_back(std::move(pre));
    }
    return u_seq;
}

}  // namespace spikegate
