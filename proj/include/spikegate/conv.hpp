#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spikegate/param.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// [B][T] block of feature maps. Layers process whole blocks so that batch
/// normalization can take its statistics across batch and time jointly.
using Block = std::vector<std::vector<Tensor>>;

inline Block make_block(int b, int t, const std::vector<int>& shape) {
    return Block(static_cast<std::size_t>(b),
                 std::vector<Tensor>(static_cast<std::size_t>(t), Tensor(shape)));
}

struct ConvSpec {
    int in_ch = 1;
    int out_ch = 1;
    int k = 3;
    int stride = 1;
    int pad = -1;  // -1: same padding (k/2)
    int pool = 1;  // average-pool window, 1 disables
    bool bn = true;

    int padding() const { return pad >= 0 ? pad : k / 2; }
    int conv_out(int in) const { return (in + 2 * padding() - k) / stride + 1; }
    int out_hw(int in) const {
        int c = conv_out(in);
        if (pool > 1 && pool > c)
            throw ShapeError("ConvSpec: pool window larger than feature map");
        return pool > 1 ? c / pool : c;
    }
};

/// Plain 2-D convolution, no bias.
class Conv2d {
  public:
    Conv2d() = default;
    Conv2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
        w_ = Tensor({spec.out_ch, spec.in_ch, spec.k, spec.k});
        gw_ = Tensor::zeros_like(w_);
        // He-style fan-in scaling
        double stddev = std::sqrt(2.0 / (spec.in_ch * spec.k * spec.k));
        fill_normal(w_, rng, stddev);
    }

    const ConvSpec& spec() const { return spec_; }
    Tensor& weights() { return w_; }
    Tensor& weight_grad() { return gw_; }

    Tensor forward(const Tensor& x) const {
        check_input(x);
        const int hi = x.dim(1), wi = x.dim(2);
        const int ho = spec_.conv_out(hi), wo = spec_.conv_out(wi);
        const int p = spec_.padding();
        Tensor y({spec_.out_ch, ho, wo});
        for (int oc = 0; oc < spec_.out_ch; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    double acc = 0.0;
                    for (int ic = 0; ic < spec_.in_ch; ++ic)
                        for (int ky = 0; ky < spec_.k; ++ky) {
                            int iy = oy * spec_.stride + ky - p;
                            if (iy < 0 || iy >= hi) continue;
                            for (int kx = 0; kx < spec_.k; ++kx) {
                                int ix = ox * spec_.stride + kx - p;
                                if (ix < 0 || ix >= wi) continue;
                                acc += kernel_at(oc, ic, ky, kx) * x.at(ic, iy, ix);
                            }
                        }
                    y.at(oc, oy, ox) = acc;
                }
        return y;
    }

    /// Accumulates weight gradients; returns gradient w.r.t. the input.
    Tensor backward(const Tensor& x, const Tensor& dy) {
        check_input(x);
        const int hi = x.dim(1), wi = x.dim(2);
        const int ho = dy.dim(1), wo = dy.dim(2);
        const int p = spec_.padding();
        Tensor dx = Tensor::zeros_like(x);
        for (int oc = 0; oc < spec_.out_ch; ++oc)
            for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox) {
                    const double g = dy.at(oc, oy, ox);
                    if (g == 0.0) continue;
                    for (int ic = 0; ic < spec_.in_ch; ++ic)
                        for (int ky = 0; ky < spec_.k; ++ky) {
                            int iy = oy * spec_.stride + ky - p;
                            if (iy < 0 || iy >= hi) continue;
                            for (int kx = 0; kx < spec_.k; ++kx) {
                                int ix = ox * spec_.stride + kx - p;
                                if (ix < 0 || ix >= wi) continue;
                                kernel_grad_at(oc, ic, ky, kx) += g * x.at(ic, iy, ix);
                                dx.at(ic, iy, ix) += g * kernel_at(oc, ic, ky, kx);
                            }
                        }
                }
        return dx;
    }

    double kernel_at(int oc, int ic, int ky, int kx) const {
        return w_[((static_cast<std::size_t>(oc) * spec_.in_ch + ic) * spec_.k + ky) * spec_.k + kx];
    }
    double& kernel_at(int oc, int ic, int ky, int kx) {
        return w_[((static_cast<std::size_t>(oc) * spec_.in_ch + ic) * spec_.k + ky) * spec_.k + kx];
    }
    double& kernel_grad_at(int oc, int ic, int ky, int kx) {
        return gw_[((static_cast<std::size_t>(oc) * spec_.in_ch + ic) * spec_.k + ky) * spec_.k + kx];
    }

  private:
    void check_input(const Tensor& x) const {
        if (x.rank() != 3 || x.dim(0) != spec_.in_ch)
            throw ShapeError("Conv2d: expected [" + std::to_string(spec_.in_ch) +
                             "][H][W], got " + x.shape_str());
    }

    ConvSpec spec_;
    Tensor w_, gw_;
};

/// Per-channel batch normalization over a [B][T] block (statistics across
/// batch, time, and space). Training uses batch statistics and updates
/// running statistics with the configured momentum; inference uses the
/// running statistics.
class BatchNorm {
  public:
    BatchNorm() = default;
    explicit BatchNorm(int channels, double gamma_init = 1.0)
        : gamma_(Tensor({channels}, gamma_init)),
          beta_(Tensor({channels}, 0.0)),
          run_mean_(Tensor({channels}, 0.0)),
          run_var_(Tensor({channels}, 1.0)),
          g_gamma_(Tensor({channels}, 0.0)),
          g_beta_(Tensor({channels}, 0.0)) {}

    double momentum = 0.9;
    static constexpr double kEps = 1e-5;

    void forward_block(Block& x, bool training) {
        const int c = gamma_.dim(0);
        mu_.assign(c, 0.0);
        inv_std_.assign(c, 0.0);
        std::size_t per_ch = 0;
        if (training) {
            std::vector<double> var(c, 0.0);
            for (auto& seq : x)
                for (Tensor& t : seq) {
                    const int hw = t.dim(1) * t.dim(2);
                    per_ch += static_cast<std::size_t>(hw);
                    for (int ch = 0; ch < c; ++ch) {
                        const double* p = t.data() + static_cast<std::size_t>(ch) * hw;
                        for (int i = 0; i < hw; ++i) mu_[ch] += p[i];
                    }
                }
            for (int ch = 0; ch < c; ++ch) mu_[ch] /= static_cast<double>(per_ch);
            for (auto& seq : x)
                for (Tensor& t : seq) {
                    const int hw = t.dim(1) * t.dim(2);
                    for (int ch = 0; ch < c; ++ch) {
                        const double* p = t.data() + static_cast<std::size_t>(ch) * hw;
                        for (int i = 0; i < hw; ++i) {
                            double d = p[i] - mu_[ch];
                            var[ch] += d * d;
                        }
                    }
                }
            for (int ch = 0; ch < c; ++ch) {
                var[ch] /= static_cast<double>(per_ch);
                inv_std_[ch] = 1.0 / std::sqrt(var[ch] + kEps);
                run_mean_[ch] = momentum * run_mean_[ch] + (1.0 - momentum) * mu_[ch];
                run_var_[ch] = momentum * run_var_[ch] + (1.0 - momentum) * var[ch];
            }
            m_ = static_cast<double>(per_ch);
        } else {
            for (int ch = 0; ch < c; ++ch) {
                mu_[ch] = run_mean_[ch];
                inv_std_[ch] = 1.0 / std::sqrt(run_var_[ch] + kEps);
            }
        }
        training_ = training;
        xhat_.clear();
        for (auto& seq : x)
            for (Tensor& t : seq) {
                const int hw = t.dim(1) * t.dim(2);
                xhat_.push_back(t);  // reused below as normalized-value cache
                for (int ch = 0; ch < c; ++ch) {
                    double* p = t.data() + static_cast<std::size_t>(ch) * hw;
                    for (int i = 0; i < hw; ++i) {
                        double xh = (p[i] - mu_[ch]) * inv_std_[ch];
                        xhat_.back()[static_cast<std::size_t>(ch) * hw + i] = xh;
                        p[i] = gamma_[ch] * xh + beta_[ch];
                    }
                }
            }
    }

    /// In-place: consumes dL/dy for the same block order as forward_block and
    /// leaves dL/dx. Training-mode statistics terms included.
    void backward_block(Block& dy) {
        const int c = gamma_.dim(0);
        if (!training_) {
            // running statistics are constants; gamma and beta still get grads
            std::size_t idx = 0;
            for (auto& seq : dy)
                for (Tensor& t : seq) {
                    const int hw = t.dim(1) * t.dim(2);
                    const Tensor& xh = xhat_[idx++];
                    for (int ch = 0; ch < c; ++ch) {
                        double* p = t.data() + static_cast<std::size_t>(ch) * hw;
                        const double* h = xh.data() + static_cast<std::size_t>(ch) * hw;
                        for (int i = 0; i < hw; ++i) {
                            g_beta_[ch] += p[i];
                            g_gamma_[ch] += p[i] * h[i];
                            p[i] *= gamma_[ch] * inv_std_[ch];
                        }
                    }
                }
            xhat_.clear();
            return;
        }
        std::vector<double> sum_dy(c, 0.0), sum_dy_xh(c, 0.0);
        std::size_t idx = 0;
        for (auto& seq : dy)
            for (Tensor& t : seq) {
                const int hw = t.dim(1) * t.dim(2);
                const Tensor& xh = xhat_[idx++];
                for (int ch = 0; ch < c; ++ch) {
                    const double* g = t.data() + static_cast<std::size_t>(ch) * hw;
                    const double* h = xh.data() + static_cast<std::size_t>(ch) * hw;
                    for (int i = 0; i < hw; ++i) {
                        sum_dy[ch] += g[i];
                        sum_dy_xh[ch] += g[i] * h[i];
                    }
                }
            }
        for (int ch = 0; ch < c; ++ch) {
            g_beta_[ch] += sum_dy[ch];
            g_gamma_[ch] += sum_dy_xh[ch];
        }
        idx = 0;
        for (auto& seq : dy)
            for (Tensor& t : seq) {
                const int hw = t.dim(1) * t.dim(2);
                const Tensor& xh = xhat_[idx++];
                for (int ch = 0; ch < c; ++ch) {
                    double* g = t.data() + static_cast<std::size_t>(ch) * hw;
                    const double* h = xh.data() + static_cast<std::size_t>(ch) * hw;
                    const double k = gamma_[ch] * inv_std_[ch];
                    for (int i = 0; i < hw; ++i)
                        g[i] = k * (g[i] - sum_dy[ch] / m_ - h[i] * sum_dy_xh[ch] / m_);
                }
            }
        xhat_.clear();
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".gamma", &gamma_, &g_gamma_, true});
        out.push_back({prefix + ".beta", &beta_, &g_beta_, true});
        out.push_back({prefix + ".run_mean", &run_mean_, nullptr, false});
        out.push_back({prefix + ".run_var", &run_var_, nullptr, false});
    }

    Tensor& gamma() { return gamma_; }
    Tensor& shift() { return beta_; }

  private:
    Tensor gamma_, beta_, run_mean_, run_var_, g_gamma_, g_beta_;
    std::vector<double> mu_, inv_std_;
    std::vector<Tensor> xhat_;
    double m_ = 1.0;
    bool training_ = false;
};

/// Non-overlapping average pooling.
inline Tensor avg_pool(const Tensor& x, int w) {
    if (w <= 1) return x;
    if (x.dim(1) < w || x.dim(2) < w) throw ShapeError("avg_pool: window larger than feature map");
    const int c = x.dim(0), ho = x.dim(1) / w, wo = x.dim(2) / w;
    Tensor y({c, ho, wo});
    const double inv = 1.0 / (w * w);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < w; ++dy)
                    for (int dx = 0; dx < w; ++dx) acc += x.at(ch, oy * w + dy, ox * w + dx);
                y.at(ch, oy, ox) = acc * inv;
            }
    return y;
}

inline Tensor avg_pool_backward(const Tensor& dy, int w, const std::vector<int>& in_shape) {
    if (w <= 1) return dy;
    Tensor dx(in_shape);
    const int c = dy.dim(0), ho = dy.dim(1), wo = dy.dim(2);
    const double inv = 1.0 / (w * w);
    for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
            for (int ox = 0; ox < wo; ++ox) {
                const double g = dy.at(ch, oy, ox) * inv;
                for (int dy2 = 0; dy2 < w; ++dy2)
                    for (int dx2 = 0; dx2 < w; ++dx2) dx.at(ch, oy * w + dy2, ox * w + dx2) += g;
            }
    return dx;
}

/// Spatial feature extractor of one layer: AvgPool(BN(Conv(W, S))).
class ConvBnPool {
  public:
    ConvBnPool() = default;
    ConvBnPool(const ConvSpec& spec, Rng& rng, double bn_gamma_init = 1.0) : conv_(spec, rng) {
        if (spec.bn) bn_.emplace(spec.out_ch, bn_gamma_init);
    }

    const ConvSpec& spec() const { return conv_.spec(); }

    Block forward_block(const Block& in, bool training) {
        cache_in_ = in;
        Block mid(in.size());
        for (std::size_t b = 0; b < in.size(); ++b) {
            mid[b].reserve(in[b].size());
            for (const Tensor& x : in[b]) mid[b].push_back(conv_.forward(x));
        }
        if (bn_) bn_->forward_block(mid, training);
        cache_conv_shape_ = mid.empty() || mid[0].empty() ? std::vector<int>{} : mid[0][0].shape();
        const int pool = conv_.spec().pool;
        if (pool > 1) {
            cache_pre_pool_valid_ = true;
            Block out(mid.size());
            for (std::size_t b = 0; b < mid.size(); ++b) {
                out[b].reserve(mid[b].size());
                for (const Tensor& x : mid[b]) out[b].push_back(avg_pool(x, pool));
            }
            return out;
        }
        return mid;
    }

    /// dL/d(out) -> dL/d(in); parameter gradients accumulate.
    Block backward_block(const Block& dout) {
        const int pool = conv_.spec().pool;
        Block dmid(dout.size());
        for (std::size_t b = 0; b < dout.size(); ++b) {
            dmid[b].reserve(dout[b].size());
            for (const Tensor& g : dout[b])
                dmid[b].push_back(pool > 1 ? avg_pool_backward(g, pool, cache_conv_shape_) : g);
        }
        if (bn_) bn_->backward_block(dmid);
        Block din(dmid.size());
        for (std::size_t b = 0; b < dmid.size(); ++b) {
            din[b].reserve(dmid[b].size());
            for (std::size_t t = 0; t < dmid[b].size(); ++t)
                din[b].push_back(conv_.backward(cache_in_[b][t], dmid[b][t]));
        }
        cache_in_.clear();
        return din;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".w", &conv_.weights(), &conv_.weight_grad(), true});
        if (bn_) bn_->collect_params(prefix + ".bn", out);
    }

    Conv2d& conv() { return conv_; }
    BatchNorm* bn() { return bn_ ? &*bn_ : nullptr; }

  private:
    Conv2d conv_;
    std::optional<BatchNorm> bn_;
    Block cache_in_;
    std::vector<int> cache_conv_shape_;
    bool cache_pre_pool_valid_ = false;
};

/// Fully connected layer on flattened inputs, no bias.
class Linear {
  public:
    Linear() = default;
    Linear(int in, int out, Rng& rng) : in_(in), out_(out) {
        w_ = Tensor({out, in});
        gw_ = Tensor::zeros_like(w_);
        fill_normal(w_, rng, std::sqrt(1.0 / in));
    }

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    Tensor forward(const Tensor& x) const {
        if (static_cast<int>(x.size()) != in_)
            throw ShapeError("Linear: expected " + std::to_string(in_) + " inputs, got " +
                             x.shape_str());
        Tensor y({out_});
        for (int o = 0; o < out_; ++o) {
            double acc = 0.0;
            const double* row = w_.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) acc += row[i] * x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(o)] = acc;
        }
        return y;
    }

    Tensor backward(const Tensor& x, const Tensor& dy) {
        Tensor dx = Tensor::zeros_like(x);
        for (int o = 0; o < out_; ++o) {
            const double g = dy[static_cast<std::size_t>(o)];
            double* grow = gw_.data() + static_cast<std::size_t>(o) * in_;
            const double* row = w_.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) {
                grow[i] += g * x[static_cast<std::size_t>(i)];
                dx[static_cast<std::size_t>(i)] += g * row[i];
            }
        }
        return dx;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        out.push_back({prefix + ".w", &w_, &gw_, true});
    }

    Tensor& weights() { return w_; }

  private:
    int in_ = 0, out_ = 0;
    Tensor w_, gw_;
};

}  // namespace spikegate
