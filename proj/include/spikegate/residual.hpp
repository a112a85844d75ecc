#pragma once

#include <optional>
#include <string>
#include <vector>

#include "spikegate/attention.hpp"
#include "spikegate/conv.hpp"
#include "spikegate/lif.hpp"
#include "spikegate/network.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

enum class AttResVariant { V1, V2 };

struct ResBlockSpec {
    int channels = 8;
    int out_ch = -1;  // -1: same as channels
    int k = 3;
    int stride = 1;
    bool attention = false;  // CSA on the block output membrane
    AttResVariant variant = AttResVariant::V1;
    double zeta = 0.1;  // init scale of the final normalization
    int r_c = 4;
    int sa_kernel = 7;

    int out_channels() const { return out_ch > 0 ? out_ch : channels; }
    bool needs_projection() const { return stride != 1 || out_channels() != channels; }
};

/// Membrane-shortcut residual block:
///
///   s1 = spike(U_in)                         (threshold on the carried membrane)
///   x1 = BN1(Conv1(s1))
///   u  = H + x1                              (stateful LIF midpoint)
///   s2 = spike(u),  H' = v_reset s2 + beta u (1 - s2)
///   U_ori = BN2(Conv2(s2))                   (BN2 scale initialized to zeta)
///
/// without attention:  U_out = U_ori + U_in
/// variant 1:          U_out = g_s(g_c(U_ori) (.) U_ori) (.) ... + U_in
/// variant 2:          gates act on (U_ori + U_in), no outer addition
///
/// Downsampling blocks project the shortcut with a strided 1x1 convolution on
/// s1 so the skip path stays spike-driven.
class AttResBlock {
  public:
    AttResBlock(const ResBlockSpec& spec, const LIFParams& lif, const SurrogateParams& sg, Rng rng)
        : spec_(spec), lif_(lif), sg_(sg) {
        ConvSpec c1{spec.channels, spec.out_channels(), spec.k, spec.stride, -1, 1, true};
        ConvSpec c2{spec.out_channels(), spec.out_channels(), spec.k, 1, -1, 1, true};
        Rng r1 = rng.split(1), r2 = rng.split(2);
        conv1_ = ConvBnPool(c1, r1);
        conv2_ = ConvBnPool(c2, r2, spec.zeta);
        if (spec.needs_projection()) {
            ConvSpec cp{spec.channels, spec.out_channels(), 1, spec.stride, 0, 1, true};
            Rng rp = rng.split(3);
            proj_.emplace(cp, rp);
        }
        if (spec.attention) {
            Rng rc = rng.split(4), rs = rng.split(5);
            ca_.emplace(spec.out_channels(), spec.r_c, rc);
            sa_.emplace(spec.sa_kernel, rs);
        }
    }

    const ResBlockSpec& spec() const { return spec_; }
    ChannelGate* ca() { return ca_ ? &*ca_ : nullptr; }
    SpatialGate* sa() { return sa_ ? &*sa_ : nullptr; }
    ConvBnPool& conv1() { return conv1_; }
    ConvBnPool& conv2() { return conv2_; }

    Block forward_block(const Block& u_in, RunMode mode, bool training) {
        const std::size_t b_n = u_in.size();
        mode_ = mode;
        u_in_ = u_in;

        // entry activation
        Block s1(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            s1[b].reserve(u_in[b].size());
            for (const Tensor& u : u_in[b]) s1[b].push_back(activate(u));
        }
        s1_ = s1;

        Block x1 = conv1_.forward_block(s1, training);

        // stateful LIF midpoint
        u_mid_.assign(b_n, {});
        s2_.assign(b_n, {});
        Block s2(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            Tensor h = Tensor::zeros_like(x1[b][0]);
            s2[b].reserve(x1[b].size());
            for (std::size_t t = 0; t < x1[b].size(); ++t) {
                Tensor u = h + x1[b][t];
                Tensor spk = activate(u);
                Tensor h_new = Tensor::zeros_like(u);
                for (std::size_t i = 0; i < u.size(); ++i)
                    h_new[i] = lif_.v_reset * spk[i] + (lif_.beta * u[i]) * (1.0 - spk[i]);
                u_mid_[b].push_back(std::move(u));
                s2_[b].push_back(spk);
                s2[b].push_back(std::move(spk));
                h = h_new;
            }
        }

        Block u_ori = conv2_.forward_block(s2, training);

        Block shortcut;
        if (proj_) {
            shortcut = proj_->forward_block(s1, training);
        } else {
            shortcut = u_in;
        }

        ca_cache_.assign(b_n, {});
        sa_cache_.assign(b_n, {});
        Block out(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = u_ori[b].size();
            ca_cache_[b].resize(t_n);
            sa_cache_[b].resize(t_n);
            out[b].reserve(t_n);
            for (std::size_t t = 0; t < t_n; ++t) {
                if (!spec_.attention) {
                    out[b].push_back(u_ori[b][t] + shortcut[b][t]);
                    continue;
                }
                if (spec_.variant == AttResVariant::V1) {
                    Tensor u = ca_->apply(u_ori[b][t], ca_cache_[b][t], pin_identity);
                    u = sa_->apply(u, sa_cache_[b][t], pin_identity);
                    out[b].push_back(u + shortcut[b][t]);
                } else {
                    Tensor u = u_ori[b][t] + shortcut[b][t];
                    u = ca_->apply(u, ca_cache_[b][t], pin_identity);
                    u = sa_->apply(u, sa_cache_[b][t], pin_identity);
                    out[b].push_back(std::move(u));
                }
            }
        }
        return out;
    }

    Block backward_block(const Block& dout) {
        const std::size_t b_n = dout.size();

        // through the gates and the shortcut split
        Block du_ori(b_n), dshort(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = dout[b].size();
            du_ori[b].resize(t_n);
            dshort[b].resize(t_n);
            for (std::size_t t = 0; t < t_n; ++t) {
                if (!spec_.attention) {
                    du_ori[b][t] = dout[b][t];
                    dshort[b][t] = dout[b][t];
                } else if (spec_.variant == AttResVariant::V1) {
                    Tensor d = sa_->backward(dout[b][t], sa_cache_[b][t]);
                    d = ca_->backward(d, ca_cache_[b][t]);
                    du_ori[b][t] = d;
                    dshort[b][t] = dout[b][t];
                } else {
                    Tensor d = sa_->backward(dout[b][t], sa_cache_[b][t]);
                    d = ca_->backward(d, ca_cache_[b][t]);
                    du_ori[b][t] = d;
                    dshort[b][t] = std::move(d);
                }
            }
        }

        Block ds2 = conv2_.backward_block(du_ori);

        // reverse time through the midpoint LIF
        Block dx1(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = ds2[b].size();
            dx1[b].assign(t_n, Tensor());
            Tensor dh;
            for (std::size_t ti = t_n; ti-- > 0;) {
                const Tensor& u = u_mid_[b][ti];
                const Tensor& s = s2_[b][ti];
                Tensor du = Tensor::zeros_like(u);
                for (std::size_t i = 0; i < u.size(); ++i) {
                    const double g = surrogate_grad(u[i], lif_, sg_);
                    double acc = ds2[b][ti][i] * g;
                    if (!dh.empty())
                        acc += dh[i] * (lif_.v_reset * g + lif_.beta * (1.0 - s[i]) -
                                        lif_.beta * u[i] * g);
                    du[i] = acc;
                }
                dh = du;
                dx1[b][ti] = std::move(du);
            }
        }

        Block ds1 = conv1_.backward_block(dx1);
        if (proj_) {
            Block dproj = proj_->backward_block(dshort);
            for (std::size_t b = 0; b < b_n; ++b)
                for (std::size_t t = 0; t < ds1[b].size(); ++t) ds1[b][t] += dproj[b][t];
        }

        // entry activation backward; the identity shortcut joins here
        Block du_in(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = ds1[b].size();
            du_in[b].resize(t_n);
            for (std::size_t t = 0; t < t_n; ++t) {
                const Tensor& u = u_in_[b][t];
                Tensor d = Tensor::zeros_like(u);
                for (std::size_t i = 0; i < u.size(); ++i)
                    d[i] = ds1[b][t][i] * surrogate_grad(u[i], lif_, sg_);
                if (!proj_) d += dshort[b][t];
                du_in[b][t] = std::move(d);
            }
        }
        return du_in;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        conv1_.collect_params(prefix + ".conv1", out);
        conv2_.collect_params(prefix + ".conv2", out);
        if (proj_) proj_->collect_params(prefix + ".proj", out);
        if (ca_) ca_->collect_params(prefix + ".ca", out);
        if (sa_) sa_->collect_params(prefix + ".sa", out);
    }

    /// Forces the CSA gates to the exact constant 1.
    bool pin_identity = false;

  private:
    Tensor activate(const Tensor& u) const {
        Tensor s = Tensor::zeros_like(u);
        for (std::size_t i = 0; i < u.size(); ++i)
            s[i] = mode_ == RunMode::Spiking ? hard_spike(u[i], lif_)
                                             : relaxed_spike(u[i], lif_, sg_);
        return s;
    }

    ResBlockSpec spec_;
    LIFParams lif_;
    SurrogateParams sg_;
    ConvBnPool conv1_, conv2_;
    std::optional<ConvBnPool> proj_;
    std::optional<ChannelGate> ca_;
    std::optional<SpatialGate> sa_;
    RunMode mode_ = RunMode::Spiking;

    Block u_in_, s1_;
    std::vector<std::vector<Tensor>> u_mid_, s2_;
    std::vector<std::vector<ChannelGate::Cache>> ca_cache_;
    std::vector<std::vector<SpatialGate::Cache>> sa_cache_;
};

/// A stack of residual blocks sharing one shape, e.g. for gradient-flow probes.
class ResStack {
  public:
    ResStack(const ResBlockSpec& spec, int depth, const LIFParams& lif, const SurrogateParams& sg,
             Rng rng) {
        for (int i = 0; i < depth; ++i)
            blocks_.emplace_back(spec, lif, sg, rng.split(static_cast<std::uint64_t>(i)));
    }

    Block forward_block(const Block& u_in, RunMode mode, bool training) {
        Block cur = u_in;
        for (auto& b : blocks_) cur = b.forward_block(cur, mode, training);
        return cur;
    }

    Block backward_block(const Block& dout) {
        Block d = dout;
        for (std::size_t i = blocks_.size(); i-- > 0;) d = blocks_[i].backward_block(d);
        return d;
    }

    std::vector<AttResBlock>& blocks() { return blocks_; }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t i = 0; i < blocks_.size(); ++i)
            blocks_[i].collect_params("block" + std::to_string(i), out);
        return out;
    }

  private:
    std::vector<AttResBlock> blocks_;
};

}  // namespace spikegate
