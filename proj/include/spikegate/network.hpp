#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spikegate/attention.hpp"
#include "spikegate/conv.hpp"
#include "spikegate/lif.hpp"
#include "spikegate/param.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// Spiking runs the hard threshold; Relaxed substitutes the surrogate
/// integral so the whole forward map is differentiable (finite-difference
/// checks, Jacobian probes).
enum class RunMode { Spiking, Relaxed };

/// Callback invoked once per (layer, time step, sample) with the binary spike
/// tensor. Only fired in Spiking mode.
struct SpikeObserver {
    virtual ~SpikeObserver() = default;
    virtual void observe(int layer, int t, const Tensor& spikes) = 0;
};

struct StageSpec {
    ConvSpec conv;
    AttentionConfig attn;
};

/// One Conv-based LIF layer with optional attention at Conv-PRE, Conv-POST,
/// and Activate-PRE hook points. Processing is layer-major: the whole [B][T]
/// block passes the convolution before the temporal unroll, which is what the
/// temporal gate needs anyway.
class SpikingStage {
  public:
    SpikingStage(const StageSpec& spec, int t_steps, const LIFParams& lif,
                 const SurrogateParams& sg, Rng rng)
        : attn_(spec.attn), lif_(lif), sg_(sg), t_steps_(t_steps) {
        attn_.validate();
        lif_.validate();
        sg_.validate();
        // Temporal attention pools over the whole sequence; with a single
        // step there is nothing to recalibrate, so it is disabled.
        if (t_steps_ <= 1) attn_.ta = false;
        Rng conv_rng = rng.split(1);
        conv_ = ConvBnPool(spec.conv, conv_rng);
        if (attn_.ta) {
            Rng r = rng.split(2);
            ta_.emplace(t_steps_, attn_.r_t, r);
        }
        if (attn_.ca) {
            // the gate acts on the stage input at Conv-PRE, on the conv
            // output elsewhere
            const int ch = attn_.ca_loc == AttnLocation::ConvPRE ? spec.conv.in_ch
                                                                 : spec.conv.out_ch;
            Rng r = rng.split(3);
            ca_.emplace(ch, attn_.r_c, r);
        }
        if (attn_.sa) {
            Rng r = rng.split(4);
            sa_.emplace(attn_.sa_kernel, r);
        }
    }

    const ConvSpec& conv_spec() const { return conv_.spec(); }
    AttentionConfig& attn() { return attn_; }
    const AttentionConfig& attn() const { return attn_; }
    ConvBnPool& conv() { return conv_; }
    TemporalGate* ta() { return ta_ ? &*ta_ : nullptr; }
    ChannelGate* ca() { return ca_ ? &*ca_ : nullptr; }
    SpatialGate* sa() { return sa_ ? &*sa_ : nullptr; }
    const LIFParams& lif() const { return lif_; }

    Block forward_block(const Block& in, RunMode mode, bool training, SpikeObserver* obs,
                        int layer_idx) {
        const std::size_t b_n = in.size();
        mode_ = mode;
        Block cur = in;

        // Conv-PRE gates
        ta_cache_pre_.assign(b_n, {});
        if (attn_.ta && attn_.ta_loc == AttnLocation::ConvPRE)
            for (std::size_t b = 0; b < b_n; ++b)
                cur[b] = ta_->apply(cur[b], ta_cache_pre_[b], attn_.pin_identity);
        apply_step_gates(cur, AttnLocation::ConvPRE, ca_cache_pre_, sa_cache_pre_);

        Block x = conv_.forward_block(cur, training);

        // Conv-POST gates
        ta_cache_post_.assign(b_n, {});
        if (attn_.ta && attn_.ta_loc == AttnLocation::ConvPOST)
            for (std::size_t b = 0; b < b_n; ++b)
                x[b] = ta_->apply(x[b], ta_cache_post_[b], attn_.pin_identity);
        apply_step_gates(x, AttnLocation::ConvPOST, ca_cache_post_, sa_cache_post_);

        // temporal unroll with Activate-PRE gates on the membrane potential
        const bool ca_act = attn_.ca && attn_.ca_loc == AttnLocation::ActivatePRE;
        const bool sa_act = attn_.sa && attn_.sa_loc == AttnLocation::ActivatePRE;
        ca_cache_act_.assign(b_n, std::vector<ChannelGate::Cache>(x[0].size()));
        sa_cache_act_.assign(b_n, std::vector<SpatialGate::Cache>(x[0].size()));
        u_.assign(b_n, {});
        s_.assign(b_n, {});
        Block out(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            Tensor h = Tensor::zeros_like(x[b][0]);
            u_[b].reserve(x[b].size());
            s_[b].reserve(x[b].size());
            out[b].reserve(x[b].size());
            for (std::size_t t = 0; t < x[b].size(); ++t) {
                Tensor pre = h + x[b][t];
                if (ca_act) pre = ca_->apply(pre, ca_cache_act_[b][t], attn_.pin_identity);
                if (sa_act) pre = sa_->apply(pre, sa_cache_act_[b][t], attn_.pin_identity);
                Tensor spk = Tensor::zeros_like(pre);
                Tensor h_new = Tensor::zeros_like(pre);
                for (std::size_t i = 0; i < pre.size(); ++i) {
                    const double u = pre[i];
                    const double s = mode == RunMode::Spiking ? hard_spike(u, lif_)
                                                              : relaxed_spike(u, lif_, sg_);
                    spk[i] = s;
                    h_new[i] = lif_.v_reset * s + (lif_.beta * u) * (1.0 - s);
                }
                if (obs != nullptr && mode == RunMode::Spiking)
                    obs->observe(layer_idx, static_cast<int>(t), spk);
                u_[b].push_back(std::move(pre));
                s_[b].push_back(spk);
                out[b].push_back(std::move(spk));
                h = h_new;
            }
        }
        return out;
    }

    /// dL/d(output spikes) -> dL/d(input); parameter gradients accumulate.
    /// `dmembrane` may add an extra gradient on the final membrane sequence
    /// (unused by the plain net, needed by residual blocks).
    Block backward_block(const Block& dspikes, const Block* dmembrane = nullptr) {
        const std::size_t b_n = dspikes.size();
        const bool ca_act = attn_.ca && attn_.ca_loc == AttnLocation::ActivatePRE;
        const bool sa_act = attn_.sa && attn_.sa_loc == AttnLocation::ActivatePRE;
        Block dx(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = dspikes[b].size();
            dx[b].assign(t_n, Tensor());
            Tensor dh;  // dL/dH^t flowing backwards
            for (std::size_t ti = t_n; ti-- > 0;) {
                const Tensor& u = u_[b][ti];
                const Tensor& s = s_[b][ti];
                Tensor du = Tensor::zeros_like(u);
                for (std::size_t i = 0; i < u.size(); ++i) {
                    const double g = surrogate_grad(u[i], lif_, sg_);
                    double acc = dspikes[b][ti][i] * g;
                    if (dmembrane != nullptr) acc += (*dmembrane)[b][ti][i];
                    if (!dh.empty()) {
                        const double dh_du =
                            lif_.v_reset * g + lif_.beta * (1.0 - s[i]) - lif_.beta * u[i] * g;
                        acc += dh[i] * dh_du;
                    }
                    du[i] = acc;
                }
                Tensor dpre = std::move(du);
                if (sa_act) dpre = sa_->backward(dpre, sa_cache_act_[b][ti]);
                if (ca_act) dpre = ca_->backward(dpre, ca_cache_act_[b][ti]);
                dh = dpre;
                dx[b][ti] = std::move(dpre);
            }
        }

        if (attn_.sa && attn_.sa_loc == AttnLocation::ConvPOST)
            for (std::size_t b = 0; b < b_n; ++b)
                for (std::size_t t = 0; t < dx[b].size(); ++t)
                    dx[b][t] = sa_->backward(dx[b][t], sa_cache_post_[b][t]);
        if (attn_.ca && attn_.ca_loc == AttnLocation::ConvPOST)
            for (std::size_t b = 0; b < b_n; ++b)
                for (std::size_t t = 0; t < dx[b].size(); ++t)
                    dx[b][t] = ca_->backward(dx[b][t], ca_cache_post_[b][t]);
        if (attn_.ta && attn_.ta_loc == AttnLocation::ConvPOST)
            for (std::size_t b = 0; b < b_n; ++b) dx[b] = ta_->backward(dx[b], ta_cache_post_[b]);

        Block din = conv_.backward_block(dx);

        if (attn_.sa && attn_.sa_loc == AttnLocation::ConvPRE)
            for (std::size_t b = 0; b < b_n; ++b)
                for (std::size_t t = 0; t < din[b].size(); ++t)
                    din[b][t] = sa_->backward(din[b][t], sa_cache_pre_[b][t]);
        if (attn_.ca && attn_.ca_loc == AttnLocation::ConvPRE)
            for (std::size_t b = 0; b < b_n; ++b)
                for (std::size_t t = 0; t < din[b].size(); ++t)
                    din[b][t] = ca_->backward(din[b][t], ca_cache_pre_[b][t]);
        if (attn_.ta && attn_.ta_loc == AttnLocation::ConvPRE)
            for (std::size_t b = 0; b < b_n; ++b) din[b] = ta_->backward(din[b], ta_cache_pre_[b]);
        return din;
    }

    /// Final membrane potentials of the last forward pass, [B][T].
    const std::vector<std::vector<Tensor>>& membrane() const { return u_; }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        conv_.collect_params(prefix + ".conv", out);
        if (ta_) ta_->collect_params(prefix + ".ta", out);
        if (ca_) ca_->collect_params(prefix + ".ca", out);
        if (sa_) sa_->collect_params(prefix + ".sa", out);
    }

  private:
    void apply_step_gates(Block& x, AttnLocation where, std::vector<std::vector<ChannelGate::Cache>>& cc,
                          std::vector<std::vector<SpatialGate::Cache>>& sc) {
        const bool use_ca = attn_.ca && attn_.ca_loc == where;
        const bool use_sa = attn_.sa && attn_.sa_loc == where;
        cc.assign(x.size(), {});
        sc.assign(x.size(), {});
        if (!use_ca && !use_sa) return;
        for (std::size_t b = 0; b < x.size(); ++b) {
            cc[b].resize(x[b].size());
            sc[b].resize(x[b].size());
            for (std::size_t t = 0; t < x[b].size(); ++t) {
                if (use_ca) x[b][t] = ca_->apply(x[b][t], cc[b][t], attn_.pin_identity);
                if (use_sa) x[b][t] = sa_->apply(x[b][t], sc[b][t], attn_.pin_identity);
            }
        }
    }

    AttentionConfig attn_;
    LIFParams lif_;
    SurrogateParams sg_;
    int t_steps_ = 1;
    ConvBnPool conv_;
    std::optional<TemporalGate> ta_;
    std::optional<ChannelGate> ca_;
    std::optional<SpatialGate> sa_;
    RunMode mode_ = RunMode::Spiking;

    // backward caches
    std::vector<TemporalGate::Cache> ta_cache_pre_, ta_cache_post_;
    std::vector<std::vector<ChannelGate::Cache>> ca_cache_pre_, ca_cache_post_, ca_cache_act_;
    std::vector<std::vector<SpatialGate::Cache>> sa_cache_pre_, sa_cache_post_, sa_cache_act_;
    std::vector<std::vector<Tensor>> u_, s_;
};

enum class ReadoutKind { MeanMembrane, SpikeCount };

/// Classification head: a fully connected layer whose output neurons
/// integrate over time. Default readout is the mean pre-spike membrane
/// potential across steps; the spike-count variant fires and sums spikes.
class ReadoutHead {
  public:
    ReadoutHead() = default;
    ReadoutHead(int in_features, int n_classes, const LIFParams& lif, const SurrogateParams& sg,
                ReadoutKind kind, Rng rng)
        : lif_(lif), sg_(sg), kind_(kind), fc_(in_features, n_classes, rng) {}

    std::vector<Tensor> forward_block(const Block& spikes, RunMode mode) {
        const std::size_t b_n = spikes.size();
        mode_ = mode;
        flat_.assign(b_n, {});
        u_.assign(b_n, {});
        s_.assign(b_n, {});
        std::vector<Tensor> logits(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = spikes[b].size();
            Tensor h({fc_.out_features()}, 0.0);
            Tensor acc({fc_.out_features()}, 0.0);
            for (std::size_t t = 0; t < t_n; ++t) {
                Tensor flat = flatten(spikes[b][t]);
                Tensor z = fc_.forward(flat);
                Tensor u = h + z;
                if (kind_ == ReadoutKind::MeanMembrane) {
                    acc += u;
                    h = u;
                    h.scale(lif_.beta);  // integrator never fires
                    s_[b].push_back(Tensor());
                } else {
                    Tensor spk({fc_.out_features()});
                    Tensor h_new({fc_.out_features()});
                    for (std::size_t i = 0; i < u.size(); ++i) {
                        const double s = mode == RunMode::Spiking ? hard_spike(u[i], lif_)
                                                                  : relaxed_spike(u[i], lif_, sg_);
                        spk[i] = s;
                        h_new[i] = lif_.v_reset * s + (lif_.beta * u[i]) * (1.0 - s);
                    }
                    acc += spk;
                    h = h_new;
                    s_[b].push_back(std::move(spk));
                }
                flat_[b].push_back(std::move(flat));
                u_[b].push_back(std::move(u));
            }
            acc.scale(1.0 / static_cast<double>(t_n));
            logits[b] = std::move(acc);
        }
        return logits;
    }

    Block backward_block(const std::vector<Tensor>& dlogits, const std::vector<int>& spike_shape) {
        const std::size_t b_n = dlogits.size();
        Block dspikes(b_n);
        for (std::size_t b = 0; b < b_n; ++b) {
            const std::size_t t_n = flat_[b].size();
            const double inv_t = 1.0 / static_cast<double>(t_n);
            dspikes[b].assign(t_n, Tensor());
            Tensor dh;
            for (std::size_t ti = t_n; ti-- > 0;) {
                Tensor du({fc_.out_features()}, 0.0);
                if (kind_ == ReadoutKind::MeanMembrane) {
                    for (std::size_t i = 0; i < du.size(); ++i) {
                        du[i] = dlogits[b][i] * inv_t;
                        if (!dh.empty()) du[i] += lif_.beta * dh[i];
                    }
                } else {
                    const Tensor& u = u_[b][ti];
                    const Tensor& s = s_[b][ti];
                    for (std::size_t i = 0; i < du.size(); ++i) {
                        const double g = surrogate_grad(u[i], lif_, sg_);
                        du[i] = dlogits[b][i] * inv_t * g;
                        if (!dh.empty())
                            du[i] += dh[i] * (lif_.v_reset * g + lif_.beta * (1.0 - s[i]) -
                                              lif_.beta * u[i] * g);
                    }
                }
                Tensor dflat = fc_.backward(flat_[b][ti], du);
                dspikes[b][ti] = unflatten(dflat, spike_shape);
                dh = std::move(du);
            }
        }
        return dspikes;
    }

    void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
        fc_.collect_params(prefix + ".fc", out);
    }

    Linear& fc() { return fc_; }
    ReadoutKind kind() const { return kind_; }

    static Tensor flatten(const Tensor& t) {
        Tensor out({static_cast<int>(t.size())});
        for (std::size_t i = 0; i < t.size(); ++i) out[i] = t[i];
        return out;
    }
    static Tensor unflatten(const Tensor& flat, const std::vector<int>& shape) {
        Tensor out(shape);
        for (std::size_t i = 0; i < flat.size(); ++i) out[i] = flat[i];
        return out;
    }

  private:
    LIFParams lif_;
    SurrogateParams sg_;
    ReadoutKind kind_ = ReadoutKind::MeanMembrane;
    Linear fc_;
    RunMode mode_ = RunMode::Spiking;
    std::vector<std::vector<Tensor>> flat_, u_, s_;
};

/// Temporal mean of per-step output vectors: the rate-style readout.
inline Tensor readout(const std::vector<Tensor>& per_step_outputs) {
    if (per_step_outputs.empty()) throw ShapeError("readout: empty sequence");
    Tensor acc = per_step_outputs[0];
    for (std::size_t t = 1; t < per_step_outputs.size(); ++t) acc += per_step_outputs[t];
    acc.scale(1.0 / static_cast<double>(per_step_outputs.size()));
    return acc;
}

struct PlainNetSpec {
    int input_ch = 2;
    int input_h = 16;
    int input_w = 16;
    int t_steps = 16;
    int n_classes = 4;
    std::vector<StageSpec> stages;
    LIFParams lif;
    SurrogateParams sg;
    ReadoutKind readout = ReadoutKind::MeanMembrane;
};

/// Plain feed-forward spiking network: N Conv-LIF stages and a readout head.
class PlainNet {
  public:
    PlainNet() = default;
    PlainNet(const PlainNetSpec& spec, Rng rng) : spec_(spec) {
        int h = spec.input_h, w = spec.input_w, c = spec.input_ch;
        for (std::size_t i = 0; i < spec.stages.size(); ++i) {
            StageSpec st = spec.stages[i];
            if (st.conv.in_ch != c)
                throw ConfigError("PlainNet: stage " + std::to_string(i) + " expects " +
                                  std::to_string(st.conv.in_ch) + " input channels, gets " +
                                  std::to_string(c));
            stages_.emplace_back(st, spec.t_steps, spec.lif, spec.sg,
                                 rng.split(1000 + static_cast<std::uint64_t>(i)));
            h = st.conv.out_hw(h);
            w = st.conv.out_hw(w);
            c = st.conv.out_ch;
            stage_shapes_.push_back({c, h, w});
        }
        Rng head_rng = rng.split(9000);
        head_ = ReadoutHead(c * h * w, spec.n_classes, spec.lif, spec.sg, spec.readout, head_rng);
    }

    std::vector<Tensor> forward(const Block& frames, RunMode mode, bool training,
                                SpikeObserver* obs = nullptr) {
        Block cur = frames;
        for (std::size_t i = 0; i < stages_.size(); ++i)
            cur = stages_[i].forward_block(cur, mode, training, obs, static_cast<int>(i));
        return head_.forward_block(cur, mode);
    }

    void backward(const std::vector<Tensor>& dlogits) {
        Block d = head_.backward_block(dlogits, stage_shapes_.back());
        for (std::size_t i = stages_.size(); i-- > 0;) d = stages_[i].backward_block(d);
    }

    std::vector<ParamRef> params() {
        std::vector<ParamRef> out;
        for (std::size_t i = 0; i < stages_.size(); ++i)
            stages_[i].collect_params("stage" + std::to_string(i), out);
        head_.collect_params("head", out);
        return out;
    }

    const PlainNetSpec& spec() const { return spec_; }
    std::vector<SpikingStage>& stages() { return stages_; }
    ReadoutHead& head() { return head_; }
    const std::vector<std::vector<int>>& stage_shapes() const { return stage_shapes_; }

    /// Spiking LIF neurons per stage (head integrators excluded).
    std::vector<long long> neurons_per_stage() const {
        std::vector<long long> out;
        for (const auto& s : stage_shapes_)
            out.push_back(static_cast<long long>(s[0]) * s[1] * s[2]);
        return out;
    }

    /// Flip every gate in the network to the exact constant 1.
    void pin_gates_to_identity(bool on) {
        for (auto& st : stages_) st.attn().pin_identity = on;
    }

  private:
    PlainNetSpec spec_;
    std::vector<SpikingStage> stages_;
    std::vector<std::vector<int>> stage_shapes_;
    ReadoutHead head_;
};

}  // namespace spikegate
