#pragma once

#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "spikegate/network.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// Per-operation energy, 32-bit floating point in 45 nm.
struct EnergyConstants {
    double e_mac = 4.6;  // pJ
    double e_ac = 0.9;   // pJ

    void validate() const {
        if (!(e_mac > 0.0) || !(e_ac > 0.0))
            throw ConfigError("EnergyConstants: energies must be positive");
    }
};

enum class OpClass { MAC, AC };

struct LayerFlops {
    std::string id;
    std::string kind;  // conv | fc
    double flops = 0.0;
    OpClass op_class = OpClass::AC;
};

/// FLOP ledger for one inference (all T steps of one sample).
///
/// Counting rules:
///  - conv FLOPs = k_h * k_w * c_in * c_out * h_out * w_out per step, fc = in * out;
///    the first layer is MAC class, every other layer AC class.
///  - delta_mac1 is the attention weight-generation cost (TA/CA bottleneck MLPs
///    on two pooled paths, SA convolution); delta_mac2 is one multiply per
///    gated element. Avg-pool additions inside the gates are counted as ACs in
///    att_pool_ac; max-pool comparisons are not counted.
///  - spike_ac_saved is the measured drop in spike-driven ACs (each spike into
///    a conv layer costs k*k*c_out ACs, boundary clipping ignored); delta_ac =
///    spike_ac_saved - att_pool_ac is the net AC reduction used in the energy
///    shift.
///  - BN and pooling FLOPs of the backbone are excluded from the energy model
///    and reported separately in bn_pool_flops.
struct FlopProfile {
    std::vector<LayerFlops> layers;
    double delta_mac1 = 0.0;
    double delta_mac2 = 0.0;
    double att_pool_ac = 0.0;
    double spike_ac_saved = 0.0;
    double delta_ac = 0.0;
    double bn_pool_flops = 0.0;

    double delta_mac() const { return delta_mac1 + delta_mac2; }
    double backbone_flops() const {
        double s = 0.0;
        for (const auto& l : layers) s += l.flops;
        return s;
    }
};

struct ArchLayer {
    std::string name;
    bool is_conv = true;
    bool first = false;
    // conv geometry (output is the conv output, before pooling)
    int in_ch = 0, out_ch = 0, k = 0, h_out = 0, w_out = 0;
    // fc geometry
    int fc_in = 0, fc_out = 0;
    long long neurons = 0;  // spiking neurons fed by this layer (post pool)
    // attention at this layer and the shape its gates act on
    bool ta = false, ca = false, sa = false;
    int r_t = 1, r_c = 1, sa_k = 7;
    int att_c = 0, att_h = 0, att_w = 0;
    double bn_pool_flops = 0.0;
};

struct ArchDescription {
    int t_steps = 1;
    std::vector<ArchLayer> layers;
};

inline ArchDescription describe_arch(PlainNet& net) {
    ArchDescription arch;
    const PlainNetSpec& spec = net.spec();
    arch.t_steps = spec.t_steps;
    int h = spec.input_h, w = spec.input_w;
    for (std::size_t i = 0; i < net.stages().size(); ++i) {
        const ConvSpec& cs = net.stages()[i].conv_spec();
        const AttentionConfig& attn = net.stages()[i].attn();
        ArchLayer l;
        l.name = "conv" + std::to_string(i + 1);
        l.is_conv = true;
        l.first = (i == 0);
        l.in_ch = cs.in_ch;
        l.out_ch = cs.out_ch;
        l.k = cs.k;
        l.h_out = cs.conv_out(h);
        l.w_out = cs.conv_out(w);
        int ph = cs.out_hw(h), pw = cs.out_hw(w);
        l.neurons = static_cast<long long>(cs.out_ch) * ph * pw;
        l.ta = attn.ta && spec.t_steps > 1;
        l.ca = attn.ca;
        l.sa = attn.sa;
        l.r_t = effective_reduction(attn.r_t, spec.t_steps);
        l.r_c = effective_reduction(attn.r_c, cs.out_ch);
        l.sa_k = attn.sa_kernel;
        l.att_c = cs.out_ch;
        l.att_h = ph;
        l.att_w = pw;
        // BN: 2 ops per element of the conv output; avg pool: one add per input element
        l.bn_pool_flops = 2.0 * cs.out_ch * l.h_out * l.w_out;
        if (cs.pool > 1) l.bn_pool_flops += static_cast<double>(cs.out_ch) * l.h_out * l.w_out;
        arch.layers.push_back(l);
        h = ph;
        w = pw;
    }
    ArchLayer fc;
    fc.name = "fc";
    fc.is_conv = false;
    fc.fc_in = net.head().fc().in_features();
    fc.fc_out = net.head().fc().out_features();
    fc.neurons = 0;  // readout integrators are not spiking neurons
    arch.layers.push_back(fc);
    return arch;
}

inline FlopProfile count_flops(const ArchDescription& arch) {
    if (arch.layers.empty()) return {};
    FlopProfile p;
    const double t_steps = static_cast<double>(arch.t_steps);
    for (std::size_t i = 0; i < arch.layers.size(); ++i) {
        const ArchLayer& l = arch.layers[i];
        LayerFlops lf;
        lf.id = l.name;
        if (l.is_conv) {
            if (l.k <= 0 || l.h_out <= 0 || l.w_out <= 0 || l.in_ch <= 0 || l.out_ch <= 0)
                throw ConfigError("count_flops: underspecified conv shapes for " + l.name);
            lf.kind = "conv";
            lf.flops = static_cast<double>(l.k) * l.k * l.in_ch * l.out_ch * l.h_out * l.w_out *
                       t_steps;
        } else {
            if (l.fc_in <= 0 || l.fc_out <= 0)
                throw ConfigError("count_flops: underspecified fc shapes for " + l.name);
            lf.kind = "fc";
            lf.flops = static_cast<double>(l.fc_in) * l.fc_out * t_steps;
        }
        lf.op_class = l.first ? OpClass::MAC : OpClass::AC;
        p.layers.push_back(lf);
        p.bn_pool_flops += l.bn_pool_flops * t_steps;

        const double elems = static_cast<double>(l.att_c) * l.att_h * l.att_w;
        if (l.ta) {
            p.delta_mac1 += 2.0 * (t_steps * (t_steps / l.r_t) * 2.0);
            p.delta_mac2 += t_steps * elems;
            p.att_pool_ac += t_steps * elems;  // avg-pool additions
        }
        if (l.ca) {
            p.delta_mac1 += t_steps * 2.0 * (static_cast<double>(l.att_c) * (l.att_c / l.r_c) * 2.0);
            p.delta_mac2 += t_steps * elems;
            p.att_pool_ac += t_steps * elems;
        }
        if (l.sa) {
            p.delta_mac1 += t_steps * 2.0 * l.sa_k * l.sa_k * l.att_h * l.att_w;
            p.delta_mac2 += t_steps * elems;
            p.att_pool_ac += t_steps * elems;
        }
    }
    return p;
}

/// E_Base: first layer FLOPs priced as MAC, every other layer as AC.
inline double e_base(const FlopProfile& p, const EnergyConstants& k) {
    k.validate();
    double mac = 0.0, ac = 0.0;
    for (const auto& l : p.layers) (l.op_class == OpClass::MAC ? mac : ac) += l.flops;
    return k.e_mac * mac + k.e_ac * ac;
}

/// Energy shift and efficiency ratio of an attention run against its vanilla
/// anchor: delta_e = E_MAC * (d_MAC1 + d_MAC2) - E_AC * d_AC and
/// r_ee = E_Base / (E_Base + delta_e).
inline std::pair<double, double> delta_e_and_r_ee(const FlopProfile& p, const EnergyConstants& k) {
    k.validate();
    const double base = e_base(p, k);
    const double delta_e = k.e_mac * p.delta_mac() - k.e_ac * p.delta_ac;
    const double denom = base + delta_e;
    if (!(denom > 0.0))
        throw NumericError("delta_e_and_r_ee: nonphysical E_Base + delta_E <= 0");
    return {delta_e, base / denom};
}

// ---------------------------------------------------------------------------
// Spike activity accounting
// ---------------------------------------------------------------------------

/// Per-layer, per-step spike counts accumulated over `samples` forward passes.
struct SpikeRecord {
    int t_steps = 0;
    std::vector<long long> neurons;               // spiking neurons per layer
    std::vector<std::vector<long long>> counts;   // [layer][t]
    long long samples = 0;

    long long total_neurons() const {
        long long n = 0;
        for (long long v : neurons) n += v;
        return n;
    }
    long long total_count() const {
        long long c = 0;
        for (const auto& per_t : counts)
            for (long long v : per_t) c += v;
        return c;
    }
    long long layer_count(std::size_t l) const {
        long long c = 0;
        for (long long v : counts[l]) c += v;
        return c;
    }
    long long step_count(int t) const {
        long long c = 0;
        for (const auto& per_t : counts) c += per_t[static_cast<std::size_t>(t)];
        return c;
    }
    /// Dataset-averaged spiking activity rate of one layer at one step.
    double layer_nsar(std::size_t l, int t) const {
        return static_cast<double>(counts[l][static_cast<std::size_t>(t)]) /
               (static_cast<double>(neurons[l]) * static_cast<double>(samples));
    }
};

/// Observer that accumulates spike counts into a SpikeRecord.
class SpikeCounter : public SpikeObserver {
  public:
    SpikeCounter(std::vector<long long> neurons_per_layer, int t_steps) {
        rec_.t_steps = t_steps;
        rec_.neurons = std::move(neurons_per_layer);
        rec_.counts.assign(rec_.neurons.size(),
                           std::vector<long long>(static_cast<std::size_t>(t_steps), 0));
    }

    void observe(int layer, int t, const Tensor& spikes) override {
        long long c = 0;
        for (std::size_t i = 0; i < spikes.size(); ++i) c += spikes[i] != 0.0 ? 1 : 0;
        rec_.counts[static_cast<std::size_t>(layer)][static_cast<std::size_t>(t)] += c;
        if (layer == 0 && t == 0) ++rec_.samples;
    }

    SpikeRecord& record() { return rec_; }

  private:
    SpikeRecord rec_;
};

struct NasarResult {
    std::vector<double> nsar;  // per step
    double nasar = 0.0;
    double spike_count = 0.0;  // mean per sample; equals nasar * neurons * T
};

/// NSAR per step, NASAR, and the per-sample mean spike count. The identity
/// spike_count == nasar * neurons * T holds by construction.
inline NasarResult nasar(const SpikeRecord& rec) {
    NasarResult r;
    const double neurons = static_cast<double>(rec.total_neurons());
    const double samples = static_cast<double>(std::max<long long>(rec.samples, 1));
    r.nsar.resize(static_cast<std::size_t>(rec.t_steps), 0.0);
    double acc = 0.0;
    for (int t = 0; t < rec.t_steps; ++t) {
        double v = neurons > 0.0
                       ? static_cast<double>(rec.step_count(t)) / (neurons * samples)
                       : 0.0;
        r.nsar[static_cast<std::size_t>(t)] = v;
        acc += v;
    }
    r.nasar = rec.t_steps > 0 ? acc / static_cast<double>(rec.t_steps) : 0.0;
    r.spike_count = r.nasar * neurons * static_cast<double>(rec.t_steps);
    return r;
}

/// Spike-driven ACs per inference under the default counting rule: every
/// spike entering conv layer n costs k*k*c_out ACs, spikes into the fc head
/// cost fc_out ACs. Layer 1 consumes real frames, not spikes.
inline double spike_driven_acs(const SpikeRecord& rec, const ArchDescription& arch) {
    double acs = 0.0;
    const double samples = static_cast<double>(std::max<long long>(rec.samples, 1));
    for (std::size_t l = 1; l < arch.layers.size(); ++l) {
        const ArchLayer& layer = arch.layers[l];
        const double spikes_in = static_cast<double>(rec.layer_count(l - 1)) / samples;
        if (layer.is_conv)
            acs += spikes_in * layer.k * layer.k * layer.out_ch;
        else
            acs += spikes_in * layer.fc_out;
    }
    return acs;
}

/// Exact fan-out ACs for one spike tensor entering `next`; boundary_aware
/// clips the receptive fan-out at the feature-map edges.
inline double spike_fanout_acs(const Tensor& spikes, const ConvSpec& next, bool boundary_aware) {
    const int h = spikes.dim(1), w = spikes.dim(2);
    const int p = next.padding();
    const int ho = next.conv_out(h), wo = next.conv_out(w);
    double acs = 0.0;
    for (int c = 0; c < spikes.dim(0); ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                if (spikes.at(c, y, x) == 0.0) continue;
                if (!boundary_aware) {
                    acs += static_cast<double>(next.k) * next.k * next.out_ch;
                    continue;
                }
                int cy = 0, cx = 0;
                for (int ky = 0; ky < next.k; ++ky) {
                    int oy = y + p - ky;
                    if (oy % next.stride == 0 && oy / next.stride >= 0 && oy / next.stride < ho)
                        ++cy;
                }
                for (int kx = 0; kx < next.k; ++kx) {
                    int ox = x + p - kx;
                    if (ox % next.stride == 0 && ox / next.stride >= 0 && ox / next.stride < wo)
                        ++cx;
                }
                acs += static_cast<double>(cy) * cx * next.out_ch;
            }
    return acs;
}

/// Measure the AC side of the energy shift from a vanilla and an attention
/// run over identical inputs.
inline void fill_delta_ac(FlopProfile& p, const ArchDescription& arch, const SpikeRecord& vanilla,
                          const SpikeRecord& attention) {
    p.spike_ac_saved = spike_driven_acs(vanilla, arch) - spike_driven_acs(attention, arch);
    p.delta_ac = p.spike_ac_saved - p.att_pool_ac;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct EnergyReport {
    double e_base = 0.0;
    double e_att = 0.0;
    double delta_e = 0.0;
    double r_ee = 1.0;
    double nasar = 0.0;
    std::vector<double> nsar;
    double spike_count = 0.0;
    FlopProfile profile;

    static EnergyReport build(const FlopProfile& p, const EnergyConstants& k,
                              const NasarResult& activity) {
        EnergyReport r;
        r.profile = p;
        r.e_base = spikegate::e_base(p, k);
        auto [de, ree] = delta_e_and_r_ee(p, k);
        r.delta_e = de;
        r.r_ee = ree;
        r.e_att = r.e_base + de;
        r.nasar = activity.nasar;
        r.nsar = activity.nsar;
        r.spike_count = activity.spike_count;
        return r;
    }

    std::string to_table() const {
        std::ostringstream os;
        os << "# energy ledger (pJ); rules: conv FLOPs = k*k*cin*cout*hout*wout, fc = in*out,\n"
              "# layer 1 = MAC, others = AC; spike-driven ACs = k*k*cout per incoming spike;\n"
              "# attention gen cost = MLP/conv MACs (delta_mac1), refinement = one MAC per\n"
              "# gated element (delta_mac2); gate avg-pool additions are ACs (att_pool_ac);\n"
              "# delta_ac = spike_ac_saved - att_pool_ac; BN/pool FLOPs reported, not priced.\n";
        os << std::left << std::setw(12) << "layer" << std::setw(8) << "kind" << std::setw(8)
           << "class" << "flops\n";
        for (const auto& l : profile.layers)
            os << std::left << std::setw(12) << l.id << std::setw(8) << l.kind << std::setw(8)
               << (l.op_class == OpClass::MAC ? "MAC" : "AC") << std::setprecision(12) << l.flops
               << "\n";
        os << std::setprecision(12);
        os << "delta_mac1      " << profile.delta_mac1 << "\n";
        os << "delta_mac2      " << profile.delta_mac2 << "\n";
        os << "att_pool_ac     " << profile.att_pool_ac << "\n";
        os << "spike_ac_saved  " << profile.spike_ac_saved << "\n";
        os << "delta_ac        " << profile.delta_ac << "\n";
        os << "bn_pool_flops   " << profile.bn_pool_flops << "\n";
        os << "e_base_pj       " << e_base << "\n";
        os << "e_att_pj        " << e_att << "\n";
        os << "delta_e_pj      " << delta_e << "\n";
        os << "r_ee            " << r_ee << "\n";
        os << "nasar           " << nasar << "\n";
        os << "spike_count     " << spike_count << "\n";
        return os.str();
    }

    std::string to_csv() const {
        std::ostringstream os;
        os << std::setprecision(12);
        os << "metric,value\n";
        os << "e_base_pj," << e_base << "\n";
        os << "e_att_pj," << e_att << "\n";
        os << "delta_e_pj," << delta_e << "\n";
        os << "r_ee," << r_ee << "\n";
        os << "delta_mac1," << profile.delta_mac1 << "\n";
        os << "delta_mac2," << profile.delta_mac2 << "\n";
        os << "delta_ac," << profile.delta_ac << "\n";
        os << "nasar," << nasar << "\n";
        os << "spike_count," << spike_count << "\n";
        for (std::size_t t = 0; t < nsar.size(); ++t) os << "nsar_" << t << "," << nsar[t] << "\n";
        return os.str();
    }
};

}  // namespace spikegate
