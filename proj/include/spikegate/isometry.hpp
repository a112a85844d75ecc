#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spikegate/attention.hpp"
#include "spikegate/residual.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

/// Monte-Carlo estimates of phi(J J^T) = E[tr(J J^T)] / dim and
/// varphi(J J^T) = phi((J J^T)^2) - phi(J J^T)^2.
struct JacobianStats {
    double phi = 0.0;
    double varphi = 0.0;
    int n_samples = 0;
};

enum class ComponentKind {
    Relu,
    Conv,
    OrthogonalLinear,
    Sigmoid,
    CaBlock,
    SaBlock,
    CsaBlock,
    AttResBlock
};

struct ComponentRef {
    ComponentKind kind = ComponentKind::Relu;
    double p = 0.5;        // ReLU positive fraction
    double gamma = 1.0;    // orthogonal scale
    double epsilon = 0.1;  // conv weight stddev
    int c_in = 2, k_h = 3, k_w = 3;
    int dim = 64;             // vector dimension for elementwise / linear probes
    int c = 4, h = 6, w = 6;  // feature shape for gate blocks
    double input_std = 1.0;
};

/// Closed-form (phi, varphi) rows for the elementary components; varphi is
/// absent where the reference does not state it.
inline std::pair<double, std::optional<double>> reference_phi(const ComponentRef& c) {
    switch (c.kind) {
        case ComponentKind::Relu:
            return {c.p, c.p - c.p * c.p};
        case ComponentKind::Conv:
            return {static_cast<double>(c.c_in) * c.k_h * c.k_w * c.epsilon * c.epsilon,
                    std::nullopt};
        case ComponentKind::OrthogonalLinear:
            return {c.gamma * c.gamma, 0.0};
        case ComponentKind::Sigmoid:
            return {1.0 / 16.0, 0.0};
        default:
            throw ConfigError("reference_phi: no closed form for composed blocks");
    }
}

/// A differentiable map R^in -> R^out with per-sample weight redraws and an
/// input distribution.
struct ProbeComponent {
    int in_dim = 0;
    int out_dim = 0;
    std::function<void(Rng&)> resample;  // may be empty
    std::function<std::vector<double>(const std::vector<double>&)> apply;
    std::function<void(std::vector<double>&, Rng&)> draw_input;
};

/// Numeric Jacobian by central differences. Inputs are snapped to multiples
/// of eps so that x + eps and x - eps are exact and differences of linear
/// maps come out bit-exact (the identity probe must measure phi = 1 exactly).
inline JacobianStats estimate_phi(ProbeComponent& comp, int n_samples, Rng rng,
                                  double eps = 0x1.0p-20) {
    if (comp.in_dim <= 0 || comp.out_dim <= 0)
        throw ConfigError("estimate_phi: component dimensions unset");
    double m1_acc = 0.0, m2_acc = 0.0;
    std::vector<double> x(static_cast<std::size_t>(comp.in_dim));
    std::vector<std::vector<double>> jac(
        static_cast<std::size_t>(comp.out_dim),
        std::vector<double>(static_cast<std::size_t>(comp.in_dim), 0.0));
    for (int s = 0; s < n_samples; ++s) {
        if (comp.resample) comp.resample(rng);
        comp.draw_input(x, rng);
        for (double& v : x) v = std::round(v / eps) * eps;
        for (int j = 0; j < comp.in_dim; ++j) {
            const double saved = x[static_cast<std::size_t>(j)];
            x[static_cast<std::size_t>(j)] = saved + eps;
            std::vector<double> fp = comp.apply(x);
            x[static_cast<std::size_t>(j)] = saved - eps;
            std::vector<double> fm = comp.apply(x);
            x[static_cast<std::size_t>(j)] = saved;
            for (int i = 0; i < comp.out_dim; ++i) {
                const double d = (fp[static_cast<std::size_t>(i)] - fm[static_cast<std::size_t>(i)]) /
                                 (2.0 * eps);
                if (!std::isfinite(d)) throw NumericError("estimate_phi: non-finite Jacobian entry");
                jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] = d;
            }
        }
        // tr(J J^T) = sum of squared entries
        double tr = 0.0;
        for (const auto& row : jac)
            for (double v : row) tr += v * v;
        m1_acc += tr / comp.out_dim;
        // tr((J J^T)^2) = squared Frobenius norm of J J^T
        double tr2 = 0.0;
        for (int i = 0; i < comp.out_dim; ++i)
            for (int i2 = 0; i2 < comp.out_dim; ++i2) {
                double m = 0.0;
                for (int j = 0; j < comp.in_dim; ++j)
                    m += jac[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                         jac[static_cast<std::size_t>(i2)][static_cast<std::size_t>(j)];
                tr2 += m * m;
            }
        m2_acc += tr2 / comp.out_dim;
    }
    JacobianStats st;
    st.n_samples = n_samples;
    st.phi = m1_acc / n_samples;
    st.varphi = m2_acc / n_samples - st.phi * st.phi;
    return st;
}

namespace detail {

/// Standard normal quantile by Newton iteration on erfc.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("normal_quantile: p in (0,1) required");
    double x = 0.0;
    for (int it = 0; it < 80; ++it) {
        double cdf = 0.5 * std::erfc(-x / std::sqrt(2.0));
        double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
        double step = (cdf - p) / std::max(pdf, 1e-300);
        x -= step;
        if (std::fabs(step) < 1e-13) break;
    }
    return x;
}

inline std::vector<double> tensor_to_vec(const Tensor& t) {
    return std::vector<double>(t.data(), t.data() + t.size());
}
inline Tensor vec_to_tensor(const std::vector<double>& v, const std::vector<int>& shape) {
    Tensor t(shape);
    for (std::size_t i = 0; i < v.size(); ++i) t[i] = v[i];
    return t;
}

}  // namespace detail

/// Probe factory for the component table and the composed gate blocks.
/// Spiking parts appear only inside AttResBlock, probed in relaxed mode —
/// the same relaxation gradients flow through in training.
inline ProbeComponent make_component(const ComponentRef& ref, std::uint64_t weight_seed = 7) {
    ProbeComponent pc;
    switch (ref.kind) {
        case ComponentKind::Relu: {
            pc.in_dim = pc.out_dim = ref.dim;
            const double shift = detail::normal_quantile(ref.p);
            pc.apply = [](const std::vector<double>& x) {
                std::vector<double> y(x.size());
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::max(0.0, x[i]);
                return y;
            };
            pc.draw_input = [shift](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal() + shift;
            };
            break;
        }
        case ComponentKind::Sigmoid: {
            pc.in_dim = pc.out_dim = ref.dim;
            const double std_in = ref.input_std;
            pc.apply = [](const std::vector<double>& x) {
                std::vector<double> y(x.size());
                for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid(x[i]);
                return y;
            };
            pc.draw_input = [std_in](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal(0.0, std_in);
            };
            break;
        }
        case ComponentKind::OrthogonalLinear: {
            pc.in_dim = pc.out_dim = ref.dim;
            auto m = std::make_shared<Tensor>(Tensor({ref.dim, ref.dim}));
            pc.resample = [m, ref](Rng& rng) { fill_orthogonal(*m, rng, ref.gamma); };
            pc.apply = [m, d = ref.dim](const std::vector<double>& x) {
                std::vector<double> y(static_cast<std::size_t>(d), 0.0);
                for (int i = 0; i < d; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < d; ++j)
                        acc += (*m)[static_cast<std::size_t>(i) * d + j] *
                               x[static_cast<std::size_t>(j)];
                    y[static_cast<std::size_t>(i)] = acc;
                }
                return y;
            };
            pc.draw_input = [](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal();
            };
            break;
        }
        case ComponentKind::Conv: {
            // circular padding so every output row sums c_in*k_h*k_w weights,
            // matching the full-support reference value
            const int c = ref.c_in, h = ref.h, w = ref.w;
            pc.in_dim = pc.out_dim = c * h * w;
            auto kern = std::make_shared<Tensor>(Tensor({c, c, ref.k_h, ref.k_w}));
            pc.resample = [kern, e = ref.epsilon](Rng& rng) { fill_normal(*kern, rng, e); };
            pc.apply = [kern, c, h, w, kh = ref.k_h, kw = ref.k_w](const std::vector<double>& x) {
                std::vector<double> y(static_cast<std::size_t>(c) * h * w, 0.0);
                const int py = kh / 2, px = kw / 2;
                for (int oc = 0; oc < c; ++oc)
                    for (int oy = 0; oy < h; ++oy)
                        for (int ox = 0; ox < w; ++ox) {
                            double acc = 0.0;
                            for (int ic = 0; ic < c; ++ic)
                                for (int ky = 0; ky < kh; ++ky)
                                    for (int kx = 0; kx < kw; ++kx) {
                                        int iy = (oy + ky - py + h) % h;
                                        int ix = (ox + kx - px + w) % w;
                                        acc += (*kern)[((static_cast<std::size_t>(oc) * c + ic) *
                                                            kh + ky) * kw + kx] *
                                               x[(static_cast<std::size_t>(ic) * h + iy) * w + ix];
                                    }
                            y[(static_cast<std::size_t>(oc) * h + oy) * w + ox] = acc;
                        }
                return y;
            };
            pc.draw_input = [](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal();
            };
            break;
        }
        case ComponentKind::CaBlock:
        case ComponentKind::SaBlock:
        case ComponentKind::CsaBlock: {
            const int c = ref.c, h = ref.h, w = ref.w;
            pc.in_dim = pc.out_dim = c * h * w;
            auto ca = std::make_shared<ChannelGate>();
            auto sa = std::make_shared<SpatialGate>();
            const bool use_ca = ref.kind != ComponentKind::SaBlock;
            const bool use_sa = ref.kind != ComponentKind::CaBlock;
            pc.resample = [=](Rng& rng) {
                if (use_ca) {
                    Rng r1 = rng.split(1);
                    *ca = ChannelGate(c, 2, r1);
                    Rng r2 = rng.split(2);
                    ca->init_orthogonal(r2, ref.gamma, ref.gamma);
                }
                if (use_sa) {
                    Rng r3 = rng.split(3);
                    *sa = SpatialGate(ref.k_h, r3);
                    Rng r4 = rng.split(4);
                    sa->init_normal(r4, ref.epsilon);
                }
            };
            pc.apply = [=](const std::vector<double>& x) {
                Tensor u = detail::vec_to_tensor(x, {c, h, w});
                if (use_ca) {
                    ChannelGate::Cache cc;
                    u = ca->apply(u, cc);
                }
                if (use_sa) {
                    SpatialGate::Cache sc;
                    u = sa->apply(u, sc);
                }
                return detail::tensor_to_vec(u);
            };
            pc.draw_input = [std_in = ref.input_std](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal(0.0, std_in);
            };
            break;
        }
        case ComponentKind::AttResBlock: {
            const int c = ref.c, h = ref.h, w = ref.w;
            pc.in_dim = pc.out_dim = c * h * w;
            ResBlockSpec spec;
            spec.channels = c;
            spec.k = ref.k_h;
            spec.attention = true;
            spec.zeta = 0.1;
            LIFParams lif;
            SurrogateParams sg;
            sg.a = 0.5 * lif.u_th;
            auto block = std::make_shared<std::unique_ptr<AttResBlock>>();
            pc.resample = [=](Rng& rng) {
                Rng r = rng.split(11);
                *block = std::make_unique<AttResBlock>(spec, lif, sg, r);
                Rng ro = rng.split(12);
                (*block)->ca()->init_orthogonal(ro, ref.gamma, ref.gamma);
                Rng rs = rng.split(13);
                (*block)->sa()->init_normal(rs, ref.epsilon);
            };
            pc.apply = [=](const std::vector<double>& x) {
                Block in{{detail::vec_to_tensor(x, {c, h, w})}};
                Block out = (*block)->forward_block(in, RunMode::Relaxed, false);
                return detail::tensor_to_vec(out[0][0]);
            };
            pc.draw_input = [std_in = ref.input_std](std::vector<double>& x, Rng& rng) {
                for (double& v : x) v = rng.normal(0.0, std_in);
            };
            break;
        }
        default:
            throw ConfigError("make_component: unsupported component");
    }
    (void)weight_seed;
    return pc;
}

struct BlockCheck {
    bool pass = false;
    double measured_phi = 0.0;
    double expected_phi = 0.0;
    double tolerance = 0.25;
};

/// Empirical check of a composed gate block against the closed form used in
/// the gradient-norm analysis. For the CSA block with zero-mean unit-variance
/// input and orthogonally initialized CA MLP, the target is
/// (1/4 + 2 k^2 eps^2 / 64) * (1/4).
inline BlockCheck check_block(const ComponentRef& ref, int n_samples, Rng rng,
                              double tolerance = 0.25) {
    if (ref.kind != ComponentKind::CsaBlock && ref.kind != ComponentKind::AttResBlock)
        throw ConfigError("check_block: expects a composed block component");
    ProbeComponent pc = make_component(ref);
    JacobianStats st = estimate_phi(pc, n_samples, rng);
    const double sa_fanin = 2.0 * ref.k_h * ref.k_w * ref.epsilon * ref.epsilon;
    BlockCheck chk;
    chk.expected_phi = (0.25 + sa_fanin / 16.0 * 0.25) * 0.25;
    chk.measured_phi = st.phi;
    chk.tolerance = tolerance;
    chk.pass = std::fabs(st.phi - chk.expected_phi) <= tolerance * chk.expected_phi;
    return chk;
}

}  // namespace spikegate
