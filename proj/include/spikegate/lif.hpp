#pragma once

#include <cmath>

#include "spikegate/tensor.hpp"

namespace spikegate {

/// Leaky integrate-and-fire constants. beta = e^{-dt/tau}, so the membrane
/// time constant is carried implicitly.
struct LIFParams {
    double u_th = 0.5;
    double v_reset = 0.0;
    double beta = 0.25;

    void validate() const {
        if (!(u_th > 0.0)) throw ConfigError("LIFParams: u_th must be > 0");
        if (!(beta > 0.0 && beta < 1.0)) throw ConfigError("LIFParams: beta must lie in (0,1)");
    }
};

enum class SurrogateKind { Rectangular, Triangular };

/// Normalized window standing in for the derivative of the Heaviside spike.
struct SurrogateParams {
    SurrogateKind kind = SurrogateKind::Rectangular;
    double a = 0.25;  // window half-width, default 0.5 * u_th

    void validate() const {
        if (!(a > 0.0)) throw ConfigError("SurrogateParams: a must be > 0");
    }
};

/// Surrogate for d Hea(u - u_th) / du. Both shapes integrate to 1.
inline double surrogate_grad(double u, const LIFParams& lif, const SurrogateParams& sg) {
    const double d = u - lif.u_th;
    switch (sg.kind) {
        case SurrogateKind::Rectangular:
            return std::fabs(d) < sg.a ? 1.0 / (2.0 * sg.a) : 0.0;
        case SurrogateKind::Triangular:
            return std::max(0.0, 1.0 - std::fabs(d) / sg.a) / sg.a;
    }
    return 0.0;
}

/// Integral of the surrogate window: the smooth relaxation of the spike used
/// for relaxed-mode forwards (finite-difference checks, Jacobian probes).
/// Its derivative equals surrogate_grad exactly.
inline double relaxed_spike(double u, const LIFParams& lif, const SurrogateParams& sg) {
    const double d = u - lif.u_th;
    const double a = sg.a;
    switch (sg.kind) {
        case SurrogateKind::Rectangular:
            if (d <= -a) return 0.0;
            if (d >= a) return 1.0;
            return (d + a) / (2.0 * a);
        case SurrogateKind::Triangular:
            if (d <= -a) return 0.0;
            if (d >= a) return 1.0;
            if (d <= 0.0) return (d + a) * (d + a) / (2.0 * a * a);
            return 1.0 - (a - d) * (a - d) / (2.0 * a * a);
    }
    return 0.0;
}

/// Hard spike: Hea(u - u_th), with Hea(0) = 1.
inline double hard_spike(double u, const LIFParams& lif) {
    return (u - lif.u_th) >= 0.0 ? 1.0 : 0.0;
}

/// One LIF update over a tensor:
///   U = H_prev + X
///   S = Hea(U - u_th)
///   H = v_reset * S + (beta * U) * (1 - S)
/// The element order of operations here is the reference arithmetic; the
/// scalar per-neuron loop in the tests must match it bit for bit.
inline void lif_step(const Tensor& x, const Tensor& h_prev, const LIFParams& p, Tensor& spikes,
                     Tensor& h_new, Tensor& membrane) {
    if (!x.same_shape(h_prev))
        throw ShapeError("lif_step: input and state shapes differ " + x.shape_str() + " vs " +
                         h_prev.shape_str());
    p.validate();
    spikes = Tensor::zeros_like(x);
    h_new = Tensor::zeros_like(x);
    membrane = Tensor::zeros_like(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double u = h_prev[i] + x[i];
        const double s = hard_spike(u, p);
        membrane[i] = u;
        spikes[i] = s;
        h_new[i] = p.v_reset * s + (p.beta * u) * (1.0 - s);
    }
}

}  // namespace spikegate
