#include <catch2/catch_amalgamated.hpp>

#include "spikegate/isometry.hpp"

using namespace spikegate;

TEST_CASE("reference_phi: component table rows") {
    SECTION("sigmoid is 1/16") {
        ComponentRef c;
        c.kind = ComponentKind::Sigmoid;
        auto [phi, varphi] = reference_phi(c);
        REQUIRE(phi == 0.0625);
        REQUIRE(varphi.has_value());
        REQUIRE(*varphi == 0.0);
    }
    SECTION("relu at p = 0.5 is (0.5, 0.25)") {
        ComponentRef c;
        c.kind = ComponentKind::Relu;
        c.p = 0.5;
        auto [phi, varphi] = reference_phi(c);
        REQUIRE(phi == 0.5);
        REQUIRE(*varphi == 0.25);
    }
    SECTION("orthogonal with unit scale is (1, 0)") {
        ComponentRef c;
        c.kind = ComponentKind::OrthogonalLinear;
        c.gamma = 1.0;
        auto [phi, varphi] = reference_phi(c);
        REQUIRE(phi == 1.0);
        REQUIRE(*varphi == 0.0);
    }
    SECTION("conv row scales with fan-in and weight variance") {
        ComponentRef c;
        c.kind = ComponentKind::Conv;
        c.c_in = 2;
        c.k_h = 3;
        c.k_w = 3;
        c.epsilon = 0.1;
        auto [phi, varphi] = reference_phi(c);
        REQUIRE(phi == Catch::Approx(2 * 9 * 0.01));
        REQUIRE_FALSE(varphi.has_value());
    }
}

TEST_CASE("estimate_phi: identity and scalar maps are exact") {
    SECTION("identity") {
        ProbeComponent pc;
        pc.in_dim = pc.out_dim = 16;
        pc.apply = [](const std::vector<double>& x) { return x; };
        pc.draw_input = [](std::vector<double>& x, Rng& rng) {
            for (double& v : x) v = rng.normal();
        };
        JacobianStats st = estimate_phi(pc, 4, Rng(3));
        REQUIRE(st.phi == 1.0);
        REQUIRE(st.varphi == 0.0);
    }
    SECTION("x -> 2x gives phi = 4") {
        ProbeComponent pc;
        pc.in_dim = pc.out_dim = 8;
        pc.apply = [](const std::vector<double>& x) {
            std::vector<double> y(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = 2.0 * x[i];
            return y;
        };
        pc.draw_input = [](std::vector<double>& x, Rng& rng) {
            for (double& v : x) v = rng.normal();
        };
        JacobianStats st = estimate_phi(pc, 4, Rng(4));
        REQUIRE(st.phi == 4.0);
        REQUIRE(st.varphi == 0.0);
    }
}

TEST_CASE("estimate_phi: sigmoid at small input variance approaches 1/16") {
    ComponentRef c;
    c.kind = ComponentKind::Sigmoid;
    c.dim = 32;
    c.input_std = 1e-3;
    ProbeComponent pc = make_component(c);
    JacobianStats st = estimate_phi(pc, 20, Rng(5));
    REQUIRE(st.phi == Catch::Approx(1.0 / 16.0).epsilon(0.10));
}

TEST_CASE("estimate_phi: relu at p = 0.5 matches (p, p - p^2)") {
    ComponentRef c;
    c.kind = ComponentKind::Relu;
    c.p = 0.5;
    c.dim = 64;
    ProbeComponent pc = make_component(c);
    JacobianStats st = estimate_phi(pc, 400, Rng(6));
    REQUIRE(st.phi == Catch::Approx(0.5).epsilon(0.05));
    REQUIRE(st.varphi == Catch::Approx(0.25).epsilon(0.08));
}

TEST_CASE("estimate_phi: orthogonal linear measures gamma^2 with zero spread") {
    ComponentRef c;
    c.kind = ComponentKind::OrthogonalLinear;
    c.gamma = 0.8;
    c.dim = 24;
    ProbeComponent pc = make_component(c);
    JacobianStats st = estimate_phi(pc, 10, Rng(7));
    REQUIRE(st.phi == Catch::Approx(0.64).epsilon(1e-6));
    REQUIRE(st.varphi == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("estimate_phi: circular conv matches the fan-in closed form") {
    ComponentRef c;
    c.kind = ComponentKind::Conv;
    c.c_in = 2;
    c.k_h = 3;
    c.k_w = 3;
    c.epsilon = 0.25;
    c.h = 6;
    c.w = 6;
    ProbeComponent pc = make_component(c);
    JacobianStats st = estimate_phi(pc, 60, Rng(8));
    REQUIRE(st.phi == Catch::Approx(2 * 9 * 0.0625).epsilon(0.10));
}

TEST_CASE("scaling a linear map by s scales phi by s^2 exactly") {
    for (double s : {0.5, 2.0, 3.0}) {
        ProbeComponent pc;
        pc.in_dim = pc.out_dim = 8;
        pc.apply = [s](const std::vector<double>& x) {
            std::vector<double> y(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) y[i] = s * x[i];
            return y;
        };
        pc.draw_input = [](std::vector<double>& x, Rng& rng) {
            for (double& v : x) v = rng.normal();
        };
        JacobianStats st = estimate_phi(pc, 3, Rng(9));
        REQUIRE(st.phi == Catch::Approx(s * s).epsilon(1e-12));
    }
}

TEST_CASE("serial product law on stacked orthogonal layers") {
    // two Haar layers with unit scale compose to phi ~ 1
    ProbeComponent pc;
    const int d = 16;
    pc.in_dim = pc.out_dim = d;
    auto m1 = std::make_shared<Tensor>(Tensor({d, d}));
    auto m2 = std::make_shared<Tensor>(Tensor({d, d}));
    pc.resample = [=](Rng& rng) {
        Rng a = rng.split(1), b = rng.split(2);
        fill_orthogonal(*m1, a, 1.0);
        fill_orthogonal(*m2, b, 1.0);
    };
    auto matvec = [d](const Tensor& m, const std::vector<double>& x) {
        std::vector<double> y(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                y[static_cast<std::size_t>(i)] +=
                    m[static_cast<std::size_t>(i) * d + j] * x[static_cast<std::size_t>(j)];
        return y;
    };
    pc.apply = [=](const std::vector<double>& x) { return matvec(*m2, matvec(*m1, x)); };
    pc.draw_input = [](std::vector<double>& x, Rng& rng) {
        for (double& v : x) v = rng.normal();
    };
    JacobianStats st = estimate_phi(pc, 20, Rng(10));
    REQUIRE(st.phi == Catch::Approx(1.0).epsilon(0.10));
}

TEST_CASE("parallel addition law on independent branches") {
    // y = Q1 x + Q2 x with phi(Q_i) = 0.5 each composes to phi ~ 1
    ProbeComponent pc;
    const int d = 16;
    const double g = std::sqrt(0.5);
    pc.in_dim = pc.out_dim = d;
    auto m1 = std::make_shared<Tensor>(Tensor({d, d}));
    auto m2 = std::make_shared<Tensor>(Tensor({d, d}));
    pc.resample = [=](Rng& rng) {
        Rng a = rng.split(1), b = rng.split(2);
        fill_orthogonal(*m1, a, g);
        fill_orthogonal(*m2, b, g);
    };
    pc.apply = [=](const std::vector<double>& x) {
        std::vector<double> y(static_cast<std::size_t>(d), 0.0);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                y[static_cast<std::size_t>(i)] +=
                    ((*m1)[static_cast<std::size_t>(i) * d + j] +
                     (*m2)[static_cast<std::size_t>(i) * d + j]) *
                    x[static_cast<std::size_t>(j)];
        return y;
    };
    pc.draw_input = [](std::vector<double>& x, Rng& rng) {
        for (double& v : x) v = rng.normal();
    };
    JacobianStats st = estimate_phi(pc, 40, Rng(11));
    REQUIRE(st.phi == Catch::Approx(1.0).epsilon(0.10));
}

TEST_CASE("sigmoid outputs average to one half on symmetric inputs") {
    Rng rng(12);
    const long n = 200000;
    double acc = 0.0;
    for (long i = 0; i < n; ++i) acc += sigmoid(rng.normal());
    REQUIRE(acc / n == Catch::Approx(0.5).epsilon(0.02));
}

TEST_CASE("check_block: CSA block lands near the composed closed form") {
    ComponentRef ref;
    ref.kind = ComponentKind::CsaBlock;
    ref.c = 4;
    ref.h = 5;
    ref.w = 5;
    ref.k_h = 3;
    ref.k_w = 3;
    ref.gamma = 0.2;    // small orthogonal scale keeps the CA logits near zero
    ref.epsilon = 0.5;  // SA conv spread is part of the target value
    ref.input_std = 1.0;
    BlockCheck chk = check_block(ref, 60, Rng(13));
    INFO("measured " << chk.measured_phi << " expected " << chk.expected_phi);
    REQUIRE(chk.pass);
}
