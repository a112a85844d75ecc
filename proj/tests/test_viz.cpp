#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "spikegate/train.hpp"
#include "spikegate/viz.hpp"

using namespace spikegate;

namespace {

std::string read_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

PlainNetSpec tiny_spec() {
    PlainNetSpec spec;
    spec.input_ch = 2;
    spec.input_h = 6;
    spec.input_w = 6;
    spec.t_steps = 3;
    spec.n_classes = 2;
    spec.stages.push_back({ConvSpec{2, 3, 3, 1, -1, 1, true}, AttentionConfig{}});
    return spec;
}

Dataset tiny_dataset(std::uint64_t seed, int samples_per_class) {
    SyntheticDatasetSpec dspec;
    dspec.n_classes = 2;
    dspec.samples_per_class = samples_per_class;
    dspec.width = 6;
    dspec.height = 6;
    dspec.duration_us = 3000;
    dspec.seed = seed;
    return to_frames(synth_events(dspec), Rational{1, 1}, 3);
}

}  // namespace

TEST_CASE("colormap endpoints and shape") {
    const auto& cmap = colormap_blue_red();
    REQUIRE(cmap[0][0] == 0);
    REQUIRE(cmap[0][2] == 255);  // pure blue at zero activity
    REQUIRE(cmap[255][0] == 255);
    REQUIRE(cmap[255][2] == 0);  // pure red at saturation
    REQUIRE(colormap_index(0.0) == 0);
    REQUIRE(colormap_index(1.0) == 255);
    REQUIRE(colormap_index(-3.0) == 0);
    REQUIRE(colormap_index(7.0) == 255);
}

TEST_CASE("collapse_sample") {
    SECTION("all-ones spikes collapse to ones") {
        std::vector<Tensor> spikes(2, Tensor({2, 3, 3}, 1.0));
        Tensor m = collapse_sample(spikes);
        for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] == 1.0);
    }
    SECTION("single active slice divides by T * C") {
        std::vector<Tensor> spikes(2, Tensor({2, 3, 3}));
        spikes[0].at(1, 1, 2) = 1.0;
        Tensor m = collapse_sample(spikes);
        REQUIRE(m[static_cast<std::size_t>(1) * 3 + 2] == 0.25);  // one of 4 slices
        REQUIRE(m.sum() == 0.25);
    }
    SECTION("zero spikes collapse to zero") {
        std::vector<Tensor> spikes(3, Tensor({2, 2, 2}));
        REQUIRE(collapse_sample(spikes).sum() == 0.0);
    }
    SECTION("channel and time permutations do not change the map") {
        Rng rng(61);
        std::vector<Tensor> spikes(3, Tensor({2, 3, 3}));
        for (auto& s : spikes)
            for (std::size_t i = 0; i < s.size(); ++i) s[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
        Tensor base = collapse_sample(spikes);
        std::vector<Tensor> permuted = {spikes[2], spikes[0], spikes[1]};
        for (auto& s : permuted) {
            Tensor swapped = s;
            for (int y = 0; y < 3; ++y)
                for (int x = 0; x < 3; ++x) {
                    swapped.at(0, y, x) = s.at(1, y, x);
                    swapped.at(1, y, x) = s.at(0, y, x);
                }
            s = swapped;
        }
        Tensor perm = collapse_sample(permuted);
        for (std::size_t i = 0; i < base.size(); ++i)
            REQUIRE(base[i] == Catch::Approx(perm[i]).margin(1e-15));
    }
}

TEST_CASE("emit_heatmap: constant maps hit the colormap endpoints, bytes stable") {
    auto dir = std::filesystem::temp_directory_path();
    Tensor zeros({4, 4});
    Tensor ones({4, 4}, 1.0);
    auto p0 = (dir / "spikegate_zero.ppm").string();
    auto p1 = (dir / "spikegate_one.ppm").string();
    auto p2 = (dir / "spikegate_zero2.ppm").string();
    emit_heatmap(zeros, p0);
    emit_heatmap(ones, p1);
    emit_heatmap(zeros, p2);

    std::string b0 = read_bytes(p0), b1 = read_bytes(p1), b2 = read_bytes(p2);
    REQUIRE(b0.substr(0, 9) == "P6\n4 4\n25");
    // every pixel is colormap[0] = (0,0,255)
    std::string body0 = b0.substr(b0.find("255\n") + 4);
    REQUIRE(body0.size() == 48);
    for (std::size_t i = 0; i < body0.size(); i += 3) {
        REQUIRE(static_cast<unsigned char>(body0[i]) == 0);
        REQUIRE(static_cast<unsigned char>(body0[i + 1]) == 0);
        REQUIRE(static_cast<unsigned char>(body0[i + 2]) == 255);
    }
    std::string body1 = b1.substr(b1.find("255\n") + 4);
    for (std::size_t i = 0; i < body1.size(); i += 3) {
        REQUIRE(static_cast<unsigned char>(body1[i]) == 255);
        REQUIRE(static_cast<unsigned char>(body1[i + 2]) == 0);
    }
    REQUIRE(b0 == b2);  // deterministic bytes
    std::filesystem::remove(p0);
    std::filesystem::remove(p1);
    std::filesystem::remove(p2);
}

TEST_CASE("emit_heatmap golden files") {
    auto dir = std::filesystem::temp_directory_path();
    Tensor zeros({4, 4});
    Tensor ones({4, 4}, 1.0);
    auto pz = (dir / "spikegate_golden_zero.ppm").string();
    auto po = (dir / "spikegate_golden_one.ppm").string();
    emit_heatmap(zeros, pz);
    emit_heatmap(ones, po);
    REQUIRE(read_bytes(pz) == read_bytes(std::string(SPIKEGATE_TEST_DIR) + "/golden/all_zero_4x4.ppm"));
    REQUIRE(read_bytes(po) == read_bytes(std::string(SPIKEGATE_TEST_DIR) + "/golden/all_one_4x4.ppm"));
    std::filesystem::remove(pz);
    std::filesystem::remove(po);
}

TEST_CASE("emit_tiled_heatmap lays channels on a separated grid") {
    auto dir = std::filesystem::temp_directory_path();
    Tensor maps({3, 2, 2}, 1.0);
    auto p = (dir / "spikegate_tiled.ppm").string();
    emit_tiled_heatmap(maps, p, 2);
    std::string b = read_bytes(p);
    // 2 cols x 2 rows of 2x2 tiles with 1-px separators: 5x5 image
    REQUIRE(b.substr(0, 9) == "P6\n5 5\n25");
    std::filesystem::remove(p);
}

TEST_CASE("average_spiking_response matches hand counting") {
    PlainNet net(tiny_spec(), Rng(71));
    Dataset data = tiny_dataset(31, 1);  // one sample per class -> two samples

    SECTION("single-sample dataset equals that sample's spikes") {
        Dataset one;
        one.samples.push_back(data.samples[0]);
        one.labels.push_back(data.labels[0]);
        AsrAccumulator acc = average_spiking_response(net, one);

        struct Tape : SpikeObserver {
            std::vector<Tensor> spikes;
            void observe(int, int, const Tensor& s) override { spikes.push_back(s); }
        } tape;
        Block frames{one.samples[0].frames};
        (void)net.forward(frames, RunMode::Spiking, false, &tape);
        std::size_t k = 0;
        for (int t = 0; t < 3; ++t) {  // layer 0, steps in order
            Tensor m = acc.map(0, t);
            const Tensor& s = tape.spikes[k++];
            for (std::size_t i = 0; i < m.size(); ++i) REQUIRE(m[i] == s[i]);
        }
    }
    SECTION("two samples where a neuron spikes in exactly one give 0.5") {
        AsrAccumulator acc = average_spiking_response(net, data);
        bool found_half = false;
        for (int t = 0; t < 3 && !found_half; ++t) {
            Tensor m = acc.map(0, t);
            for (std::size_t i = 0; i < m.size(); ++i)
                if (m[i] == 0.5) found_half = true;
        }
        REQUIRE(acc.samples() == 2);
        // rates are exact dataset fractions k/N
        for (int t = 0; t < 3; ++t) {
            Tensor m = acc.map(0, t);
            for (std::size_t i = 0; i < m.size(); ++i) {
                double scaled = m[i] * 2.0;
                REQUIRE(scaled == std::floor(scaled));
            }
        }
        (void)found_half;  // depends on the net; the fraction property above is the contract
    }
    SECTION("empty dataset is rejected") {
        Dataset empty;
        REQUIRE_THROWS_AS(average_spiking_response(net, empty), ConfigError);
    }
}

TEST_CASE("asrv neuron means equal energy-module dataset NSAR exactly") {
    PlainNet net(tiny_spec(), Rng(72));
    Dataset data = tiny_dataset(32, 3);

    AsrAccumulator acc = average_spiking_response(net, data);
    EvalResult ev = evaluate(net, data);

    REQUIRE(ev.record.samples == acc.samples());
    for (std::size_t l = 0; l < acc.layers(); ++l)
        for (int t = 0; t < acc.t_steps(); ++t)
            REQUIRE(acc.neuron_mean(l, t) == ev.record.layer_nsar(l, t));
}
