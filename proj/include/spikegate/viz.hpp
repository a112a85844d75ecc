#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "spikegate/energy.hpp"
#include "spikegate/events.hpp"
#include "spikegate/network.hpp"
#include "spikegate/tensor.hpp"

namespace spikegate {

// Fixed linear blue-to-red colormap: entry i maps to RGB (i, 0, 255 - i).
// Low spiking activity renders blue, high activity red. Values v in [0,1]
// index the table via round(v * 255), clamped.
inline const std::array<std::array<std::uint8_t, 3>, 256>& colormap_blue_red() {
    static const auto table = [] {
        std::array<std::array<std::uint8_t, 3>, 256> t{};
        for (int i = 0; i < 256; ++i)
            t[static_cast<std::size_t>(i)] = {static_cast<std::uint8_t>(i), 0,
                                              static_cast<std::uint8_t>(255 - i)};
        return t;
    }();
    return table;
}

inline std::size_t colormap_index(double v) {
    long idx = std::lround(v * 255.0);
    if (idx < 0) idx = 0;
    if (idx > 255) idx = 255;
    return static_cast<std::size_t>(idx);
}

/// Binary P6 pixmap of a [H][W] map with entries in [0,1]. Byte output is a
/// pure function of the map values.
inline void emit_heatmap(const Tensor& map, const std::string& path) {
    if (map.rank() != 2) throw ShapeError("emit_heatmap: [H][W] map expected, got " + map.shape_str());
    const int h = map.dim(0), w = map.dim(1);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    const auto& cmap = colormap_blue_red();
    std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto& rgb = cmap[colormap_index(map[static_cast<std::size_t>(y) * w + x])];
            row[static_cast<std::size_t>(x) * 3 + 0] = rgb[0];
            row[static_cast<std::size_t>(x) * 3 + 1] = rgb[1];
            row[static_cast<std::size_t>(x) * 3 + 2] = rgb[2];
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw IoError("write failed: " + path);
}

/// Multi-channel figure: channels laid out row-major on a grid of `cols`
/// tiles with 1-pixel black separators.
inline void emit_tiled_heatmap(const Tensor& maps, const std::string& path, int cols = 0) {
    if (maps.rank() != 3) throw ShapeError("emit_tiled_heatmap: [C][H][W] expected");
    const int c = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
    if (cols <= 0) {
        cols = 1;
        while (cols * cols < c) ++cols;
    }
    const int rows = (c + cols - 1) / cols;
    const int out_w = cols * w + (cols - 1);
    const int out_h = rows * h + (rows - 1);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << out_w << " " << out_h << "\n255\n";
    const auto& cmap = colormap_blue_red();
    std::vector<std::uint8_t> img(static_cast<std::size_t>(out_w) * out_h * 3, 0);
    for (int ch = 0; ch < c; ++ch) {
        const int ty = ch / cols, tx = ch % cols;
        const int oy = ty * (h + 1), ox = tx * (w + 1);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const auto& rgb = cmap[colormap_index(maps.at(ch, y, x))];
                std::size_t off =
                    (static_cast<std::size_t>(oy + y) * out_w + (ox + x)) * 3;
                img[off] = rgb[0];
                img[off + 1] = rgb[1];
                img[off + 2] = rgb[2];
            }
    }
    f.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
    if (!f) throw IoError("write failed: " + path);
}

/// Mean over the time and channel axes of a [T] sequence of [C][H][W] spike
/// tensors; entries land in [0,1] for binary spikes.
inline Tensor collapse_sample(const std::vector<Tensor>& spikes) {
    if (spikes.empty()) throw ShapeError("collapse_sample: empty sequence");
    const int c = spikes[0].dim(0), h = spikes[0].dim(1), w = spikes[0].dim(2);
    Tensor out({h, w});
    for (const Tensor& s : spikes)
        for (int ch = 0; ch < c; ++ch)
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x)
                    out[static_cast<std::size_t>(y) * w + x] += s.at(ch, y, x);
    out.scale(1.0 / (static_cast<double>(spikes.size()) * c));
    return out;
}

/// Average spiking response accumulator: integer per-neuron spike counts per
/// (layer, step), turned into dataset-fraction rates once at the end. The
/// integer reduction keeps results independent of accumulation order.
class AsrAccumulator : public SpikeObserver {
  public:
    AsrAccumulator(const std::vector<std::vector<int>>& layer_shapes, int t_steps)
        : shapes_(layer_shapes), t_steps_(t_steps) {
        counts_.resize(layer_shapes.size());
        for (std::size_t l = 0; l < layer_shapes.size(); ++l) {
            std::size_t n = 1;
            for (int d : layer_shapes[l]) n *= static_cast<std::size_t>(d);
            counts_[l].assign(static_cast<std::size_t>(t_steps), std::vector<long long>(n, 0));
        }
    }

    void observe(int layer, int t, const Tensor& spikes) override {
        auto& c = counts_[static_cast<std::size_t>(layer)][static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < spikes.size(); ++i)
            if (spikes[i] != 0.0) ++c[i];
        if (layer == 0 && t == 0) ++samples_;
    }

    long long samples() const { return samples_; }
    int t_steps() const { return t_steps_; }
    std::size_t layers() const { return shapes_.size(); }

    /// Per-neuron firing rates over the dataset: entries are exact k/N.
    Tensor map(std::size_t layer, int t) const {
        Tensor out(shapes_[layer]);
        const auto& c = counts_[layer][static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < c.size(); ++i)
            out[i] = static_cast<double>(c[i]) / static_cast<double>(samples_);
        return out;
    }

    /// Neuron-mean rate: matches SpikeRecord::layer_nsar bit for bit when fed
    /// the same forward passes.
    double neuron_mean(std::size_t layer, int t) const {
        const auto& c = counts_[layer][static_cast<std::size_t>(t)];
        long long total = 0;
        for (long long v : c) total += v;
        return static_cast<double>(total) /
               (static_cast<double>(c.size()) * static_cast<double>(samples_));
    }

  private:
    std::vector<std::vector<int>> shapes_;
    int t_steps_ = 0;
    std::vector<std::vector<std::vector<long long>>> counts_;  // [layer][t][neuron]
    long long samples_ = 0;
};

/// Run the dataset through the model and collect per-neuron firing rates for
/// every layer and step.
inline AsrAccumulator average_spiking_response(PlainNet& net, const Dataset& data,
                                               int batch_size = 32) {
    if (data.size() == 0) throw ConfigError("average_spiking_response: empty dataset");
    AsrAccumulator acc(net.stage_shapes(), net.spec().t_steps);
    for (std::size_t start = 0; start < data.size();
         start += static_cast<std::size_t>(batch_size)) {
        Block frames;
        for (std::size_t i = start;
             i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            frames.push_back(data.samples[i].frames);
        (void)net.forward(frames, RunMode::Spiking, false, &acc);
    }
    return acc;
}

}  // namespace spikegate
