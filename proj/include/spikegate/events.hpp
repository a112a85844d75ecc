#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "spikegate/tensor.hpp"

namespace spikegate {

/// One sensor event: pixel coordinates, microsecond timestamp, polarity +1/-1.
struct Event {
    int x = 0;
    int y = 0;
    std::int64_t t_us = 0;
    int polarity = 1;
};

struct EventStream {
    int width = 0;
    int height = 0;
    std::int64_t dt_prime_us = 1000;  // native temporal resolution
    std::vector<Event> events;        // timestamps non-decreasing

    void validate() const {
        if (width <= 0 || height <= 0) throw ConfigError("EventStream: empty spatial dimensions");
        std::int64_t prev = -1;
        for (const Event& e : events) {
            if (e.x < 0 || e.x >= width || e.y < 0 || e.y >= height)
                throw ConfigError("EventStream: event coordinates out of bounds");
            if (e.polarity != 1 && e.polarity != -1)
                throw ConfigError("EventStream: polarity must be +1 or -1");
            if (e.t_us < 0 || e.t_us < prev)
                throw ConfigError("EventStream: timestamps must be non-negative and non-decreasing");
            prev = e.t_us;
        }
    }
};

/// Aggregation window length in milliseconds, kept rational so window
/// boundaries are exact integer comparisons in microseconds.
struct Rational {
    std::int64_t num = 1;
    std::int64_t den = 1;

    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
};

/// Real-valued input tensor [T][channels][H][W]. Channel 0 carries ON (+1)
/// counts, channel 1 carries OFF (-1) counts for event-derived sequences.
struct FrameSequence {
    int T = 0;
    int channels = 2;
    int height = 0;
    int width = 0;
    Rational dt_ms{1, 1};
    std::vector<Tensor> frames;  // T tensors of shape [channels][H][W]
};

/// Bin an event stream into T count frames of window dt_ms. Events on a
/// window's right boundary belong to the next window; events at or beyond
/// T*dt are dropped.
inline FrameSequence aggregate_frames(const EventStream& stream, Rational dt_ms, int T) {
    stream.validate();
    if (dt_ms.num <= 0 || dt_ms.den <= 0) throw ConfigError("aggregate_frames: dt must be positive");
    if (T < 1) throw ConfigError("aggregate_frames: T must be >= 1");

    FrameSequence seq;
    seq.T = T;
    seq.channels = 2;
    seq.height = stream.height;
    seq.width = stream.width;
    seq.dt_ms = dt_ms;
    seq.frames.assign(static_cast<std::size_t>(T), Tensor({2, stream.height, stream.width}));

    // window t covers t_us with t*num*1000 <= t_us*den < (t+1)*num*1000
    const std::int64_t w_us_num = dt_ms.num * 1000;
    for (const Event& e : stream.events) {
        std::int64_t scaled = e.t_us * dt_ms.den;
        std::int64_t t = scaled / w_us_num;
        if (t >= T) continue;
        int ch = e.polarity > 0 ? 0 : 1;
        seq.frames[static_cast<std::size_t>(t)].at(ch, e.y, e.x) += 1.0;
    }
    return seq;
}

inline FrameSequence aggregate_frames(const EventStream& stream, std::int64_t dt_ms, int T) {
    return aggregate_frames(stream, Rational{dt_ms, 1}, T);
}

/// Copy a static image to every time step.
inline FrameSequence replicate_static(const Tensor& image, int T) {
    if (image.rank() != 3) throw ShapeError("replicate_static: [C][H][W] image expected");
    if (T < 1) throw ConfigError("replicate_static: T must be >= 1");
    FrameSequence seq;
    seq.T = T;
    seq.channels = image.dim(0);
    seq.height = image.dim(1);
    seq.width = image.dim(2);
    seq.frames.assign(static_cast<std::size_t>(T), image);
    return seq;
}

// ---------------------------------------------------------------------------
// Synthetic moving-bar dataset
// ---------------------------------------------------------------------------

struct SyntheticDatasetSpec {
    int n_classes = 4;
    int samples_per_class = 10;
    int width = 16;
    int height = 16;
    std::int64_t duration_us = 32000;
    std::int64_t dt_prime_us = 1000;
    double noise_rate = 0.02;  // Bernoulli per-pixel OFF-noise per native tick
    std::uint64_t seed = 1;

    void validate() const {
        if (n_classes < 2) throw ConfigError("synth: n_classes must be >= 2");
        if (n_classes > 8) throw ConfigError("synth: only 8 motion patterns available");
        if (samples_per_class < 1) throw ConfigError("synth: samples_per_class must be >= 1");
        if (width <= 0 || height <= 0 || duration_us <= 0 || dt_prime_us <= 0)
            throw ConfigError("synth: dimensions and durations must be positive");
        if (noise_rate < 0.0 || noise_rate > 1.0) throw ConfigError("synth: noise_rate in [0,1]");
    }
};

struct LabeledStream {
    EventStream stream;
    int label = 0;
};

namespace detail {

// 8 compass directions, (dx, dy) per unit of progress.
inline void direction(int cls, double& dx, double& dy) {
    static const double dirs[8][2] = {{1, 0},  {-1, 0}, {0, 1},  {0, -1},
                                      {1, 1},  {-1, -1}, {1, -1}, {-1, 1}};
    dx = dirs[cls][0];
    dy = dirs[cls][1];
}

// Pixels covered by a bar perpendicular to its travel direction, centred at
// (cx, cy). Half-length is in pixels.
inline void bar_pixels(double cx, double cy, double dx, double dy, int half_len, int w, int h,
                       std::vector<std::pair<int, int>>& out) {
    out.clear();
    // perpendicular direction
    double px = -dy, py = dx;
    double norm = std::sqrt(px * px + py * py);
    px /= norm;
    py /= norm;
    for (int i = -half_len; i <= half_len; ++i) {
        int x = static_cast<int>(std::lround(cx + px * i));
        int y = static_cast<int>(std::lround(cy + py * i));
        if (x >= 0 && x < w && y >= 0 && y < h) out.emplace_back(x, y);
    }
}

}  // namespace detail

/// Deterministic labeled event streams: a bar sweeping in one of up to eight
/// compass directions plus Bernoulli OFF-polarity pixel noise. Class label is
/// the motion direction.
inline std::vector<LabeledStream> synth_events(const SyntheticDatasetSpec& spec) {
    spec.validate();
    Rng root(spec.seed);

    std::vector<LabeledStream> out;
    out.reserve(static_cast<std::size_t>(spec.n_classes) * spec.samples_per_class);

    const int ticks = static_cast<int>(spec.duration_us / spec.dt_prime_us);
    const int half_len = std::max(1, std::min(spec.width, spec.height) / 3);

    for (int cls = 0; cls < spec.n_classes; ++cls) {
        for (int s = 0; s < spec.samples_per_class; ++s) {
            Rng rng = root.split(static_cast<std::uint64_t>(cls) * 100003ULL +
                                 static_cast<std::uint64_t>(s));
            double dx, dy;
            detail::direction(cls, dx, dy);

            // start near the opposite edge with a jittered offset
            double cx = spec.width / 2.0 - dx * spec.width / 2.5 + rng.uniform(-1.5, 1.5);
            double cy = spec.height / 2.0 - dy * spec.height / 2.5 + rng.uniform(-1.5, 1.5);
            double span = std::sqrt(dx * dx + dy * dy) > 1.1
                              ? std::max(spec.width, spec.height) * 1.15
                              : std::max(spec.width, spec.height) * 0.82;
            double step_x = dx * span / ticks;
            double step_y = dy * span / ticks;

            EventStream es;
            es.width = spec.width;
            es.height = spec.height;
            es.dt_prime_us = spec.dt_prime_us;

            std::vector<std::pair<int, int>> prev, cur;
            std::vector<Event> tick_events;
            for (int t = 0; t < ticks; ++t) {
                tick_events.clear();
                detail::bar_pixels(cx, cy, dx, dy, half_len, spec.width, spec.height, cur);
                std::int64_t ts = static_cast<std::int64_t>(t) * spec.dt_prime_us;

                // ON events where the bar newly covers a pixel, OFF where it left
                for (auto& p : cur)
                    if (std::find(prev.begin(), prev.end(), p) == prev.end())
                        tick_events.push_back({p.first, p.second, ts, +1});
                for (auto& p : prev)
                    if (std::find(cur.begin(), cur.end(), p) == cur.end())
                        tick_events.push_back({p.first, p.second, ts, -1});

                // background OFF noise
                if (spec.noise_rate > 0.0) {
                    for (int y = 0; y < spec.height; ++y)
                        for (int x = 0; x < spec.width; ++x)
                            if (rng.bernoulli(spec.noise_rate))
                                tick_events.push_back({x, y, ts, -1});
                }

                es.events.insert(es.events.end(), tick_events.begin(), tick_events.end());
                prev.swap(cur);
                cx += step_x;
                cy += step_y;
            }
            es.validate();
            out.push_back({std::move(es), cls});
        }
    }
    return out;
}

struct Dataset {
    std::vector<FrameSequence> samples;
    std::vector<int> labels;

    std::size_t size() const { return samples.size(); }
};

inline Dataset to_frames(const std::vector<LabeledStream>& streams, Rational dt_ms, int t_steps) {
    Dataset d;
    d.samples.reserve(streams.size());
    d.labels.reserve(streams.size());
    for (const auto& ls : streams) {
        d.samples.push_back(aggregate_frames(ls.stream, dt_ms, t_steps));
        d.labels.push_back(ls.label);
    }
    return d;
}

// ---------------------------------------------------------------------------
// Event text format: one-line header `width,height,dt_prime_us`, then one
// event per line as `x,y,t_us,p` with p in {1,-1}.
// ---------------------------------------------------------------------------

inline std::string write_event_text(const EventStream& stream) {
    std::ostringstream os;
    os << stream.width << "," << stream.height << "," << stream.dt_prime_us << "\n";
    for (const Event& e : stream.events)
        os << e.x << "," << e.y << "," << e.t_us << "," << e.polarity << "\n";
    return os.str();
}

inline void save_event_text(const EventStream& stream, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << write_event_text(stream);
    if (!f) throw IoError("write failed: " + path);
}

inline EventStream parse_event_text(std::istream& in, const std::string& origin = "<stream>") {
    EventStream es;
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    auto split4 = [&](const std::string& s, std::int64_t* out, int n) {
        std::stringstream ss(s);
        std::string tok;
        for (int i = 0; i < n; ++i) {
            if (!std::getline(ss, tok, ',')) fail("expected " + std::to_string(n) + " fields");
            try {
                out[i] = std::stoll(tok);
            } catch (...) {
                fail("not an integer: '" + tok + "'");
            }
        }
        if (std::getline(ss, tok, ',')) fail("trailing fields");
    };

    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::int64_t v[4];
        if (es.width == 0) {
            split4(line, v, 3);
            es.width = static_cast<int>(v[0]);
            es.height = static_cast<int>(v[1]);
            es.dt_prime_us = v[2];
        } else {
            split4(line, v, 4);
            es.events.push_back({static_cast<int>(v[0]), static_cast<int>(v[1]), v[2],
                                 static_cast<int>(v[3])});
        }
    }
    if (es.width == 0) throw ConfigError(origin + ": missing header line");
    es.validate();
    return es;
}

inline EventStream load_event_text(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    return parse_event_text(f, path);
}

// ---------------------------------------------------------------------------
// FrameSequence binary format: 8 little-endian uint32 header words
// (magic, version, T, channels, H, W, dt_ms numerator, dt_ms denominator)
// followed by float32 data in [t][c][h][w] order.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFrameMagic = 0x31515346;  // "FSQ1"
inline constexpr std::uint32_t kFrameVersion = 1;

inline void save_frames(const FrameSequence& seq, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    std::uint32_t header[8] = {kFrameMagic,
                               kFrameVersion,
                               static_cast<std::uint32_t>(seq.T),
                               static_cast<std::uint32_t>(seq.channels),
                               static_cast<std::uint32_t>(seq.height),
                               static_cast<std::uint32_t>(seq.width),
                               static_cast<std::uint32_t>(seq.dt_ms.num),
                               static_cast<std::uint32_t>(seq.dt_ms.den)};
    f.write(reinterpret_cast<const char*>(header), sizeof(header));
    std::vector<float> buf;
    for (const Tensor& frame : seq.frames) {
        buf.resize(frame.size());
        for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = static_cast<float>(frame[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw IoError("write failed: " + path);
}

inline FrameSequence load_frames(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    std::uint32_t header[8];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f || header[0] != kFrameMagic) throw IoError(path + ": not a frame sequence file");
    if (header[1] != kFrameVersion) throw IoError(path + ": unsupported version");
    FrameSequence seq;
    seq.T = static_cast<int>(header[2]);
    seq.channels = static_cast<int>(header[3]);
    seq.height = static_cast<int>(header[4]);
    seq.width = static_cast<int>(header[5]);
    seq.dt_ms = {static_cast<std::int64_t>(header[6]), static_cast<std::int64_t>(header[7])};
    seq.frames.assign(static_cast<std::size_t>(seq.T),
                      Tensor({seq.channels, seq.height, seq.width}));
    std::vector<float> buf;
    for (Tensor& frame : seq.frames) {
        buf.resize(frame.size());
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw IoError(path + ": truncated frame data");
        for (std::size_t i = 0; i < frame.size(); ++i) frame[i] = static_cast<double>(buf[i]);
    }
    return seq;
}

}  // namespace spikegate
