#pragma once

#include <algorithm>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "spikegate/energy.hpp"
#include "spikegate/events.hpp"
#include "spikegate/network.hpp"
#include "spikegate/param.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

/// Cross entropy on the rate readout. Returns the loss and writes
/// d(loss)/d(logits) into dlogits (not yet divided by the batch size).
inline double softmax_cross_entropy(const Tensor& logits, int label, Tensor& dlogits) {
    const std::size_t k = logits.size();
    double mx = logits[0];
    for (std::size_t i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < k; ++i) z += std::exp(logits[i] - mx);
    const double log_z = std::log(z) + mx;
    dlogits = Tensor({static_cast<int>(k)});
    for (std::size_t i = 0; i < k; ++i) {
        const double p = std::exp(logits[i] - log_z);
        dlogits[i] = p - (static_cast<int>(i) == label ? 1.0 : 0.0);
    }
    return log_z - logits[static_cast<std::size_t>(label)];
}

inline int argmax(const Tensor& v) {
    int best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
    return best;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

class SgdMomentum {
  public:
    SgdMomentum(double lr, double momentum = 0.9) : lr_(lr), momentum_(momentum) {}

    void step(std::vector<ParamRef>& params) {
        if (vel_.empty())
            for (const ParamRef& p : params) vel_.push_back(Tensor::zeros_like(*p.value));
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable || params[i].grad == nullptr) continue;
            Tensor& v = vel_[i];
            Tensor& w = *params[i].value;
            const Tensor& g = *params[i].grad;
            for (std::size_t j = 0; j < w.size(); ++j) {
                v[j] = momentum_ * v[j] + g[j];
                w[j] -= lr_ * v[j];
            }
        }
    }

  private:
    double lr_, momentum_;
    std::vector<Tensor> vel_;
};

class Adam {
  public:
    Adam(double lr, double b1 = 0.9, double b2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(b1), b2_(b2), eps_(eps) {}

    void step(std::vector<ParamRef>& params) {
        if (m_.empty())
            for (const ParamRef& p : params) {
                m_.push_back(Tensor::zeros_like(*p.value));
                v_.push_back(Tensor::zeros_like(*p.value));
            }
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (!params[i].trainable || params[i].grad == nullptr) continue;
            Tensor& w = *params[i].value;
            const Tensor& g = *params[i].grad;
            for (std::size_t j = 0; j < w.size(); ++j) {
                m_[i][j] = b1_ * m_[i][j] + (1.0 - b1_) * g[j];
                v_[i][j] = b2_ * v_[i][j] + (1.0 - b2_) * g[j] * g[j];
                w[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

  private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Tensor> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

enum class OptimizerKind { SgdMomentum, Adam };

struct TrainConfig {
    int epochs = 20;
    int batch_size = 16;
    double learning_rate = 0.1;
    double momentum = 0.9;
    OptimizerKind optimizer = OptimizerKind::SgdMomentum;
    std::uint64_t seed = 1;

    void validate() const {
        if (epochs < 1 || batch_size < 1 || !(learning_rate >= 0.0))
            throw ConfigError("TrainConfig: hyperparameters must be positive");
    }
};

struct EpochRow {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
    double nasar = 0.0;
};

struct TrainReport {
    std::vector<EpochRow> rows;

    double final_loss() const { return rows.empty() ? 0.0 : rows.back().loss; }
    double final_accuracy() const { return rows.empty() ? 0.0 : rows.back().accuracy; }

    std::string to_csv() const {
        std::ostringstream os;
        os << std::setprecision(17);
        os << "epoch,loss,accuracy,nasar\n";
        for (const auto& r : rows)
            os << r.epoch << "," << r.loss << "," << r.accuracy << "," << r.nasar << "\n";
        return os.str();
    }
};

inline Block batch_frames(const Dataset& data, const std::vector<std::size_t>& idx) {
    Block block;
    block.reserve(idx.size());
    for (std::size_t i : idx) block.push_back(data.samples[i].frames);
    return block;
}

/// Surrogate-gradient BPTT over the full dataset. Deterministic given
/// (seed, config, dataset): one logical thread, batch order from the split
/// seed stream.
inline TrainReport bptt_train(PlainNet& net, const Dataset& data, const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("bptt_train: empty dataset");
    std::vector<ParamRef> params = net.params();
    SgdMomentum sgd(cfg.learning_rate, cfg.momentum);
    Adam adam(cfg.learning_rate);
    Rng shuffle_rng = Rng(cfg.seed).split(0xBA7C);

    TrainReport report;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        SpikeCounter counter(net.neurons_per_stage(), net.spec().t_steps);
        double loss_sum = 0.0;
        long correct = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<std::size_t> idx(
                order.begin() + static_cast<std::ptrdiff_t>(start),
                order.begin() + static_cast<std::ptrdiff_t>(
                                    std::min(order.size(),
                                             start + static_cast<std::size_t>(cfg.batch_size))));
            Block frames = batch_frames(data, idx);
            std::vector<Tensor> logits = net.forward(frames, RunMode::Spiking, true, &counter);
            std::vector<Tensor> dlogits(idx.size());
            for (std::size_t b = 0; b < idx.size(); ++b) {
                double l = softmax_cross_entropy(logits[b], data.labels[idx[b]], dlogits[b]);
                if (!std::isfinite(l))
                    throw NumericError("bptt_train: non-finite loss at epoch " +
                                       std::to_string(epoch) + ", sample " +
                                       std::to_string(idx[b]));
                dlogits[b].scale(1.0 / static_cast<double>(idx.size()));
                loss_sum += l;
                if (argmax(logits[b]) == data.labels[idx[b]]) ++correct;
            }
            zero_grads(params);
            net.backward(dlogits);
            if (cfg.optimizer == OptimizerKind::SgdMomentum)
                sgd.step(params);
            else
                adam.step(params);
        }
        EpochRow row;
        row.epoch = epoch;
        row.loss = loss_sum / static_cast<double>(data.size());
        row.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
        row.nasar = nasar(counter.record()).nasar;
        report.rows.push_back(row);
    }
    return report;
}

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    SpikeRecord record;
};

/// Inference pass (running BN statistics, no parameter updates).
inline EvalResult evaluate(PlainNet& net, const Dataset& data, int batch_size = 32) {
    EvalResult res;
    SpikeCounter counter(net.neurons_per_stage(), net.spec().t_steps);
    long correct = 0;
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < data.size();
         start += static_cast<std::size_t>(batch_size)) {
        std::vector<std::size_t> idx;
        for (std::size_t i = start;
             i < std::min(data.size(), start + static_cast<std::size_t>(batch_size)); ++i)
            idx.push_back(i);
        Block frames = batch_frames(data, idx);
        std::vector<Tensor> logits = net.forward(frames, RunMode::Spiking, false, &counter);
        for (std::size_t b = 0; b < idx.size(); ++b) {
            Tensor dummy;
            loss_sum += softmax_cross_entropy(logits[b], data.labels[idx[b]], dummy);
            if (argmax(logits[b]) == data.labels[idx[b]]) ++correct;
        }
    }
    res.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    res.loss = loss_sum / static_cast<double>(data.size());
    res.record = counter.record();
    return res;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient verification (relaxed mode)
// ---------------------------------------------------------------------------

struct FdCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
};

/// Compares analytic gradients against central differences on randomly chosen
/// trainable parameters. The forward runs in relaxed mode (spike replaced by
/// the surrogate integral) so the map is differentiable; the true spiking
/// forward is discontinuous and not FD-checkable. Relative error uses
/// |a - fd| / max(|a|, |fd|, 1e-6) so that jointly-vanishing pairs pass.
inline FdCheckResult finite_diff_check(PlainNet& net, const FrameSequence& sample, int label,
                                       double epsilon, int n_params, Rng rng) {
    std::vector<ParamRef> params = net.params();
    std::vector<ParamRef> trainable;
    for (const ParamRef& p : params)
        if (p.trainable && p.grad != nullptr) trainable.push_back(p);

    Block frames{sample.frames};
    auto loss_of = [&]() {
        std::vector<Tensor> logits = net.forward(frames, RunMode::Relaxed, true, nullptr);
        Tensor d;
        return softmax_cross_entropy(logits[0], label, d);
    };

    // analytic pass
    zero_grads(params);
    std::vector<Tensor> logits = net.forward(frames, RunMode::Relaxed, true, nullptr);
    Tensor dlogits;
    (void)softmax_cross_entropy(logits[0], label, dlogits);
    net.backward({dlogits});

    FdCheckResult res;
    for (int n = 0; n < n_params; ++n) {
        const std::size_t pi = static_cast<std::size_t>(rng.below(trainable.size()));
        Tensor& w = *trainable[pi].value;
        const std::size_t si = static_cast<std::size_t>(rng.below(w.size()));
        const double analytic = (*trainable[pi].grad)[si];
        const double saved = w[si];
        w[si] = saved + epsilon;
        const double lp = loss_of();
        w[si] = saved - epsilon;
        const double lm = loss_of();
        w[si] = saved;
        const double fd = (lp - lm) / (2.0 * epsilon);
        if (!std::isfinite(fd) || !std::isfinite(analytic))
            throw NumericError("finite_diff_check: non-finite gradient");
        const double err = std::fabs(analytic - fd) /
                           std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
        res.max_rel_error = std::max(res.max_rel_error, err);
        ++res.checked;
    }
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: manifest (names, shapes) followed by float64 data blobs.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointMagic = 0x474b5053;  // "SPKG"
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void save_checkpoint(std::vector<ParamRef> params, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    auto put_u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    put_u32(kCheckpointMagic);
    put_u32(kCheckpointVersion);
    put_u32(static_cast<std::uint32_t>(params.size()));
    for (const ParamRef& p : params) {
        put_u32(static_cast<std::uint32_t>(p.name.size()));
        f.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        put_u32(static_cast<std::uint32_t>(p.value->rank()));
        for (int d : p.value->shape()) put_u32(static_cast<std::uint32_t>(d));
    }
    for (const ParamRef& p : params)
        f.write(reinterpret_cast<const char*>(p.value->data()),
                static_cast<std::streamsize>(p.value->size() * sizeof(double)));
    if (!f) throw IoError("write failed: " + path);
}

inline void load_checkpoint(std::vector<ParamRef> params, const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    auto get_u32 = [&]() {
        std::uint32_t v = 0;
        f.read(reinterpret_cast<char*>(&v), 4);
        if (!f) throw IoError(path + ": truncated checkpoint");
        return v;
    };
    if (get_u32() != kCheckpointMagic) throw IoError(path + ": not a checkpoint file");
    if (get_u32() != kCheckpointVersion) throw IoError(path + ": unsupported checkpoint version");
    const std::uint32_t n = get_u32();
    if (n != params.size())
        throw IoError(path + ": checkpoint has " + std::to_string(n) + " tensors, model has " +
                      std::to_string(params.size()));
    for (ParamRef& p : params) {
        const std::uint32_t len = get_u32();
        std::string name(len, '\0');
        f.read(name.data(), len);
        if (name != p.name)
            throw IoError(path + ": tensor name mismatch: '" + name + "' vs '" + p.name + "'");
        const std::uint32_t rank = get_u32();
        std::vector<int> dims(rank);
        for (auto& d : dims) d = static_cast<int>(get_u32());
        if (dims != p.value->shape())
            throw IoError(path + ": shape mismatch for " + p.name);
    }
    for (ParamRef& p : params) {
        f.read(reinterpret_cast<char*>(p.value->data()),
               static_cast<std::streamsize>(p.value->size() * sizeof(double)));
        if (!f) throw IoError(path + ": truncated tensor data");
    }
}

}  // namespace spikegate
