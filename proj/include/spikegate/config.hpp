#pragma once

#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "spikegate/attention.hpp"
#include "spikegate/energy.hpp"
#include "spikegate/events.hpp"
#include "spikegate/network.hpp"
#include "spikegate/residual.hpp"
#include "spikegate/train.hpp"

namespace spikegate {

// ---------------------------------------------------------------------------
// Flat sectioned key=value configuration:
//
//   # comment
//   [section]
//   key = value
//
// Unknown keys are rejected at RunConfig assembly so typos surface early.
// ---------------------------------------------------------------------------

class ConfigFile {
  public:
    struct Entry {
        std::string value;
        int line = 0;
        mutable bool used = false;
    };

    static ConfigFile parse(std::istream& in, const std::string& origin) {
        ConfigFile cf;
        cf.origin_ = origin;
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            std::string t = trim(line);
            if (t.empty() || t[0] == '#' || t[0] == ';') continue;
            if (t.front() == '[') {
                if (t.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) +
                                      ": malformed section header '" + t + "'");
                section = trim(t.substr(1, t.size() - 2));
                if (section.empty())
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty section name");
                continue;
            }
            auto eq = t.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected key = value, got '" + t + "'");
            std::string key = trim(t.substr(0, eq));
            std::string val = trim(t.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": key '" + key + "' outside any [section]");
            cf.values_[section + "." + key] = Entry{val, lineno, false};
        }
        return cf;
    }

    static ConfigFile parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("cannot open config: " + path);
        return parse(f, path);
    }

    /// `--set section.key=value` override.
    void set(const std::string& dotted_key, const std::string& value) {
        if (dotted_key.find('.') == std::string::npos)
            throw ConfigError("--set expects section.key=value, got '" + dotted_key + "'");
        values_[dotted_key] = Entry{value, 0, false};
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_str(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        it->second.used = true;
        return it->second.value;
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        it->second.used = true;
        try {
            std::size_t pos = 0;
            long long v = std::stoll(it->second.value, &pos);
            if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (...) {
            throw ConfigError(where(it) + ": '" + key + "' expects an integer, got '" +
                              it->second.value + "'");
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        it->second.used = true;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second.value, &pos);
            if (pos != it->second.value.size()) throw std::invalid_argument("trailing");
            return v;
        } catch (...) {
            throw ConfigError(where(it) + ": '" + key + "' expects a number, got '" +
                              it->second.value + "'");
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        it->second.used = true;
        const std::string& v = it->second.value;
        if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
        if (v == "0" || v == "false" || v == "no" || v == "off") return false;
        throw ConfigError(where(it) + ": '" + key + "' expects a boolean, got '" + v + "'");
    }

    Rational get_rational(const std::string& key, Rational fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        it->second.used = true;
        const std::string& v = it->second.value;
        try {
            auto slash = v.find('/');
            if (slash == std::string::npos) return Rational{std::stoll(v), 1};
            return Rational{std::stoll(v.substr(0, slash)), std::stoll(v.substr(slash + 1))};
        } catch (...) {
            throw ConfigError(where(it) + ": '" + key + "' expects N or N/D, got '" + v + "'");
        }
    }

    /// Keys never read by the assembler are almost certainly typos.
    void reject_unused() const {
        for (const auto& [key, entry] : values_)
            if (!entry.used)
                throw ConfigError(where_key(key, entry) + ": unknown key '" + key + "'");
    }

    const std::string& origin() const { return origin_; }

  private:
    static std::string trim(const std::string& s) {
        std::size_t a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        std::size_t b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }
    std::string where(std::map<std::string, Entry>::const_iterator it) const {
        return origin_ + ":" + std::to_string(it->second.line);
    }
    std::string where_key(const std::string&, const Entry& e) const {
        return origin_ + ":" + std::to_string(e.line);
    }

    std::string origin_ = "<config>";
    std::map<std::string, Entry> values_;
};

// ---------------------------------------------------------------------------
// RunConfig: everything one CLI invocation needs.
// ---------------------------------------------------------------------------

enum class ArchKind { Plain, Residual };

struct ResArchConfig {
    int channels = 8;
    int depth = 8;
    AttResVariant variant = AttResVariant::V1;
    double zeta = 0.1;
};

struct RunConfig {
    SyntheticDatasetSpec dataset;
    int test_samples_per_class = 4;
    Rational dt_ms{2, 1};
    int t_steps = 16;

    ArchKind arch = ArchKind::Plain;
    std::vector<ConvSpec> stages;
    ResArchConfig residual;

    AttentionConfig attention;
    LIFParams lif;
    SurrogateParams surrogate;
    ReadoutKind readout = ReadoutKind::MeanMembrane;

    TrainConfig train;
    EnergyConstants energy;

    std::string out_dir = "out";
    std::string checkpoint;
    std::uint64_t seed = 1;

    Rng data_rng() const { return Rng(seed).split(0xDA7A); }
    Rng test_data_rng() const { return Rng(seed).split(0xE57); }
    Rng net_rng() const { return Rng(seed).split(0x11E7); }

    /// The [attention].enabled combo grammar: none | ta | ca | sa | tca |
    /// tsa | csa | tcsa (the dimension subsets).
    static void apply_combo(AttentionConfig& attn, const std::string& combo,
                            const std::string& diag) {
        attn.ta = attn.ca = attn.sa = false;
        if (combo == "none") return;
        std::string c = combo;
        if (c == "tcsa" || c == "tca" || c == "tsa" || c == "ta") attn.ta = true;
        if (c == "tcsa" || c == "tca" || c == "csa" || c == "ca") attn.ca = true;
        if (c == "tcsa" || c == "tsa" || c == "csa" || c == "sa") attn.sa = true;
        if (!attn.ta && !attn.ca && !attn.sa)
            throw ConfigError(diag + ": unknown attention combo '" + combo +
                              "' (expected none|ta|ca|sa|tca|tsa|csa|tcsa)");
    }

    static AttnLocation parse_location(const std::string& v, const std::string& diag) {
        if (v == "conv_pre") return AttnLocation::ConvPRE;
        if (v == "conv_post") return AttnLocation::ConvPOST;
        if (v == "activate_pre") return AttnLocation::ActivatePRE;
        throw ConfigError(diag + ": unknown location '" + v +
                          "' (expected conv_pre|conv_post|activate_pre)");
    }

    static std::vector<ConvSpec> parse_stages(const std::string& v, const std::string& diag) {
        // comma list of in:out:k:pool tuples
        std::vector<ConvSpec> out;
        std::stringstream ss(v);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            std::stringstream ts(tok);
            std::string part;
            std::vector<int> nums;
            while (std::getline(ts, part, ':')) {
                try {
                    nums.push_back(std::stoi(part));
                } catch (...) {
                    throw ConfigError(diag + ": bad stage tuple '" + tok + "'");
                }
            }
            if (nums.size() != 4)
                throw ConfigError(diag + ": stage tuple '" + tok + "' needs in:out:k:pool");
            ConvSpec cs;
            cs.in_ch = nums[0];
            cs.out_ch = nums[1];
            cs.k = nums[2];
            cs.pool = nums[3];
            out.push_back(cs);
        }
        if (out.empty()) throw ConfigError(diag + ": empty stage list");
        return out;
    }

    static RunConfig assemble(const ConfigFile& cf) {
        RunConfig rc;
        const std::string& o = cf.origin();

        rc.seed = static_cast<std::uint64_t>(cf.get_int("run.seed", 1));
        rc.out_dir = cf.get_str("run.out_dir", "out");
        rc.checkpoint = cf.get_str("run.checkpoint", "");

        rc.dataset.n_classes = static_cast<int>(cf.get_int("dataset.n_classes", 4));
        rc.dataset.samples_per_class =
            static_cast<int>(cf.get_int("dataset.samples_per_class", 16));
        rc.test_samples_per_class =
            static_cast<int>(cf.get_int("dataset.test_samples_per_class", 4));
        rc.dataset.width = static_cast<int>(cf.get_int("dataset.width", 16));
        rc.dataset.height = static_cast<int>(cf.get_int("dataset.height", 16));
        rc.dataset.duration_us = cf.get_int("dataset.duration_us", 32000);
        rc.dataset.dt_prime_us = cf.get_int("dataset.dt_prime_us", 1000);
        rc.dataset.noise_rate = cf.get_double("dataset.noise_rate", 0.02);
        rc.dataset.seed = rc.data_rng().next_u64();

        rc.dt_ms = cf.get_rational("frames.dt_ms", Rational{2, 1});
        rc.t_steps = static_cast<int>(cf.get_int("frames.t_steps", 16));

        std::string arch = cf.get_str("arch.type", "plain");
        if (arch == "plain")
            rc.arch = ArchKind::Plain;
        else if (arch == "residual")
            rc.arch = ArchKind::Residual;
        else
            throw ConfigError(o + ": arch.type expects plain|residual, got '" + arch + "'");
        rc.stages = parse_stages(cf.get_str("arch.stages", "2:8:3:2,8:16:3:2,16:16:3:1"), o);
        rc.residual.channels = static_cast<int>(cf.get_int("arch.res_channels", 8));
        rc.residual.depth = static_cast<int>(cf.get_int("arch.res_depth", 8));
        rc.residual.zeta = cf.get_double("arch.res_zeta", 0.1);
        long long variant = cf.get_int("arch.res_variant", 1);
        if (variant != 1 && variant != 2)
            throw ConfigError(o + ": arch.res_variant expects 1 or 2");
        rc.residual.variant = variant == 1 ? AttResVariant::V1 : AttResVariant::V2;

        apply_combo(rc.attention, cf.get_str("attention.enabled", "none"), o);
        rc.attention.r_t = static_cast<int>(cf.get_int("attention.r_t", 2));
        rc.attention.r_c = static_cast<int>(cf.get_int("attention.r_c", 4));
        rc.attention.sa_kernel = static_cast<int>(cf.get_int("attention.sa_kernel", 7));
        rc.attention.ta_loc = parse_location(cf.get_str("attention.ta_location", "conv_post"), o);
        rc.attention.ca_loc =
            parse_location(cf.get_str("attention.ca_location", "activate_pre"), o);
        rc.attention.sa_loc =
            parse_location(cf.get_str("attention.sa_location", "activate_pre"), o);
        rc.attention.pin_identity = cf.get_bool("attention.pin_identity", false);
        rc.attention.validate();

        rc.lif.u_th = cf.get_double("lif.u_th", 0.5);
        rc.lif.v_reset = cf.get_double("lif.v_reset", 0.0);
        rc.lif.beta = cf.get_double("lif.beta", 0.25);
        rc.lif.validate();

        std::string sg_kind = cf.get_str("surrogate.kind", "rectangular");
        if (sg_kind == "rectangular")
            rc.surrogate.kind = SurrogateKind::Rectangular;
        else if (sg_kind == "triangular")
            rc.surrogate.kind = SurrogateKind::Triangular;
        else
            throw ConfigError(o + ": surrogate.kind expects rectangular|triangular");
        rc.surrogate.a = cf.get_double("surrogate.a", 0.5 * rc.lif.u_th);
        rc.surrogate.validate();

        std::string readout = cf.get_str("train.readout", "mean_membrane");
        if (readout == "mean_membrane")
            rc.readout = ReadoutKind::MeanMembrane;
        else if (readout == "spike_count")
            rc.readout = ReadoutKind::SpikeCount;
        else
            throw ConfigError(o + ": train.readout expects mean_membrane|spike_count");

        rc.train.epochs = static_cast<int>(cf.get_int("train.epochs", 30));
        rc.train.batch_size = static_cast<int>(cf.get_int("train.batch_size", 16));
        rc.train.learning_rate = cf.get_double("train.learning_rate", 0.1);
        rc.train.momentum = cf.get_double("train.momentum", 0.9);
        std::string opt = cf.get_str("train.optimizer", "sgd_momentum");
        if (opt == "sgd_momentum")
            rc.train.optimizer = OptimizerKind::SgdMomentum;
        else if (opt == "adam")
            rc.train.optimizer = OptimizerKind::Adam;
        else
            throw ConfigError(o + ": train.optimizer expects sgd_momentum|adam");
        rc.train.seed = rc.seed;
        rc.train.validate();

        rc.energy.e_mac = cf.get_double("energy.e_mac", 4.6);
        rc.energy.e_ac = cf.get_double("energy.e_ac", 0.9);
        rc.energy.validate();

        cf.reject_unused();
        rc.dataset.validate();
        if (rc.t_steps < 1) throw ConfigError(o + ": frames.t_steps must be >= 1");
        return rc;
    }

    PlainNetSpec plain_net_spec() const {
        PlainNetSpec spec;
        spec.input_ch = 2;
        spec.input_h = dataset.height;
        spec.input_w = dataset.width;
        spec.t_steps = t_steps;
        spec.n_classes = dataset.n_classes;
        spec.lif = lif;
        spec.sg = surrogate;
        spec.readout = readout;
        for (const ConvSpec& cs : stages) spec.stages.push_back({cs, attention});
        return spec;
    }

    Dataset make_train_data() const {
        SyntheticDatasetSpec d = dataset;
        d.seed = Rng(seed).split(0xDA7A).next_u64();
        return to_frames(synth_events(d), dt_ms, t_steps);
    }
    Dataset make_test_data() const {
        SyntheticDatasetSpec d = dataset;
        d.samples_per_class = test_samples_per_class;
        d.seed = Rng(seed).split(0xE57).next_u64();
        return to_frames(synth_events(d), dt_ms, t_steps);
    }
};

}  // namespace spikegate
