#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tiergan/error.hpp"
#include "tiergan/gan.hpp"

namespace tiergan {

// Flat key=value run configuration. Every key has a default; unknown keys are
// rejected; canonical() emits keys alphabetically and is byte-stable under
// re-parse.
struct RunConfig {
    std::size_t batch_size = 8;
    std::size_t checkpoint_every = 1;
    std::size_t epochs = 2000;
    std::vector<std::size_t> factors = {8, 4, 2};
    std::string g_loss_variant = "non_saturating";
    double init_std = 0.02;
    double leaky_alpha = 0.2;
    std::size_t log_every = 1;
    double lr_d = 0.00001;
    double lr_g = 0.0001;
    std::string noise_dist = "normal";
    std::string noise_kind = "latent";
    double prob_clamp = 1e-7;
    std::uint64_t seed = 42;
    std::size_t size = 128;
    std::string workdir = "work";

    static RunConfig parse(const std::string& text) {
        RunConfig cfg;
        std::istringstream in(text);
        std::string line;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const std::string trimmed = trim(line);
            if (trimmed.empty() || trimmed[0] == '#') continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" +
                                  trimmed + "'");
            cfg.set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
        }
        return cfg;
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError(path + ": cannot open config");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str());
    }

    void set(const std::string& key, const std::string& value) {
        if (key == "batch_size") batch_size = to_size(key, value);
        else if (key == "checkpoint_every") checkpoint_every = to_size(key, value);
        else if (key == "epochs") epochs = to_size(key, value);
        else if (key == "factors") factors = to_factors(value);
        else if (key == "g_loss_variant") g_loss_variant = check_enum(key, value, {"non_saturating", "saturating"});
        else if (key == "init_std") init_std = to_double(key, value);
        else if (key == "leaky_alpha") leaky_alpha = to_double(key, value);
        else if (key == "log_every") log_every = to_size(key, value);
        else if (key == "lr_d") lr_d = to_double(key, value);
        else if (key == "lr_g") lr_g = to_double(key, value);
        else if (key == "noise_dist") noise_dist = check_enum(key, value, {"normal", "uniform"});
        else if (key == "noise_kind") noise_kind = check_enum(key, value, {"latent", "image"});
        else if (key == "prob_clamp") prob_clamp = to_double(key, value);
        else if (key == "seed") seed = to_size(key, value);
        else if (key == "size") size = to_size(key, value);
        else if (key == "workdir") workdir = value;
        else throw ConfigError("unknown config key '" + key + "'");
    }

    std::string canonical() const {
        std::ostringstream os;
        os << "batch_size=" << batch_size << "\n";
        os << "checkpoint_every=" << checkpoint_every << "\n";
        os << "epochs=" << epochs << "\n";
        os << "factors=" << factors_str() << "\n";
        os << "g_loss_variant=" << g_loss_variant << "\n";
        os << "init_std=" << fmt(init_std) << "\n";
        os << "leaky_alpha=" << fmt(leaky_alpha) << "\n";
        os << "log_every=" << log_every << "\n";
        os << "lr_d=" << fmt(lr_d) << "\n";
        os << "lr_g=" << fmt(lr_g) << "\n";
        os << "noise_dist=" << noise_dist << "\n";
        os << "noise_kind=" << noise_kind << "\n";
        os << "prob_clamp=" << fmt(prob_clamp) << "\n";
        os << "seed=" << seed << "\n";
        os << "size=" << size << "\n";
        os << "workdir=" << workdir << "\n";
        return os.str();
    }

    std::string factors_str() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < factors.size(); ++i) {
            if (i) os << ",";
            os << factors[i];
        }
        return os.str();
    }

    TrainConfig to_train_config() const {
        TrainConfig tc;
        tc.epochs = epochs;
        tc.batch_size = batch_size;
        tc.lr_g = lr_g;
        tc.lr_d = lr_d;
        tc.seed = seed;
        tc.g_loss_variant = g_loss_variant == "saturating" ? GLossVariant::saturating
                                                           : GLossVariant::non_saturating;
        tc.log_every = log_every;
        tc.noise.kind = noise_kind == "image" ? NoiseKind::image_field : NoiseKind::latent_vector;
        tc.noise.dist = noise_dist == "uniform" ? NoiseDist::uniform : NoiseDist::normal;
        tc.noise.image_dims = {1, size, size};
        tc.leaky_alpha = leaky_alpha;
        tc.init_std = init_std;
        tc.prob_clamp = prob_clamp;
        tc.checkpoint_every = checkpoint_every;
        return tc;
    }

    static std::vector<std::size_t> to_factors(const std::string& value) {
        std::vector<std::size_t> out;
        std::istringstream ss(value);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_size("factors", trim(item)));
        if (out.empty()) throw ConfigError("factors: need at least one value");
        return out;
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r");
        std::size_t e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? "" : s.substr(b, e - b + 1);
    }

    static std::size_t to_size(const std::string& key, const std::string& value) {
        try {
            std::size_t pos = 0;
            unsigned long long v = std::stoull(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
        }
    }

    static double to_double(const std::string& key, const std::string& value) {
        try {
            std::size_t pos = 0;
            double v = std::stod(value, &pos);
            if (pos != value.size()) throw std::invalid_argument(value);
            return v;
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a number, got '" + value + "'");
        }
    }

    static std::string check_enum(const std::string& key, const std::string& value,
                                  std::initializer_list<const char*> allowed) {
        for (const char* a : allowed)
            if (value == a) return value;
        std::string opts;
        for (const char* a : allowed) opts += std::string(opts.empty() ? "" : "|") + a;
        throw ConfigError(key + ": expected one of " + opts + ", got '" + value + "'");
    }

    static std::string fmt(double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%g", v);
        return buf;
    }
};

} // namespace tiergan
