#pragma once

// Flat `key = value` run configuration with `#` comments and comma-separated
// arrays. Unknown keys are rejected so typos cannot silently fall back to
// defaults. The resolved config echoes back to canonical text that reparses
// to an identical config.

#include "ege/layers.hpp"
#include "ege/model.hpp"

#include <array>
#include <fstream>
#include <map>
#include <sstream>

namespace ege {

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg, std::string key = "")
        : std::runtime_error(msg), bad_key(std::move(key)) {}
    std::string bad_key;
};

struct RunConfig {
    std::string data_dir;
    uint64_t data_seed = 0;
    double data_split_ratio = 0.7;
    std::string data_rotation = "right_angle";  // or "continuous"
    int image_size = 256;
    int train_epochs = 300;
    int train_batch_size = 8;
    bool train_augment = true;
    bool train_log_timing = true;
    double optim_lr = 1e-3;
    double optim_weight_decay = 1e-2;
    int sched_t_max = 50;
    double sched_eta_min = 1e-5;
    std::array<double, 6> loss_lambdas{1.0, 0.5, 0.4, 0.3, 0.2, 0.1};
    std::array<int, 6> model_channels{8, 16, 24, 32, 48, 64};
    std::string model_dw_style = "separable";  // or "depthwise_only"
    bool ghpa_multi_axis = true;
    bool ghpa_dw_on_p = true;
    bool ghpa_residual = false;
    bool gab_use_mask = true;
    bool gab_use_dilation = true;
    uint64_t seed = 0;

    ModelConfig model_config() const {
        ModelConfig m;
        m.channels = model_channels;
        m.input_size = image_size;
        m.dw_style = dw_style();
        m.ghpa_multi_axis = ghpa_multi_axis;
        m.ghpa_dw_on_p = ghpa_dw_on_p;
        m.ghpa_residual = ghpa_residual;
        m.gab_use_mask = gab_use_mask;
        m.gab_use_dilation = gab_use_dilation;
        m.seed = seed;
        m.validate();
        return m;
    }

    DwStyle dw_style() const {
        if (model_dw_style == "separable") return DwStyle::separable;
        if (model_dw_style == "depthwise_only") return DwStyle::depthwise_only;
        throw ConfigError("invalid model.dw_style: " + model_dw_style, "model.dw_style");
    }

    void validate() const {
        if (data_rotation != "right_angle" && data_rotation != "continuous")
            throw ConfigError("invalid data.rotation: " + data_rotation, "data.rotation");
        if (data_split_ratio <= 0.0 || data_split_ratio > 1.0)
            throw ConfigError("data.split_ratio must be in (0, 1]", "data.split_ratio");
        if (train_batch_size < 1) throw ConfigError("train.batch_size must be >= 1", "train.batch_size");
        if (train_epochs < 1) throw ConfigError("train.epochs must be >= 1", "train.epochs");
        if (sched_t_max < 1) throw ConfigError("sched.t_max must be >= 1", "sched.t_max");
        dw_style();
        try {
            model_config();
        } catch (const ValueError& e) {
            throw ConfigError(std::string("model config: ") + e.what());
        }
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key " + key + ": expected bool, got '" + v + "'", key);
}

template <typename T>
T parse_num(const std::string& v, const std::string& key) {
    std::istringstream is(v);
    T out;
    is >> out;
    if (is.fail() || !detail::trim(v.substr(static_cast<size_t>(is.tellg()) == std::string::npos
                                                ? v.size()
                                                : static_cast<size_t>(is.tellg())))
                          .empty())
        throw ConfigError("config key " + key + ": cannot parse number '" + v + "'", key);
    return out;
}

template <typename T, size_t N>
std::array<T, N> parse_array(const std::string& v, const std::string& key) {
    std::array<T, N> out{};
    std::stringstream ss(v);
    std::string item;
    size_t i = 0;
    while (std::getline(ss, item, ',')) {
        if (i >= N) throw ConfigError("config key " + key + ": expected " + std::to_string(N) +
                                      " comma-separated values", key);
        out[i++] = parse_num<T>(trim(item), key);
    }
    if (i != N)
        throw ConfigError("config key " + key + ": expected " + std::to_string(N) +
                          " comma-separated values, got " + std::to_string(i), key);
    return out;
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string val = detail::trim(line.substr(eq + 1));
        if (key == "data.dir") cfg.data_dir = val;
        else if (key == "data.seed") cfg.data_seed = detail::parse_num<uint64_t>(val, key);
        else if (key == "data.split_ratio") cfg.data_split_ratio = detail::parse_num<double>(val, key);
        else if (key == "data.rotation") cfg.data_rotation = val;
        else if (key == "image.size") cfg.image_size = detail::parse_num<int>(val, key);
        else if (key == "train.epochs") cfg.train_epochs = detail::parse_num<int>(val, key);
        else if (key == "train.batch_size") cfg.train_batch_size = detail::parse_num<int>(val, key);
        else if (key == "train.augment") cfg.train_augment = detail::parse_bool(val, key);
        else if (key == "train.log_timing") cfg.train_log_timing = detail::parse_bool(val, key);
        else if (key == "optim.lr") cfg.optim_lr = detail::parse_num<double>(val, key);
        else if (key == "optim.weight_decay")
            cfg.optim_weight_decay = detail::parse_num<double>(val, key);
        else if (key == "sched.t_max") cfg.sched_t_max = detail::parse_num<int>(val, key);
        else if (key == "sched.eta_min") cfg.sched_eta_min = detail::parse_num<double>(val, key);
        else if (key == "loss.lambdas") cfg.loss_lambdas = detail::parse_array<double, 6>(val, key);
        else if (key == "model.channels") cfg.model_channels = detail::parse_array<int, 6>(val, key);
        else if (key == "model.dw_style") cfg.model_dw_style = val;
        else if (key == "ghpa.multi_axis") cfg.ghpa_multi_axis = detail::parse_bool(val, key);
        else if (key == "ghpa.dw_on_p") cfg.ghpa_dw_on_p = detail::parse_bool(val, key);
        else if (key == "ghpa.residual") cfg.ghpa_residual = detail::parse_bool(val, key);
        else if (key == "gab.use_mask") cfg.gab_use_mask = detail::parse_bool(val, key);
        else if (key == "gab.use_dilation") cfg.gab_use_dilation = detail::parse_bool(val, key);
        else if (key == "seed") cfg.seed = detail::parse_num<uint64_t>(val, key);
        else throw ConfigError("unknown config key: " + key, key);
    }
    cfg.validate();
    return cfg;
}

inline RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config: " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_config_text(ss.str());
}

inline std::string render_config(const RunConfig& c) {
    std::ostringstream os;
    os.precision(17);
    auto arr = [&](const auto& a) {
        std::ostringstream s;
        s.precision(17);
        for (size_t i = 0; i < a.size(); ++i) s << (i ? "," : "") << a[i];
        return s.str();
    };
    os << "data.dir = " << c.data_dir << '\n';
    os << "data.seed = " << c.data_seed << '\n';
    os << "data.split_ratio = " << c.data_split_ratio << '\n';
    os << "data.rotation = " << c.data_rotation << '\n';
    os << "image.size = " << c.image_size << '\n';
    os << "train.epochs = " << c.train_epochs << '\n';
    os << "train.batch_size = " << c.train_batch_size << '\n';
    os << "train.augment = " << (c.train_augment ? "true" : "false") << '\n';
    os << "train.log_timing = " << (c.train_log_timing ? "true" : "false") << '\n';
    os << "optim.lr = " << c.optim_lr << '\n';
    os << "optim.weight_decay = " << c.optim_weight_decay << '\n';
    os << "sched.t_max = " << c.sched_t_max << '\n';
    os << "sched.eta_min = " << c.sched_eta_min << '\n';
    os << "loss.lambdas = " << arr(c.loss_lambdas) << '\n';
    os << "model.channels = " << arr(c.model_channels) << '\n';
    os << "model.dw_style = " << c.model_dw_style << '\n';
    os << "ghpa.multi_axis = " << (c.ghpa_multi_axis ? "true" : "false") << '\n';
    os << "ghpa.dw_on_p = " << (c.ghpa_dw_on_p ? "true" : "false") << '\n';
    os << "ghpa.residual = " << (c.ghpa_residual ? "true" : "false") << '\n';
    os << "gab.use_mask = " << (c.gab_use_mask ? "true" : "false") << '\n';
    os << "gab.use_dilation = " << (c.gab_use_dilation ? "true" : "false") << '\n';
    os << "seed = " << c.seed << '\n';
    return os.str();
}

}  // namespace ege
