#include "certsim/config.hpp"

#include <fstream>
#include <sstream>

#include "certsim/errors.hpp"

namespace certsim {

void TrainConfig::validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(hinge_margin > 0.0)) throw ConfigError("hinge_margin must be positive");
    if (jitter_weight < 0.0) throw ConfigError("jitter_weight must be non-negative");
}

namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("bad numeric value '" + v + "' for key '" + key + "'");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        unsigned long long u = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return u;
    } catch (const std::exception&) {
        throw ConfigError("bad integer value '" + v + "' for key '" + key + "'");
    }
}

} // namespace

RunConfig parse_config_text(const std::string& text) {
    RunConfig cfg;
    std::istringstream is(text);
    std::string line;
    size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': " + t);
        }
        const std::string key = trim(t.substr(0, eq));
        const std::string val = trim(t.substr(eq + 1));
        if (key == "optimizer") {
            if (val == "sgd") cfg.train.optimizer = OptimizerKind::sgd;
            else if (val == "adam") cfg.train.optimizer = OptimizerKind::adam;
            else throw ConfigError("optimizer must be 'sgd' or 'adam', got '" + val + "'");
        } else if (key == "learning_rate") {
            cfg.train.learning_rate = parse_double(key, val);
        } else if (key == "batch_size") {
            cfg.train.batch_size = parse_u64(key, val);
        } else if (key == "epochs") {
            cfg.train.epochs = parse_u64(key, val);
        } else if (key == "hinge_margin") {
            cfg.train.hinge_margin = parse_double(key, val);
        } else if (key == "jitter_weight") {
            cfg.train.jitter_weight = parse_double(key, val);
        } else if (key == "jitter_target") {
            if (val == "student") cfg.train.jitter_target = JitterTarget::student_standard;
            else if (val == "teacher") cfg.train.jitter_target = JitterTarget::teacher;
            else throw ConfigError("jitter_target must be 'student' or 'teacher', got '" + val + "'");
        } else if (key == "seed") {
            cfg.train.seed = parse_u64(key, val);
        } else if (key == "aug_flip_prob") {
            cfg.augment.flip_prob = parse_double(key, val);
        } else if (key == "aug_brightness_lo") {
            cfg.augment.brightness[0] = parse_double(key, val);
        } else if (key == "aug_brightness_hi") {
            cfg.augment.brightness[1] = parse_double(key, val);
        } else if (key == "aug_contrast_lo") {
            cfg.augment.contrast[0] = parse_double(key, val);
        } else if (key == "aug_contrast_hi") {
            cfg.augment.contrast[1] = parse_double(key, val);
        } else if (key == "aug_saturation_lo") {
            cfg.augment.saturation[0] = parse_double(key, val);
        } else if (key == "aug_saturation_hi") {
            cfg.augment.saturation[1] = parse_double(key, val);
        } else if (key == "aug_hue_shift") {
            cfg.augment.hue_shift = parse_double(key, val);
        } else {
            throw ConfigError("unknown config key '" + key + "'");
        }
    }
    cfg.train.validate();
    cfg.augment.validate();
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

} // namespace certsim
