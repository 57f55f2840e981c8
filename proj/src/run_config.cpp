#include "irdseg/run_config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "irdseg/errors.hpp"
#include "irdseg/prng.hpp"

namespace irdseg {

namespace {

std::string trim(const std::string& s) {
    const std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Minimal TOML subset: [sections], key = value with strings, numbers,
// booleans and flat arrays. Tracks consumed keys so unknown ones can be
// named in the error.
class TomlTable {
public:
    TomlTable(const std::string& text, std::string origin) : origin_(std::move(origin)) {
        std::istringstream in(text);
        std::string line;
        std::string section;
        std::size_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            // strip comments outside quotes
            bool in_quote = false;
            for (std::size_t i = 0; i < line.size(); ++i) {
                if (line[i] == '"') in_quote = !in_quote;
                if (line[i] == '#' && !in_quote) {
                    line = line.substr(0, i);
                    break;
                }
            }
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') fail(lineno, "unterminated section header");
                section = trim(line.substr(1, line.size() - 2));
                if (section.empty()) fail(lineno, "empty section name");
                continue;
            }
            const std::size_t eq = line.find('=');
            if (eq == std::string::npos) fail(lineno, "expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (key.empty()) fail(lineno, "empty key");
            if (value.empty()) fail(lineno, "empty value for '" + qualify(section, key) + "'");
            const std::string full = qualify(section, key);
            if (values_.count(full)) fail(lineno, "duplicate key '" + full + "'");
            values_[full] = value;
        }
    }

    bool has(const std::string& full_key) const { return values_.count(full_key) != 0; }

    std::string get_string(const std::string& key) {
        const std::string raw = consume(key);
        if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') {
            throw ConfigError(origin_ + ": key '" + key + "' must be a quoted string");
        }
        return raw.substr(1, raw.size() - 2);
    }

    std::uint64_t get_uint(const std::string& key) {
        const std::string raw = consume(key);
        try {
            std::size_t used = 0;
            const std::uint64_t v = std::stoull(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (...) {
            throw ConfigError(origin_ + ": key '" + key + "' must be a nonnegative integer");
        }
    }

    double get_double(const std::string& key) {
        const std::string raw = consume(key);
        try {
            std::size_t used = 0;
            const double v = std::stod(raw, &used);
            if (used != raw.size()) throw std::invalid_argument(raw);
            return v;
        } catch (...) {
            throw ConfigError(origin_ + ": key '" + key + "' must be a number");
        }
    }

    bool get_bool(const std::string& key) {
        const std::string raw = consume(key);
        if (raw == "true") return true;
        if (raw == "false") return false;
        throw ConfigError(origin_ + ": key '" + key + "' must be true or false");
    }

    std::vector<std::size_t> get_uint_list(const std::string& key) {
        const std::string raw = consume(key);
        if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') {
            throw ConfigError(origin_ + ": key '" + key + "' must be a list");
        }
        std::vector<std::size_t> out;
        std::istringstream items(raw.substr(1, raw.size() - 2));
        std::string item;
        while (std::getline(items, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) continue;
            try {
                out.push_back(std::stoul(t));
            } catch (...) {
                throw ConfigError(origin_ + ": key '" + key + "' has a non-integer entry");
            }
        }
        return out;
    }

    std::vector<double> get_double_list(const std::string& key) {
        const std::string raw = consume(key);
        if (raw.size() < 2 || raw.front() != '[' || raw.back() != ']') {
            throw ConfigError(origin_ + ": key '" + key + "' must be a list");
        }
        std::vector<double> out;
        std::istringstream items(raw.substr(1, raw.size() - 2));
        std::string item;
        while (std::getline(items, item, ',')) {
            const std::string t = trim(item);
            if (t.empty()) continue;
            try {
                out.push_back(std::stod(t));
            } catch (...) {
                throw ConfigError(origin_ + ": key '" + key + "' has a non-numeric entry");
            }
        }
        return out;
    }

    void reject_unknown() const {
        for (const auto& [key, value] : values_) {
            if (!consumed_.count(key)) {
                throw ConfigError(origin_ + ": unknown key '" + key + "'");
            }
        }
    }

private:
    static std::string qualify(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }

    [[noreturn]] void fail(std::size_t lineno, const std::string& what) const {
        throw ConfigError(origin_ + ":" + std::to_string(lineno) + ": " + what);
    }

    std::string consume(const std::string& key) {
        const auto it = values_.find(key);
        if (it == values_.end()) {
            throw ConfigError(origin_ + ": missing key '" + key + "'");
        }
        consumed_.insert(key);
        return it->second;
    }

    std::string origin_;
    std::map<std::string, std::string> values_;
    std::set<std::string> consumed_;
};

std::string fmt_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

void RunConfig::reseed(std::uint64_t new_seed) {
    seed = new_seed;
    scene.seed = mix_seed(seed, 1);
    network.seed = mix_seed(seed, 2);
}

RunConfig RunConfig::from_text(const std::string& text, const std::string& origin) {
    TomlTable t(text, origin);
    RunConfig c;

    auto opt_uint = [&](const std::string& key, std::size_t& field) {
        if (t.has(key)) field = static_cast<std::size_t>(t.get_uint(key));
    };
    auto opt_double = [&](const std::string& key, double& field) {
        if (t.has(key)) field = t.get_double(key);
    };
    auto opt_bool = [&](const std::string& key, bool& field) {
        if (t.has(key)) field = t.get_bool(key);
    };

    if (t.has("seed")) c.seed = t.get_uint("seed");

    opt_uint("scene.height", c.scene.height);
    opt_uint("scene.width", c.scene.width);
    opt_uint("scene.n_classes", c.scene.n_classes);
    opt_uint("scene.min_primitives", c.scene.min_primitives);
    opt_uint("scene.max_primitives", c.scene.max_primitives);
    opt_double("scene.depth_min", c.scene.depth_min);
    opt_double("scene.depth_max", c.scene.depth_max);
    if (t.has("scene.albedo")) c.scene.albedo = t.get_double_list("scene.albedo");
    opt_double("scene.ir_noise_sigma", c.scene.ir_noise_sigma);
    opt_uint("scene.min_holes", c.scene.min_holes);
    opt_uint("scene.max_holes", c.scene.max_holes);
    opt_double("scene.hole_radius_min", c.scene.hole_radius_min);
    opt_double("scene.hole_radius_max", c.scene.hole_radius_max);
    opt_double("scene.min_depth_step", c.scene.min_depth_step);

    opt_uint("network.in_channels", c.network.in_channels);
    if (t.has("network.encoder_channels")) {
        c.network.encoder_channels = t.get_uint_list("network.encoder_channels");
    }
    opt_uint("network.kernel_size", c.network.kernel_size);
    if (t.has("network.conv_mode")) {
        c.network.conv_mode = conv_mode_from_string(t.get_string("network.conv_mode"));
    }
    opt_double("network.alpha", c.network.alpha);

    opt_double("train.learning_rate", c.train.learning_rate);
    opt_uint("train.epochs", c.train.epochs);
    opt_uint("train.batch_size", c.train.batch_size);
    opt_double("train.lambda_depth", c.train.lambda_depth);

    opt_bool("preprocess.enabled", c.preprocess.enabled);
    opt_bool("preprocess.equalize", c.preprocess.equalize);
    opt_double("preprocess.gamma", c.preprocess.gamma);

    opt_double("fill.tol", c.fill.tol);
    opt_uint("fill.neighbors", c.fill.neighbors);

    if (t.has("paths.data")) c.paths.data = t.get_string("paths.data");
    if (t.has("paths.out")) c.paths.out = t.get_string("paths.out");

    t.reject_unknown();

    c.network.n_classes = c.scene.n_classes;
    c.reseed(c.seed);

    if (c.fill.neighbors != 4 && c.fill.neighbors != 8) {
        throw ConfigError(origin + ": fill.neighbors must be 4 or 8");
    }
    if (!(c.fill.tol > 0.0)) throw ConfigError(origin + ": fill.tol must be > 0");
    if (!(c.preprocess.gamma > 0.0)) throw ConfigError(origin + ": preprocess.gamma must be > 0");
    if (c.train.batch_size == 0) throw ConfigError(origin + ": train.batch_size must be >= 1");
    if (c.train.lambda_depth < 0.0) {
        throw ConfigError(origin + ": train.lambda_depth must be >= 0");
    }
    c.scene.validate();
    c.network.validate();
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config: " + path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    return from_text(buffer.str(), path);
}

std::string RunConfig::canonical_text() const {
    std::ostringstream out;
    out << "seed = " << seed << "\n\n";

    out << "[scene]\n";
    out << "height = " << scene.height << "\n";
    out << "width = " << scene.width << "\n";
    out << "n_classes = " << scene.n_classes << "\n";
    out << "min_primitives = " << scene.min_primitives << "\n";
    out << "max_primitives = " << scene.max_primitives << "\n";
    out << "depth_min = " << fmt_double(scene.depth_min) << "\n";
    out << "depth_max = " << fmt_double(scene.depth_max) << "\n";
    if (!scene.albedo.empty()) {
        out << "albedo = [";
        for (std::size_t i = 0; i < scene.albedo.size(); ++i) {
            out << (i ? ", " : "") << fmt_double(scene.albedo[i]);
        }
        out << "]\n";
    }
    out << "ir_noise_sigma = " << fmt_double(scene.ir_noise_sigma) << "\n";
    out << "min_holes = " << scene.min_holes << "\n";
    out << "max_holes = " << scene.max_holes << "\n";
    out << "hole_radius_min = " << fmt_double(scene.hole_radius_min) << "\n";
    out << "hole_radius_max = " << fmt_double(scene.hole_radius_max) << "\n";
    out << "min_depth_step = " << fmt_double(scene.min_depth_step) << "\n\n";

    out << "[network]\n";
    out << "in_channels = " << network.in_channels << "\n";
    out << "encoder_channels = [";
    for (std::size_t i = 0; i < network.encoder_channels.size(); ++i) {
        out << (i ? ", " : "") << network.encoder_channels[i];
    }
    out << "]\n";
    out << "kernel_size = " << network.kernel_size << "\n";
    out << "conv_mode = \"" << to_string(network.conv_mode) << "\"\n";
    out << "alpha = " << fmt_double(network.alpha) << "\n\n";

    out << "[train]\n";
    out << "learning_rate = " << fmt_double(train.learning_rate) << "\n";
    out << "epochs = " << train.epochs << "\n";
    out << "batch_size = " << train.batch_size << "\n";
    out << "lambda_depth = " << fmt_double(train.lambda_depth) << "\n\n";

    out << "[preprocess]\n";
    out << "enabled = " << (preprocess.enabled ? "true" : "false") << "\n";
    out << "equalize = " << (preprocess.equalize ? "true" : "false") << "\n";
    out << "gamma = " << fmt_double(preprocess.gamma) << "\n\n";

    out << "[fill]\n";
    out << "tol = " << fmt_double(fill.tol) << "\n";
    out << "neighbors = " << fill.neighbors << "\n";

    if (!paths.data.empty() || !paths.out.empty()) {
        out << "\n[paths]\n";
        if (!paths.data.empty()) out << "data = \"" << paths.data << "\"\n";
        if (!paths.out.empty()) out << "out = \"" << paths.out << "\"\n";
    }
    return out.str();
}

}  // namespace irdseg
