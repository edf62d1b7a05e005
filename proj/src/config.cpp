#include "uqadv/config.hpp"

#include <charconv>
#include <cstdio>
#include <sstream>

#include "uqadv/io.hpp"

namespace uqadv {

const std::vector<ConfigKey>& config_schema() {
    using enum ValueType;
    static const std::vector<ConfigKey> schema = {
        {"seed", integer, "0", "master seed; every sub-seed is derived from it"},
        {"output_dir", text, "out", "directory for experiment reports"},
        {"experiment", text, "", "experiment selected by `run` when --experiment is absent"},

        {"data.n", integer, "5000", "training set size"},
        {"data.test_n", integer, "1000", "test set size"},
        {"data.dim", integer, "32", "input dimension D"},
        {"data.classes", integer, "3", "number of classes"},
        {"data.components", integer, "5", "Gaussian components per class"},
        {"data.sigma_z", real, "0.35", "latent component standard deviation"},
        {"data.sigma_x", real, "0.05", "observation noise standard deviation"},
        {"data.class_radius", real, "2.0", "radius of the circle holding the class centres"},
        {"data.component_spread", real, "0.9", "component scatter radius around a class centre"},
        {"data.decoder_hidden", integer, "16", "decoder hidden width"},
        {"data.decoder_frequency", real, "0.3", "decoder first-layer weight scale"},
        {"data.decoder_scale", real, "0.3", "decoder output scale"},
        {"data.decoder_seed", integer, "0", "decoder parameter seed"},
        {"data.path", text, "", "load the training set from this MMAN file instead of sampling"},

        {"density.quad_resolution", integer, "200", "quadrature lattice points per latent axis"},
        {"density.quad_margin", real, "7", "quadrature margin beyond the component means, in sigma_z"},
        {"density.is_samples", integer, "10000", "importance-sampling draws per density estimate"},

        {"grid.resolution", integer, "40", "probe grid points per latent axis"},
        {"grid.envelope", real, "4", "probe grid half-width in marginal latent standard deviations"},

        {"model.hidden", integer_list, "32", "hidden layer widths"},
        {"model.activation", text, "relu", "relu | sine"},
        {"train.lr", real, "0.05", "SGD learning rate"},
        {"train.epochs", integer, "100", "SGD epochs"},
        {"train.batch", integer, "64", "SGD batch size"},
        {"train.weight_decay", real, "0.0001", "L2 weight decay"},
        {"train.momentum", real, "0.9", "SGD momentum"},

        {"dropout.rate", real, "0.5", "dropout rate of the dropout models"},
        {"dropout.hidden", integer_list, "64", "hidden layer widths of the dropout models"},
        {"dropout.lr", real, "0.02", "SGD learning rate of the dropout models"},
        {"dropout.passes", integer, "50", "MC dropout masks of the single dropout model"},
        {"ensemble.members", integer, "5", "independently trained dropout models"},
        {"ensemble.passes", integer, "10", "MC dropout masks per ensemble member"},

        {"hmc.step_size", real, "0.01", "leapfrog step size"},
        {"hmc.leapfrog", integer, "20", "leapfrog steps per proposal"},
        {"hmc.samples", integer, "300", "retained samples"},
        {"hmc.burn_in", integer, "500", "discarded initial iterations"},
        {"hmc.thinning", integer, "3", "keep every n-th post-burn-in iteration"},
        {"hmc.prior_precision", real, "1", "Gaussian prior precision lambda"},
        {"hmc.start", text, "map", "map | random: chain start"},

        {"attack.eps", real_list, "0.05,0.1", "max perturbations (infinity norm), small then large"},
        {"attack.iterations", integer, "10", "MIM iterations"},
        {"attack.momentum", real, "1.0", "MIM momentum decay"},
        {"attack.examples", integer, "100", "attacked test inputs per repetition"},
        {"attack.repetitions", integer, "5", "repetitions with distinct seeds"},
        {"attack.fgm_steps", integer, "10", "points recorded along each FGM trajectory"},

        {"holes.mi_threshold", real, "0.05", "latent-hole attack MI filter (nats)"},
        {"holes.min_distance", real, "1.0", "latent distance from training data that counts as far"},
        {"holes.top_k", integer, "20", "candidates returned by the latent-hole attack"},
        {"holes.confidence", real, "0.9", "confidence bar for garbage candidates"},

        {"audit.epsilon", real, "0.1", "high-confidence threshold epsilon"},
        {"audit.probes", integer, "100", "probe directions per radius"},
        {"audit.radii", real_list, "0.01,0.02,0.05,0.1,0.2,0.3,0.5", "delta-ball radius schedule"},
        {"audit.points", integer, "0", "training points used as ball centres (0 = all)"},

        {"spheres.dim", integer, "10", "sphere dimension"},
        {"spheres.r_inner", real, "1.0", "inner radius (class 1)"},
        {"spheres.r_outer", real, "1.3", "outer radius (class 0)"},
        {"spheres.n", integer, "500", "training points per sphere"},
        {"spheres.hidden", integer_list, "32", "hidden widths of both sphere models"},
        {"spheres.trials", integer, "500", "attacked points"},
        {"spheres.steps", integer, "20", "sphere attack iterations"},
        {"spheres.step_size", real, "0.1", "sphere attack step length"},
        {"spheres.rotations", integer, "1000", "random (x, R) pairs in the invariance test"},

        {"models.map", text, "", "optional MAP checkpoint to use instead of training"},
        {"models.hmc", text, "", "optional HMC ensemble checkpoint"},
        {"models.dropout", text, "", "optional dropout model checkpoint"},
        {"models.ensemble", text, "", "optional dropout ensemble checkpoint"},
    };
    return schema;
}

namespace {

const ConfigKey* find_key(const std::string& name) {
    for (const auto& k : config_schema())
        if (k.name == name) return &k;
    return nullptr;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_integer(const std::string& s, long long& out) {
    const char* end = s.data() + s.size();
    auto [p, ec] = std::from_chars(s.data(), end, out);
    return ec == std::errc() && p == end;
}

bool parse_real(const std::string& s, double& out) {
    if (s.empty()) return false;
    char* end = nullptr;
    out = std::strtod(s.c_str(), &end);
    return end == s.c_str() + s.size() && std::isfinite(out);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> parts;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) parts.push_back(trim(item));
    return parts;
}

bool valid_value(ValueType type, const std::string& v) {
    long long i = 0;
    double d = 0.0;
    switch (type) {
        case ValueType::integer: return parse_integer(v, i);
        case ValueType::real: return parse_real(v, d);
        case ValueType::text: return true;
        case ValueType::real_list:
        case ValueType::integer_list: {
            const auto parts = split_list(v);
            if (parts.empty()) return false;
            for (const auto& p : parts)
                if (type == ValueType::real_list ? !parse_real(p, d) : !parse_integer(p, i)) return false;
            return true;
        }
    }
    return false;
}

std::string_view type_name(ValueType t) {
    switch (t) {
        case ValueType::integer: return "integer";
        case ValueType::real: return "real number";
        case ValueType::text: return "text";
        case ValueType::real_list: return "comma-separated real numbers";
        case ValueType::integer_list: return "comma-separated integers";
    }
    return "value";
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    const ConfigKey* k = find_key(key);
    if (!k) throw ConfigError("unknown config key \"" + key + "\"");
    const std::string v = trim(value);
    if (!valid_value(k->type, v))
        throw ConfigError("config key \"" + key + "\": cannot parse \"" + v + "\" as " + std::string(type_name(k->type)));
    values_[key] = v;
}

const std::string& RunConfig::raw(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key \"" + key + "\"");
    return it->second;
}

long long RunConfig::get_int(const std::string& key) const {
    long long v = 0;
    if (!parse_integer(raw(key), v)) throw ConfigError("config key \"" + key + "\" is not an integer");
    return v;
}

std::uint64_t RunConfig::get_seed(const std::string& key) const {
    const long long v = get_int(key);
    if (v < 0) throw ConfigError("config key \"" + key + "\" must be non-negative");
    return static_cast<std::uint64_t>(v);
}

double RunConfig::get_real(const std::string& key) const {
    double v = 0.0;
    if (!parse_real(raw(key), v)) throw ConfigError("config key \"" + key + "\" is not a real number");
    return v;
}

const std::string& RunConfig::get_text(const std::string& key) const { return raw(key); }

std::vector<double> RunConfig::get_real_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& p : split_list(raw(key))) {
        double v = 0.0;
        if (!parse_real(p, v)) throw ConfigError("config key \"" + key + "\" has a non-numeric entry");
        out.push_back(v);
    }
    return out;
}

std::vector<long long> RunConfig::get_int_list(const std::string& key) const {
    std::vector<long long> out;
    for (const auto& p : split_list(raw(key))) {
        long long v = 0;
        if (!parse_integer(p, v)) throw ConfigError("config key \"" + key + "\" has a non-integer entry");
        out.push_back(v);
    }
    return out;
}

std::string RunConfig::to_text() const {
    std::string out;
    for (const auto& k : config_schema()) out += k.name + " = " + values_.at(k.name) + "\n";
    return out;
}

std::string RunConfig::hash() const {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (char c : to_text()) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides,
                            const std::string& source) {
    RunConfig cfg;
    std::stringstream ss(text);
    std::string line;
    int lineno = 0;
    while (std::getline(ss, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected `key = value`");
        try {
            cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos) throw ConfigError("override \"" + o + "\": expected key=value");
        try {
            cfg.set(trim(o.substr(0, eq)), o.substr(eq + 1));
        } catch (const ConfigError& e) {
            throw ConfigError(std::string("override: ") + e.what());
        }
    }
    return cfg;
}

RunConfig parse_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config_text(io::read_text(path), overrides, path.string());
}

}  // namespace uqadv
