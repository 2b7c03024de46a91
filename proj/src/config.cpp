#include "fs2ffpe/config.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

namespace fs2ffpe {

namespace {

std::string fmt_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

double parse_double(const std::string& key, const std::string& s) {
    try {
        std::size_t pos = 0;
        double x = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing chars");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse real value '" + s + "'");
    }
}

long long parse_int(const std::string& key, const std::string& s) {
    try {
        std::size_t pos = 0;
        long long x = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing chars");
        return x;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse integer value '" + s + "'");
    }
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::validate() const {
    if (lr_initial <= 0) throw ConfigError("lr_initial must be positive");
    if (adam_beta1 < 0 || adam_beta1 >= 1) throw ConfigError("adam_beta1 must be in [0,1)");
    if (adam_beta2 < 0 || adam_beta2 >= 1) throw ConfigError("adam_beta2 must be in [0,1)");
    if (total_iterations <= 0) throw ConfigError("total_iterations must be positive");
    if (!(decay_start_fraction > 0 && decay_start_fraction < 1))
        throw ConfigError("decay_start_fraction must lie in (0,1)");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (tile_size_source != 2 * tile_size_net || tile_size_source != 4 * compare_size)
        throw ConfigError("tile sizes must satisfy tile_size_source = 2*tile_size_net = "
                          "4*compare_size");
    if (tile_size_net < 8 || tile_size_net % 4 != 0)
        throw ConfigError("tile_size_net must be a multiple of 4 and >= 8");
    if (loss_weights.gan < 0 || loss_weights.patchnce < 0 || loss_weights.crcm < 0 ||
        loss_weights.wdgm < 0)
        throw ConfigError("loss_weights must be non-negative");
}

std::string TrainConfig::serialize() const {
    std::ostringstream os;
    os << "lr_initial = " << fmt_double(lr_initial) << "\n"
       << "adam_beta1 = " << fmt_double(adam_beta1) << "\n"
       << "adam_beta2 = " << fmt_double(adam_beta2) << "\n"
       << "total_iterations = " << total_iterations << "\n"
       << "decay_start_fraction = " << fmt_double(decay_start_fraction) << "\n"
       << "batch_size = " << batch_size << "\n"
       << "tile_size_source = " << tile_size_source << "\n"
       << "tile_size_net = " << tile_size_net << "\n"
       << "compare_size = " << compare_size << "\n"
       << "loss_weights.gan = " << fmt_double(loss_weights.gan) << "\n"
       << "loss_weights.patchnce = " << fmt_double(loss_weights.patchnce) << "\n"
       << "loss_weights.crcm = " << fmt_double(loss_weights.crcm) << "\n"
       << "loss_weights.wdgm = " << fmt_double(loss_weights.wdgm) << "\n"
       << "seed = " << seed << "\n";
    return os.str();
}

TrainConfig TrainConfig::parse(const std::string& text) {
    TrainConfig c;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key == "lr_initial") c.lr_initial = parse_double(key, val);
        else if (key == "adam_beta1") c.adam_beta1 = parse_double(key, val);
        else if (key == "adam_beta2") c.adam_beta2 = parse_double(key, val);
        else if (key == "total_iterations") c.total_iterations = parse_int(key, val);
        else if (key == "decay_start_fraction") c.decay_start_fraction = parse_double(key, val);
        else if (key == "batch_size") c.batch_size = static_cast<int>(parse_int(key, val));
        else if (key == "tile_size_source") c.tile_size_source = static_cast<int>(parse_int(key, val));
        else if (key == "tile_size_net") c.tile_size_net = static_cast<int>(parse_int(key, val));
        else if (key == "compare_size") c.compare_size = static_cast<int>(parse_int(key, val));
        else if (key == "loss_weights.gan") c.loss_weights.gan = parse_double(key, val);
        else if (key == "loss_weights.patchnce") c.loss_weights.patchnce = parse_double(key, val);
        else if (key == "loss_weights.crcm") c.loss_weights.crcm = parse_double(key, val);
        else if (key == "loss_weights.wdgm") c.loss_weights.wdgm = parse_double(key, val);
        else if (key == "seed") c.seed = parse_int(key, val);
        else throw ConfigError("unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return parse(os.str());
}

void TrainConfig::save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write config file: " + path);
    f << serialize();
}

std::uint64_t TrainConfig::hash() const {
    std::string s = serialize();
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

double lr_at(long long iteration, const TrainConfig& cfg) {
    if (iteration < 0 || iteration > cfg.total_iterations)
        throw ConfigError("lr_at: iteration " + std::to_string(iteration) +
                          " outside [0," + std::to_string(cfg.total_iterations) + "]");
    const double decay_start = cfg.decay_start_fraction * static_cast<double>(cfg.total_iterations);
    if (static_cast<double>(iteration) <= decay_start) return cfg.lr_initial;
    const double span = static_cast<double>(cfg.total_iterations) - decay_start;
    return cfg.lr_initial * (static_cast<double>(cfg.total_iterations - iteration)) / span;
}

double LossReport::at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw ConfigError("LossReport: missing component '" + key + "'");
    return it->second;
}

void LossReport::check_total(const LossWeights& w) const {
    const double total = at("total_G");
    const double sum = w.gan * at("gan_G") + w.patchnce * at("patchNCE") + w.crcm * at("crcm") +
                       w.wdgm * at("wdgm");
    const double tol = 1e-6 * std::max(1.0, std::max(std::abs(total), std::abs(sum)));
    if (std::abs(total - sum) > tol)
        throw NumericError("LossReport: total_G " + std::to_string(total) +
                           " != weighted sum " + std::to_string(sum) + " at iteration " +
                           std::to_string(iteration));
}

const char* LossReport::csv_header() {
    return "iteration,gan_D,gan_G,patchNCE,crcm,wdgm,total_G,lr";
}

std::string LossReport::csv_row(double lr) const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%lld,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g,%.12g", iteration,
                  at("gan_D"), at("gan_G"), at("patchNCE"), at("crcm"), at("wdgm"), at("total_G"),
                  lr);
    return buf;
}

}  // namespace fs2ffpe
