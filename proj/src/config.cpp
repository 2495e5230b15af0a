#include "msfcn/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace msfcn {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

std::map<std::string, std::string> parse_kv_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path.filename().string() + ":" + std::to_string(lineno) +
                              ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(path.filename().string() + ":" +
                                           std::to_string(lineno) + ": empty key");
        if (kv.count(key))
            throw ConfigError(path.filename().string() + ":" + std::to_string(lineno) +
                              ": duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

void write_kv_file(const std::map<std::string, std::string>& kv,
                   const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not an integer");
    }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const unsigned long long r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not an unsigned integer");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        const double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(key + ": '" + v + "' is not a number");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw ConfigError(key + ": '" + v + "' is not a boolean (true/false/on/off/1/0)");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_int(key, trim(item)));
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

NetworkConfig network_config_from_kv(const std::map<std::string, std::string>& kv) {
    NetworkConfig cfg;
    auto get = [&kv](const char* k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = get("net.in_channels")) cfg.in_channels = parse_int("net.in_channels", *v);
    if (auto* v = get("net.time_steps")) cfg.time_steps = parse_int("net.time_steps", *v);
    if (auto* v = get("net.num_classes")) cfg.num_classes = parse_int("net.num_classes", *v);
    if (auto* v = get("net.channels")) cfg.channels = parse_int_list("net.channels", *v);
    if (auto* v = get("net.mscb_ck_div")) cfg.mscb_ck_div = parse_int("net.mscb_ck_div", *v);
    if (auto* v = get("net.cab_reduction")) cfg.cab_reduction = parse_int("net.cab_reduction", *v);
    if (auto* v = get("seed")) cfg.seed = parse_u64("seed", *v);
    cfg.validate();
    return cfg;
}

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
    static const std::set<std::string> known = {
        "seed",           "net.in_channels",  "net.time_steps",    "net.num_classes",
        "net.channels",   "net.mscb_ck_div",  "net.cab_reduction", "train.lr",
        "train.batch_size", "train.max_epochs", "train.patience",  "train.augment",
        "data.manifest",  "run.dir"};
    for (const auto& [k, v] : kv) {
        (void)v;
        if (!known.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
    RunConfig rc;
    rc.net = network_config_from_kv(kv);
    auto get = [&kv](const char* k) -> const std::string* {
        auto it = kv.find(k);
        return it == kv.end() ? nullptr : &it->second;
    };
    if (auto* v = get("train.lr")) rc.train.lr = parse_double("train.lr", *v);
    if (auto* v = get("train.batch_size")) rc.train.batch_size = parse_int("train.batch_size", *v);
    if (auto* v = get("train.max_epochs")) rc.train.max_epochs = parse_int("train.max_epochs", *v);
    if (auto* v = get("train.patience")) rc.train.patience = parse_int("train.patience", *v);
    if (auto* v = get("train.augment")) rc.train.augment = parse_bool("train.augment", *v);
    if (auto* v = get("data.manifest")) rc.manifest = *v;
    if (auto* v = get("run.dir")) rc.run_dir = *v;
    if (rc.train.lr <= 0) throw ConfigError("train.lr must be > 0");
    if (rc.train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (rc.train.max_epochs < 1) throw ConfigError("train.max_epochs must be >= 1");
    if (rc.train.patience < 1) throw ConfigError("train.patience must be >= 1");
    return rc;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    return from_kv(parse_kv_file(path));
}

std::map<std::string, std::string> RunConfig::to_kv() const {
    std::map<std::string, std::string> kv = config_kv(net);
    std::ostringstream lr;
    lr << train.lr;
    kv["train.lr"] = lr.str();
    kv["train.batch_size"] = std::to_string(train.batch_size);
    kv["train.max_epochs"] = std::to_string(train.max_epochs);
    kv["train.patience"] = std::to_string(train.patience);
    kv["train.augment"] = train.augment ? "true" : "false";
    if (!manifest.empty()) kv["data.manifest"] = manifest;
    if (!run_dir.empty()) kv["run.dir"] = run_dir;
    return kv;
}

}  // namespace msfcn
