#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "msfcn/network.hpp"

namespace msfcn {

// Flat key = value file, '#' comments, dotted keys. Unknown keys are refused
// so a typo like "train.ptience" fails loudly instead of training with the
// default.

struct TrainSettings {
    double lr = 1e-4;
    int batch_size = 16;
    int max_epochs = 100;
    int patience = 10;
    bool augment = false;
};

struct RunConfig {
    NetworkConfig net;
    TrainSettings train;
    std::string manifest;  // data.manifest, path to the dataset csv
    std::string run_dir;   // run.dir, output directory for train

    static RunConfig from_kv(const std::map<std::string, std::string>& kv);
    static RunConfig from_file(const std::filesystem::path& path);
    std::map<std::string, std::string> to_kv() const;
};

int parse_int(const std::string& key, const std::string& v);
uint64_t parse_u64(const std::string& key, const std::string& v);
double parse_double(const std::string& key, const std::string& v);
bool parse_bool(const std::string& key, const std::string& v);
std::vector<int> parse_int_list(const std::string& key, const std::string& v);

}  // namespace msfcn
