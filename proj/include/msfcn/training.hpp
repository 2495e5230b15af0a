#pragma once

#include "msfcn/data_io.hpp"
#include "msfcn/metrics.hpp"
#include "msfcn/network.hpp"

namespace msfcn {

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam. Moment buffers bind to the parameter list given at
// construction; step() consumes and zeroes the grad buffers.
class AdamState {
public:
    AdamState(const AdamConfig& cfg, const std::vector<Network::ParamRef>& params);
    void step(const std::vector<Network::ParamRef>& params);
    int64_t steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor> m_, v_;
    int64_t t_ = 0;
};

// Strict-improvement early stopping: stop after `patience` consecutive epochs
// without a new best. With best at epoch B, the stop lands at epoch B+patience.
class EarlyStopper {
public:
    explicit EarlyStopper(int patience);
    bool observe(double score);  // true on new best
    bool should_stop() const { return bad_ >= patience_; }
    int patience_left() const { return patience_ - bad_; }
    double best() const { return best_; }

private:
    int patience_;
    int bad_ = 0;
    double best_ = 0;
    bool any_ = false;
};

struct TrainOptions {
    AdamConfig adam;
    int batch_size = 16;
    int max_epochs = 100;
    int patience = 10;
    bool augment = false;
    AugmentOptions aug;
    uint64_t seed = 1;
    std::filesystem::path run_dir;  // empty = keep everything in memory
    bool quiet = false;             // suppress stdout echo of log lines
};

struct TrainResult {
    std::vector<std::string> log;
    int epochs_run = 0;
    int best_epoch = 0;
    double best_val_oa = 0;
};

// Trains on the manifest's train split, validates on val with overall
// accuracy, checkpoints the best model to run_dir/best. One log line per
// epoch: "epoch=N loss=F val_oa=F best=F patience_left=N".
TrainResult train_network(Network& net, const DatasetManifest& data, const TrainOptions& opt);

// (c,t,h,w) -> per-pixel argmax labels. Pads spatially to the next multiple
// of 2^layers and crops the result back.
LabelMap predict_labels(Network& net, const Tensor& image);

MetricReport evaluate_split(Network& net, const DatasetManifest& data, const std::string& split,
                            ConfusionMatrix* cm_out = nullptr);

}  // namespace msfcn
