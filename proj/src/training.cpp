#include "msfcn/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "msfcn/tns_io.hpp"

namespace msfcn {

AdamState::AdamState(const AdamConfig& cfg, const std::vector<Network::ParamRef>& params)
    : cfg_(cfg) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const auto& p : params) {
        m_.push_back(tensor_zeros<float>(p.value->shape));
        v_.push_back(tensor_zeros<float>(p.value->shape));
    }
}

void AdamState::step(const std::vector<Network::ParamRef>& params) {
    if (params.size() != m_.size()) throw ShapeError("adam: parameter list changed size");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& value = *params[pi].value;
        Tensor& grad = *params[pi].grad;
        if (value.shape != m_[pi].shape) throw ShapeError("adam: parameter shape changed");
        if (grad.shape != value.shape) throw ShapeError("adam: grad shape mismatch");
        float* mv = m_[pi].data.data();
        float* vv = v_[pi].data.data();
        for (size_t i = 0; i < value.size(); ++i) {
            const double g = double(grad.data[i]);
            const double m = cfg_.beta1 * double(mv[i]) + (1.0 - cfg_.beta1) * g;
            const double v = cfg_.beta2 * double(vv[i]) + (1.0 - cfg_.beta2) * g * g;
            mv[i] = float(m);
            vv[i] = float(v);
            value.data[i] -=
                float(cfg_.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg_.eps));
            grad.data[i] = 0.f;
        }
    }
}

EarlyStopper::EarlyStopper(int patience) : patience_(patience) {
    if (patience < 1) throw ConfigError("early stopping patience must be >= 1");
}

bool EarlyStopper::observe(double score) {
    if (!any_ || score > best_) {
        any_ = true;
        best_ = score;
        bad_ = 0;
        return true;
    }
    ++bad_;
    return false;
}

namespace {

Tensor load_entry_image(const DatasetManifest& data, const ManifestEntry& e) {
    Tensor img = load_tensor(data.dir / e.image);
    if (img.rank() != 4)
        throw DataError(e.image + ": expected (c,t,h,w), got rank " + std::to_string(img.rank()));
    return img;
}

struct Batch {
    Tensor x;  // (b,c,t,h,w)
    std::vector<LabelMap> labels;
};

Batch assemble_batch(const DatasetManifest& data, const std::vector<size_t>& idx, size_t from,
                     size_t to, bool augment, const AugmentOptions& aug, uint64_t seed,
                     int epoch) {
    Batch b;
    for (size_t k = from; k < to; ++k) {
        const ManifestEntry& e = data.entries[idx[k]];
        Tensor img = load_entry_image(data, e);
        LabelMap lab = load_labelmap(data.dir / e.label);
        if (lab.h != img.shape[2] || lab.w != img.shape[3])
            throw DataError(e.label + ": label extents do not match image");
        if (augment) {
            Rng r(mix64(mix64(seed, uint64_t(epoch)), uint64_t(idx[k])));
            augment_sample(img, lab, aug, r);
        }
        if (b.labels.empty()) {
            b.x = tensor_zeros<float>({uint32_t(to - from), img.shape[0], img.shape[1],
                                       img.shape[2], img.shape[3]});
        } else if (std::vector<uint32_t>(b.x.shape.begin() + 1, b.x.shape.end()) != img.shape) {
            throw DataError(e.image + ": extents differ from the rest of the batch");
        }
        std::copy(img.data.begin(), img.data.end(),
                  b.x.data.begin() + (k - from) * img.size());
        b.labels.push_back(std::move(lab));
    }
    return b;
}

}  // namespace

LabelMap predict_labels(Network& net, const Tensor& image) {
    if (image.rank() != 4) throw ShapeError("predict: image must be (c,t,h,w)");
    const uint32_t h = image.shape[2], w = image.shape[3];
    const uint32_t div = 1u << net.cfg.layers();
    const uint32_t ph = (h + div - 1) / div * div;
    const uint32_t pw = (w + div - 1) / div * div;
    Tensor x = (ph != h || pw != w) ? pad_spatial(image, ph, pw) : image;
    x = reshape(x, {1u, x.shape[0], x.shape[1], x.shape[2], x.shape[3]});
    Flow<float> logits = net.forward(nullptr, x, Mode::eval);
    Tensor scores = reshape(logits.v(), {logits.v().shape[1], ph, pw});
    if (ph != h || pw != w) scores = crop_spatial(scores, h, w);
    return argmax_channels(scores);
}

MetricReport evaluate_split(Network& net, const DatasetManifest& data, const std::string& split,
                            ConfusionMatrix* cm_out) {
    const std::vector<size_t> idx = data.split_indices(split);
    if (idx.empty()) throw DataError("split '" + split + "' is empty");
    if (data.num_classes < 2) throw DataError("manifest is missing num_classes metadata");
    ConfusionMatrix cm(data.num_classes);
    for (size_t i : idx) {
        const ManifestEntry& e = data.entries[i];
        Tensor img = load_entry_image(data, e);
        LabelMap truth = load_labelmap(data.dir / e.label);
        validate_labels(truth, uint32_t(data.num_classes));
        cm.accumulate(predict_labels(net, img), truth);
    }
    if (cm_out) *cm_out = cm;
    return compute_report(cm);
}

TrainResult train_network(Network& net, const DatasetManifest& data, const TrainOptions& opt) {
    const std::vector<size_t> train_idx = data.split_indices("train");
    if (train_idx.empty()) throw DataError("train split is empty");
    if (data.split_indices("val").empty()) throw DataError("val split is empty");
    if (opt.batch_size < 1) throw ConfigError("batch_size must be >= 1");

    AdamState adam(opt.adam, net.params());
    EarlyStopper stopper(opt.patience);
    Rng order_rng(opt.seed);
    TrainResult res;

    std::ofstream logf;
    if (!opt.run_dir.empty()) {
        std::filesystem::create_directories(opt.run_dir);
        logf.open(opt.run_dir / "train.log", std::ios::trunc);
        if (!logf) throw DataError("cannot write " + (opt.run_dir / "train.log").string());
    }

    for (int epoch = 1; epoch <= opt.max_epochs; ++epoch) {
        std::vector<size_t> order = train_idx;
        order_rng.shuffle(order);

        double loss_sum = 0;
        size_t batches = 0;
        for (size_t at = 0; at < order.size(); at += size_t(opt.batch_size)) {
            const size_t to = std::min(order.size(), at + size_t(opt.batch_size));
            Batch b = assemble_batch(data, order, at, to, opt.augment, opt.aug, opt.seed, epoch);
            Tape tape;
            Flow<float> logits = net.forward(&tape, b.x, Mode::train);
            CeOut<float> ce = cross_entropy(logits.v(), b.labels);
            if (!std::isfinite(ce.loss))
                throw NumericError("training aborted: non-finite loss at epoch " +
                                   std::to_string(epoch) + ", batch " + std::to_string(batches));
            tape.grad(logits.node) = ce.dlogits;
            tape.run_backward();
            adam.step(net.params());
            loss_sum += ce.loss;
            ++batches;
        }

        const double val_oa = evaluate_split(net, data, "val").oa;
        const bool improved = stopper.observe(val_oa);
        if (improved) {
            res.best_epoch = epoch;
            res.best_val_oa = val_oa;
            if (!opt.run_dir.empty()) save_checkpoint(net, opt.run_dir / "best");
        }

        char line[160];
        std::snprintf(line, sizeof line, "epoch=%d loss=%.6f val_oa=%.6f best=%.6f patience_left=%d",
                      epoch, loss_sum / double(batches), val_oa, stopper.best(),
                      stopper.patience_left());
        res.log.push_back(line);
        if (logf) logf << line << "\n" << std::flush;
        if (!opt.quiet) std::puts(line);
        res.epochs_run = epoch;
        if (stopper.should_stop()) break;
    }
    return res;
}

}  // namespace msfcn
