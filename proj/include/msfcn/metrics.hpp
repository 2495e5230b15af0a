#pragma once

#include <filesystem>

#include "msfcn/tensor.hpp"

namespace msfcn {

// Row = ground truth class, column = predicted class.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes);

    // Ignored truth pixels are skipped; a prediction >= K is refused (the
    // model can only emit 0..K-1, so that is a caller bug, not data noise).
    void accumulate(const LabelMap& pred, const LabelMap& truth);
    void merge(const ConfusionMatrix& other);

    uint64_t at(int truth, int pred) const { return m_[size_t(truth) * k_ + pred]; }
    uint64_t total() const;
    int num_classes() const { return k_; }

private:
    int k_;
    std::vector<uint64_t> m_;
};

struct ClassScore {
    double precision = 0, recall = 0, f1 = 0, iou = 0;
    uint64_t support = 0;  // truth pixels of this class
};

struct MetricReport {
    double oa = 0;       // overall accuracy
    double aa = 0;       // mean per-class recall, classes present in truth
    double kappa = 0;    // chance-corrected agreement
    double miou = 0;     // mean IoU over classes with nonzero union
    double fwiou = 0;    // frequency-weighted IoU
    double mean_f1 = 0;  // mean F1 over classes present in truth
    std::vector<ClassScore> per_class;
};

MetricReport compute_report(const ConfusionMatrix& cm);

void write_metrics_csv(const MetricReport& r, const std::filesystem::path& path);
void write_per_class_csv(const MetricReport& r, const std::filesystem::path& path);
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);

}  // namespace msfcn
