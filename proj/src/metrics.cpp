#include "msfcn/metrics.hpp"

#include <fstream>

namespace msfcn {

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 2) throw DataError("confusion matrix needs >= 2 classes");
    m_.assign(size_t(k_) * k_, 0);
}

void ConfusionMatrix::accumulate(const LabelMap& pred, const LabelMap& truth) {
    if (pred.h != truth.h || pred.w != truth.w)
        throw DataError("confusion matrix: prediction " + std::to_string(pred.h) + "x" +
                        std::to_string(pred.w) + " vs truth " + std::to_string(truth.h) + "x" +
                        std::to_string(truth.w));
    for (size_t i = 0; i < truth.size(); ++i) {
        const uint16_t t = truth.data[i];
        if (t == kIgnoreLabel) continue;
        if (t >= k_) throw DataError("confusion matrix: truth label " + std::to_string(t) +
                                     " >= " + std::to_string(k_));
        const uint16_t p = pred.data[i];
        if (p >= k_) throw DataError("confusion matrix: prediction " + std::to_string(p) +
                                     " >= " + std::to_string(k_));
        ++m_[size_t(t) * k_ + p];
    }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw DataError("confusion matrix merge: class count mismatch");
    for (size_t i = 0; i < m_.size(); ++i) m_[i] += other.m_[i];
}

uint64_t ConfusionMatrix::total() const {
    uint64_t n = 0;
    for (uint64_t v : m_) n += v;
    return n;
}

MetricReport compute_report(const ConfusionMatrix& cm) {
    const int k = cm.num_classes();
    const uint64_t n = cm.total();
    if (n == 0) throw DataError("metrics: confusion matrix is empty");

    std::vector<uint64_t> row(k, 0), col(k, 0), diag(k, 0);
    uint64_t trace = 0;
    for (int i = 0; i < k; ++i) {
        diag[i] = cm.at(i, i);
        trace += diag[i];
        for (int j = 0; j < k; ++j) {
            row[i] += cm.at(i, j);
            col[j] += cm.at(i, j);
        }
    }

    MetricReport r;
    r.per_class.resize(size_t(k));
    r.oa = double(trace) / double(n);

    // kappa = (N*trace - sum r_i c_i) / (N^2 - sum r_i c_i), evaluated from
    // exact integers so hand cases come out exact; p_e = 1 degenerates to 0.
    __int128 sum_rc = 0;
    for (int i = 0; i < k; ++i) sum_rc += __int128(row[i]) * col[i];
    const __int128 num = __int128(n) * trace - sum_rc;
    const __int128 den = __int128(n) * n - sum_rc;
    const __int128 exact_lim = __int128(1) << 53;
    if (den == 0)
        r.kappa = 0.0;
    else if (num < exact_lim && num > -exact_lim && den < exact_lim)
        r.kappa = double(int64_t(num)) / double(int64_t(den));  // correctly rounded
    else
        r.kappa = double((long double)num / (long double)den);

    int present = 0, with_union = 0;
    double aa = 0, mf1 = 0, miou = 0, fwiou = 0;
    for (int i = 0; i < k; ++i) {
        ClassScore& s = r.per_class[size_t(i)];
        s.support = row[i];
        const uint64_t uni = row[i] + col[i] - diag[i];
        s.precision = col[i] ? double(diag[i]) / double(col[i]) : 0.0;
        s.recall = row[i] ? double(diag[i]) / double(row[i]) : 0.0;
        s.f1 = (row[i] + col[i]) ? 2.0 * double(diag[i]) / double(row[i] + col[i]) : 0.0;
        s.iou = uni ? double(diag[i]) / double(uni) : 0.0;
        if (row[i]) {
            ++present;
            aa += s.recall;
            mf1 += s.f1;
        }
        if (uni) {
            ++with_union;
            miou += s.iou;
            fwiou += double(row[i]) / double(n) * s.iou;
        }
    }
    r.aa = present ? aa / present : 0.0;
    r.mean_f1 = present ? mf1 / present : 0.0;
    r.miou = with_union ? miou / with_union : 0.0;
    r.fwiou = fwiou;
    return r;
}

namespace {
void open_csv(std::ofstream& out, const std::filesystem::path& path) {
    out.open(path, std::ios::trunc);
    if (!out) throw DataError("cannot write " + path.string());
    out.precision(12);
}
}  // namespace

void write_metrics_csv(const MetricReport& r, const std::filesystem::path& path) {
    std::ofstream out;
    open_csv(out, path);
    out << "metric,value\n";
    out << "overall_accuracy," << r.oa << "\n";
    out << "average_accuracy," << r.aa << "\n";
    out << "kappa," << r.kappa << "\n";
    out << "mean_iou," << r.miou << "\n";
    out << "fw_iou," << r.fwiou << "\n";
    out << "mean_f1," << r.mean_f1 << "\n";
}

void write_per_class_csv(const MetricReport& r, const std::filesystem::path& path) {
    std::ofstream out;
    open_csv(out, path);
    out << "class,precision,recall,f1,iou,support\n";
    for (size_t i = 0; i < r.per_class.size(); ++i) {
        const ClassScore& s = r.per_class[i];
        out << i << "," << s.precision << "," << s.recall << "," << s.f1 << "," << s.iou << ","
            << s.support << "\n";
    }
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
    std::ofstream out;
    open_csv(out, path);
    out << "truth/pred";
    for (int j = 0; j < cm.num_classes(); ++j) out << "," << j;
    out << "\n";
    for (int i = 0; i < cm.num_classes(); ++i) {
        out << i;
        for (int j = 0; j < cm.num_classes(); ++j) out << "," << cm.at(i, j);
        out << "\n";
    }
}

}  // namespace msfcn
