#include "irdseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>

#include "irdseg/errors.hpp"

namespace irdseg {

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes, int ignore_id)
    : n_classes_(n_classes), ignore_id_(ignore_id), counts_(n_classes * n_classes, 0) {
    if (n_classes == 0) throw std::invalid_argument("confusion matrix needs >= 1 class");
}

std::uint64_t ConfusionMatrix::total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
}

void ConfusionMatrix::accumulate(const Tensor& pred, const Tensor& label) {
    if (!pred.same_shape(label)) {
        throw std::invalid_argument("accumulate: pred/label shape mismatch");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const long t = std::lround(label[i]);
        if (ignore_id_ >= 0 && t == ignore_id_) continue;
        const long p = std::lround(pred[i]);
        if (t < 0 || t >= static_cast<long>(n_classes_) || p < 0 ||
            p >= static_cast<long>(n_classes_)) {
            throw std::invalid_argument("accumulate: class id out of range");
        }
        ++counts_[static_cast<std::size_t>(t) * n_classes_ + static_cast<std::size_t>(p)];
    }
}

void ConfusionMatrix::add(std::size_t true_class, std::size_t pred_class, std::uint64_t n) {
    if (true_class >= n_classes_ || pred_class >= n_classes_) {
        throw std::invalid_argument("add: class id out of range");
    }
    counts_[true_class * n_classes_ + pred_class] += n;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.n_classes_ != n_classes_) {
        throw std::invalid_argument("merge: class count mismatch");
    }
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

namespace {

void require_nonempty(const ConfusionMatrix& cm) {
    if (cm.total() == 0) throw std::invalid_argument("metrics on empty confusion matrix");
}

std::uint64_t row_sum(const ConfusionMatrix& cm, std::size_t c) {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < cm.n_classes(); ++p) s += cm.count(c, p);
    return s;
}

std::uint64_t col_sum(const ConfusionMatrix& cm, std::size_t c) {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < cm.n_classes(); ++t) s += cm.count(t, c);
    return s;
}

}  // namespace

double pixel_accuracy(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    std::uint64_t diag = 0;
    for (std::size_t c = 0; c < cm.n_classes(); ++c) diag += cm.count(c, c);
    return 100.0 * static_cast<double>(diag) / static_cast<double>(cm.total());
}

double class_accuracy(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    double sum = 0.0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < cm.n_classes(); ++c) {
        const std::uint64_t rs = row_sum(cm, c);
        if (rs == 0) continue;
        sum += static_cast<double>(cm.count(c, c)) / static_cast<double>(rs);
        ++present;
    }
    return 100.0 * sum / static_cast<double>(present);
}

std::vector<double> per_class_iou(const ConfusionMatrix& cm) {
    require_nonempty(cm);
    std::vector<double> iou(cm.n_classes(), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < cm.n_classes(); ++c) {
        const std::uint64_t rs = row_sum(cm, c);
        if (rs == 0) continue;
        const std::uint64_t uni = rs + col_sum(cm, c) - cm.count(c, c);
        iou[c] = static_cast<double>(cm.count(c, c)) / static_cast<double>(uni);
    }
    return iou;
}

double mean_iou(const ConfusionMatrix& cm) {
    const std::vector<double> iou = per_class_iou(cm);
    double sum = 0.0;
    std::size_t present = 0;
    for (double v : iou) {
        if (std::isnan(v)) continue;
        sum += v;
        ++present;
    }
    return 100.0 * sum / static_cast<double>(present);
}

double fw_iou(const ConfusionMatrix& cm) {
    const std::vector<double> iou = per_class_iou(cm);
    const double total = static_cast<double>(cm.total());
    double sum = 0.0;
    for (std::size_t c = 0; c < cm.n_classes(); ++c) {
        if (std::isnan(iou[c])) continue;
        sum += (static_cast<double>(row_sum(cm, c)) / total) * iou[c];
    }
    return 100.0 * sum;
}

MetricReport compute_metrics(const ConfusionMatrix& cm) {
    return MetricReport{pixel_accuracy(cm), class_accuracy(cm), mean_iou(cm), fw_iou(cm)};
}

namespace {

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string format_metric_block(const MetricReport& r) {
    return "pixel_accuracy " + fmt2(r.pixel_acc) + "\n" +
           "class_accuracy " + fmt2(r.class_acc) + "\n" +
           "mean_iou " + fmt2(r.mean_iou) + "\n" +
           "fw_iou " + fmt2(r.fw_iou) + "\n";
}

std::string format_metric_record(const MetricReport& r) {
    return "pixel_accuracy=" + fmt2(r.pixel_acc) + " class_accuracy=" + fmt2(r.class_acc) +
           " mean_iou=" + fmt2(r.mean_iou) + " fw_iou=" + fmt2(r.fw_iou);
}

MetricReport parse_metric_record(const std::string& line) {
    MetricReport r;
    int filled = 0;
    std::size_t pos = 0;
    while (pos < line.size()) {
        const std::size_t eq = line.find('=', pos);
        if (eq == std::string::npos) break;
        const std::string key = line.substr(pos, eq - pos);
        std::size_t end = line.find(' ', eq + 1);
        if (end == std::string::npos) end = line.size();
        double value = 0.0;
        try {
            value = std::stod(line.substr(eq + 1, end - eq - 1));
        } catch (...) {
            throw IoError("bad metric record value for '" + key + "'");
        }
        if (key == "pixel_accuracy") r.pixel_acc = value;
        else if (key == "class_accuracy") r.class_acc = value;
        else if (key == "mean_iou") r.mean_iou = value;
        else if (key == "fw_iou") r.fw_iou = value;
        else throw IoError("unknown metric record key '" + key + "'");
        ++filled;
        pos = end + (end < line.size() ? 1 : 0);
    }
    if (filled != 4) throw IoError("metric record must carry exactly 4 metrics");
    return r;
}

}  // namespace irdseg
