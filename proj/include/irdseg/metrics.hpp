#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "irdseg/tensor.hpp"

namespace irdseg {

// C x C accumulator of (true class, predicted class) pixel counts, the sole
// input to the four segmentation metrics. ignore_id < 0 disables ignoring.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t n_classes, int ignore_id = -1);

    std::size_t n_classes() const { return n_classes_; }
    int ignore_id() const { return ignore_id_; }
    std::uint64_t count(std::size_t true_class, std::size_t pred_class) const {
        return counts_[true_class * n_classes_ + pred_class];
    }
    std::uint64_t total() const;

    // pred/label are H x W maps of integral class ids. Ground-truth pixels
    // equal to ignore_id are skipped.
    void accumulate(const Tensor& pred, const Tensor& label);
    void add(std::size_t true_class, std::size_t pred_class, std::uint64_t n = 1);
    void merge(const ConfusionMatrix& other);
    bool operator==(const ConfusionMatrix& other) const = default;

private:
    std::size_t n_classes_;
    int ignore_id_;
    std::vector<std::uint64_t> counts_;
};

// All metrics in percent. Classes absent from the ground truth are excluded
// from the class-accuracy and mean-IoU averages and contribute zero weight
// to the frequency-weighted IoU.
double pixel_accuracy(const ConfusionMatrix& cm);
double class_accuracy(const ConfusionMatrix& cm);
double mean_iou(const ConfusionMatrix& cm);
double fw_iou(const ConfusionMatrix& cm);
std::vector<double> per_class_iou(const ConfusionMatrix& cm);  // NaN for absent classes

struct MetricReport {
    double pixel_acc = 0.0;
    double class_acc = 0.0;
    double mean_iou = 0.0;
    double fw_iou = 0.0;
};

MetricReport compute_metrics(const ConfusionMatrix& cm);

// Flat key-value block, one metric per line, two decimals.
std::string format_metric_block(const MetricReport& r);
// Single-line machine-readable record, two decimals.
std::string format_metric_record(const MetricReport& r);
MetricReport parse_metric_record(const std::string& line);

}  // namespace irdseg
