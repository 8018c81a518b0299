#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "resvit/image.hpp"

namespace resvit {

struct Aggregate {
    double mean = 0.0;
    double std = 0.0;  // population (divisor N)
};

Aggregate aggregate(const std::vector<double>& values);  // error on empty input

double mse(const Image& a, const Image& b);

// 10*log10(max_val^2 / mse); identical images are a defined error rather than
// an infinite score.
double psnr(const Image& a, const Image& b, double max_val = 1.0);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// valid-window borders. max_val declares the dynamic range.
double ssim(const Image& a, const Image& b, double max_val = 1.0);

struct SynthesisReport {
    std::vector<double> mse_values, psnr_values, ssim_values;
    Aggregate mse_agg, psnr_agg, ssim_agg;

    void add(double mse_v, double psnr_v, double ssim_v);
    void finalize();

    nlohmann::json to_json() const;
    std::string to_csv() const;
    std::string to_table() const;  // mean/std rows per metric
};

SynthesisReport synthesis_report(const std::vector<Image>& references,
                                 const std::vector<Image>& candidates, double max_val = 1.0);

struct ClassificationReport {
    std::vector<std::vector<i64>> confusion;  // rows: true, cols: predicted
    double accuracy = 0.0;
    double precision = 0.0;  // weighted
    double recall = 0.0;     // weighted
    double f1 = 0.0;         // weighted
    std::vector<double> per_class_precision, per_class_recall, per_class_f1;
    std::vector<i64> support;

    nlohmann::json to_json() const;
    std::string to_csv() const;
    std::string to_table() const;
};

// Weighted (support-averaged) precision/recall/F1 plus the confusion matrix.
// Classes with zero denominators contribute 0 and emit a warning.
ClassificationReport classification_report(const std::vector<i64>& y_true,
                                           const std::vector<i64>& y_pred, i64 num_classes);

}  // namespace resvit
