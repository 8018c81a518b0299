#include "resvit/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <iostream>
#include <sstream>

namespace resvit {

Image bilinear_resize(const Image& src, i64 out_h, i64 out_w) {
    if (src.h < 1 || src.w < 1) throw ShapeError("bilinear_resize: empty source image");
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize: empty target");
    Image out(out_h, out_w);
    const double sy = static_cast<double>(src.h) / static_cast<double>(out_h);
    const double sx = static_cast<double>(src.w) / static_cast<double>(out_w);
    for (i64 oy = 0; oy < out_h; ++oy) {
        double fy = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        if (fy < 0.0) fy = 0.0;
        if (fy > static_cast<double>(src.h - 1)) fy = static_cast<double>(src.h - 1);
        const i64 y0 = static_cast<i64>(fy);
        const i64 y1 = std::min(y0 + 1, src.h - 1);
        const double wy = fy - static_cast<double>(y0);
        for (i64 ox = 0; ox < out_w; ++ox) {
            double fx = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            if (fx < 0.0) fx = 0.0;
            if (fx > static_cast<double>(src.w - 1)) fx = static_cast<double>(src.w - 1);
            const i64 x0 = static_cast<i64>(fx);
            const i64 x1 = std::min(x0 + 1, src.w - 1);
            const double wx = fx - static_cast<double>(x0);
            const double top = (1.0 - wx) * src.at(y0, x0) + wx * src.at(y0, x1);
            const double bot = (1.0 - wx) * src.at(y1, x0) + wx * src.at(y1, x1);
            out.at(oy, ox) = (1.0 - wy) * top + wy * bot;
        }
    }
    return out;
}

Aggregate aggregate(const std::vector<double>& values) {
    if (values.empty()) throw DataError("aggregate: empty value list");
    const double n = static_cast<double>(values.size());
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n;
    return {mean, std::sqrt(var)};
}

double mse(const Image& a, const Image& b) {
    if (!a.same_shape(b))
        throw ShapeError("mse: image shapes differ (" + std::to_string(a.h) + "x" +
                         std::to_string(a.w) + " vs " + std::to_string(b.h) + "x" +
                         std::to_string(b.w) + ")");
    if (a.numel() == 0) throw DataError("mse: empty images");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.px.size(); ++i) {
        const double d = a.px[i] - b.px[i];
        acc += d * d;
    }
    return acc / static_cast<double>(a.numel());
}

double psnr(const Image& a, const Image& b, double max_val) {
    if (max_val <= 0.0) throw ConfigError("psnr: max_val must be positive");
    const double e = mse(a, b);
    if (e == 0.0) throw NumericError("psnr: identical images (MSE is zero)");
    return 10.0 * std::log10(max_val * max_val / e);
}

namespace {

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimK1 = 0.01;
constexpr double kSsimK2 = 0.03;

const std::vector<double>& gaussian_kernel_1d() {
    static const std::vector<double> k = [] {
        std::vector<double> v(kSsimWindow);
        const double c = (kSsimWindow - 1) / 2.0;
        double sum = 0.0;
        for (int i = 0; i < kSsimWindow; ++i) {
            const double d = static_cast<double>(i) - c;
            v[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
            sum += v[static_cast<std::size_t>(i)];
        }
        for (double& x : v) x /= sum;
        return v;
    }();
    return k;
}

// Separable valid-mode Gaussian filtering.
Image gaussian_valid(const Image& img) {
    const auto& k = gaussian_kernel_1d();
    Image horiz(img.h, img.w - kSsimWindow + 1);
    for (i64 y = 0; y < img.h; ++y)
        for (i64 x = 0; x < horiz.w; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kSsimWindow; ++t)
                acc += k[static_cast<std::size_t>(t)] * img.at(y, x + t);
            horiz.at(y, x) = acc;
        }
    Image out(img.h - kSsimWindow + 1, horiz.w);
    for (i64 y = 0; y < out.h; ++y)
        for (i64 x = 0; x < out.w; ++x) {
            double acc = 0.0;
            for (int t = 0; t < kSsimWindow; ++t)
                acc += k[static_cast<std::size_t>(t)] * horiz.at(y + t, x);
            out.at(y, x) = acc;
        }
    return out;
}

Image hadamard(const Image& a, const Image& b) {
    Image out(a.h, a.w);
    for (std::size_t i = 0; i < out.px.size(); ++i) out.px[i] = a.px[i] * b.px[i];
    return out;
}

}  // namespace

double ssim(const Image& a, const Image& b, double max_val) {
    if (!a.same_shape(b)) throw ShapeError("ssim: image shapes differ");
    if (a.h < kSsimWindow || a.w < kSsimWindow)
        throw ShapeError("ssim: image smaller than the 11x11 window");
    if (max_val <= 0.0) throw ConfigError("ssim: max_val must be positive");

    const double c1 = (kSsimK1 * max_val) * (kSsimK1 * max_val);
    const double c2 = (kSsimK2 * max_val) * (kSsimK2 * max_val);

    const Image mu_a = gaussian_valid(a);
    const Image mu_b = gaussian_valid(b);
    const Image e_aa = gaussian_valid(hadamard(a, a));
    const Image e_bb = gaussian_valid(hadamard(b, b));
    const Image e_ab = gaussian_valid(hadamard(a, b));

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.px.size(); ++i) {
        const double ma = mu_a.px[i], mb = mu_b.px[i];
        const double va = e_aa.px[i] - ma * ma;
        const double vb = e_bb.px[i] - mb * mb;
        const double cov = e_ab.px[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    return acc / static_cast<double>(mu_a.numel());
}

void SynthesisReport::add(double mse_v, double psnr_v, double ssim_v) {
    mse_values.push_back(mse_v);
    psnr_values.push_back(psnr_v);
    ssim_values.push_back(ssim_v);
}

void SynthesisReport::finalize() {
    mse_agg = aggregate(mse_values);
    psnr_agg = aggregate(psnr_values);
    ssim_agg = aggregate(ssim_values);
}

nlohmann::json SynthesisReport::to_json() const {
    return {{"psnr", {{"mean", psnr_agg.mean}, {"std", psnr_agg.std}}},
            {"ssim", {{"mean", ssim_agg.mean}, {"std", ssim_agg.std}}},
            {"mse", {{"mean", mse_agg.mean}, {"std", mse_agg.std}}},
            {"count", mse_values.size()}};
}

std::string SynthesisReport::to_csv() const {
    std::ostringstream os;
    os << "metric,mean,std\n";
    os << "psnr," << psnr_agg.mean << "," << psnr_agg.std << "\n";
    os << "ssim," << ssim_agg.mean << "," << ssim_agg.std << "\n";
    os << "mse," << mse_agg.mean << "," << mse_agg.std << "\n";
    return os.str();
}

std::string SynthesisReport::to_table() const {
    char buf[256];
    std::string out = "metric    mean       std\n";
    std::snprintf(buf, sizeof buf, "PSNR    %8.3f  %8.3f\n", psnr_agg.mean, psnr_agg.std);
    out += buf;
    std::snprintf(buf, sizeof buf, "SSIM    %8.3f  %8.3f\n", ssim_agg.mean, ssim_agg.std);
    out += buf;
    std::snprintf(buf, sizeof buf, "MSE     %8.4f  %8.4f\n", mse_agg.mean, mse_agg.std);
    out += buf;
    return out;
}

SynthesisReport synthesis_report(const std::vector<Image>& references,
                                 const std::vector<Image>& candidates, double max_val) {
    if (references.size() != candidates.size())
        throw DataError("synthesis report: reference/candidate count mismatch");
    if (references.empty()) throw DataError("synthesis report: no images");
    SynthesisReport report;
    for (std::size_t i = 0; i < references.size(); ++i) {
        report.add(mse(references[i], candidates[i]),
                   psnr(references[i], candidates[i], max_val),
                   ssim(references[i], candidates[i], max_val));
    }
    report.finalize();
    return report;
}

ClassificationReport classification_report(const std::vector<i64>& y_true,
                                           const std::vector<i64>& y_pred, i64 num_classes) {
    if (y_true.empty()) throw DataError("classification report: empty input");
    if (y_true.size() != y_pred.size())
        throw DataError("classification report: label/prediction length mismatch");
    if (num_classes < 1) throw ConfigError("classification report: bad class count");

    ClassificationReport r;
    r.confusion.assign(static_cast<std::size_t>(num_classes),
                       std::vector<i64>(static_cast<std::size_t>(num_classes), 0));
    for (std::size_t i = 0; i < y_true.size(); ++i) {
        const i64 t = y_true[i], p = y_pred[i];
        if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
            throw DataError("classification report: label outside class set");
        r.confusion[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)]++;
    }

    const double n = static_cast<double>(y_true.size());
    double trace = 0.0;
    r.support.assign(static_cast<std::size_t>(num_classes), 0);
    std::vector<i64> predicted(static_cast<std::size_t>(num_classes), 0);
    for (i64 c = 0; c < num_classes; ++c) {
        trace += static_cast<double>(r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]);
        for (i64 k = 0; k < num_classes; ++k) {
            r.support[static_cast<std::size_t>(c)] += r.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(k)];
            predicted[static_cast<std::size_t>(c)] += r.confusion[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        }
    }
    r.accuracy = trace / n;

    for (i64 c = 0; c < num_classes; ++c) {
        const auto ci = static_cast<std::size_t>(c);
        const double tp = static_cast<double>(r.confusion[ci][ci]);
        double prec = 0.0, rec = 0.0, f1c = 0.0;
        if (predicted[ci] > 0) {
            prec = tp / static_cast<double>(predicted[ci]);
        } else {
            std::cerr << "warning: classification_report: class " << c
                      << " never predicted, precision treated as 0\n";
        }
        if (r.support[ci] > 0) {
            rec = tp / static_cast<double>(r.support[ci]);
        } else {
            std::cerr << "warning: classification_report: class " << c
                      << " has zero support, recall treated as 0\n";
        }
        if (prec + rec > 0.0) f1c = 2.0 * prec * rec / (prec + rec);
        r.per_class_precision.push_back(prec);
        r.per_class_recall.push_back(rec);
        r.per_class_f1.push_back(f1c);
        const double w = static_cast<double>(r.support[ci]) / n;
        r.precision += w * prec;
        r.recall += w * rec;
        r.f1 += w * f1c;
    }
    return r;
}

nlohmann::json ClassificationReport::to_json() const {
    return {{"accuracy", accuracy},
            {"weighted_precision", precision},
            {"weighted_recall", recall},
            {"weighted_f1", f1},
            {"confusion", confusion},
            {"support", support}};
}

std::string ClassificationReport::to_csv() const {
    std::ostringstream os;
    os << "accuracy,precision,recall,f1\n";
    os << accuracy << "," << precision << "," << recall << "," << f1 << "\n";
    return os.str();
}

std::string ClassificationReport::to_table() const {
    char buf[256];
    std::snprintf(buf, sizeof buf, "acc      precision  recall   F1\n%7.4f  %7.4f    %7.4f  %7.4f\n",
                  accuracy, precision, recall, f1);
    std::string out = buf;
    out += "confusion (rows: true, cols: predicted):\n";
    for (const auto& row : confusion) {
        for (i64 v : row) {
            std::snprintf(buf, sizeof buf, "%6lld", static_cast<long long>(v));
            out += buf;
        }
        out += "\n";
    }
    return out;
}

}  // namespace resvit
