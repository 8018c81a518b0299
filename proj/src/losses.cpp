#include "resvit/losses.hpp"

#include <cmath>
#include <iostream>

namespace resvit {

void AvailabilityMask::validate_entries() const {
    if (a.empty()) throw ConfigError("availability mask: empty");
    for (int x : a)
        if (x != 0 && x != 1) throw ConfigError("availability mask: entries must be 0 or 1");
}

void AvailabilityMask::validate() const {
    validate_entries();
    bool has_source = false, has_target = false;
    for (int x : a) (x == 1 ? has_source : has_target) = true;
    if (!has_source || !has_target)
        throw ConfigError("availability mask: needs at least one source and one target");
}

AvailabilityMask AvailabilityMask::inverted() const {
    AvailabilityMask out;
    out.a.reserve(a.size());
    for (int x : a) out.a.push_back(1 - x);
    return out;
}

void LossWeights::validate() const {
    if (lambda_pix < 0.0 || lambda_rec < 0.0 || lambda_adv < 0.0)
        throw ConfigError("loss weights: must be nonnegative");
    if (lambda_pix == 0.0 && lambda_rec == 0.0 && lambda_adv == 0.0)
        throw ConfigError("loss weights: must not all be zero");
}

namespace {

i64 channels_per_sequence(const Var& stack, const AvailabilityMask& mask) {
    const auto& s = stack.shape();
    if (s.size() != 4) throw ShapeError("sequence stack: expects 4D (N,I*cps,H,W)");
    const i64 seqs = mask.sequences();
    if (seqs == 0 || s[1] % seqs != 0)
        throw ShapeError("sequence stack: " + std::to_string(s[1]) +
                         " channels do not split over " + std::to_string(seqs) + " sequences");
    return s[1] / seqs;
}

// Weighted sum over per-sequence L1 terms; weight_on_source selects between
// the reconstruction (a_i) and pixel-wise (1 - a_i) variants.
Var sequence_l1(const Var& pred, const Var& real, const AvailabilityMask& mask,
                bool weight_on_source) {
    if (!pred.val().same_shape(real.val()))
        throw ShapeError("sequence L1: prediction " + shape_str(pred.shape()) +
                         " vs reference " + shape_str(real.shape()));
    mask.validate_entries();
    const i64 cps = channels_per_sequence(pred, mask);
    Var total = Var::constant(Tensor::scalar(0.0));
    for (i64 i = 0; i < mask.sequences(); ++i) {
        const int a = mask.a[static_cast<std::size_t>(i)];
        const int weight = weight_on_source ? a : 1 - a;
        if (weight == 0) continue;
        Var pi = slice_channels(pred, i * cps, (i + 1) * cps);
        Var mi = slice_channels(real, i * cps, (i + 1) * cps);
        total = add(total, mean_all(abs_op(sub(pi, mi))));
    }
    return total;
}

}  // namespace

Var masked_input(const Var& stack, const AvailabilityMask& mask) {
    mask.validate_entries();
    const i64 cps = channels_per_sequence(stack, mask);
    Var out;
    for (i64 i = 0; i < mask.sequences(); ++i) {
        Var part = slice_channels(stack, i * cps, (i + 1) * cps);
        part = scale(part, static_cast<double>(mask.a[static_cast<std::size_t>(i)]));
        out = out.defined() ? concat_channels(out, part) : part;
    }
    return out;
}

Var l_pix(const Var& pred, const Var& real, const AvailabilityMask& mask) {
    return sequence_l1(pred, real, mask, /*weight_on_source=*/false);
}

Var l_rec(const Var& pred, const Var& real, const AvailabilityMask& mask) {
    return sequence_l1(pred, real, mask, /*weight_on_source=*/true);
}

Var l_adv_d(const Var& d_real, const Var& d_fake) {
    if (!d_real.val().same_shape(d_fake.val()))
        throw ShapeError("adversarial loss: real " + shape_str(d_real.shape()) + " vs fake " +
                         shape_str(d_fake.shape()) + " score maps");
    Var real_term = mean_all(square(add_scalar(d_real, -1.0)));
    Var fake_term = mean_all(square(d_fake));
    return add(real_term, fake_term);
}

Var l_adv_g(const Var& d_fake) { return mean_all(square(add_scalar(d_fake, -1.0))); }

Var total_generator_loss(const Var& pix, const Var& rec, const Var& adv_g,
                         const LossWeights& weights) {
    weights.validate();
    for (const Var* term : {&pix, &rec, &adv_g}) {
        if (!std::isfinite(term->item()))
            throw NumericError("total generator loss: non-finite component");
    }
    Var total = scale(pix, weights.lambda_pix);
    total = add(total, scale(rec, weights.lambda_rec));
    total = add(total, scale(adv_g, weights.lambda_adv));
    return total;
}

Var cross_entropy(const Var& probs, const std::vector<i64>& labels) {
    const auto& s = probs.shape();
    if (s.size() != 2) throw ShapeError("cross entropy: expects (N,K) probabilities");
    if (s[0] == 0) throw DataError("cross entropy: empty batch");
    Var picked = gather_classes(probs, labels);
    for (i64 n = 0; n < picked.val().numel(); ++n) {
        if (picked.val()[n] < 1e-12) {
            std::cerr << "warning: cross_entropy: zero probability at true class, clamped to"
                         " 1e-12\n";
            break;
        }
    }
    return neg(mean_all(log_op(clamp_min(picked, 1e-12))));
}

}  // namespace resvit
