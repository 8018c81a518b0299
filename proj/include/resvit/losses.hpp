#pragma once

#include <vector>

#include "resvit/autograd.hpp"

namespace resvit {

// Per-sequence availability: a_i = 1 marks a source sequence, a_i = 0 a
// synthesis target. Image stacks are (N, I*cps, H, W) with cps channels per
// sequence (the default pipeline uses cps = 1, one grayscale channel each).
struct AvailabilityMask {
    std::vector<int> a;

    i64 sequences() const { return static_cast<i64>(a.size()); }
    void validate_entries() const;  // nonempty, entries in {0,1}
    void validate() const;          // entries plus at least one source and one target
    AvailabilityMask inverted() const;
};

struct LossWeights {
    double lambda_pix = 100.0;
    double lambda_rec = 100.0;
    double lambda_adv = 1.0;
    void validate() const;  // nonnegative, not all zero
};

// X^G: sequence i passes through when a_i = 1, zeroed when a_i = 0.
Var masked_input(const Var& stack, const AvailabilityMask& mask);

// Mean absolute error over target sequences (weight 1 - a_i).
Var l_pix(const Var& pred, const Var& real, const AvailabilityMask& mask);

// Mean absolute error over source sequences (weight a_i).
Var l_rec(const Var& pred, const Var& real, const AvailabilityMask& mask);

// Least-squares adversarial objectives. D minimizes E[(D(real)-1)^2] +
// E[D(fake)^2]; G minimizes E[(D(fake)-1)^2]. Both are bounded below by 0.
Var l_adv_d(const Var& d_real, const Var& d_fake);
Var l_adv_g(const Var& d_fake);

// lambda_pix*L_pix + lambda_rec*L_rec + lambda_adv*L_adv; throws NumericError
// on non-finite components.
Var total_generator_loss(const Var& pix, const Var& rec, const Var& adv_g,
                         const LossWeights& weights);

// Mean negative log of the true-class probability; probabilities below 1e-12
// are clamped (with a warning on stderr) rather than producing infinities.
Var cross_entropy(const Var& probs, const std::vector<i64>& labels);

}  // namespace resvit
