#pragma once

// Central finite-difference verification of tape gradients, double
// precision. The loss builder runs against the same ParamStore so analytic
// gradients land in Parameter::grad and numeric ones come from +/- h probes.

#include "dar/autodiff.hpp"

namespace dar {

struct GradCheckResult {
    double max_rel_error = 0.0;
    int64_t checked = 0;
};

// relative error with a floor so near-zero pairs compare absolutely
inline double rel_error(double a, double b, double floor = 1e-8) {
    const double scale = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / scale;
}

template <typename BuildFn>
GradCheckResult grad_check(ParamStore<double>& params, BuildFn&& build, int64_t samples_per_param,
                           uint64_t seed, double h = 1e-5) {
    params.zero_grad();
    {
        Tape<double> tape;
        Var<double> loss = build(tape);
        tape.backward(loss);
    }
    // snapshot analytic gradients before probing
    std::vector<Tensor<double>> analytic;
    for (const auto& p : params.all()) analytic.push_back(p->grad);

    auto eval = [&]() {
        Tape<double> tape;
        tape.grad_enabled = false;
        return build(tape).value().data[0];
    };

    GradCheckResult res;
    Rng rng(seed_stream(seed, 0x6C));
    const auto& all = params.all();
    for (size_t pi = 0; pi < all.size(); ++pi) {
        Parameter<double>& p = *all[pi];
        const int64_t n = p.value.numel();
        const int64_t count = samples_per_param > 0 ? std::min<int64_t>(samples_per_param, n) : n;
        for (int64_t s = 0; s < count; ++s) {
            const int64_t j = samples_per_param > 0 ? static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n)))
                                                    : s;
            const double old = p.value.data[static_cast<size_t>(j)];
            p.value.data[static_cast<size_t>(j)] = old + h;
            const double fp = eval();
            p.value.data[static_cast<size_t>(j)] = old - h;
            const double fm = eval();
            p.value.data[static_cast<size_t>(j)] = old;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[pi].data[static_cast<size_t>(j)];
            if (std::abs(a) < 1e-10 && std::abs(numeric) < 1e-7) continue;  // both ~zero
            res.max_rel_error = std::max(res.max_rel_error, rel_error(a, numeric));
            ++res.checked;
        }
    }
    return res;
}

}  // namespace dar
