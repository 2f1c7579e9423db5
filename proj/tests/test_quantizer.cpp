#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dar/gradcheck.hpp"
#include "dar/quantizer.hpp"

using namespace dar;

namespace {

// exhaustive nearest-row search on literal squared distances (test oracle,
// independent of the dot-product route in the implementation)
template <typename T>
int64_t brute_force_nearest(const T* f, const Tensor<T>& entries) {
    const int64_t n_e = entries.dim(0), d = entries.dim(1);
    int64_t best = 0;
    T best_d2 = std::numeric_limits<T>::max();
    for (int64_t r = 0; r < n_e; ++r) {
        T d2 = T(0);
        for (int64_t c = 0; c < d; ++c) {
            T diff = f[c] - entries.at2(r, c);
            d2 += diff * diff;
        }
        if (d2 < best_d2) {
            best_d2 = d2;
            best = r;
        }
    }
    return best;
}

Codebook<double> two_axis_codebook() {
    Codebook<double> cb(2, 2);
    cb.entries.at2(0, 0) = 1.0;
    cb.entries.at2(0, 1) = 0.0;
    cb.entries.at2(1, 0) = 0.0;
    cb.entries.at2(1, 1) = 1.0;
    return cb;
}

}  // namespace

TEST_CASE("quantize picks nearest row: axis codebook") {
    auto cb = two_axis_codebook();
    Tensor<double> f({1, 2}, {0.6, 0.8});
    auto res = quantize(f, cb);
    // d^2 to (1,0) is 0.8, to (0,1) is 0.4
    CHECK(res.indices[0] == 1);
    CHECK(res.quantized.at2(0, 0) == 0.0);
    CHECK(res.quantized.at2(0, 1) == 1.0);
}

TEST_CASE("quantize of an exact codebook row has zero loss") {
    Rng rng(3);
    auto cb = Codebook<double>::random(16, 4, rng);
    Tensor<double> f({1, 4});
    for (int64_t c = 0; c < 4; ++c) f.at2(0, c) = cb.entries.at2(5, c);
    auto res = quantize(f, cb);
    CHECK(res.indices[0] == 5);
    CHECK(res.vq_loss == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("tie breaks to the lowest index") {
    auto cb = two_axis_codebook();
    const double s = std::sqrt(2.0) / 2.0;
    Tensor<double> f({1, 2}, {s, s});
    auto res = quantize(f, cb);
    CHECK(res.indices[0] == 0);
}

TEST_CASE("quantize agrees with exhaustive brute-force search") {
    Rng rng(11);
    for (int trial = 0; trial < 50; ++trial) {
        const int64_t n_e = 4 + static_cast<int64_t>(rng.next_below(60));
        const int64_t d = 2 + static_cast<int64_t>(rng.next_below(8));
        auto cb = Codebook<double>::random(n_e, d, rng);
        Tensor<double> f = Tensor<double>::randn({5, d}, rng);
        auto res = quantize(f, cb);
        Tensor<double> f_norm = f;
        Codebook<double>::normalize_rows_inplace(f_norm);
        for (int64_t r = 0; r < 5; ++r)
            CHECK(res.indices[static_cast<size_t>(r)] == brute_force_nearest(f_norm.ptr() + r * d, cb.entries));
    }
}

TEST_CASE("scale invariance: quantize(c*f) selects the same index") {
    Rng rng(17);
    auto cb = Codebook<double>::random(32, 6, rng);
    Tensor<double> f = Tensor<double>::randn({8, 6}, rng);
    auto base = quantize(f, cb);
    for (double c : {0.01, 0.5, 3.0, 250.0}) {
        Tensor<double> scaled = f;
        for (auto& v : scaled.data) v *= c;
        auto res = quantize(scaled, cb);
        CHECK(res.indices == base.indices);
    }
}

TEST_CASE("quantize rejects bad inputs") {
    Rng rng(5);
    auto cb = Codebook<double>::random(8, 4, rng);
    Tensor<double> wrong({2, 3});
    CHECK_THROWS_AS(quantize(wrong, cb), std::invalid_argument);
    Tensor<double> nan({1, 4});
    nan.data[2] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(quantize(nan, cb), std::invalid_argument);
}

TEST_CASE("codebook_utilization") {
    std::vector<int64_t> one(16384, 0);
    one[7] = 123;
    CHECK(codebook_utilization(one, 16384) == doctest::Approx(1.0 / 16384.0));
    std::vector<int64_t> all(64, 1);
    CHECK(codebook_utilization(all, 64) == 1.0);
    CHECK(codebook_utilization({3, 0, 1, 0}, 4) == 0.5);
    CHECK_THROWS_AS(codebook_utilization({1, 2}, 4), std::invalid_argument);
}

TEST_CASE("straight_through forward passes quantized and backward is identity") {
    Tape<double> tape;
    ParamStore<double> ps;
    auto* fp = ps.create("f", Tensor<double>({1, 2}, {0.1, 0.9}));
    auto f = leaf(tape, fp);
    auto z = constant(tape, Tensor<double>({1, 2}, {0.0, 1.0}));
    auto st = straight_through(f, z);
    CHECK(st.value().at2(0, 0) == 0.0);
    CHECK(st.value().at2(0, 1) == 1.0);
    // loss = sum(st * w): gradient wrt f must be exactly w
    Tensor<double> w({1, 2}, {2.5, -1.25});
    auto loss = scale(mean_all(mul(st, constant(tape, w))), 2.0);  // sum = mean * numel
    tape.backward(loss);
    CHECK(fp->grad.at2(0, 0) == 2.5);
    CHECK(fp->grad.at2(0, 1) == -1.25);
}

TEST_CASE("straight-through delivers the downstream gradient evaluated at z") {
    // downstream g(y) = mean((y - target)^2); the straight-through gradient
    // wrt features must equal dg/dy at y = z, bypassing the discrete step
    ParamStore<double> ps;
    Rng rng(23);
    auto* fp = ps.create("f", Tensor<double>::randn({3, 4}, rng));
    Tensor<double> z = Tensor<double>::randn({3, 4}, rng);
    Tensor<double> target = Tensor<double>::randn({3, 4}, rng);

    Tape<double> tape;
    auto st = straight_through(leaf(tape, fp), constant(tape, z));
    auto loss = mse_vs(st, target);
    tape.backward(loss);

    // central differences of the downstream function in its own input, at z
    const double h = 1e-6;
    double max_rel = 0.0;
    for (int64_t j = 0; j < z.numel(); ++j) {
        auto eval = [&](double delta) {
            Tensor<double> zp = z;
            zp.data[static_cast<size_t>(j)] += delta;
            Tape<double> t2;
            t2.grad_enabled = false;
            return mse_vs(constant(t2, zp), target).value().data[0];
        };
        const double numeric = (eval(h) - eval(-h)) / (2 * h);
        max_rel = std::max(max_rel, rel_error(fp->grad.data[static_cast<size_t>(j)], numeric));
    }
    CHECK(max_rel < 1e-6);
}

TEST_CASE("loss split: vq term trains only the codebook, commit only the features") {
    ParamStore<double> ps;
    Rng rng(29);
    auto* fp = ps.create("f", Tensor<double>::randn({4, 4}, rng));
    auto* cbp = ps.create("cb", Codebook<double>::random(8, 4, rng).entries);

    {
        ps.zero_grad();
        Tape<double> tape;
        auto vq = vq_straight_through(tape, leaf(tape, fp), cbp);
        tape.backward(vq.vq_loss);
        for (double g : fp->grad.data) CHECK(g == 0.0);
        double cb_norm = 0.0;
        for (double g : cbp->grad.data) cb_norm += std::abs(g);
        CHECK(cb_norm > 0.0);
    }
    {
        ps.zero_grad();
        Tape<double> tape;
        auto vq = vq_straight_through(tape, leaf(tape, fp), cbp);
        tape.backward(vq.commit_loss);
        for (double g : cbp->grad.data) CHECK(g == 0.0);
        double f_norm = 0.0;
        for (double g : fp->grad.data) f_norm += std::abs(g);
        CHECK(f_norm > 0.0);
    }
    // finite-difference each side while the stop-gradient side is a constant
    {
        ParamStore<double> cb_only;
        auto* cb2 = cb_only.create("cb", cbp->value);
        const Tensor<double> f_const = fp->value;
        auto check_vq = grad_check(
            cb_only,
            [&](Tape<double>& t) {
                auto vq = vq_straight_through(t, constant(t, f_const), cb2);
                return vq.vq_loss;
            },
            0, 31);
        CHECK(check_vq.max_rel_error < 1e-5);
    }
    {
        ParamStore<double> f_only;
        auto* f2 = f_only.create("f", fp->value);
        ParamStore<double> frozen;  // not probed by grad_check
        auto* cb_frozen = frozen.create("cb", cbp->value);
        auto check_commit = grad_check(
            f_only,
            [&](Tape<double>& t) {
                auto vq = vq_straight_through(t, leaf(t, f2), cb_frozen);
                return vq.commit_loss;
            },
            0, 37);
        CHECK(check_commit.max_rel_error < 1e-5);
    }
}

TEST_CASE("vq_straight_through quantized rows are exact codebook row copies") {
    ParamStore<double> ps;
    Rng rng(41);
    auto* fp = ps.create("f", Tensor<double>::randn({6, 8}, rng));
    auto* cbp = ps.create("cb", Codebook<double>::random(32, 8, rng).entries);
    Tape<double> tape;
    auto vq = vq_straight_through(tape, leaf(tape, fp), cbp);
    Tensor<double> entries = cbp->value;
    Codebook<double>::normalize_rows_inplace(entries);
    for (int64_t r = 0; r < 6; ++r)
        for (int64_t c = 0; c < 8; ++c)
            CHECK(vq.quantized.value().at2(r, c) == entries.at2(vq.indices[static_cast<size_t>(r)], c));
}
