#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dar/common.hpp"
#include "dar/schedule.hpp"

using namespace dar;

TEST_CASE("timeshift fixed points and closed form") {
    CHECK(timeshift(0.0, 2.0) == 0.0);
    CHECK(timeshift(1.0, 2.0) == 1.0);
    // direct closed-form evaluation: 0.5 / (0.5 + 0.5/2) = 2/3
    const double expect = 0.5 / (0.5 + 0.5 / 2.0);
    CHECK(timeshift(0.5, 2.0) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(timeshift(0.5, 2.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("timeshift is strictly increasing for every beta") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const double beta = std::exp(rng.uniform(-2.0, 2.0));
        double prev = timeshift(0.0, beta);
        for (int i = 1; i <= 200; ++i) {
            double t = static_cast<double>(i) / 200.0;
            double cur = timeshift(t, beta);
            CHECK(cur > prev);
            prev = cur;
        }
    }
}

TEST_CASE("timeshift beta=1 is the identity") {
    for (int i = 0; i <= 100; ++i) {
        double t = static_cast<double>(i) / 100.0;
        CHECK(timeshift(t, 1.0) == doctest::Approx(t).epsilon(1e-15));
    }
}

TEST_CASE("timeshift domain errors") {
    CHECK_THROWS_AS(timeshift(-0.1, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(timeshift(1.1, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(timeshift(0.5, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(timeshift(0.5, -1.0), std::invalid_argument);
}

TEST_CASE("group_index examples") {
    ConditionSchedule s8(256, 8, 2.0);
    CHECK(group_index(1e-12, s8) == 1);
    CHECK(group_index(0.0, s8) == 1);  // clamp convention at the endpoint

    ConditionSchedule s4(16, 4, 1.0);
    // t' = 0.3, ceil(1.2) = 2
    CHECK(group_index(0.3, s4) == 2);
    // t' = 2/3, ceil(16/3) = 6
    CHECK(group_index(0.5, s8) == 6);
    CHECK(group_index(1.0, s8) == 8);
    CHECK_THROWS_AS(group_index(1.5, s8), std::invalid_argument);
}

TEST_CASE("group_index is non-decreasing in t") {
    ConditionSchedule s(64, 8, 2.0);
    int64_t prev = 1;
    for (int i = 0; i <= 1000; ++i) {
        int64_t g = group_index(static_cast<double>(i) / 1000.0, s);
        CHECK(g >= prev);
        prev = g;
    }
}

TEST_CASE("sampling_grid examples") {
    auto g = sampling_grid(8, 2.0);
    CHECK(g[0] == 0.0);
    CHECK(g[4] == doctest::Approx(0.5 / (0.5 + 2.0 * 0.5)).epsilon(1e-15));
    CHECK(g[4] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

    auto g21 = sampling_grid(2, 1.0);
    REQUIRE(g21.size() == 2);
    CHECK(g21[0] == 0.0);
    CHECK(g21[1] == doctest::Approx(0.5).epsilon(1e-15));

    CHECK_THROWS_AS(sampling_grid(0, 2.0), std::invalid_argument);
    CHECK_THROWS_AS(sampling_grid(8, 0.0), std::invalid_argument);
}

TEST_CASE("sampling_grid strictly increasing, in [0,1), denser early when beta>1") {
    for (double beta : {0.5, 1.0, 2.0, 4.0}) {
        for (int64_t k : {1, 2, 8, 16}) {
            auto g = sampling_grid(k, beta);
            CHECK(g[0] == 0.0);
            for (size_t i = 1; i < g.size(); ++i) {
                CHECK(g[i] > g[i - 1]);
                CHECK(g[i] < 1.0);
            }
        }
    }
    auto g = sampling_grid(8, 2.0);
    CHECK(g[1] - g[0] < 1.0 / 8.0);  // early steps denser
    auto u = sampling_grid(8, 1.0);
    for (size_t i = 0; i < u.size(); ++i) CHECK(u[i] == doctest::Approx(static_cast<double>(i) / 8.0).epsilon(1e-15));
}

TEST_CASE("round-trip identity: timeshift inverts the sampling grid") {
    for (auto [k, beta] : std::vector<std::pair<int64_t, double>>{{8, 2.0}, {4, 1.0}, {16, 4.0}, {5, 0.7}}) {
        auto g = sampling_grid(k, beta);
        for (int64_t i = 0; i < k; ++i) {
            const double expect = static_cast<double>(i) / static_cast<double>(k);
            CHECK(std::abs(timeshift(g[static_cast<size_t>(i)], beta) - expect) < 1e-12);
        }
    }
}

TEST_CASE("group_for_step matches group_index on interval interiors") {
    ConditionSchedule s(256, 8, 2.0);
    auto grid = sampling_grid(s.num_groups, s.beta);
    for (int64_t i = 0; i < s.num_groups; ++i) {
        CHECK(group_for_step(i, s) == i + 1);
        const double t_next = (i + 1 < s.num_groups) ? grid[static_cast<size_t>(i + 1)] : 1.0;
        const double mid = 0.5 * (grid[static_cast<size_t>(i)] + t_next);
        CHECK(group_index(mid, s) == group_for_step(i, s));
    }
    CHECK_THROWS_AS(group_for_step(-1, s), std::out_of_range);
    CHECK_THROWS_AS(group_for_step(8, s), std::out_of_range);
}

TEST_CASE("coverage: each interval maps to its own group, all groups used once") {
    for (auto [k, beta] : std::vector<std::pair<int64_t, double>>{{8, 2.0}, {4, 1.0}, {16, 4.0}}) {
        ConditionSchedule s(k * 4, k, beta);
        auto grid = sampling_grid(k, beta);
        std::vector<int64_t> used;
        for (int64_t i = 0; i < k; ++i) {
            const double t_next = (i + 1 < k) ? grid[static_cast<size_t>(i + 1)] : 1.0;
            // points strictly inside (t_i, t_next); the shared boundary is
            // only representable exactly at t_K = 1
            std::vector<int64_t> seen;
            for (double frac : {0.05, 0.25, 0.5, 0.95}) {
                double t = grid[static_cast<size_t>(i)] + frac * (t_next - grid[static_cast<size_t>(i)]);
                seen.push_back(group_index(t, s));
            }
            if (i + 1 == k) seen.push_back(group_index(1.0, s));
            for (int64_t g : seen) CHECK(g == seen[0]);
            used.push_back(seen[0]);
        }
        std::sort(used.begin(), used.end());
        for (int64_t i = 0; i < k; ++i) CHECK(used[static_cast<size_t>(i)] == i + 1);
    }
}

TEST_CASE("token_slice positions") {
    ConditionSchedule s16(16, 4, 2.0);
    auto sl = token_slice(1, s16);
    CHECK(sl.first == 0);
    CHECK(sl.last == 4);
    sl = token_slice(4, s16);
    CHECK(sl.first == 12);
    CHECK(sl.last == 16);

    ConditionSchedule s256(256, 8, 2.0);
    sl = token_slice(2, s256);
    CHECK(sl.first == 32);
    CHECK(sl.last == 64);

    CHECK_THROWS_AS(token_slice(0, s16), std::out_of_range);
    CHECK_THROWS_AS(token_slice(5, s16), std::out_of_range);
}

TEST_CASE("ConditionSchedule invariants") {
    CHECK_THROWS_AS(ConditionSchedule(10, 3, 2.0), std::invalid_argument);  // N mod K != 0
    CHECK_THROWS_AS(ConditionSchedule(8, 16, 2.0), std::invalid_argument);  // N < K
    CHECK_THROWS_AS(ConditionSchedule(8, 4, 0.0), std::invalid_argument);
    ConditionSchedule ok(32, 8, 2.0);
    CHECK(ok.group_size() == 4);
}
