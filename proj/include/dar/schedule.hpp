#pragma once

// Condition schedule: maps diffusion time onto ordered token groups via the
// beta timeshift, and produces the reversed-form sampling grid. All math is
// double precision regardless of model precision.

#include <cstdint>
#include <vector>

namespace dar {

struct ConditionSchedule {
    int64_t num_tokens;  // N
    int64_t num_groups;  // K
    double beta;

    ConditionSchedule(int64_t n, int64_t k, double b);

    int64_t group_size() const { return num_tokens / num_groups; }
};

// t' = t / (t + (1/beta) * (1 - t)); strictly increasing, fixes 0 and 1
double timeshift(double t, double beta);

// 1-based group index active at time t: clamp(ceil(t' * K), 1, K)
int64_t group_index(double t, const ConditionSchedule& schedule);

// K sampling times t_i = (i/K) / ((i/K) + beta * (1 - i/K)), i = 0..K-1
std::vector<double> sampling_grid(int64_t k, double beta);

// group consumed by integration step i (0-based): i + 1
int64_t group_for_step(int64_t i, const ConditionSchedule& schedule);

// half-open token position range [first, last) of a 1-based group
struct TokenSlice {
    int64_t first;
    int64_t last;
};
TokenSlice token_slice(int64_t group, const ConditionSchedule& schedule);

}  // namespace dar
