#include "dar/schedule.hpp"

#include <cmath>

#include "dar/common.hpp"

namespace dar {

ConditionSchedule::ConditionSchedule(int64_t n, int64_t k, double b)
    : num_tokens(n), num_groups(k), beta(b) {
    check_arg(k >= 1, "ConditionSchedule: K must be >= 1");
    check_arg(n >= k, "ConditionSchedule: N must be >= K");
    check_arg(n % k == 0, "ConditionSchedule: N must be divisible by K");
    check_arg(b > 0.0, "ConditionSchedule: beta must be positive");
}

double timeshift(double t, double beta) {
    check_arg(t >= 0.0 && t <= 1.0, "timeshift: t outside [0,1]");
    check_arg(beta > 0.0, "timeshift: beta must be positive");
    return t / (t + (1.0 / beta) * (1.0 - t));
}

int64_t group_index(double t, const ConditionSchedule& schedule) {
    const double shifted = timeshift(t, schedule.beta);
    int64_t g = static_cast<int64_t>(std::ceil(shifted * static_cast<double>(schedule.num_groups)));
    if (g < 1) g = 1;  // t = 0 endpoint
    if (g > schedule.num_groups) g = schedule.num_groups;
    return g;
}

std::vector<double> sampling_grid(int64_t k, double beta) {
    check_arg(k >= 1, "sampling_grid: K must be >= 1");
    check_arg(beta > 0.0, "sampling_grid: beta must be positive");
    std::vector<double> grid(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i) {
        const double u = static_cast<double>(i) / static_cast<double>(k);
        grid[static_cast<size_t>(i)] = u / (u + beta * (1.0 - u));
    }
    return grid;
}

int64_t group_for_step(int64_t i, const ConditionSchedule& schedule) {
    check_range(i >= 0 && i < schedule.num_groups, "group_for_step: step outside [0, K)");
    return i + 1;
}

TokenSlice token_slice(int64_t group, const ConditionSchedule& schedule) {
    check_range(group >= 1 && group <= schedule.num_groups, "token_slice: group outside [1, K]");
    const int64_t gs = schedule.group_size();
    return TokenSlice{(group - 1) * gs, group * gs};
}

}  // namespace dar
