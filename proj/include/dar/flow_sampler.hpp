#pragma once

// ODE integration of a learned velocity field from t=0 to t=1 under the
// grouped condition schedule: Euler and variable-step two-step
// Adams-Bashforth solvers, streaming group consumption with a blocking
// queue, and jump-estimate previews at zero extra model evaluations.

#include <condition_variable>
#include <functional>
#include <mutex>
#include <optional>
#include <queue>

#include "dar/schedule.hpp"
#include "dar/tensor.hpp"

namespace dar {

enum class SolverKind { euler, ab2 };

inline SolverKind solver_from_string(const std::string& s) {
    if (s == "euler") return SolverKind::euler;
    if (s == "ab2") return SolverKind::ab2;
    throw std::invalid_argument("unknown solver: " + s);
}

template <typename T>
struct FlowState {
    Tensor<T> x;
    int64_t step_index = 0;
    double t = 0.0;
    std::optional<Tensor<T>> prev_velocity;
    uint64_t rng_seed = 0;
};

template <typename T>
struct PreviewFrame {
    int64_t step_index;
    double t;
    Tensor<T> estimate;  // x1_hat = x_t + (1 - t) v
};

// (x_t, t, condition group tokens [G, d]) -> velocity, same shape as x_t
template <typename T>
using VelocityModel = std::function<Tensor<T>(const Tensor<T>&, double, const Tensor<T>&)>;

template <typename T>
using PreviewSink = std::function<void(const PreviewFrame<T>&)>;

// yields (group 1-based index, tokens [G, d]); called once per step
template <typename T>
using GroupSource = std::function<std::pair<int64_t, Tensor<T>>()>;

template <typename T>
void check_finite(const Tensor<T>& v, const char* what) {
    for (const T& x : v.data)
        check_runtime(std::isfinite(static_cast<double>(x)), std::string(what) + ": non-finite value");
}

template <typename T>
FlowState<T> euler_step(const FlowState<T>& state, const Tensor<T>& velocity, double h) {
    check_arg(h >= 0.0, "euler_step: negative step");
    check_arg(state.x.same_shape(velocity), "euler_step: velocity shape mismatch");
    check_finite(velocity, "euler_step");
    FlowState<T> next = state;
    const T hh = static_cast<T>(h);
    for (size_t i = 0; i < next.x.data.size(); ++i) next.x.data[i] += hh * velocity.data[i];
    next.t = state.t + h;
    next.step_index = state.step_index + 1;
    next.prev_velocity = velocity;
    return next;
}

// variable-step AB2: x += h * ((1 + h/(2 h_prev)) v - (h/(2 h_prev)) v_prev)
template <typename T>
FlowState<T> ab2_step(const FlowState<T>& state, const Tensor<T>& velocity, double h, double h_prev) {
    check_arg(state.prev_velocity.has_value(), "ab2_step: missing previous velocity");
    check_arg(h >= 0.0 && h_prev > 0.0, "ab2_step: bad step sizes");
    check_arg(state.x.same_shape(velocity), "ab2_step: velocity shape mismatch");
    check_finite(velocity, "ab2_step");
    const double r = h / (2.0 * h_prev);
    const T c1 = static_cast<T>(h * (1.0 + r));
    const T c2 = static_cast<T>(h * r);
    const Tensor<T>& vp = *state.prev_velocity;
    FlowState<T> next = state;
    for (size_t i = 0; i < next.x.data.size(); ++i)
        next.x.data[i] += c1 * velocity.data[i] - c2 * vp.data[i];
    next.t = state.t + h;
    next.step_index = state.step_index + 1;
    next.prev_velocity = velocity;
    return next;
}

template <typename T>
Tensor<T> jump_estimate(const Tensor<T>& x_t, const Tensor<T>& v, double t) {
    check_arg(t >= 0.0 && t <= 1.0, "jump_estimate: t outside [0,1]");
    check_arg(x_t.same_shape(v), "jump_estimate: shape mismatch");
    Tensor<T> est = x_t;
    const T w = static_cast<T>(1.0 - t);
    for (size_t i = 0; i < est.data.size(); ++i) est.data[i] += w * v.data[i];
    return est;
}

// Core integration loop: one velocity evaluation per step (NFE = K), group
// i+1 consumed at step i, Euler bootstrap then AB2 when requested.
template <typename T>
Tensor<T> streaming_sample(const GroupSource<T>& source, const VelocityModel<T>& model, int64_t K, double beta,
                           SolverKind solver, uint64_t seed, const std::vector<int64_t>& image_shape,
                           const PreviewSink<T>& sink = nullptr) {
    check_arg(K >= 1, "streaming_sample: K must be >= 1");
    const std::vector<double> grid = sampling_grid(K, beta);
    Rng rng(seed_stream(seed, 0xF10));
    FlowState<T> state;
    state.x = Tensor<T>::randn(image_shape, rng);
    state.rng_seed = seed;
    for (int64_t i = 0; i < K; ++i) {
        auto [gidx, tokens] = source();
        check_runtime(gidx == i + 1, "streaming_sample: group protocol violation (expected group " +
                                         std::to_string(i + 1) + ", got " + std::to_string(gidx) + ")");
        const double t_i = grid[static_cast<size_t>(i)];
        const double t_next = (i + 1 < K) ? grid[static_cast<size_t>(i + 1)] : 1.0;
        const double h = t_next - t_i;
        Tensor<T> v = model(state.x, t_i, tokens);
        if (sink) sink(PreviewFrame<T>{i, t_i, jump_estimate(state.x, v, t_i)});
        if (solver == SolverKind::ab2 && state.prev_velocity.has_value()) {
            const double h_prev = t_i - grid[static_cast<size_t>(i - 1)];
            state = ab2_step(state, v, h, h_prev);
        } else {
            state = euler_step(state, v, h);
        }
        check_finite(state.x, "streaming_sample: state");
    }
    return state.x;
}

// batch path: all condition groups available upfront as z' [N, d]
template <typename T>
Tensor<T> sample(const Tensor<T>& conditioned_tokens, const VelocityModel<T>& model, int64_t K, double beta,
                 SolverKind solver, uint64_t seed, const std::vector<int64_t>& image_shape,
                 const PreviewSink<T>& sink = nullptr) {
    check_arg(conditioned_tokens.rank() == 2, "sample: expected [N, d] conditioned tokens");
    const int64_t N = conditioned_tokens.dim(0), d = conditioned_tokens.dim(1);
    check_arg(N % K == 0, "sample: token count not divisible by K");
    const int64_t gs = N / K;
    int64_t next = 0;
    GroupSource<T> source = [&]() {
        Tensor<T> g({gs, d});
        std::copy_n(conditioned_tokens.ptr() + next * gs * d, gs * d, g.ptr());
        ++next;
        return std::make_pair(next, std::move(g));
    };
    return streaming_sample(source, model, K, beta, solver, seed, image_shape, sink);
}

// Thread-safe ordered handoff between a token producer (for example the AR
// model) and the sampler. Producer pushes groups 1..K; consumer blocks until
// the next group is available.
template <typename T>
class BlockingGroupQueue {
public:
    void push(int64_t group, Tensor<T> tokens) {
        {
            std::lock_guard<std::mutex> lock(mu_);
            q_.emplace(group, std::move(tokens));
        }
        cv_.notify_one();
    }

    std::pair<int64_t, Tensor<T>> pop() {
        std::unique_lock<std::mutex> lock(mu_);
        cv_.wait(lock, [&] { return !q_.empty(); });
        auto item = std::move(q_.front());
        q_.pop();
        return item;
    }

    GroupSource<T> as_source() {
        return [this]() { return pop(); };
    }

private:
    std::mutex mu_;
    std::condition_variable cv_;
    std::queue<std::pair<int64_t, Tensor<T>>> q_;
};

}  // namespace dar
