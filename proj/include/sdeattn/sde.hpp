#pragma once

// Euler-Maruyama integration of a latent SDE dh = f(h,t) dt + g(h,t) dW along
// a fixed, seeded Brownian path. Diffusion is diagonal: g emits one scale per
// latent channel, applied elementwise to the increment. Gradients flow by
// differentiating the discrete recursion, not an adjoint equation.

#include <cstdint>
#include <optional>
#include <vector>

#include "sdeattn/nn.hpp"
#include "sdeattn/tensor.hpp"

namespace sdeattn {

struct DivergenceError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Seeded Brownian increments over a fixed time grid. increments[k] covers
// (grid[k], grid[k+1]) and has per-entry variance grid[k+1] - grid[k].
struct BrownianPath {
    std::vector<double> grid;
    std::vector<Tensor> increments;  // each [batch, width]
    std::uint64_t seed = 0;

    std::int64_t batch() const { return increments.empty() ? 0 : increments.front().dim(0); }
    std::int64_t width() const { return increments.empty() ? 0 : increments.front().dim(1); }
    // Index of an exact grid point; throws when t is not on the grid.
    std::size_t index_of(double t) const;
};

BrownianPath sample_brownian(const std::vector<double>& grid, std::int64_t batch, std::int64_t width,
                             std::uint64_t seed);

// Builds the solver grid for a sequence of observation times: `substeps`
// uniform sub-intervals inside every (t_{i-1}, t_i], starting from t0.
std::vector<double> solver_grid(double t0, const std::vector<double>& times, int substeps);

// Drift and diffusion as functions of state and time.
class SdeFunc {
public:
    virtual ~SdeFunc() = default;
    virtual Tensor drift(const Tensor& h, double t) const = 0;
    virtual Tensor diffusion(const Tensor& h, double t) const = 0;
};

// Learned dynamics: both nets consume (h, t) with t appended as one extra
// feature normalized over [time_lo, time_hi], and emit the latent width.
class SdeDynamics final : public SdeFunc {
public:
    MlpNet drift_net;
    MlpNet diffusion_net;
    double time_lo = 0.0;
    double time_hi = 1.0;

    Tensor drift(const Tensor& h, double t) const override;
    Tensor diffusion(const Tensor& h, double t) const override;

private:
    Tensor with_time(const Tensor& h, double t) const;
};

SdeDynamics make_sde_dynamics(std::int64_t latent, std::int64_t mlp_hidden, ParamInit& init);
void register_params(ParameterStore& store, const std::string& prefix, const SdeDynamics& dyn);

// One explicit step: h + f(h,t) dt + g(h,t) * dW.
Tensor em_step(const SdeFunc& dyn, const Tensor& h, double t, double dt, const Tensor& dw);

// Composes em_step over the path sub-grid between two grid points. When
// `diverged` is given, any trajectory producing a non-finite latent is
// zeroed and flagged there; otherwise divergence throws DivergenceError.
Tensor integrate(const SdeFunc& dyn, const Tensor& h0, double t0, double t1, const BrownianPath& path,
                 std::vector<std::uint8_t>* diverged = nullptr);

}  // namespace sdeattn
