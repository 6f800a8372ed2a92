#include "sdeattn/sde.hpp"

#include <cmath>
#include <stdexcept>

#include "sdeattn/rng.hpp"

namespace sdeattn {

std::size_t BrownianPath::index_of(double t) const {
    // Grid points are reproduced exactly by the builder, so exact comparison
    // is the correct membership test here.
    auto it = std::lower_bound(grid.begin(), grid.end(), t);
    if (it == grid.end() || *it != t)
        throw std::invalid_argument("time " + std::to_string(t) + " is not a point of the Brownian path grid");
    return static_cast<std::size_t>(it - grid.begin());
}

BrownianPath sample_brownian(const std::vector<double>& grid, std::int64_t batch, std::int64_t width,
                             std::uint64_t seed) {
    if (grid.size() < 2) throw std::invalid_argument("Brownian grid needs at least two points");
    for (std::size_t k = 1; k < grid.size(); ++k)
        if (!(grid[k] > grid[k - 1]))
            throw std::invalid_argument("Brownian grid must be strictly increasing at index " + std::to_string(k));
    BrownianPath path;
    path.grid = grid;
    path.seed = seed;
    Rng rng(seed);
    path.increments.reserve(grid.size() - 1);
    for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
        const double sd = std::sqrt(grid[k + 1] - grid[k]);
        Tensor inc({batch, width});
        for (auto& v : inc.mutable_data()) v = sd * rng.normal();
        path.increments.push_back(std::move(inc));
    }
    return path;
}

std::vector<double> solver_grid(double t0, const std::vector<double>& times, int substeps) {
    if (substeps < 1) throw std::invalid_argument("substeps must be >= 1");
    std::vector<double> grid;
    grid.reserve(times.size() * static_cast<std::size_t>(substeps) + 1);
    grid.push_back(t0);
    double prev = t0;
    for (double t : times) {
        if (!(t > prev))
            throw std::invalid_argument("observation times must be strictly increasing and start after " +
                                        std::to_string(t0));
        for (int s = 1; s <= substeps; ++s) {
            // final substep lands exactly on the observation time
            const double u = (s == substeps) ? t : prev + (t - prev) * (static_cast<double>(s) / substeps);
            grid.push_back(u);
        }
        prev = t;
    }
    return grid;
}

Tensor SdeDynamics::with_time(const Tensor& h, double t) const {
    const double span = time_hi - time_lo;
    const double tn = span > 0.0 ? (t - time_lo) / span : 0.0;
    std::vector<Tensor> parts = {h, Tensor::full({h.dim(0), 1}, tn)};
    return concat(parts, 1);
}

Tensor SdeDynamics::drift(const Tensor& h, double t) const { return mlp_forward(drift_net, with_time(h, t)); }

Tensor SdeDynamics::diffusion(const Tensor& h, double t) const { return mlp_forward(diffusion_net, with_time(h, t)); }

SdeDynamics make_sde_dynamics(std::int64_t latent, std::int64_t mlp_hidden, ParamInit& init) {
    SdeDynamics dyn;
    dyn.drift_net = make_mlp(latent + 1, {mlp_hidden}, latent, init);
    dyn.diffusion_net = make_mlp(latent + 1, {mlp_hidden}, latent, init);
    return dyn;
}

void register_params(ParameterStore& store, const std::string& prefix, const SdeDynamics& dyn) {
    register_params(store, prefix + ".drift", dyn.drift_net);
    register_params(store, prefix + ".diffusion", dyn.diffusion_net);
}

Tensor em_step(const SdeFunc& dyn, const Tensor& h, double t, double dt, const Tensor& dw) {
    if (!(dt > 0.0)) throw std::invalid_argument("em_step requires dt > 0");
    auto drifted = add(h, scale(dyn.drift(h, t), dt));
    return add(drifted, mul(dyn.diffusion(h, t), dw));
}

Tensor integrate(const SdeFunc& dyn, const Tensor& h0, double t0, double t1, const BrownianPath& path,
                 std::vector<std::uint8_t>* diverged) {
    if (!(t1 > t0)) throw std::invalid_argument("integrate requires t1 > t0");
    const std::size_t k0 = path.index_of(t0);
    const std::size_t k1 = path.index_of(t1);
    if (path.batch() != h0.dim(0) || path.width() != h0.dim(1))
        throw std::invalid_argument("Brownian path shape " + std::to_string(path.batch()) + "x" +
                                    std::to_string(path.width()) + " does not match state " +
                                    shape_to_string(h0.shape()));
    Tensor h = h0;
    for (std::size_t k = k0; k < k1; ++k) {
        const double t = path.grid[k];
        const double dt = path.grid[k + 1] - path.grid[k];
        h = em_step(dyn, h, t, dt, path.increments[k]);
        if (diverged) {
            h = zero_nonfinite_rows(h, *diverged);
        } else if (!h.all_finite()) {
            throw DivergenceError("integration diverged in (" + std::to_string(t) + ", " +
                                  std::to_string(t + dt) + ")");
        }
    }
    return h;
}

}  // namespace sdeattn
