#include <doctest.h>

#include <cmath>

#include "sdeattn/sde.hpp"
#include "testutil.hpp"

using namespace sdeattn;
using testutil::gradient_check;
using testutil::random_tensor;

namespace {

struct LinearDrift final : SdeFunc {
    double rate;
    explicit LinearDrift(double r) : rate(r) {}
    Tensor drift(const Tensor& h, double) const override { return scale(h, rate); }
    Tensor diffusion(const Tensor& h, double) const override { return Tensor(h.shape()); }
};

struct UnitDiffusion final : SdeFunc {
    Tensor drift(const Tensor& h, double) const override { return Tensor(h.shape()); }
    Tensor diffusion(const Tensor& h, double) const override { return Tensor::full(h.shape(), 1.0); }
};

struct Still final : SdeFunc {
    Tensor drift(const Tensor& h, double) const override { return Tensor(h.shape()); }
    Tensor diffusion(const Tensor& h, double) const override { return Tensor(h.shape()); }
};

std::vector<double> uniform_grid(double a, double b, int steps) {
    std::vector<double> g;
    for (int i = 0; i <= steps; ++i) g.push_back(a + (b - a) * i / steps);
    g.back() = b;
    return g;
}

}  // namespace

TEST_CASE("brownian increments are reproducible and seed-sensitive") {
    auto grid = uniform_grid(0.0, 1.0, 8);
    auto p1 = sample_brownian(grid, 3, 2, 99);
    auto p2 = sample_brownian(grid, 3, 2, 99);
    auto p3 = sample_brownian(grid, 3, 2, 100);
    bool all_equal = true, any_diff = false;
    for (std::size_t k = 0; k < p1.increments.size(); ++k)
        for (std::int64_t i = 0; i < p1.increments[k].size(); ++i) {
            all_equal = all_equal && p1.increments[k].data()[i] == p2.increments[k].data()[i];
            any_diff = any_diff || p1.increments[k].data()[i] != p3.increments[k].data()[i];
        }
    CHECK(all_equal);
    CHECK(any_diff);

    std::vector<double> bad = {0.0, 0.5, 0.5, 1.0};
    CHECK_THROWS_AS(sample_brownian(bad, 1, 1, 0), std::invalid_argument);
}

TEST_CASE("brownian increment variance tracks the grid spacing") {
    const double dt = 0.02;
    auto grid = uniform_grid(0.0, dt * 100, 100);
    auto path = sample_brownian(grid, 125, 8, 7);  // 100 * 125 * 8 = 1e5 draws
    double sum = 0.0, sumsq = 0.0;
    std::int64_t n = 0;
    for (const auto& inc : path.increments)
        for (double v : inc.data()) {
            sum += v;
            sumsq += v * v;
            ++n;
        }
    const double mean = sum / n;
    const double var = sumsq / n - mean * mean;
    CHECK(std::abs(var - dt) < 0.05 * dt);
}

TEST_CASE("em_step hand-checked cases") {
    Still still;
    Tensor h({2, 3}, {1, 2, 3, 4, 5, 6});
    auto same = em_step(still, h, 0.0, 0.1, Tensor({2, 3}));
    for (std::int64_t i = 0; i < h.size(); ++i) CHECK(same.data()[i] == h.data()[i]);

    LinearDrift decay(-1.0);
    auto one = Tensor::full({1, 2}, 1.0);
    auto stepped = em_step(decay, one, 0.0, 0.1, Tensor({1, 2}));
    CHECK(stepped(0, 0) == doctest::Approx(0.9).epsilon(1e-15));

    UnitDiffusion noise;
    auto pushed = em_step(noise, one, 0.0, 0.5, Tensor::full({1, 2}, 0.3));
    CHECK(pushed(0, 0) == doctest::Approx(1.3).epsilon(1e-15));

    CHECK_THROWS_AS(em_step(still, h, 0.0, 0.0, Tensor({2, 3})), std::invalid_argument);
}

TEST_CASE("single-interval integrate equals one em_step") {
    LinearDrift decay(-1.0);
    std::vector<double> grid = {0.0, 0.1};
    auto path = sample_brownian(grid, 2, 2, 5);
    auto h0 = Tensor::full({2, 2}, 1.0);
    auto by_integrate = integrate(decay, h0, 0.0, 0.1, path);
    auto by_step = em_step(decay, h0, 0.0, 0.1, path.increments[0]);
    for (std::int64_t i = 0; i < h0.size(); ++i) CHECK(by_integrate.data()[i] == by_step.data()[i]);
}

TEST_CASE("zero-diffusion linear drift converges to the exponential at first order") {
    LinearDrift decay(-1.0);
    const double exact = std::exp(-1.0);
    std::vector<double> errors;
    for (int n : {5, 10, 20, 40}) {
        auto grid = uniform_grid(0.0, 1.0, n);
        auto path = sample_brownian(grid, 1, 1, 3);
        auto hT = integrate(decay, Tensor::full({1, 1}, 1.0), 0.0, 1.0, path);
        errors.push_back(std::abs(hT(0, 0) - exact));
    }
    for (std::size_t i = 0; i + 1 < errors.size(); ++i) {
        const double ratio = errors[i] / errors[i + 1];
        CHECK(ratio > 1.8);
        CHECK(ratio < 2.2);
    }
}

TEST_CASE("pure unit diffusion reproduces the Brownian displacement exactly") {
    UnitDiffusion noise;
    auto grid = uniform_grid(0.0, 1.0, 10);
    auto path = sample_brownian(grid, 3, 2, 11);
    Rng rng(12);
    auto h0 = random_tensor({3, 2}, rng);
    auto hT = integrate(noise, h0, 0.0, 1.0, path);
    // oracle accumulates the increments in solver order
    Tensor expect = h0.detached_copy();
    for (const auto& inc : path.increments)
        for (std::int64_t i = 0; i < expect.size(); ++i) {
            expect.mutable_data()[static_cast<std::size_t>(i)] += 0.0;  // drift contribution
            expect.mutable_data()[static_cast<std::size_t>(i)] += inc.data()[i];
        }
    for (std::int64_t i = 0; i < hT.size(); ++i) CHECK(hT.data()[i] == expect.data()[i]);
}

TEST_CASE("integration composes bitwise across intermediate times") {
    ParamInit init(31);
    auto dyn = make_sde_dynamics(3, 8, init);
    std::vector<double> times = {0.3, 0.7, 1.0};
    auto grid = solver_grid(0.0, times, 4);
    auto path = sample_brownian(grid, 2, 3, 17);
    Rng rng(18);
    auto h0 = random_tensor({2, 3}, rng, -0.5, 0.5);
    auto direct = integrate(dyn, h0, 0.0, 1.0, path);
    auto hop = integrate(dyn, integrate(dyn, h0, 0.0, 0.3, path), 0.3, 1.0, path);
    for (std::int64_t i = 0; i < direct.size(); ++i) CHECK(direct.data()[i] == hop.data()[i]);

    CHECK_THROWS_AS(integrate(dyn, h0, 0.0, 0.55, path), std::invalid_argument);
}

TEST_CASE("zeroed diffusion net erases all Brownian influence") {
    ParamInit init(41);
    auto dyn = make_sde_dynamics(2, 6, init);
    for (auto& layer : dyn.diffusion_net.layers) {
        std::fill(layer.weight.mutable_data().begin(), layer.weight.mutable_data().end(), 0.0);
        std::fill(layer.bias.mutable_data().begin(), layer.bias.mutable_data().end(), 0.0);
    }
    std::vector<double> times = {0.5, 1.0};
    auto grid = solver_grid(0.0, times, 5);
    auto path_a = sample_brownian(grid, 2, 2, 1);
    auto path_b = sample_brownian(grid, 2, 2, 2);
    Rng rng(42);
    auto h0 = random_tensor({2, 2}, rng, -0.5, 0.5);
    auto ha = integrate(dyn, h0, 0.0, 1.0, path_a);
    auto hb = integrate(dyn, h0, 0.0, 1.0, path_b);
    for (std::int64_t i = 0; i < ha.size(); ++i) CHECK(ha.data()[i] == hb.data()[i]);
}

TEST_CASE("gradients through the solver match finite differences") {
    ParamInit init(51);
    auto dyn = make_sde_dynamics(2, 3, init);
    ParameterStore store;
    register_params(store, "dyn", dyn);
    std::vector<double> times = {0.4, 1.0};
    auto grid = solver_grid(0.0, times, 2);
    auto path = sample_brownian(grid, 2, 2, 13);
    Rng rng(52);
    auto h0 = testutil::param({2, 2}, rng, -0.4, 0.4);
    std::vector<Tensor> params;
    for (const auto& [_, t] : store.entries) params.push_back(t);
    params.push_back(h0);
    auto loss = [&]() {
        auto hT = integrate(dyn, h0, 0.0, 1.0, path);
        return sum_all(mul(hT, hT));
    };
    CHECK(gradient_check(params, loss, 1e-5) < 1e-4);
}

TEST_CASE("divergence is flagged per trajectory instead of poisoning the batch") {
    // Huge drift rate overflows one trajectory; the other stays finite.
    struct Explode final : SdeFunc {
        Tensor drift(const Tensor& h, double) const override {
            Tensor d(h.shape());
            auto hd = h.data();
            for (std::int64_t i = 0; i < h.size(); ++i)
                d.mutable_data()[static_cast<std::size_t>(i)] = hd[i] * hd[i] * 1e155;
            return d;
        }
        Tensor diffusion(const Tensor& h, double) const override { return Tensor(h.shape()); }
    };
#ifdef NDEBUG
    Explode dyn;
    std::vector<double> grid = {0.0, 0.5, 1.0};
    auto path = sample_brownian(grid, 2, 1, 3);
    Tensor h0({2, 1}, {1e80, 0.0});
    std::vector<std::uint8_t> flags(2, 0);
    auto hT = integrate(dyn, h0, 0.0, 1.0, path, &flags);
    CHECK(flags[0] == 1);
    CHECK(flags[1] == 0);
    CHECK(hT(0, 0) == 0.0);
    CHECK(hT.all_finite());
    CHECK_THROWS_AS(integrate(dyn, h0, 0.0, 1.0, path), DivergenceError);
#endif
}
