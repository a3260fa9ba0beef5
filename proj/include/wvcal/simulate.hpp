#pragma once

#include <wvcal/model.hpp>
#include <wvcal/wv.hpp>

#include <cstddef>
#include <cstdint>
#include <map>

namespace wvcal
{
struct SimConfig
{
        CompositeModel model;
        std::size_t length = 0;
        std::uint64_t seed = 0;
        double sample_rate_hz = 1.0;
};

// Sum of independent per-process realizations:
//   WN  iid N(0, sigma^2)
//   QN  sqrt(3) Q (u_t - u_{t-1}), u iid Uniform(-1, 1)
//   RW  sample averages of a Brownian motion with increment variance gamma^2 per sample
//   DR  omega * t, t = 1..T
// Bias instability cannot be simulated.
Signal simulate(const SimConfig& config);

std::map<Process, Signal> simulate_components(const SimConfig& config);

// Seed of process p's stream for a given master seed.
std::uint64_t component_seed(std::uint64_t seed, Process p);
}
