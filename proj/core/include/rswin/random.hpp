#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

#include "rswin/tensor.hpp"

namespace rswin {

// mt19937_64 is fully specified by the standard; the helpers below avoid the
// implementation-defined std distributions so streams are portable.
using Rng = std::mt19937_64;

// Seeds an independent stream from a base seed and a list of stream ids
// (epoch, sample index, ...), mixed through splitmix64.
Rng derive_rng(std::uint64_t seed, std::initializer_list<std::uint64_t> stream = {});

double uniform01(Rng& rng);
double uniform(Rng& rng, double lo, double hi);
double standard_normal(Rng& rng);
// Uniform integer in [0, n).
std::size_t uniform_index(Rng& rng, std::size_t n);

template <typename T>
void shuffle(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[uniform_index(rng, i)]);
  }
}

Array glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
// Normal(0, stddev) resampled outside +-2 stddev.
Array truncated_normal(Shape shape, double stddev, Rng& rng);

}  // namespace rswin
