#pragma once

#include <cstdint>
#include <random>

#include "evmatch/tensor.hpp"

namespace evmatch {

// Deterministic RNG wrapper. Streams derived with derive() are independent
// per (seed, stream-id), so data generation and training can be replayed
// piecewise without sharing generator state.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  static Rng derive(uint64_t seed, uint64_t stream) {
    // splitmix64 of the pair; decorrelates neighboring ids.
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

  std::mt19937_64& gen() { return gen_; }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(gen_);
  }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
    return std::uniform_int_distribution<int64_t>(lo, hi)(gen_);
  }

  Tensor normal_tensor(Shape s, double stddev) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = normal(0.0, stddev);
    return t;
  }
  Tensor uniform_tensor(Shape s, double lo, double hi) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = uniform(lo, hi);
    return t;
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace evmatch
