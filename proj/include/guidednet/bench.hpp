#pragma once

#include <cstdint>
#include <string>

namespace guidednet::bench {

struct ExtremumBench {
    int size = 0;
    int radius = 0;
    double fast_seconds = 0.0;   // best of the repeats
    double naive_seconds = 0.0;  // best of the repeats
    bool identical = false;      // both algorithms produced the same map

    double fast_mpix_per_s() const;
    double naive_mpix_per_s() const;
    double speedup() const { return naive_seconds / fast_seconds; }
    std::string to_text() const;
};

/// Times sliding_extremum against the naive windowed loop on a random size x size map.
ExtremumBench run_extremum_bench(int size, int radius, int repeats = 3, std::uint64_t seed = 1);

}  // namespace guidednet::bench
