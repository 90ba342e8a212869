#include "guidednet/bench.hpp"

#include "guidednet/errors.hpp"
#include "guidednet/priors.hpp"
#include "guidednet/rng.hpp"

#include <chrono>
#include <cstdio>
#include <limits>

namespace guidednet::bench {

namespace {

template <typename F>
double best_time(int repeats, F&& run) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < repeats; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        run();
        best = std::min(best, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    return best;
}

}  // namespace

double ExtremumBench::fast_mpix_per_s() const { return static_cast<double>(size) * size / fast_seconds / 1e6; }
double ExtremumBench::naive_mpix_per_s() const { return static_cast<double>(size) * size / naive_seconds / 1e6; }

std::string ExtremumBench::to_text() const {
    char text[320];
    std::snprintf(text, sizeof text,
                  "sliding extremum %dx%d radius %d\n"
                  "  van Herk/Gil-Werman  %.4f s  %.1f Mpx/s\n"
                  "  naive window         %.4f s  %.1f Mpx/s\n"
                  "  speedup %.1fx  outputs %s\n",
                  size, size, radius, fast_seconds, fast_mpix_per_s(), naive_seconds, naive_mpix_per_s(), speedup(),
                  identical ? "identical" : "DIFFER");
    return text;
}

ExtremumBench run_extremum_bench(int size, int radius, int repeats, std::uint64_t seed) {
    if (size < 1 || radius < 0 || repeats < 1) throw InvalidConfig("bench needs size >= 1, radius >= 0, repeats >= 1");
    Raster<float> map(1, size, size);
    Rng rng(seed);
    for (float& v : map.values) v = static_cast<float>(rng.uniform());

    Raster<float> fast, naive;
    ExtremumBench result;
    result.size = size;
    result.radius = radius;
    result.fast_seconds =
        best_time(repeats, [&] { fast = priors::sliding_extremum(map, radius, priors::Extremum::Min); });
    result.naive_seconds =
        best_time(repeats, [&] { naive = priors::naive_sliding_extremum(map, radius, priors::Extremum::Min); });
    result.identical = fast == naive;
    return result;
}

}  // namespace guidednet::bench
