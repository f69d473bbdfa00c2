#include "dictas/rng.hpp"

#include <cmath>
#include <numbers>

namespace dictas {

double standard_normal(Rng& rng) {
    double u1 = uniform(rng);
    while (u1 <= 0.0) u1 = uniform(rng);
    const double u2 = uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace dictas
