#include "pfadseg/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "pfadseg/errors.hpp"

namespace pfadseg {

std::uint64_t Rng::index(std::uint64_t n) {
    if (n == 0) throw InvalidArgument("Rng::index: empty range");
    // Rejection sampling removes modulo bias.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v = engine_();
    while (v >= limit) v = engine_();
    return v % n;
}

double Rng::normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
}

void Rng::restore(const std::string& state) {
    std::istringstream is(state);
    is >> engine_;
    if (is.fail()) throw LoadError("corrupt rng state");
}

}  // namespace pfadseg
