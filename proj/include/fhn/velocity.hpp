#pragma once

#include <array>
#include <stdexcept>

namespace fhn {

using Point = std::array<double, 2>;

/// Parabolic channel flow along x1: V_x1(x2) = s * a * x2 * (H - x2), V_x2 = 0.
///
/// The orientation sign is +1 for the state equations and -1 for the adjoint
/// equations, whose convection is the negated forward velocity.
struct VelocityField {
    double amplitude = 0.0;
    double height = 1.0;
    double sign = 1.0;

    static VelocityField from_vmax(double vmax, double height, double sign = 1.0)
    {
        if (height <= 0.0) throw std::invalid_argument("VelocityField: height must be positive");
        return {4.0 * vmax / (height * height), height, sign};
    }

    [[nodiscard]] double vmax() const { return amplitude * height * height / 4.0; }

    [[nodiscard]] Point operator()(const Point& x) const
    {
        return {sign * amplitude * x[1] * (height - x[1]), 0.0};
    }

    [[nodiscard]] VelocityField reversed() const { return {amplitude, height, -sign}; }
};

inline double dot(const Point& a, const Point& b) { return a[0] * b[0] + a[1] * b[1]; }

} // namespace fhn
