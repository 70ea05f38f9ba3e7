#pragma once

#include <array>
#include <cmath>
#include <vector>

namespace fhn {

struct QuadratureRule {
    std::vector<std::array<double, 2>> points; ///< reference coordinates
    std::vector<double> weights;

    [[nodiscard]] std::size_t size() const { return weights.size(); }
};

/// Six-point symmetric rule on the reference triangle (0,0),(1,0),(0,1).
/// Exact for total degree <= 4; weights sum to 1/2.
inline const QuadratureRule& triangle_rule()
{
    static const QuadratureRule rule = [] {
        constexpr double a1 = 0.445948490915964886318329253883;
        constexpr double w1 = 0.223381589678011465944845933780;
        constexpr double a2 = 0.091576213509770743459571463402;
        constexpr double w2 = 0.109951743655321867388487399553;
        QuadratureRule r;
        for (auto [a, w] : {std::array<double, 2>{a1, w1}, std::array<double, 2>{a2, w2}}) {
            const double b = 1.0 - 2.0 * a;
            r.points.push_back({a, a});
            r.points.push_back({b, a});
            r.points.push_back({a, b});
            for (int i = 0; i < 3; ++i) r.weights.push_back(0.5 * w);
        }
        return r;
    }();
    return rule;
}

/// Three-point Gauss-Legendre on [0,1], exact for degree <= 5.
inline const QuadratureRule& edge_rule()
{
    static const QuadratureRule rule = [] {
        const double h = 0.5 * std::sqrt(0.6);
        QuadratureRule r;
        r.points = {{0.5 - h, 0.0}, {0.5, 0.0}, {0.5 + h, 0.0}};
        r.weights = {5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0};
        return r;
    }();
    return rule;
}

} // namespace fhn
