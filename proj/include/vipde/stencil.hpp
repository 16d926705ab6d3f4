#pragma once

#include <vector>

namespace vipde::stencil {

/// Finite-difference weights on unit spacing; divide by h (first) or h^2 (second).
struct Weights {
    std::vector<double> offsets;
    std::vector<double> first;
    std::vector<double> second;
};

inline const Weights kCentral5{
    {-2.0, -1.0, 0.0, 1.0, 2.0},
    {1.0 / 12, -8.0 / 12, 0.0, 8.0 / 12, -1.0 / 12},
    {-1.0 / 12, 16.0 / 12, -30.0 / 12, 16.0 / 12, -1.0 / 12},
};

inline const Weights kForward6{
    {0.0, 1.0, 2.0, 3.0, 4.0, 5.0},
    {-25.0 / 12, 48.0 / 12, -36.0 / 12, 16.0 / 12, -3.0 / 12, 0.0},
    {45.0 / 12, -154.0 / 12, 214.0 / 12, -156.0 / 12, 61.0 / 12, -10.0 / 12},
};

inline const Weights kBackward6{
    {0.0, -1.0, -2.0, -3.0, -4.0, -5.0},
    {25.0 / 12, -48.0 / 12, 36.0 / 12, -16.0 / 12, 3.0 / 12, 0.0},
    {45.0 / 12, -154.0 / 12, 214.0 / 12, -156.0 / 12, 61.0 / 12, -10.0 / 12},
};

/// Three-point weights (u[i-1], u[i], u[i+1]) on a nonuniform stencil with spacings hm, hp.
struct ThreePoint {
    double lo, mid, hi;
};

inline ThreePoint second_derivative(double hm, double hp) {
    return {2.0 / (hm * (hm + hp)), -2.0 / (hm * hp), 2.0 / (hp * (hm + hp))};
}

inline ThreePoint central_first(double hm, double hp) {
    return {-hp / (hm * (hm + hp)), (hp - hm) / (hm * hp), hm / (hp * (hm + hp))};
}

inline ThreePoint forward_first(double hp) { return {0.0, -1.0 / hp, 1.0 / hp}; }

inline ThreePoint backward_first(double hm) { return {-1.0 / hm, 1.0 / hm, 0.0}; }

}  // namespace vipde::stencil
