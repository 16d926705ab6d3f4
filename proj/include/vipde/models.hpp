#pragma once

#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "vipde/grid.hpp"

namespace vipde {

using State = std::span<const double>;

/// Named scalar and vector parameters for models and obstacles.
struct Params {
    std::map<std::string, double, std::less<>> scalars;
    std::map<std::string, std::vector<double>, std::less<>> vectors;

    bool has(std::string_view name) const;
    double get(std::string_view name) const;  // throws MissingParam
    double get_or(std::string_view name, double fallback) const;
    const std::vector<double>& get_vector(std::string_view name) const;  // throws MissingParam
};

enum class ModelName { GBM1D, BasketND, HestonLog, AsianRegularized, Custom };

ModelName parse_model_name(std::string_view name);
std::string_view to_string(ModelName name) noexcept;

/// A diffusion dX = b(X) dt + sigma(X) dW with discount rate c(X).
///
/// `diffusion` writes the dim x noise_dim matrix sigma(x) in row-major order.
struct ModelSpec {
    ModelName name = ModelName::Custom;
    std::size_t dim = 1;
    std::size_t noise_dim = 1;
    std::function<void(State, std::span<double>)> drift;
    std::function<void(State, std::span<double>)> diffusion;
    std::function<double(State)> discount_rate;
    Params params;
    /// Region on which the coefficient formulas are smooth; may have infinite bounds.
    Box coefficient_domain;

    /// a = sigma sigma^T, dim x dim row-major.
    void covariance(State x, std::span<double> a) const;
};

/// Parameters per model:
///   GBM1D:            r, sigma (sigma(x) = sigma * x)
///   BasketND:         n, r, sigma, optional correlation (uniform pairwise)
///   HestonLog:        kappa, theta, eta_vol, optional r (default 0)
///   AsianRegularized: r, sigma, delta
ModelSpec make_model(ModelName name, const Params& params);

/// Unnormalized density rho with closed-form relative derivatives
/// grad(rho)/rho and hess(rho)/rho.
struct ExcessiveDensity {
    std::string family;
    std::size_t dim = 1;
    std::function<double(State)> rho;
    std::function<void(State, std::span<double>, std::span<double>)> relative_derivatives;
    double normalizer = 1.0;
    /// True when the normalizer is 1 / (mass of the truncation box) rather than of the state domain.
    bool normalized_on_box = false;
    std::optional<double> omega_certified;
    std::vector<double> omega_location;
    Box truncation;
};

/// Default truncation box used to certify each catalog model.
Box default_truncation(const ModelSpec& model);

/// Boundary kinds used for pricing grids of each catalog model: GBM1D and BasketND hold every face at
/// the payoff; HestonLog holds the x faces and lets the variance faces flow out; AsianRegularized holds
/// only the upper x face.
std::vector<std::array<BoundaryKind, 2>> default_faces(const ModelSpec& model);

/// Default certificate grid sizes for each catalog model.
std::vector<std::size_t> default_certificate_sizes(const ModelSpec& model);

ExcessiveDensity make_excessive_density(const ModelSpec& model, std::optional<Box> truncation = std::nullopt);

/// (L0* rho)(x) / rho(x) at one point. Density derivatives are analytic; derivatives of the
/// model coefficients use fourth-order central differences.
double adjoint_ratio(const ModelSpec& model, const ExcessiveDensity& density, State x);

struct CertifyOptions {
    double ratio_cap = 1.0e4;
    std::size_t edge_layers = 5;
};

/// Sweeps the adjoint ratio over the grid nodes and records omega = max ratio.
/// Throws RatioUnbounded when the ratio is non-finite, or when it is maximal on a box face,
/// grows monotonically into that face and exceeds the cap.
ExcessiveDensity certify_excessive(const ModelSpec& model, const ExcessiveDensity& density, const Grid& grid,
                                   const CertifyOptions& options = {});

enum class ObstacleKind { Put, Call, BasketPut, Margrabe, AsianPutOnY, Custom };

ObstacleKind parse_obstacle_kind(std::string_view kind);

struct ObstacleSpec {
    ObstacleKind kind = ObstacleKind::Custom;
    std::function<double(double, State)> payoff;
    bool time_dependent = false;
    double lipschitz_const = 0.0;
    bool convexity_flag = false;
    double strike = 1.0;  // scale used for contact tolerances

    double operator()(double t, State x) const { return payoff(t, x); }
};

/// Parameters: strike (put/call/basket_put/asian_put_on_Y), weights (basket_put),
/// lambda, i, j (margrabe). Put and call payoffs are composed with exp for HestonLog.
ObstacleSpec make_obstacle(ObstacleKind kind, const Params& params, const ModelSpec& model);

ObstacleSpec make_custom_obstacle(std::function<double(double, State)> payoff, bool time_dependent,
                                  double lipschitz_const, bool convexity_flag, double strike = 1.0);

/// Integral of f over a box of dimension <= 3 by nested adaptive Gauss-Kronrod quadrature.
double integrate_box(const std::function<double(State)>& f, const Box& box, double tol = 1e-10);

}  // namespace vipde
