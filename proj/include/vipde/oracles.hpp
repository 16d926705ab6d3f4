#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "vipde/models.hpp"

namespace vipde {

/// A reference value. `stderr_` is set exactly when the oracle is stochastic.
struct OracleResult {
    double value = 0.0;
    std::optional<double> stderr_;
    std::map<std::string, double> meta;
};

enum class OptionKind { Put, Call };

/// Cox-Ross-Rubinstein tree with early exercise at every node.
OracleResult binomial_american(double spot, double strike, double r, double vol, double T, std::size_t steps,
                               OptionKind kind);

/// Black-Scholes price; vol = 0 or T = 0 returns the analytic limit.
OracleResult bs_european(double spot, double strike, double r, double vol, double T, OptionKind kind);

struct LsmcOptions {
    std::size_t paths = 100000;
    /// Equally spaced exercise dates in (0, T]; 1 means exercise only at T.
    std::size_t exercise_dates = 50;
    std::size_t basis_degree = 3;
    std::uint64_t seed = 1;
    /// Euler-Maruyama substeps between consecutive exercise dates.
    std::size_t substeps = 10;
    bool exercise_at_zero = true;
    bool antithetic = false;
    std::size_t jobs = 1;
};

/// Longstaff-Schwartz estimate of the value at (0, x0). Paths use Euler-Maruyama; batches of paths draw
/// from independent seeded substreams so the estimate does not depend on `jobs`.
/// The reported standard error is that of the discounted cash-flow mean.
OracleResult lsmc_american(const ModelSpec& model, const ObstacleSpec& obstacle, double T,
                           const std::vector<double>& x0, const LsmcOptions& options = {});

struct LcpSolution {
    Eigen::VectorXd u;
    /// A u - q: zero off the contact set and nonnegative on it.
    Eigen::VectorXd multiplier;
    std::vector<char> contact;
};

/// Solves u >= g, A u - q >= 0, (u - g) . (A u - q) = 0 by enumerating contact sets (size <= 20).
LcpSolution lcp_exact(const Eigen::MatrixXd& a, const Eigen::VectorXd& q, const Eigen::VectorXd& g,
                      double tol = 1e-12);

}  // namespace vipde
