#pragma once

#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "vipde/discretization.hpp"
#include "vipde/models.hpp"

namespace vipde {

enum class PenaltyKind { Classic, Bounded };

PenaltyKind parse_penalty_kind(std::string_view name);
std::string_view to_string(PenaltyKind kind) noexcept;

struct SolverConfig {
    std::size_t steps = 100;
    PenaltyKind penalty = PenaltyKind::Classic;
    double epsilon = 1.0e-5;
    /// When non-empty, each step solves once per entry (warm-started) and keeps the last.
    std::vector<double> epsilon_schedule;
    /// Per-node weight of the bounded penalty; empty means g1 = 1 everywhere.
    Eigen::VectorXd g1;
    double newton_tol = 1.0e-10;
    std::size_t newton_max_iter = 100;
    /// Step halvings tried before the undamped Newton step is accepted anyway.
    std::size_t max_damping = 30;
    bool record_multiplier = true;
    /// Absolute tolerance for u - g when classifying contact nodes.
    double tol_contact = 1.0e-6;

    /// Throws BadStep / BadLambda style errors on invalid fields.
    void validate() const;
    /// The epsilon sequence actually used by one step.
    std::vector<double> epsilons() const;
};

struct PenaltySolve {
    Eigen::VectorXd u;
    /// Multiplier eta = penalty / h; nonpositive for the classic scheme.
    Eigen::VectorXd eta;
    std::size_t iterations = 0;
    double residual = 0.0;
};

/// Solves u + h N u - (1/eps) (u - g)^- = rhs by semismooth Newton with step halving.
PenaltySolve penalized_solve_classic(const DiscreteOperator& op, double h, double eps, const Eigen::VectorXd& rhs,
                                     const Eigen::VectorXd& g, const SolverConfig& cfg = {},
                                     const Eigen::VectorXd* initial = nullptr);

/// Solves u + h N u + g1 (u - g) / (eps + |u - g|) = rhs + g1 by Newton with step halving.
PenaltySolve penalized_solve_bounded(const DiscreteOperator& op, double h, double eps, const Eigen::VectorXd& g1,
                                     const Eigen::VectorXd& rhs, const Eigen::VectorXd& g,
                                     const SolverConfig& cfg = {}, const Eigen::VectorXd* initial = nullptr);

/// One implicit step u + h N u + h eta = prev + h f, u >= g, eta in the normal cone at u.
PenaltySolve implicit_step(const DiscreteOperator& op, const SolverConfig& cfg, const Eigen::VectorXd& prev,
                           const Eigen::VectorXd& g, const Eigen::VectorXd& f, double h);

/// Weighted norm of min(u - g, (u + h N u - rhs) / h).
double complementarity_residual(const DiscreteOperator& op, const Eigen::VectorXd& u, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& rhs, double h);

/// Bounded-penalty weight g1_i = factor * h * max((N g)_i, 0). With this weight the bounded scheme
/// leaves an obstacle gap of order eps instead of eps / (h N g).
Eigen::VectorXd bounded_penalty_weight(const DiscreteOperator& op, const Eigen::VectorXd& g, double h,
                                       double factor = 2.0);

using SourceField = std::function<double(double, State)>;

struct BackwardOptions {
    SourceField source;
    /// Terminal values u(T); defaults to g(T, .).
    std::optional<Eigen::VectorXd> terminal;
};

struct SolutionField {
    std::vector<double> times;
    std::vector<Eigen::VectorXd> values;
    std::vector<Eigen::VectorXd> eta;
    std::vector<Eigen::VectorXd> obstacle;
    std::vector<double> residuals;
    /// min_i (u - g) at each time.
    std::vector<double> min_gap;
    std::vector<std::size_t> newton_iterations;

    std::size_t size() const noexcept { return times.size(); }
};

/// Evaluates g(t, .) at every grid node.
Eigen::VectorXd obstacle_vector(const ObstacleSpec& obstacle, const Grid& grid, double t);

/// Marches k = M-1, ..., 0. Errors from a step are rethrown with the failing time index.
SolutionField backward_solve(const DiscreteOperator& op, const SolverConfig& cfg, const ObstacleSpec& obstacle,
                             double T, const BackwardOptions& options = {});

struct FreeBoundary {
    std::vector<char> contact;
    std::size_t contact_count = 0;
    /// 1D only: largest non-boundary contact abscissa with g > 0.
    std::optional<double> boundary;
};

FreeBoundary free_boundary(const SolutionField& sol, const Grid& grid, std::size_t t_index, double tol_contact);

/// (1/t) |(g - P_t g)^+|_mu with P_t approximated by `substeps` implicit resolvent steps.
double hyp1_alt_diagnostic(const DiscreteOperator& op, const Eigen::VectorXd& g, double t, std::size_t substeps = 16);

}  // namespace vipde
