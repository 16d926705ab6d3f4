#include "vipde/vi_solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vipde/error.hpp"

namespace vipde {

PenaltyKind parse_penalty_kind(std::string_view name) {
    if (name == "classic") return PenaltyKind::Classic;
    if (name == "bounded") return PenaltyKind::Bounded;
    throw Error(ErrorCode::ConfigParse, "unknown penalty '" + std::string(name) + "' (expected classic or bounded)");
}

std::string_view to_string(PenaltyKind kind) noexcept {
    return kind == PenaltyKind::Classic ? "classic" : "bounded";
}

void SolverConfig::validate() const {
    if (steps < 1) throw Error(ErrorCode::BadStep, "steps must be >= 1");
    for (double e : epsilons())
        if (!(e > 0.0)) throw Error(ErrorCode::ConstraintViolated, "epsilon must be > 0");
    if (!(newton_tol > 0.0)) throw Error(ErrorCode::ConstraintViolated, "newton_tol must be > 0");
    if (newton_max_iter < 1) throw Error(ErrorCode::ConstraintViolated, "newton_max_iter must be >= 1");
    if (g1.size() > 0 && (g1.array() < 0.0).any())
        throw Error(ErrorCode::ConstraintViolated, "g1 must be nonnegative");
}

std::vector<double> SolverConfig::epsilons() const {
    return epsilon_schedule.empty() ? std::vector<double>{epsilon} : epsilon_schedule;
}

namespace {

void check_lengths(const DiscreteOperator& op, std::initializer_list<const Eigen::VectorXd*> vs) {
    for (const auto* v : vs)
        if (static_cast<std::size_t>(v->size()) != op.size())
            throw Error(ErrorCode::LengthMismatch, "vector length does not match the grid");
}

double sup_norm(const Eigen::VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

/// Shared damped Newton loop. `residual(u)` returns F(u); `jacobian_diag(u)` returns the diagonal
/// added to A = I + hN; `active(u)` is the semismooth active set (empty for smooth problems).
template <class Residual, class JacDiag, class Active>
PenaltySolve newton(const DiscreteOperator& op, const ColMatrix& a, const Eigen::VectorXd& rhs,
                    Eigen::VectorXd u, const SolverConfig& cfg, Residual residual, JacDiag jacobian_diag,
                    Active active) {
    const double scale = std::max(1.0, sup_norm(rhs));
    SparseSolver solver;
    Eigen::VectorXd f = residual(u);
    double fnorm = f.norm();
    std::vector<char> set = active(u);
    for (std::size_t it = 1; it <= cfg.newton_max_iter; ++it) {
        ColMatrix j = a;
        const Eigen::VectorXd d = jacobian_diag(u);
        for (Eigen::Index i = 0; i < d.size(); ++i)
            if (d[i] != 0.0) j.coeffRef(i, i) += d[i];
        solver.compute(j);
        const Eigen::VectorXd step = solver.solve(-f);

        double alpha = 1.0;
        Eigen::VectorXd trial = u + step;
        Eigen::VectorXd ftrial = residual(trial);
        std::size_t damps = 0;
        Eigen::VectorXd full = trial, ffull = ftrial;
        while (ftrial.norm() > (1.0 - 1e-4 * alpha) * fnorm && sup_norm(ftrial) > cfg.newton_tol * scale) {
            if (++damps > cfg.max_damping) {
                // Semismooth steps across kinks need not decrease |F|; fall back to the undamped step.
                trial = std::move(full);
                ftrial = std::move(ffull);
                break;
            }
            alpha *= 0.5;
            trial = u + alpha * step;
            ftrial = residual(trial);
        }
        u = std::move(trial);
        f = std::move(ftrial);
        fnorm = f.norm();
        std::vector<char> next = active(u);
        const bool settled = damps == 0 && !set.empty() && next == set;
        set = std::move(next);
        if (sup_norm(f) <= cfg.newton_tol * scale || settled)
            return {std::move(u), Eigen::VectorXd(), it, weighted_norm(op, f)};
    }
    std::ostringstream os;
    os << "no convergence in " << cfg.newton_max_iter << " iterations; last residual " << sup_norm(f);
    throw Error(ErrorCode::NewtonDiverged, os.str());
}

}  // namespace

PenaltySolve penalized_solve_classic(const DiscreteOperator& op, double h, double eps, const Eigen::VectorXd& rhs,
                                     const Eigen::VectorXd& g, const SolverConfig& cfg,
                                     const Eigen::VectorXd* initial) {
    check_lengths(op, {&rhs, &g});
    if (!(eps > 0.0)) throw Error(ErrorCode::ConstraintViolated, "epsilon must be > 0");
    const ColMatrix a = shifted_identity(op, h);
    const double inv = 1.0 / eps;
    auto residual = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
        return a * u - inv * (g - u).cwiseMax(0.0) - rhs;
    };
    auto jac = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
        return (u.array() < g.array()).cast<double>().matrix() * inv;
    };
    auto active = [&](const Eigen::VectorXd& u) {
        std::vector<char> s(static_cast<std::size_t>(u.size()) + 1, 0);
        s.back() = 1;  // marks the set as meaningful even when empty
        for (Eigen::Index i = 0; i < u.size(); ++i) s[static_cast<std::size_t>(i)] = u[i] < g[i];
        return s;
    };
    Eigen::VectorXd u0 = initial ? *initial : g.cwiseMax(rhs);
    check_lengths(op, {&u0});
    PenaltySolve out = newton(op, a, rhs, std::move(u0), cfg, residual, jac, active);
    out.eta = -(g - out.u).cwiseMax(0.0) * (inv / (h > 0.0 ? h : 1.0));
    return out;
}

PenaltySolve penalized_solve_bounded(const DiscreteOperator& op, double h, double eps, const Eigen::VectorXd& g1,
                                     const Eigen::VectorXd& rhs, const Eigen::VectorXd& g, const SolverConfig& cfg,
                                     const Eigen::VectorXd* initial) {
    check_lengths(op, {&rhs, &g, &g1});
    if (!(eps > 0.0)) throw Error(ErrorCode::ConstraintViolated, "epsilon must be > 0");
    if ((g1.array() < 0.0).any()) throw Error(ErrorCode::ConstraintViolated, "g1 must be nonnegative");
    const ColMatrix a = shifted_identity(op, h);
    auto penalty = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
        const Eigen::ArrayXd s = (u - g).array();
        return (g1.array() * (s / (eps + s.abs()) - 1.0)).matrix();
    };
    auto residual = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd { return a * u + penalty(u) - rhs; };
    auto jac = [&](const Eigen::VectorXd& u) -> Eigen::VectorXd {
        const Eigen::ArrayXd s = (u - g).array();
        return (g1.array() * eps / (eps + s.abs()).square()).matrix();
    };
    auto active = [](const Eigen::VectorXd&) { return std::vector<char>{}; };
    Eigen::VectorXd u0 = initial ? *initial : g.cwiseMax(rhs);
    check_lengths(op, {&u0});
    PenaltySolve out = newton(op, a, rhs, std::move(u0), cfg, residual, jac, active);
    out.eta = penalty(out.u) / (h > 0.0 ? h : 1.0);
    return out;
}

PenaltySolve implicit_step(const DiscreteOperator& op, const SolverConfig& cfg, const Eigen::VectorXd& prev,
                           const Eigen::VectorXd& g, const Eigen::VectorXd& f, double h) {
    check_lengths(op, {&prev, &g, &f});
    if (!(h > 0.0)) throw Error(ErrorCode::BadStep, "time step must be > 0");
    if (op.omega > 0.0 && h * op.omega >= 1.0) {
        std::ostringstream os;
        os << "h*omega = " << h * op.omega << " >= 1";
        throw Error(ErrorCode::BadStep, os.str());
    }
    const Eigen::VectorXd rhs = prev + h * f;
    const Eigen::VectorXd g1 = cfg.g1.size() > 0 ? cfg.g1 : Eigen::VectorXd::Ones(static_cast<Eigen::Index>(op.size()));
    PenaltySolve out;
    Eigen::VectorXd start = prev;
    std::size_t iterations = 0;
    for (double eps : cfg.epsilons()) {
        out = cfg.penalty == PenaltyKind::Classic ? penalized_solve_classic(op, h, eps, rhs, g, cfg, &start)
                                                  : penalized_solve_bounded(op, h, eps, g1, rhs, g, cfg, &start);
        iterations += out.iterations;
        start = out.u;
    }
    out.iterations = iterations;
    if (!cfg.record_multiplier) out.eta = Eigen::VectorXd();
    return out;
}

double complementarity_residual(const DiscreteOperator& op, const Eigen::VectorXd& u, const Eigen::VectorXd& g,
                                const Eigen::VectorXd& rhs, double h) {
    check_lengths(op, {&u, &g, &rhs});
    const Eigen::VectorXd pde = (u + h * (op.matrix_N * u) - rhs) / h;
    return weighted_norm(op, (u - g).cwiseMin(pde));
}

Eigen::VectorXd bounded_penalty_weight(const DiscreteOperator& op, const Eigen::VectorXd& g, double h,
                                       double factor) {
    check_lengths(op, {&g});
    return (factor * h) * Eigen::VectorXd(op.matrix_N * g).cwiseMax(0.0);
}

Eigen::VectorXd obstacle_vector(const ObstacleSpec& obstacle, const Grid& grid, double t) {
    Eigen::VectorXd g(static_cast<Eigen::Index>(grid.size()));
    std::vector<double> x(grid.dim());
    for (std::size_t k = 0; k < grid.size(); ++k) {
        grid.coords(k, x);
        g[static_cast<Eigen::Index>(k)] = obstacle(t, x);
    }
    return g;
}

SolutionField backward_solve(const DiscreteOperator& op, const SolverConfig& cfg, const ObstacleSpec& obstacle,
                             double T, const BackwardOptions& options) {
    cfg.validate();
    if (!(T > 0.0)) throw Error(ErrorCode::BadStep, "horizon T must be > 0");
    const std::size_t m = cfg.steps;
    const double h = T / static_cast<double>(m);
    if (op.omega > 0.0 && h * op.omega >= 1.0) {
        std::ostringstream os;
        os << "h*omega = " << h * op.omega << " >= 1; increase steps";
        throw Error(ErrorCode::BadStep, os.str());
    }
    const Grid& grid = op.grid;
    const auto n = static_cast<Eigen::Index>(grid.size());

    SolutionField sol;
    sol.times.resize(m + 1);
    for (std::size_t k = 0; k <= m; ++k) sol.times[k] = T * static_cast<double>(k) / static_cast<double>(m);
    sol.values.resize(m + 1);
    sol.eta.resize(m + 1);
    sol.obstacle.resize(m + 1);
    sol.residuals.assign(m + 1, 0.0);
    sol.min_gap.assign(m + 1, 0.0);
    sol.newton_iterations.assign(m + 1, 0);

    sol.obstacle[m] = obstacle_vector(obstacle, grid, T);
    sol.values[m] = options.terminal ? *options.terminal : sol.obstacle[m];
    if (sol.values[m].size() != n) throw Error(ErrorCode::LengthMismatch, "terminal data length");
    sol.eta[m] = Eigen::VectorXd::Zero(n);
    sol.min_gap[m] = (sol.values[m] - sol.obstacle[m]).minCoeff();

    std::vector<double> x(grid.dim());
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
    for (std::size_t kk = m; kk-- > 0;) {
        const double t = sol.times[kk];
        sol.obstacle[kk] = obstacle.time_dependent ? obstacle_vector(obstacle, grid, t) : sol.obstacle[kk + 1];
        if (options.source) {
            for (std::size_t i = 0; i < grid.size(); ++i) {
                grid.coords(i, x);
                f[static_cast<Eigen::Index>(i)] = options.source(t, x);
            }
        }
        try {
            PenaltySolve step = implicit_step(op, cfg, sol.values[kk + 1], sol.obstacle[kk], f, h);
            const Eigen::VectorXd rhs = sol.values[kk + 1] + h * f;
            sol.residuals[kk] = complementarity_residual(op, step.u, sol.obstacle[kk], rhs, h);
            sol.min_gap[kk] = (step.u - sol.obstacle[kk]).minCoeff();
            sol.newton_iterations[kk] = step.iterations;
            sol.values[kk] = std::move(step.u);
            sol.eta[kk] = std::move(step.eta);
        } catch (const Error& e) {
            throw e.with_time_index(kk);
        }
    }
    return sol;
}

FreeBoundary free_boundary(const SolutionField& sol, const Grid& grid, std::size_t t_index, double tol_contact) {
    const Eigen::VectorXd& u = sol.values.at(t_index);
    const Eigen::VectorXd& g = sol.obstacle.at(t_index);
    FreeBoundary fb;
    fb.contact.assign(grid.size(), 0);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto k = static_cast<Eigen::Index>(i);
        if (u[k] - g[k] <= tol_contact) {
            fb.contact[i] = 1;
            ++fb.contact_count;
        }
    }
    if (grid.dim() == 1) {
        const auto& axis = grid.axis(0);
        for (std::size_t i = axis.size() - 1; i-- > 1;) {
            if (fb.contact[i] && g[static_cast<Eigen::Index>(i)] > 0.0) {
                fb.boundary = axis[i];
                break;
            }
        }
    }
    return fb;
}

double hyp1_alt_diagnostic(const DiscreteOperator& op, const Eigen::VectorXd& g, double t, std::size_t substeps) {
    if (!(t > 0.0) || substeps < 1) throw Error(ErrorCode::BadStep, "diagnostic needs t > 0 and substeps >= 1");
    const Resolvent r(op, t / static_cast<double>(substeps));
    Eigen::VectorXd p = g;
    for (std::size_t s = 0; s < substeps; ++s) p = r(p);
    return weighted_norm(op, (g - p).cwiseMax(0.0)) / t;
}

}  // namespace vipde
