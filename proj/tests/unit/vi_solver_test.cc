#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "vipde/discretization.hpp"
#include "vipde/error.hpp"
#include "vipde/oracles.hpp"
#include "vipde/vi_solver.hpp"

namespace vipde {
namespace {

ModelSpec gbm(double r = 0.05, double sigma = 0.2) {
    Params p;
    p.scalars = {{"r", r}, {"sigma", sigma}};
    return make_model(ModelName::GBM1D, p);
}

DiscreteOperator gbm_operator(const ModelSpec& m, std::size_t n = 201) {
    const Box box{{0.0}, {400.0}};
    const std::vector<std::size_t> s{n};
    const std::vector<AxisGrading> gr{{Grading::Geometric, 100.0, 0.1}};
    return assemble(m, make_grid(box, s, gr), make_excessive_density(m, hull(default_truncation(m), box)));
}

ObstacleSpec put(const ModelSpec& m, double strike = 100.0) {
    Params p;
    p.scalars = {{"strike", strike}};
    return make_obstacle(ObstacleKind::Put, p, m);
}

ObstacleSpec call(const ModelSpec& m, double strike = 100.0) {
    Params p;
    p.scalars = {{"strike", strike}};
    return make_obstacle(ObstacleKind::Call, p, m);
}

double at(const DiscreteOperator& op, const Eigen::VectorXd& u, double x) {
    const std::vector<double> p{x};
    return interpolate(op.grid, u, p);
}

/// Random 1D operator: tridiagonal M-matrix rows with nonnegative discount, unit-spaced grid.
DiscreteOperator random_m_operator(std::mt19937_64& rng, Eigen::Index n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<Eigen::Triplet<double>> t;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double lo = i > 0 ? u(rng) : 0.0;
        const double hi = i + 1 < n ? u(rng) : 0.0;
        if (i > 0) t.emplace_back(i, i - 1, -lo);
        if (i + 1 < n) t.emplace_back(i, i + 1, -hi);
        t.emplace_back(i, i, lo + hi + 0.1 * u(rng));
    }
    RowMatrix a(n, n);
    a.setFromTriplets(t.begin(), t.end());
    Eigen::VectorXd w(n);
    for (Eigen::Index i = 0; i < n; ++i) w[i] = 0.5 + u(rng);
    return make_operator(a, w);
}

TEST(Penalty, InactiveObstacleReducesToResolvent) {
    const DiscreteOperator op = gbm_operator(gbm());
    const auto n = static_cast<Eigen::Index>(op.size());
    Eigen::VectorXd prev(n);
    for (Eigen::Index i = 0; i < n; ++i) prev[i] = std::sin(0.02 * op.grid.axis(0)[static_cast<std::size_t>(i)]) + 2.0;
    const Eigen::VectorXd g = Eigen::VectorXd::Constant(n, -10.0);
    const Eigen::VectorXd f = Eigen::VectorXd::Constant(n, 0.3);
    const double h = 0.01;
    const SolverConfig cfg;
    const PenaltySolve s = implicit_step(op, cfg, prev, g, f, h);
    EXPECT_LT((s.u - resolvent(op, h, prev + h * f)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_EQ(s.eta.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Penalty, ScalarClassicClosedForm) {
    RowMatrix a(3, 3);
    for (int i = 0; i < 3; ++i) a.insert(i, i) = 0.5;
    const DiscreteOperator op = make_operator(a, Eigen::VectorXd::Ones(3));
    const double h = 0.1, eps = 1e-3, rhs = 0.2, g = 1.0;
    const PenaltySolve s =
        penalized_solve_classic(op, h, eps, Eigen::VectorXd::Constant(3, rhs), Eigen::VectorXd::Constant(3, g));
    for (int i = 0; i < 3; ++i) {
        EXPECT_NEAR(s.u[i], (rhs + g / eps) / (1.0 + h * 0.5 + 1.0 / eps), 1e-14);
        EXPECT_NEAR(s.eta[i], -(g - s.u[i]) / (eps * h), 1e-8);
    }
}

TEST(Penalty, ViolationShrinksWithEpsilon) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const Eigen::VectorXd g = obstacle_vector(put(m), op.grid, 0.0);
    double prev = 1.0;
    for (double eps : {1e-2, 1e-4, 1e-6}) {
        SolverConfig cfg;
        cfg.epsilon = eps;
        const PenaltySolve s = implicit_step(op, cfg, g, g, Eigen::VectorXd::Zero(g.size()), 0.01);
        const double viol = weighted_norm(op, (g - s.u).cwiseMax(0.0));
        EXPECT_LT(viol, prev);
        EXPECT_LT(viol, 10.0 * eps);
        prev = viol;
    }
}

TEST(Penalty, BoundedWithZeroWeightIsResolvent) {
    const DiscreteOperator op = gbm_operator(gbm());
    const auto n = static_cast<Eigen::Index>(op.size());
    const Eigen::VectorXd rhs = Eigen::VectorXd::LinSpaced(n, 0.0, 3.0);
    const Eigen::VectorXd g = Eigen::VectorXd::Constant(n, 5.0);
    const PenaltySolve s = penalized_solve_bounded(op, 0.02, 1e-4, Eigen::VectorXd::Zero(n), rhs, g);
    EXPECT_LT((s.u - resolvent(op, 0.02, rhs)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Penalty, BoundedSolutionSatisfiesEquation) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const Eigen::VectorXd g = obstacle_vector(put(m), op.grid, 0.0);
    const double h = 0.01, eps = 1e-4;
    const Eigen::VectorXd g1 = Eigen::VectorXd::Constant(g.size(), 0.5);
    const PenaltySolve s = penalized_solve_bounded(op, h, eps, g1, g, g);
    const Eigen::VectorXd gap = s.u - g;
    const Eigen::VectorXd lhs =
        s.u + h * (op.matrix_N * s.u) + (g1.array() * gap.array() / (eps + gap.array().abs())).matrix();
    EXPECT_LT((lhs - g - g1).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_NEAR(s.eta[10], g1[10] * (gap[10] / (eps + std::abs(gap[10])) - 1.0) / h, 1e-8);
}

TEST(Penalty, BoundedWithAutoWeightMatchesClassic) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const ObstacleSpec g = put(m);
    SolverConfig classic;
    classic.steps = 50;
    classic.epsilon = 1e-4;
    SolverConfig bounded = classic;
    bounded.penalty = PenaltyKind::Bounded;
    bounded.g1 = bounded_penalty_weight(op, obstacle_vector(g, op.grid, 0.0), 1.0 / 50.0);
    const SolutionField a = backward_solve(op, classic, g, 1.0);
    const SolutionField b = backward_solve(op, bounded, g, 1.0);
    EXPECT_LT((a.values[0] - b.values[0]).cwiseAbs().maxCoeff(), 10.0 * 1e-4 * 100.0);
    EXPECT_GE(b.min_gap[0], -1e-3);
}

TEST(Backward, ZeroObstacleGivesZero) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const ObstacleSpec zero = make_custom_obstacle([](double, State) { return 0.0; }, false, 0.0, true);
    SolverConfig cfg;
    cfg.steps = 20;
    const SolutionField s = backward_solve(op, cfg, zero, 1.0);
    EXPECT_LT(s.values[0].cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, NoVolatilityNoRateKeepsPayoff) {
    const ModelSpec m = gbm(0.0, 0.0);
    const DiscreteOperator op = gbm_operator(m);
    SolverConfig cfg;
    cfg.steps = 20;
    const SolutionField s = backward_solve(op, cfg, put(m), 1.0);
    EXPECT_LT((s.values[0] - s.obstacle[0]).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Backward, CallWithoutRateMatchesEuropean) {
    const ModelSpec m = gbm(0.0, 0.2);
    const DiscreteOperator op = gbm_operator(m, 401);
    SolverConfig cfg;
    cfg.steps = 400;
    const SolutionField s = backward_solve(op, cfg, call(m), 1.0);
    const double eu = bs_european(100.0, 100.0, 0.0, 0.2, 1.0, OptionKind::Call).value;
    EXPECT_NEAR(at(op, s.values[0], 100.0), eu, 2e-3 * eu);
}

TEST(Backward, AmericanDominatesEuropean) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    SolverConfig cfg;
    cfg.steps = 100;
    const ObstacleSpec g = put(m);
    const SolutionField am = backward_solve(op, cfg, g, 1.0);
    Eigen::VectorXd eu = am.obstacle.back();
    const Resolvent step(op, 0.01);
    for (int k = 0; k < 100; ++k) eu = step(eu);
    EXPECT_GE((am.values[0] - eu).minCoeff(), -1e-8);
    EXPECT_GT(at(op, am.values[0], 90.0) - at(op, eu, 90.0), 0.1);
}

TEST(Backward, ComparisonPrinciple) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    SolverConfig cfg;
    cfg.steps = 50;
    const SolutionField lo = backward_solve(op, cfg, put(m, 95.0), 1.0);
    const SolutionField hi = backward_solve(op, cfg, put(m, 105.0), 1.0);
    EXPECT_GE((hi.values[0] - lo.values[0]).minCoeff(), -1e-8);

    BackwardOptions src;
    src.source = [](double, State) { return 0.5; };
    const SolutionField more = backward_solve(op, cfg, put(m, 95.0), 1.0, src);
    EXPECT_GE((more.values[0] - lo.values[0]).minCoeff(), -1e-8);
}

TEST(Backward, ContractionInTerminalData) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    SolverConfig cfg;
    cfg.steps = 50;
    const ObstacleSpec g = put(m);
    const Eigen::VectorXd gT = obstacle_vector(g, op.grid, 1.0);
    BackwardOptions shifted;
    shifted.terminal = gT + Eigen::VectorXd::Constant(gT.size(), 0.5);
    const SolutionField a = backward_solve(op, cfg, g, 1.0);
    const SolutionField b = backward_solve(op, cfg, g, 1.0, shifted);
    const double d0 = weighted_norm(op, shifted.terminal.value() - gT);
    EXPECT_LE(weighted_norm(op, b.values[0] - a.values[0]), std::exp(op.omega) * d0 * 1.01);
}

TEST(Backward, ResidualAndGapAreSmall) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    SolverConfig cfg;
    cfg.steps = 100;
    const SolutionField s = backward_solve(op, cfg, put(m), 1.0);
    for (std::size_t k = 0; k < s.size(); ++k) {
        EXPECT_LT(s.residuals[k], 1e-6);
        EXPECT_GT(s.min_gap[k], -1e-3);
        EXPECT_LE(s.eta[k].maxCoeff(), 0.0);
    }
}

TEST(Backward, TimeDependentObstacle) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const ObstacleSpec g = make_custom_obstacle(
        [](double t, State x) { return std::max(100.0 * std::exp(-0.1 * (1.0 - t)) - x[0], 0.0); }, true, 1.0,
        true, 100.0);
    SolverConfig cfg;
    cfg.steps = 50;
    const SolutionField s = backward_solve(op, cfg, g, 1.0);
    EXPECT_NEAR(s.obstacle[0][0], 100.0 * std::exp(-0.1), 1e-12);
    for (std::size_t k = 0; k < s.size(); ++k) {
        EXPECT_GT(s.min_gap[k], -1e-3);
        EXPECT_LT(s.residuals[k], 1e-6);
    }
}

TEST(Backward, StepTooLargeForOmega) {
    RowMatrix a(3, 3);
    for (int i = 0; i < 3; ++i) a.insert(i, i) = 1.0;
    const DiscreteOperator op = make_operator(a, Eigen::VectorXd::Ones(3), 2.0);
    const ObstacleSpec zero = make_custom_obstacle([](double, State) { return 0.0; }, false, 0.0, true);
    SolverConfig cfg;
    cfg.steps = 1;
    try {
        backward_solve(op, cfg, zero, 1.0);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::BadStep);
    }
}

TEST(Backward, ErrorsCarryTimeIndex) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m, 51);
    SolverConfig cfg;
    cfg.steps = 10;
    cfg.newton_max_iter = 5;
    BackwardOptions bad;
    bad.source = [](double t, State) { return t < 0.45 ? std::nan("") : 0.0; };
    try {
        backward_solve(op, cfg, put(m), 1.0, bad);
        FAIL();
    } catch (const Error& e) {
        ASSERT_TRUE(e.time_index().has_value());
        EXPECT_EQ(*e.time_index(), 4u);
    }
}

TEST(Lcp, PenaltyMatchesEnumeratedSolution) {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 30; ++trial) {
        const DiscreteOperator op = random_m_operator(rng, 6);
        const double h = 0.5;
        Eigen::VectorXd prev(6), g(6);
        for (int i = 0; i < 6; ++i) {
            prev[i] = nd(rng);
            g[i] = nd(rng);
        }
        const Eigen::MatrixXd a = Eigen::MatrixXd::Identity(6, 6) + h * Eigen::MatrixXd(op.matrix_N);
        const LcpSolution ex = lcp_exact(a, prev, g);
        EXPECT_LT(complementarity_residual(op, ex.u, g, prev, h), 1e-12);
        SolverConfig cfg;
        cfg.epsilon = 1e-10;
        const PenaltySolve s = implicit_step(op, cfg, prev, g, Eigen::VectorXd::Zero(6), h);
        EXPECT_LT((s.u - ex.u).cwiseAbs().maxCoeff(), 1e-8);
        EXPECT_LT(complementarity_residual(op, s.u, g, prev, h), 1e-8);
    }
}

TEST(FreeBoundaryTest, PutBoundaryStartsAtStrikeAndRisesTowardMaturity) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m, 401);
    SolverConfig cfg;
    cfg.steps = 100;
    const SolutionField s = backward_solve(op, cfg, put(m), 1.0);
    const auto& axis = op.grid.axis(0);
    const FreeBoundary last = free_boundary(s, op.grid, s.size() - 1, 1e-4);
    ASSERT_TRUE(last.boundary.has_value());
    const auto above = std::upper_bound(axis.begin(), axis.end(), 100.0);
    EXPECT_LE(100.0 - *last.boundary, *above - *(above - 1) + 1e-12);
    double prev = 0.0;
    for (std::size_t k = 0; k < s.size(); ++k) {
        const FreeBoundary fb = free_boundary(s, op.grid, k, 1e-4);
        ASSERT_TRUE(fb.boundary.has_value()) << k;
        EXPECT_GE(*fb.boundary, prev - 1e-12) << k;
        prev = *fb.boundary;
    }
    const FreeBoundary first = free_boundary(s, op.grid, 0, 1e-4);
    EXPECT_NEAR(*first.boundary, 81.0, 2.0);
}

TEST(FreeBoundaryTest, CallWithoutRateOnlyTouchesWithoutTimeValue) {
    const ModelSpec m = gbm(0.0, 0.2);
    const DiscreteOperator op = gbm_operator(m, 201);
    SolverConfig cfg;
    cfg.steps = 100;
    const SolutionField s = backward_solve(op, cfg, call(m), 1.0);
    const double tol = 1e-6;
    const FreeBoundary fb = free_boundary(s, op.grid, 0, tol);
    const auto& axis = op.grid.axis(0);
    for (std::size_t i = 1; i + 1 < axis.size(); ++i)
        if (fb.contact[i]) {
            const double time_value =
                bs_european(axis[i], 100.0, 0.0, 0.2, 1.0, OptionKind::Call).value - std::max(axis[i] - 100.0, 0.0);
            EXPECT_LT(time_value, 1e-2) << axis[i];
        }
    EXPECT_FALSE(fb.contact[static_cast<std::size_t>(std::lower_bound(axis.begin(), axis.end(), 100.0) - axis.begin())]);
}

TEST(Diagnostic, HypothesisAlternativeIsFinite) {
    const ModelSpec m = gbm();
    const DiscreteOperator op = gbm_operator(m);
    const Eigen::VectorXd g = obstacle_vector(put(m), op.grid, 0.0);
    const double d = hyp1_alt_diagnostic(op, g, 0.1);
    EXPECT_TRUE(std::isfinite(d));
    EXPECT_GE(d, 0.0);
}

TEST(Config, Validation) {
    SolverConfig cfg;
    cfg.epsilon = 0.0;
    EXPECT_THROW(cfg.validate(), Error);
    cfg.epsilon = 1e-3;
    cfg.epsilon_schedule = {1e-2, 1e-4};
    EXPECT_EQ(cfg.epsilons().size(), 2u);
    EXPECT_EQ(parse_penalty_kind("bounded"), PenaltyKind::Bounded);
    EXPECT_THROW(parse_penalty_kind("huge"), Error);
}

}  // namespace
}  // namespace vipde
