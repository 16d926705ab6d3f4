#include "vipde/oracles.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "vipde/error.hpp"

namespace vipde {

namespace {

double payoff(OptionKind kind, double s, double k) { return kind == OptionKind::Put ? std::max(k - s, 0.0) : std::max(s - k, 0.0); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace

OracleResult binomial_american(double spot, double strike, double r, double vol, double T, std::size_t steps,
                               OptionKind kind) {
    if (steps < 1) throw Error(ErrorCode::BadSize, "binomial tree needs at least one step");
    if (vol < 0.0) throw Error(ErrorCode::ConstraintViolated, "vol must be >= 0");
    const double dt = T / static_cast<double>(steps);
    OracleResult out;
    out.meta["steps"] = static_cast<double>(steps);
    if (vol == 0.0) {
        // Deterministic path: best discounted exercise value over the tree dates.
        double best = 0.0;
        for (std::size_t i = 0; i <= steps; ++i) {
            const double t = dt * static_cast<double>(i);
            best = std::max(best, std::exp(-r * t) * payoff(kind, spot * std::exp(r * t), strike));
        }
        out.value = best;
        return out;
    }
    const double up = std::exp(vol * std::sqrt(dt));
    const double down = 1.0 / up;
    const double disc = std::exp(-r * dt);
    const double p = (std::exp(r * dt) - down) / (up - down);
    if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::ConstraintViolated, "tree probability outside (0,1); add steps");
    std::vector<double> v(steps + 1);
    for (std::size_t j = 0; j <= steps; ++j)
        v[j] = payoff(kind, spot * std::pow(up, static_cast<double>(2 * static_cast<long>(j) - static_cast<long>(steps))), strike);
    for (std::size_t i = steps; i-- > 0;) {
        for (std::size_t j = 0; j <= i; ++j) {
            const double cont = disc * (p * v[j + 1] + (1.0 - p) * v[j]);
            const double s = spot * std::pow(up, static_cast<double>(2 * static_cast<long>(j) - static_cast<long>(i)));
            v[j] = std::max(cont, payoff(kind, s, strike));
        }
    }
    out.value = v[0];
    return out;
}

OracleResult bs_european(double spot, double strike, double r, double vol, double T, OptionKind kind) {
    OracleResult out;
    const double df = std::exp(-r * T);
    if (vol <= 0.0 || T <= 0.0) {
        out.value = kind == OptionKind::Put ? std::max(strike * df - spot, 0.0) : std::max(spot - strike * df, 0.0);
        return out;
    }
    const double sq = vol * std::sqrt(T);
    const double d1 = (std::log(spot / strike) + (r + 0.5 * vol * vol) * T) / sq;
    const double d2 = d1 - sq;
    out.value = kind == OptionKind::Call ? spot * norm_cdf(d1) - strike * df * norm_cdf(d2)
                                         : strike * df * norm_cdf(-d2) - spot * norm_cdf(-d1);
    return out;
}

namespace {

/// Exponents of all monomials of total degree <= degree in `vars` variables.
std::vector<std::vector<int>> monomials(std::size_t vars, std::size_t degree) {
    std::vector<std::vector<int>> out{std::vector<int>(vars, 0)};
    for (std::size_t d = 1; d <= degree; ++d) {
        std::vector<int> e(vars, 0);
        // enumerate compositions of d into `vars` parts
        std::function<void(std::size_t, int)> rec = [&](std::size_t v, int left) {
            if (v + 1 == vars) {
                e[v] = left;
                out.push_back(e);
                return;
            }
            for (int k = left; k >= 0; --k) {
                e[v] = k;
                rec(v + 1, left - k);
            }
        };
        if (vars > 0) rec(0, static_cast<int>(d));
    }
    return out;
}

struct PathStore {
    std::size_t paths, dates, dim;
    std::vector<double> state;     // [path][date][dim], dates 0..D
    std::vector<double> discount;  // [path][date]
    double& x(std::size_t p, std::size_t j, std::size_t d) { return state[(p * (dates + 1) + j) * dim + d]; }
    double& df(std::size_t p, std::size_t j) { return discount[p * (dates + 1) + j]; }
};

constexpr std::size_t kBatch = 4096;

void simulate_batch(const ModelSpec& model, const std::vector<double>& x0, double T, const LsmcOptions& o,
                    std::size_t batch, PathStore& store) {
    const std::size_t first = batch * kBatch;
    const std::size_t last = std::min(store.paths, first + kBatch);
    std::seed_seq seq{static_cast<std::uint32_t>(o.seed), static_cast<std::uint32_t>(o.seed >> 32),
                      static_cast<std::uint32_t>(batch), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal;
    const std::size_t dim = model.dim, m = model.noise_dim;
    const double dt = T / static_cast<double>(o.exercise_dates * o.substeps);
    const double sdt = std::sqrt(dt);
    std::vector<double> x(dim), b(dim), sig(dim * m), dw(m), xa(dim);
    std::vector<double> noise;
    for (std::size_t p = first; p < last; ++p) {
        const bool mirror = o.antithetic && (p % 2 == 1);
        if (!mirror) noise.clear();
        std::size_t cursor = 0;
        x = x0;
        double integral = 0.0;
        for (std::size_t d = 0; d < dim; ++d) store.x(p, 0, d) = x[d];
        store.df(p, 0) = 1.0;
        for (std::size_t j = 1; j <= o.exercise_dates; ++j) {
            for (std::size_t s = 0; s < o.substeps; ++s) {
                model.drift(x, b);
                model.diffusion(x, sig);
                const double c0 = model.discount_rate(x);
                for (std::size_t k = 0; k < m; ++k) {
                    if (mirror) {
                        dw[k] = -noise[cursor++];
                    } else {
                        dw[k] = normal(rng) * sdt;
                        if (o.antithetic) noise.push_back(dw[k]);
                    }
                }
                for (std::size_t d = 0; d < dim; ++d) {
                    double v = x[d] + b[d] * dt;
                    for (std::size_t k = 0; k < m; ++k) v += sig[d * m + k] * dw[k];
                    xa[d] = v;
                }
                integral += 0.5 * (c0 + model.discount_rate(xa)) * dt;
                x.swap(xa);
            }
            for (std::size_t d = 0; d < dim; ++d) store.x(p, j, d) = x[d];
            store.df(p, j) = std::exp(-integral);
        }
    }
}

}  // namespace

OracleResult lsmc_american(const ModelSpec& model, const ObstacleSpec& obstacle, double T,
                           const std::vector<double>& x0, const LsmcOptions& o) {
    if (x0.size() != model.dim) throw Error(ErrorCode::LengthMismatch, "x0 dimension does not match the model");
    if (o.paths < 2 || o.exercise_dates < 1 || o.substeps < 1)
        throw Error(ErrorCode::BadSize, "lsmc needs paths >= 2, exercise_dates >= 1, substeps >= 1");
    const std::size_t dim = model.dim, D = o.exercise_dates, N = o.paths;
    PathStore store{N, D, dim, std::vector<double>(N * (D + 1) * dim), std::vector<double>(N * (D + 1))};

    const std::size_t batches = (N + kBatch - 1) / kBatch;
    const std::size_t jobs = std::max<std::size_t>(1, std::min(o.jobs, batches));
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < jobs; ++t)
        pool.emplace_back([&, t] {
            for (std::size_t b = t; b < batches; b += jobs) simulate_batch(model, x0, T, o, b, store);
        });
    for (auto& th : pool) th.join();

    auto time_of = [&](std::size_t j) { return T * static_cast<double>(j) / static_cast<double>(D); };
    std::vector<double> xs(dim);
    auto state_at = [&](std::size_t p, std::size_t j) {
        for (std::size_t d = 0; d < dim; ++d) xs[d] = store.x(p, j, d);
        return State(xs);
    };

    Eigen::VectorXd cash(static_cast<Eigen::Index>(N));
    for (std::size_t p = 0; p < N; ++p) cash[static_cast<Eigen::Index>(p)] = store.df(p, D) * obstacle(T, state_at(p, D));

    const auto exps = monomials(dim, o.basis_degree);
    std::size_t regressions = 0;
    for (std::size_t j = D; j-- > 1;) {
        const double t = time_of(j);
        std::vector<std::size_t> itm;
        std::vector<double> gval(N);
        for (std::size_t p = 0; p < N; ++p) {
            gval[p] = obstacle(t, state_at(p, j));
            if (gval[p] > 0.0) itm.push_back(p);
        }
        // Standardize coordinates over the in-the-money set; constant coordinates are dropped.
        std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
        for (std::size_t p : itm)
            for (std::size_t d = 0; d < dim; ++d) mean[d] += store.x(p, j, d);
        for (std::size_t d = 0; d < dim && !itm.empty(); ++d) mean[d] /= static_cast<double>(itm.size());
        for (std::size_t p : itm)
            for (std::size_t d = 0; d < dim; ++d) sd[d] += std::pow(store.x(p, j, d) - mean[d], 2);
        std::vector<std::size_t> active;
        for (std::size_t d = 0; d < dim && !itm.empty(); ++d) {
            sd[d] = std::sqrt(sd[d] / static_cast<double>(itm.size()));
            if (sd[d] > 1e-8 * std::max(1.0, std::abs(mean[d]))) active.push_back(d);
        }
        std::vector<std::vector<int>> basis;
        for (const auto& e : exps) {
            bool ok = true;
            for (std::size_t d = 0; d < dim; ++d)
                if (e[d] != 0 && std::find(active.begin(), active.end(), d) == active.end()) ok = false;
            if (ok) basis.push_back(e);
        }
        const std::size_t nb = basis.size();
        if (itm.size() < 2 * nb + 2) continue;
        Eigen::MatrixXd X(static_cast<Eigen::Index>(itm.size()), static_cast<Eigen::Index>(nb));
        Eigen::VectorXd Y(static_cast<Eigen::Index>(itm.size()));
        for (std::size_t r = 0; r < itm.size(); ++r) {
            const std::size_t p = itm[r];
            for (std::size_t c = 0; c < nb; ++c) {
                double v = 1.0;
                for (std::size_t d = 0; d < dim; ++d)
                    if (basis[c][d] != 0) v *= std::pow((store.x(p, j, d) - mean[d]) / sd[d], basis[c][d]);
                X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = v;
            }
            Y[static_cast<Eigen::Index>(r)] = cash[static_cast<Eigen::Index>(p)] / store.df(p, j);
        }
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
        qr.setThreshold(1e-10);
        if (qr.rank() < static_cast<Eigen::Index>(nb)) {
            std::ostringstream os;
            os << "regression basis has rank " << qr.rank() << " < " << nb << " at exercise date " << j
               << "; reduce basis_degree";
            throw Error(ErrorCode::SingularRegression, os.str());
        }
        const Eigen::VectorXd beta = qr.solve(Y);
        const Eigen::VectorXd cont = X * beta;
        ++regressions;
        for (std::size_t r = 0; r < itm.size(); ++r) {
            const std::size_t p = itm[r];
            if (gval[p] > cont[static_cast<Eigen::Index>(r)]) cash[static_cast<Eigen::Index>(p)] = store.df(p, j) * gval[p];
        }
    }

    const double mean = cash.mean();
    const double var = (cash.array() - mean).square().sum() / static_cast<double>(N - 1);
    OracleResult out;
    out.value = mean;
    out.stderr_ = std::sqrt(var / static_cast<double>(N));
    const double g0 = obstacle(0.0, State(x0));
    if (o.exercise_at_zero && g0 > mean) out.value = g0;
    out.meta["paths"] = static_cast<double>(N);
    out.meta["exercise_dates"] = static_cast<double>(D);
    out.meta["basis_degree"] = static_cast<double>(o.basis_degree);
    out.meta["substeps"] = static_cast<double>(o.substeps);
    out.meta["seed"] = static_cast<double>(o.seed);
    out.meta["continuation"] = mean;
    out.meta["regressions"] = static_cast<double>(regressions);
    return out;
}

LcpSolution lcp_exact(const Eigen::MatrixXd& a, const Eigen::VectorXd& q, const Eigen::VectorXd& g, double tol) {
    const Eigen::Index n = a.rows();
    if (a.cols() != n || q.size() != n || g.size() != n) throw Error(ErrorCode::LengthMismatch, "lcp sizes differ");
    if (n > 20) throw Error(ErrorCode::BadSize, "lcp_exact enumerates contact sets only up to 20 unknowns");
    const double scale = std::max({1.0, q.cwiseAbs().maxCoeff(), g.cwiseAbs().maxCoeff(), a.cwiseAbs().maxCoeff()});
    const double thr = tol * scale;
    double best = std::numeric_limits<double>::infinity();
    // Enumerate by contact-set size so the empty set (plain solve) is tried first.
    std::vector<std::uint32_t> masks(std::size_t{1} << n);
    for (std::uint32_t m = 0; m < masks.size(); ++m) masks[m] = m;
    std::stable_sort(masks.begin(), masks.end(),
                     [](std::uint32_t x, std::uint32_t y) { return __builtin_popcount(x) < __builtin_popcount(y); });
    for (std::uint32_t mask : masks) {
        std::vector<Eigen::Index> free_idx, fixed;
        for (Eigen::Index i = 0; i < n; ++i) ((mask >> i) & 1U ? fixed : free_idx).push_back(i);
        Eigen::VectorXd u = g;
        if (!free_idx.empty()) {
            const auto nf = static_cast<Eigen::Index>(free_idx.size());
            Eigen::MatrixXd aff(nf, nf);
            Eigen::VectorXd b(nf);
            for (Eigen::Index r = 0; r < nf; ++r) {
                b[r] = q[free_idx[r]];
                for (Eigen::Index s : fixed) b[r] -= a(free_idx[r], s) * g[s];
                for (Eigen::Index c = 0; c < nf; ++c) aff(r, c) = a(free_idx[r], free_idx[c]);
            }
            Eigen::FullPivLU<Eigen::MatrixXd> lu(aff);
            if (!lu.isInvertible()) continue;
            const Eigen::VectorXd uf = lu.solve(b);
            for (Eigen::Index r = 0; r < nf; ++r) u[free_idx[r]] = uf[r];
        }
        const Eigen::VectorXd w = a * u - q;
        double violation = 0.0;
        for (Eigen::Index i : free_idx) violation = std::max(violation, g[i] - u[i]);
        for (Eigen::Index i : fixed) violation = std::max(violation, -w[i]);
        best = std::min(best, violation);
        if (violation <= thr) {
            LcpSolution out{u, w, std::vector<char>(static_cast<std::size_t>(n), 0)};
            for (Eigen::Index i : fixed) out.contact[static_cast<std::size_t>(i)] = 1;
            for (Eigen::Index i : free_idx) out.multiplier[i] = 0.0;
            return out;
        }
    }
    std::ostringstream os;
    os << "no contact set satisfies the complementarity conditions; best violation " << best;
    throw Error(ErrorCode::NoSolution, os.str());
}

}  // namespace vipde
