#include "vipde/models.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "vipde/error.hpp"
#include "vipde/stencil.hpp"

namespace vipde {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt_num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

bool Params::has(std::string_view name) const { return scalars.find(name) != scalars.end(); }

double Params::get(std::string_view name) const {
    auto it = scalars.find(name);
    if (it == scalars.end()) throw Error(ErrorCode::MissingParam, "parameter '" + std::string(name) + "' is required");
    return it->second;
}

double Params::get_or(std::string_view name, double fallback) const {
    auto it = scalars.find(name);
    return it == scalars.end() ? fallback : it->second;
}

const std::vector<double>& Params::get_vector(std::string_view name) const {
    auto it = vectors.find(name);
    if (it == vectors.end()) throw Error(ErrorCode::MissingParam, "parameter '" + std::string(name) + "' is required");
    return it->second;
}

ModelName parse_model_name(std::string_view name) {
    if (name == "GBM1D") return ModelName::GBM1D;
    if (name == "BasketND") return ModelName::BasketND;
    if (name == "HestonLog") return ModelName::HestonLog;
    if (name == "AsianRegularized") return ModelName::AsianRegularized;
    throw Error(ErrorCode::UnsupportedModel, "unknown model '" + std::string(name) + "'");
}

std::string_view to_string(ModelName name) noexcept {
    switch (name) {
        case ModelName::GBM1D: return "GBM1D";
        case ModelName::BasketND: return "BasketND";
        case ModelName::HestonLog: return "HestonLog";
        case ModelName::AsianRegularized: return "AsianRegularized";
        case ModelName::Custom: return "Custom";
    }
    return "Custom";
}

void ModelSpec::covariance(State x, std::span<double> a) const {
    thread_local std::vector<double> sig;
    sig.resize(dim * noise_dim);
    diffusion(x, sig);
    for (std::size_t i = 0; i < dim; ++i)
        for (std::size_t j = 0; j < dim; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < noise_dim; ++k) s += sig[i * noise_dim + k] * sig[j * noise_dim + k];
            a[i * dim + j] = s;
        }
}

namespace {

void require_nonnegative(double v, const char* what) {
    if (!(v >= 0.0)) throw Error(ErrorCode::ConstraintViolated, std::string(what) + " must be >= 0, got " + fmt_num(v));
}

void require_positive(double v, const char* what) {
    if (!(v > 0.0)) throw Error(ErrorCode::ConstraintViolated, std::string(what) + " must be > 0, got " + fmt_num(v));
}

void check_weights(const std::vector<double>& w) {
    double sum = 0.0;
    for (double l : w) {
        if (!(l >= 0.0)) throw Error(ErrorCode::ConstraintViolated, "basket weights must be nonnegative");
        sum += l;
    }
    if (std::abs(sum - 1.0) > 1e-12)
        throw Error(ErrorCode::ConstraintViolated, "basket weights must sum to 1, got " + fmt_num(sum));
}

Box unbounded_box(std::size_t dim) { return Box{std::vector<double>(dim, -kInf), std::vector<double>(dim, kInf)}; }

ModelSpec make_gbm(const Params& p) {
    const double r = p.get("r");
    const double sigma = p.get("sigma");
    require_nonnegative(r, "r");
    require_nonnegative(sigma, "sigma");
    ModelSpec m;
    m.name = ModelName::GBM1D;
    m.dim = 1;
    m.noise_dim = 1;
    m.params = p;
    m.drift = [r](State x, std::span<double> b) { b[0] = r * x[0]; };
    m.diffusion = [sigma](State x, std::span<double> s) { s[0] = sigma * x[0]; };
    m.discount_rate = [r](State) { return r; };
    m.coefficient_domain = unbounded_box(1);
    return m;
}

ModelSpec make_basket(const Params& p) {
    const double nd = p.get("n");
    if (!(nd >= 1.0) || nd != std::floor(nd)) throw Error(ErrorCode::ConstraintViolated, "n must be a positive integer");
    const auto n = static_cast<std::size_t>(nd);
    const double r = p.get("r");
    const double sigma = p.get("sigma");
    const double corr = p.get_or("correlation", 0.0);
    require_nonnegative(r, "r");
    require_nonnegative(sigma, "sigma");
    if (n > 1 && !(corr > -1.0 / static_cast<double>(n - 1) && corr < 1.0))
        throw Error(ErrorCode::ConstraintViolated, "correlation must lie in (-1/(n-1), 1)");
    if (p.vectors.count("weights")) check_weights(p.get_vector("weights"));

    Eigen::MatrixXd c = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), corr);
    c.diagonal().setOnes();
    Eigen::MatrixXd vol = sigma * Eigen::MatrixXd(c.llt().matrixL());
    std::vector<double> tilde(n * n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            tilde[i * n + j] = vol(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));

    ModelSpec m;
    m.name = ModelName::BasketND;
    m.dim = n;
    m.noise_dim = n;
    m.params = p;
    m.drift = [r, n](State x, std::span<double> b) {
        for (std::size_t i = 0; i < n; ++i) b[i] = r * x[i];
    };
    m.diffusion = [tilde, n](State x, std::span<double> s) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) s[i * n + j] = x[i] * tilde[i * n + j];
    };
    m.discount_rate = [r](State) { return r; };
    m.coefficient_domain = unbounded_box(n);
    return m;
}

ModelSpec make_heston(const Params& p) {
    const double kappa = p.get("kappa");
    const double theta = p.get("theta");
    const double eta = p.get("eta_vol");
    const double r = p.get_or("r", 0.0);
    require_positive(kappa, "kappa");
    require_positive(theta, "theta");
    require_positive(eta, "eta_vol");
    require_nonnegative(r, "r");
    if (!(2.0 * kappa * theta > eta * eta))
        throw Error(ErrorCode::ConstraintViolated,
                    "Feller condition 2*kappa*theta > eta_vol^2 violated (2*kappa*theta=" + fmt_num(2.0 * kappa * theta) +
                        ", eta_vol^2=" + fmt_num(eta * eta) + ")");
    ModelSpec m;
    m.name = ModelName::HestonLog;
    m.dim = 2;
    m.noise_dim = 2;
    m.params = p;
    // Full truncation: the variance enters every coefficient through max(v, 0).
    m.drift = [kappa, theta, r](State x, std::span<double> b) {
        const double v = std::max(x[1], 0.0);
        b[0] = r - 0.5 * v;
        b[1] = kappa * (theta - v);
    };
    m.diffusion = [eta](State x, std::span<double> s) {
        const double sv = std::sqrt(std::max(x[1], 0.0));
        s[0] = sv;
        s[1] = 0.0;
        s[2] = 0.0;
        s[3] = eta * sv;
    };
    m.discount_rate = [r](State) { return r; };
    m.coefficient_domain = Box{{-kInf, 0.0}, {kInf, kInf}};
    return m;
}

ModelSpec make_asian(const Params& p) {
    const double r = p.get("r");
    const double sigma = p.get("sigma");
    const double delta = p.get("delta");
    require_nonnegative(r, "r");
    require_nonnegative(sigma, "sigma");
    if (!(delta > 0.0))
        throw Error(ErrorCode::ConstraintViolated, "delta must be > 0 for the regularized Asian model, got " + fmt_num(delta));
    ModelSpec m;
    m.name = ModelName::AsianRegularized;
    m.dim = 3;
    m.noise_dim = 1;
    m.params = p;
    m.drift = [r, delta](State z, std::span<double> b) {
        b[0] = r * z[0];
        b[1] = (z[0] - z[1]) / (z[2] + delta);
        b[2] = 1.0;
    };
    m.diffusion = [sigma](State z, std::span<double> s) {
        s[0] = sigma * z[0];
        s[1] = 0.0;
        s[2] = 0.0;
    };
    // The regularized Asian value function carries no discounting.
    m.discount_rate = [](State) { return 0.0; };
    m.coefficient_domain = Box{{-kInf, -kInf, -delta}, {kInf, kInf, kInf}};
    return m;
}

}  // namespace

ModelSpec make_model(ModelName name, const Params& params) {
    switch (name) {
        case ModelName::GBM1D: return make_gbm(params);
        case ModelName::BasketND: return make_basket(params);
        case ModelName::HestonLog: return make_heston(params);
        case ModelName::AsianRegularized: return make_asian(params);
        case ModelName::Custom: break;
    }
    throw Error(ErrorCode::UnsupportedModel, "custom models are built directly, not through make_model");
}

// ---------------------------------------------------------------------------------------------
// Densities

namespace {

/// rho = 1 / (1 + |z|^(2p)) with z = x (optionally restricted to a half-space support).
struct RadialDensity {
    double p;
    std::size_t dim;
    int nonneg_axis;  // -1 for none

    double value(State x) const {
        if (nonneg_axis >= 0 && x[static_cast<std::size_t>(nonneg_axis)] < 0.0) return 0.0;
        double r2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) r2 += x[i] * x[i];
        return 1.0 / (1.0 + std::pow(r2, p));
    }

    void rel(State x, std::span<double> g, std::span<double> h) const {
        double r2 = 0.0;
        for (std::size_t i = 0; i < dim; ++i) r2 += x[i] * x[i];
        const double q = std::pow(r2, p);
        const double c1 = 2.0 * p * (p == 1.0 ? 1.0 : std::pow(r2, p - 1.0));
        const double c2 = (p == 1.0) ? 0.0 : 4.0 * p * (p - 1.0) * (p == 2.0 ? 1.0 : std::pow(r2, p - 2.0));
        const double inv = 1.0 / (1.0 + q);
        for (std::size_t i = 0; i < dim; ++i) g[i] = -c1 * x[i] * inv;
        for (std::size_t i = 0; i < dim; ++i)
            for (std::size_t j = 0; j < dim; ++j) {
                const double dij = (i == j ? c1 : 0.0) + c2 * x[i] * x[j];
                h[i * dim + j] = -dij * inv + 2.0 * (c1 * x[i]) * (c1 * x[j]) * inv * inv;
            }
    }
};

/// rho = (1+|x|)^-p (1+|x-y|)^-p (1+s)^-2 on s >= 0.
struct AsianDensity {
    double p;

    double value(State z) const {
        if (z[2] < 0.0) return 0.0;
        return std::pow(1.0 + std::abs(z[0]), -p) * std::pow(1.0 + std::abs(z[0] - z[1]), -p) /
               ((1.0 + z[2]) * (1.0 + z[2]));
    }

    void rel(State z, std::span<double> g, std::span<double> h) const {
        auto sgn = [](double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); };
        // Smooth part of the log-derivatives; the kinks at x = 0 and x = y only contribute
        // nonpositive singular measures, so dropping them keeps an upper bound.
        auto A = [&](double t) { return -p * sgn(t) / (1.0 + std::abs(t)); };
        auto B = [&](double t) { return p / ((1.0 + std::abs(t)) * (1.0 + std::abs(t))); };
        const double u = z[0] - z[1];
        const double lx = A(z[0]) + A(u), ly = -A(u), ls = -2.0 / (1.0 + z[2]);
        const double lxx = B(z[0]) + B(u), lxy = -B(u), lyy = B(u), lss = 2.0 / ((1.0 + z[2]) * (1.0 + z[2]));
        const double l[3] = {lx, ly, ls};
        const double ll[9] = {lxx, lxy, 0.0, lxy, lyy, 0.0, 0.0, 0.0, lss};
        for (int i = 0; i < 3; ++i) g[static_cast<std::size_t>(i)] = l[i];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) h[static_cast<std::size_t>(i * 3 + j)] = ll[i * 3 + j] + l[i] * l[j];
    }
};

/// Mass of 1/(1+|x|^(2n+2)) over R^n.
double radial_mass(std::size_t n) {
    const double nd = static_cast<double>(n);
    const double sphere = 2.0 * std::pow(std::numbers::pi, nd / 2.0) / std::tgamma(nd / 2.0);
    const double m = 2.0 * nd + 2.0;
    return sphere * std::numbers::pi / (m * std::sin(nd * std::numbers::pi / m));
}

}  // namespace

Box default_truncation(const ModelSpec& model) {
    switch (model.name) {
        case ModelName::GBM1D: return Box{{-8.0}, {8.0}};
        case ModelName::BasketND:
            return Box{std::vector<double>(model.dim, -4.0), std::vector<double>(model.dim, 4.0)};
        case ModelName::HestonLog: return Box{{-6.0, 1e-4}, {6.0, 2.0}};
        case ModelName::AsianRegularized: return Box{{0.0, 0.0, 0.0}, {4.0, 4.0, 1.0}};
        case ModelName::Custom: break;
    }
    throw Error(ErrorCode::UnsupportedModel, "no default truncation for custom models");
}

std::vector<std::array<BoundaryKind, 2>> default_faces(const ModelSpec& model) {
    using B = BoundaryKind;
    std::vector<std::array<B, 2>> faces(model.dim, {B::DirichletPayoff, B::DirichletPayoff});
    if (model.name == ModelName::HestonLog) {
        faces[1] = {B::OutflowOneSided, B::OutflowOneSided};
    } else if (model.name == ModelName::AsianRegularized) {
        faces[0] = {B::OutflowOneSided, B::DirichletPayoff};
        faces[1] = {B::OutflowOneSided, B::OutflowOneSided};
        faces[2] = {B::OutflowOneSided, B::OutflowOneSided};
    }
    return faces;
}

std::vector<std::size_t> default_certificate_sizes(const ModelSpec& model) {
    switch (model.name) {
        case ModelName::GBM1D: return {2001};
        case ModelName::BasketND: return std::vector<std::size_t>(model.dim, model.dim <= 2 ? 81 : 21);
        case ModelName::HestonLog: return {121, 61};
        case ModelName::AsianRegularized: return {41, 41, 21};
        case ModelName::Custom: break;
    }
    throw Error(ErrorCode::UnsupportedModel, "no default certificate grid for custom models");
}

ExcessiveDensity make_excessive_density(const ModelSpec& model, std::optional<Box> truncation) {
    ExcessiveDensity d;
    d.dim = model.dim;
    d.truncation = truncation ? *truncation : default_truncation(model);
    if (d.truncation.dim() != model.dim) throw Error(ErrorCode::BadBox, "truncation box dimension mismatch");
    switch (model.name) {
        case ModelName::GBM1D:
        case ModelName::BasketND: {
            RadialDensity rd{static_cast<double>(model.dim) + 1.0, model.dim, -1};
            d.family = "radial_2(n+1)";
            d.rho = [rd](State x) { return rd.value(x); };
            d.relative_derivatives = [rd](State x, std::span<double> g, std::span<double> h) { rd.rel(x, g, h); };
            d.normalizer = 1.0 / radial_mass(model.dim);
            return d;
        }
        case ModelName::HestonLog: {
            RadialDensity rd{1.0, 2, 1};
            d.family = "heston_1/(1+x^2+v^2)";
            d.rho = [rd](State x) { return rd.value(x); };
            d.relative_derivatives = [rd](State x, std::span<double> g, std::span<double> h) { rd.rel(x, g, h); };
            // The mass over R x R+ diverges logarithmically, so normalize on the box.
            const double mass = integrate_box(d.rho, d.truncation, 1e-12);
            if (!(mass > 0.0)) throw Error(ErrorCode::NonPositiveDensity, "density has no mass on the truncation box");
            d.normalizer = 1.0 / mass;
            d.normalized_on_box = true;
            return d;
        }
        case ModelName::AsianRegularized: {
            AsianDensity ad{3.0};
            d.family = "asian_product";
            d.rho = [ad](State z) { return ad.value(z); };
            d.relative_derivatives = [ad](State z, std::span<double> g, std::span<double> h) { ad.rel(z, g, h); };
            d.normalizer = 1.0;  // unit mass over R x R x R+
            return d;
        }
        case ModelName::Custom: break;
    }
    throw Error(ErrorCode::UnsupportedModel, "no excessive density known for custom models");
}

// ---------------------------------------------------------------------------------------------
// Adjoint ratio

namespace {

/// Step for a fourth-order difference along axis d that stays inside the coefficient domain.
/// Returns the step and the stencil side: 0 central, +1 forward, -1 backward.
std::pair<double, int> fd_step(const ModelSpec& m, State x, std::size_t d) {
    double h = 1e-3 * std::max(1.0, std::abs(x[d]));
    const double room_lo = x[d] - m.coefficient_domain.lo[d];
    const double room_hi = m.coefficient_domain.hi[d] - x[d];
    const double room = std::min(room_lo, room_hi);
    if (room >= 2.5 * h) return {h, 0};
    if (room > 1e-7) return {room / 2.5, 0};
    const double other = std::max(room_lo, room_hi);
    h = std::min(h, other / 5.5);
    return {h, room_lo <= room_hi ? +1 : -1};
}

}  // namespace

double adjoint_ratio(const ModelSpec& model, const ExcessiveDensity& density, State x) {
    const std::size_t n = model.dim;
    std::vector<double> g(n), hrel(n * n), a(n * n), b(n);
    density.relative_derivatives(x, g, hrel);
    model.covariance(x, a);
    model.drift(x, b);

    // d1[i*n+j] = d_i a_ij, d2[i*n+j] = d_i d_j a_ij, db[i] = d_i b_i
    std::vector<double> d1(n * n, 0.0), d2(n * n, 0.0), db(n, 0.0);
    std::vector<double> xs(x.begin(), x.end()), at(n * n), bt(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto [h, side] = fd_step(model, x, i);
        const auto& st = side == 0 ? stencil::kCentral5 : (side > 0 ? stencil::kForward6 : stencil::kBackward6);
        std::vector<double> first_a(n, 0.0), second_a(n, 0.0);
        double first_b = 0.0;
        for (std::size_t k = 0; k < st.offsets.size(); ++k) {
            const double w1 = st.first[k], w2 = st.second[k];
            if (w1 == 0.0 && w2 == 0.0) continue;
            xs[i] = x[i] + st.offsets[k] * h;
            model.covariance(xs, at);
            model.drift(xs, bt);
            for (std::size_t j = 0; j < n; ++j) {
                first_a[j] += w1 * at[i * n + j];
                if (j == i) second_a[j] += w2 * at[i * n + i];
            }
            first_b += w1 * bt[i];
        }
        xs[i] = x[i];
        for (std::size_t j = 0; j < n; ++j) d1[i * n + j] = first_a[j] / h;
        d2[i * n + i] = second_a[i] / (h * h);
        db[i] = first_b / h;
    }
    // Mixed second derivatives of off-diagonal entries by a tensor product of first-derivative stencils.
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const auto [hi, si] = fd_step(model, x, i);
            const auto [hj, sj] = fd_step(model, x, j);
            (void)si;
            (void)sj;
            const auto& st = stencil::kCentral5;
            double acc = 0.0;
            for (std::size_t p = 0; p < st.offsets.size(); ++p)
                for (std::size_t q = 0; q < st.offsets.size(); ++q) {
                    const double w = st.first[p] * st.first[q];
                    if (w == 0.0) continue;
                    xs[i] = x[i] + st.offsets[p] * hi;
                    xs[j] = x[j] + st.offsets[q] * hj;
                    model.covariance(xs, at);
                    acc += w * at[i * n + j];
                }
            xs[i] = x[i];
            xs[j] = x[j];
            d2[i * n + j] = d2[j * n + i] = acc / (hi * hj);
        }

    double diffusion = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            diffusion += d2[i * n + j] + 2.0 * d1[i * n + j] * g[j] + a[i * n + j] * hrel[i * n + j];
    double transport = 0.0;
    for (std::size_t i = 0; i < n; ++i) transport += db[i] + b[i] * g[i];
    return 0.5 * diffusion - transport;
}

ExcessiveDensity certify_excessive(const ModelSpec& model, const ExcessiveDensity& density, const Grid& grid,
                                   const CertifyOptions& options) {
    if (grid.dim() != model.dim) throw Error(ErrorCode::BadBox, "certificate grid dimension mismatch");
    std::vector<double> ratio(grid.size());
    std::vector<double> x(grid.dim());
    std::size_t arg = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        grid.coords(k, x);
        const double rho = density.rho(x);
        if (!(rho > 0.0) || !std::isfinite(rho)) {
            std::ostringstream os;
            os << "rho=" << rho << " at node " << k << " (";
            for (std::size_t d = 0; d < x.size(); ++d) os << (d ? "," : "") << x[d];
            os << ")";
            throw Error(ErrorCode::NonPositiveDensity, os.str());
        }
        ratio[k] = adjoint_ratio(model, density, x);
        if (!std::isfinite(ratio[k]))
            throw Error(ErrorCode::RatioUnbounded, "non-finite ratio at node " + std::to_string(k));
        if (ratio[k] > ratio[arg]) arg = k;
    }
    const double omega = ratio[arg];

    // Edge heuristic: a maximum on a face that keeps climbing into the face signals growth
    // the truncated box cannot bound.
    if (omega > options.ratio_cap) {
        for (std::size_t d = 0; d < grid.dim(); ++d) {
            const std::size_t i = grid.axis_index(arg, d);
            const std::size_t last = grid.axis_size(d) - 1;
            if (i != 0 && i != last) continue;
            const std::size_t layers = std::min(options.edge_layers, last);
            bool monotone = true;
            for (std::size_t l = 0; l < layers && monotone; ++l) {
                const std::size_t o = i == 0 ? arg + l * grid.stride(d) : arg - l * grid.stride(d);
                const std::size_t inner = i == 0 ? o + grid.stride(d) : o - grid.stride(d);
                monotone = ratio[o] > ratio[inner];
            }
            if (monotone) {
                std::ostringstream os;
                os << "ratio " << omega << " grows monotonically toward the face of axis " << d << " at node " << arg
                   << " (cap " << options.ratio_cap << ")";
                throw Error(ErrorCode::RatioUnbounded, os.str());
            }
        }
    }

    ExcessiveDensity out = density;
    out.omega_certified = omega;
    out.omega_location = grid.coords(arg);
    return out;
}

// ---------------------------------------------------------------------------------------------
// Obstacles

ObstacleKind parse_obstacle_kind(std::string_view kind) {
    if (kind == "put") return ObstacleKind::Put;
    if (kind == "call") return ObstacleKind::Call;
    if (kind == "basket_put") return ObstacleKind::BasketPut;
    if (kind == "margrabe") return ObstacleKind::Margrabe;
    if (kind == "asian_put_on_Y") return ObstacleKind::AsianPutOnY;
    if (kind == "custom") return ObstacleKind::Custom;
    throw Error(ErrorCode::MissingParam, "unknown obstacle kind '" + std::string(kind) + "'");
}

ObstacleSpec make_obstacle(ObstacleKind kind, const Params& params, const ModelSpec& model) {
    ObstacleSpec o;
    o.kind = kind;
    o.convexity_flag = true;
    const bool log_price = model.name == ModelName::HestonLog;
    switch (kind) {
        case ObstacleKind::Put: {
            const double k = params.get("strike");
            o.strike = k;
            if (log_price) {
                o.payoff = [k](double, State x) { return std::max(k - std::exp(x[0]), 0.0); };
                o.lipschitz_const = k;
            } else {
                o.payoff = [k](double, State x) { return std::max(k - x[0], 0.0); };
                o.lipschitz_const = 1.0;
            }
            return o;
        }
        case ObstacleKind::Call: {
            const double k = params.get("strike");
            o.strike = k;
            if (log_price) {
                o.payoff = [k](double, State x) { return std::max(std::exp(x[0]) - k, 0.0); };
                o.lipschitz_const = kInf;  // e^x is not globally Lipschitz
            } else {
                o.payoff = [k](double, State x) { return std::max(x[0] - k, 0.0); };
                o.lipschitz_const = 1.0;
            }
            return o;
        }
        case ObstacleKind::BasketPut: {
            const double k = params.get("strike");
            const std::vector<double> w = params.get_vector("weights");
            check_weights(w);
            if (w.size() != model.dim)
                throw Error(ErrorCode::ConstraintViolated, "basket weights must have one entry per asset");
            o.strike = k;
            o.payoff = [k, w](double, State x) {
                double s = 0.0;
                for (std::size_t j = 0; j < w.size(); ++j) s += w[j] * x[j];
                return std::max(k - s, 0.0);
            };
            double norm = 0.0;
            for (double l : w) norm += l * l;
            o.lipschitz_const = std::sqrt(norm);
            return o;
        }
        case ObstacleKind::Margrabe: {
            const double lambda = params.get("lambda");
            require_positive(lambda, "lambda");
            const auto i = static_cast<std::size_t>(params.get_or("i", 0.0));
            const auto j = static_cast<std::size_t>(params.get_or("j", 1.0));
            if (i == j || i >= model.dim || j >= model.dim)
                throw Error(ErrorCode::ConstraintViolated, "margrabe needs distinct asset indices i, j");
            o.strike = params.get_or("scale", 1.0);
            o.payoff = [lambda, i, j](double, State x) { return std::max(x[i] - lambda * x[j], 0.0); };
            o.lipschitz_const = std::sqrt(1.0 + lambda * lambda);
            return o;
        }
        case ObstacleKind::AsianPutOnY: {
            const double k = params.get("strike");
            if (model.dim < 2) throw Error(ErrorCode::ConstraintViolated, "asian_put_on_Y needs the augmented state");
            o.strike = k;
            o.payoff = [k](double, State z) { return std::max(k - z[1], 0.0); };
            o.lipschitz_const = 1.0;
            return o;
        }
        case ObstacleKind::Custom: break;
    }
    throw Error(ErrorCode::MissingParam, "custom obstacles require a payoff callback (make_custom_obstacle)");
}

ObstacleSpec make_custom_obstacle(std::function<double(double, State)> payoff, bool time_dependent,
                                  double lipschitz_const, bool convexity_flag, double strike) {
    ObstacleSpec o;
    o.kind = ObstacleKind::Custom;
    o.payoff = std::move(payoff);
    o.time_dependent = time_dependent;
    o.lipschitz_const = lipschitz_const;
    o.convexity_flag = convexity_flag;
    o.strike = strike;
    return o;
}

// ---------------------------------------------------------------------------------------------

namespace {

double integrate_axis(const std::function<double(State)>& f, const Box& box, std::vector<double>& x, std::size_t d,
                      double tol) {
    using boost::math::quadrature::gauss_kronrod;
    auto inner = [&](double t) {
        x[d] = t;
        if (d + 1 == box.dim()) return f(x);
        return integrate_axis(f, box, x, d + 1, tol);
    };
    return gauss_kronrod<double, 31>::integrate(inner, box.lo[d], box.hi[d], 12, tol);
}

}  // namespace

double integrate_box(const std::function<double(State)>& f, const Box& box, double tol) {
    if (box.dim() == 0 || box.dim() > 3) throw Error(ErrorCode::BadBox, "integrate_box supports 1 to 3 dimensions");
    std::vector<double> x(box.dim());
    return integrate_axis(f, box, x, 0, tol);
}

}  // namespace vipde
