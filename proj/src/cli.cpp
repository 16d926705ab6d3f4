#include "vipde/cli.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "vipde/error.hpp"

namespace vipde::cli {

using nlohmann::json;
namespace fs = std::filesystem;

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::ConfigParse:
        case ErrorCode::MissingParam:
        case ErrorCode::ConstraintViolated:
        case ErrorCode::UnsupportedModel:
        case ErrorCode::BadBox:
        case ErrorCode::BadSize: return kConfigError;
        case ErrorCode::RatioUnbounded:
        case ErrorCode::NonPositiveDensity: return kCertificationError;
        default: return kSolverError;
    }
}

namespace {

[[noreturn]] void bad(const std::string& where, const std::string& what) {
    throw Error(ErrorCode::ConfigParse, where + ": " + what);
}

const json& require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key)) bad(where, std::string("missing key '") + key + "'");
    return obj.at(key);
}

double as_number(const json& v, const std::string& where) {
    if (!v.is_number()) bad(where, "expected a number");
    return v.get<double>();
}

std::size_t as_count(const json& v, const std::string& where) {
    if (!v.is_number_integer() || v.get<long long>() < 0) bad(where, "expected a nonnegative integer");
    return v.get<std::size_t>();
}

std::vector<double> as_numbers(const json& v, const std::string& where) {
    if (!v.is_array()) bad(where, "expected an array of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_number(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

std::vector<std::size_t> as_counts(const json& v, const std::string& where) {
    if (!v.is_array()) bad(where, "expected an array of integers");
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < v.size(); ++i) out.push_back(as_count(v[i], where + "[" + std::to_string(i) + "]"));
    return out;
}

void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!obj.is_object()) bad(where, "expected an object");
    for (const auto& [k, _] : obj.items())
        if (std::find_if(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }) == allowed.end())
            bad(where, "unknown key '" + k + "'");
}

Params parse_params(const json& v, const std::string& where) {
    Params p;
    if (v.is_null()) return p;
    if (!v.is_object()) bad(where, "expected an object of parameters");
    for (const auto& [k, val] : v.items()) {
        if (val.is_array())
            p.vectors[k] = as_numbers(val, where + "." + k);
        else
            p.scalars[k] = as_number(val, where + "." + k);
    }
    return p;
}

Box parse_box(const json& v, const std::string& where) {
    Box b{as_numbers(require(v, "lo", where), where + ".lo"), as_numbers(require(v, "hi", where), where + ".hi")};
    if (b.lo.size() != b.hi.size()) bad(where, "lo and hi differ in length");
    return b;
}

BoundaryKind parse_face(const json& v, const std::string& where) {
    if (!v.is_string()) bad(where, "expected a boundary kind string");
    const auto s = v.get<std::string>();
    if (s == "dirichlet") return BoundaryKind::DirichletPayoff;
    if (s == "neumann") return BoundaryKind::NeumannZero;
    if (s == "outflow") return BoundaryKind::OutflowOneSided;
    bad(where, "unknown boundary kind '" + s + "' (dirichlet, neumann, outflow)");
}

DriftScheme parse_drift(const std::string& s, const std::string& where) {
    if (s == "hybrid") return DriftScheme::Hybrid;
    if (s == "upwind") return DriftScheme::Upwind;
    if (s == "central") return DriftScheme::Central;
    bad(where, "unknown drift scheme '" + s + "' (hybrid, upwind, central)");
}

template <class F>
auto wrap(const std::string& where, F&& f) {
    try {
        return f();
    } catch (const json::exception& e) {
        bad(where, e.what());
    }
}

}  // namespace

RunConfig parse_config(const json& doc) {
    return wrap("config", [&] {
        RunConfig c;
        c.source = doc;
        check_keys(doc, {"model", "obstacle", "grid", "density", "discretization", "solver", "probe", "output", "oracles",
                         "ladder", "seed", "jobs"},
                   "config");
        const json& m = require(doc, "model", "config");
        check_keys(m, {"name", "params"}, "model");
        c.model = parse_model_name(require(m, "name", "model").get<std::string>());
        c.model_params = parse_params(m.value("params", json()), "model.params");

        if (doc.contains("obstacle")) {
            const json& o = doc["obstacle"];
            check_keys(o, {"kind", "params"}, "obstacle");
            c.obstacle = parse_obstacle_kind(require(o, "kind", "obstacle").get<std::string>());
            c.obstacle_params = parse_params(o.value("params", json()), "obstacle.params");
        }
        if (doc.contains("grid")) {
            const json& g = doc["grid"];
            check_keys(g, {"lo", "hi", "sizes", "grading", "faces"}, "grid");
            c.box = parse_box(g, "grid");
            c.sizes = as_counts(require(g, "sizes", "grid"), "grid.sizes");
            if (c.sizes.size() != c.box.dim()) bad("grid.sizes", "length differs from the box dimension");
            if (g.contains("grading")) {
                const json& gr = g["grading"];
                if (!gr.is_array() || gr.size() != c.box.dim()) bad("grid.grading", "expected one entry per axis");
                for (std::size_t d = 0; d < gr.size(); ++d) {
                    const std::string w = "grid.grading[" + std::to_string(d) + "]";
                    check_keys(gr[d], {"kind", "focus", "intensity"}, w);
                    AxisGrading a;
                    const auto kind = gr[d].value("kind", std::string("uniform"));
                    if (kind == "geometric")
                        a.kind = Grading::Geometric;
                    else if (kind != "uniform")
                        bad(w, "unknown grading '" + kind + "'");
                    if (gr[d].contains("focus")) a.focus = as_number(gr[d]["focus"], w + ".focus");
                    if (gr[d].contains("intensity")) a.intensity = as_number(gr[d]["intensity"], w + ".intensity");
                    c.grading.push_back(a);
                }
            }
            if (g.contains("faces")) {
                const json& f = g["faces"];
                if (!f.is_array() || f.size() != c.box.dim()) bad("grid.faces", "expected one [lo, hi] pair per axis");
                std::vector<std::array<BoundaryKind, 2>> faces;
                for (std::size_t d = 0; d < f.size(); ++d) {
                    const std::string w = "grid.faces[" + std::to_string(d) + "]";
                    if (!f[d].is_array() || f[d].size() != 2) bad(w, "expected [lo, hi]");
                    faces.push_back({parse_face(f[d][0], w), parse_face(f[d][1], w)});
                }
                c.faces = faces;
            }
        }
        if (doc.contains("density")) {
            const json& d = doc["density"];
            check_keys(d, {"truncation", "ratio_cap", "edge_layers"}, "density");
            if (d.contains("truncation")) c.truncation = parse_box(d["truncation"], "density.truncation");
            if (d.contains("ratio_cap")) c.certify.ratio_cap = as_number(d["ratio_cap"], "density.ratio_cap");
            if (d.contains("edge_layers")) c.certify.edge_layers = as_count(d["edge_layers"], "density.edge_layers");
        }
        if (doc.contains("discretization")) {
            const json& d = doc["discretization"];
            check_keys(d, {"drift", "discrete_shift_max_nodes"}, "discretization");
            if (d.contains("drift")) c.assemble.drift = parse_drift(d["drift"].get<std::string>(), "discretization.drift");
            if (d.contains("discrete_shift_max_nodes"))
                c.assemble.discrete_shift_max_nodes =
                    as_count(d["discrete_shift_max_nodes"], "discretization.discrete_shift_max_nodes");
        }
        if (doc.contains("solver")) {
            const json& s = doc["solver"];
            check_keys(s, {"T", "steps", "penalty", "epsilon", "epsilon_schedule", "g1", "newton_tol", "newton_max_iter",
                           "max_damping", "record_multiplier", "tol_contact"},
                       "solver");
            if (s.contains("T")) c.horizon = as_number(s["T"], "solver.T");
            if (s.contains("steps")) c.solver.steps = as_count(s["steps"], "solver.steps");
            if (s.contains("penalty")) c.solver.penalty = parse_penalty_kind(s["penalty"].get<std::string>());
            if (s.contains("epsilon")) c.solver.epsilon = as_number(s["epsilon"], "solver.epsilon");
            if (s.contains("epsilon_schedule"))
                c.solver.epsilon_schedule = as_numbers(s["epsilon_schedule"], "solver.epsilon_schedule");
            if (s.contains("g1")) {
                if (s["g1"].is_string()) {
                    c.g1_mode = s["g1"].get<std::string>();
                    if (c.g1_mode != "ones" && c.g1_mode != "auto") bad("solver.g1", "expected \"ones\", \"auto\" or a number");
                } else {
                    c.g1_mode = "constant";
                    c.g1_value = as_number(s["g1"], "solver.g1");
                }
            }
            if (s.contains("newton_tol")) c.solver.newton_tol = as_number(s["newton_tol"], "solver.newton_tol");
            if (s.contains("newton_max_iter"))
                c.solver.newton_max_iter = as_count(s["newton_max_iter"], "solver.newton_max_iter");
            if (s.contains("max_damping")) c.solver.max_damping = as_count(s["max_damping"], "solver.max_damping");
            if (s.contains("record_multiplier")) c.solver.record_multiplier = s["record_multiplier"].get<bool>();
            if (s.contains("tol_contact")) {
                c.solver.tol_contact = as_number(s["tol_contact"], "solver.tol_contact");
                c.tol_contact_given = true;
            }
        }
        if (doc.contains("probe")) c.probe = as_numbers(doc["probe"], "probe");
        if (doc.contains("output")) {
            const json& o = doc["output"];
            check_keys(o, {"dir", "slices", "dump_matrix"}, "output");
            if (o.contains("dir")) c.out_dir = o["dir"].get<std::string>();
            if (o.contains("slices")) c.slices = as_counts(o["slices"], "output.slices");
            if (o.contains("dump_matrix")) c.dump_matrix = o["dump_matrix"].get<bool>();
        }
        if (doc.contains("oracles")) {
            const json& o = doc["oracles"];
            check_keys(o, {"binomial", "bs_european", "lsmc"}, "oracles");
            if (o.contains("binomial")) {
                check_keys(o["binomial"], {"enabled", "steps"}, "oracles.binomial");
                c.oracles.binomial = o["binomial"].value("enabled", true);
                if (o["binomial"].contains("steps"))
                    c.oracles.binomial_steps = as_count(o["binomial"]["steps"], "oracles.binomial.steps");
            }
            if (o.contains("bs_european")) {
                check_keys(o["bs_european"], {"enabled"}, "oracles.bs_european");
                c.oracles.bs_european = o["bs_european"].value("enabled", true);
            }
            if (o.contains("lsmc")) {
                const json& l = o["lsmc"];
                check_keys(l, {"enabled", "paths", "exercise_dates", "basis_degree", "substeps", "antithetic"},
                           "oracles.lsmc");
                c.oracles.lsmc = l.value("enabled", true);
                auto& lo = c.oracles.lsmc_options;
                if (l.contains("paths")) lo.paths = as_count(l["paths"], "oracles.lsmc.paths");
                if (l.contains("exercise_dates")) lo.exercise_dates = as_count(l["exercise_dates"], "oracles.lsmc.exercise_dates");
                if (l.contains("basis_degree")) lo.basis_degree = as_count(l["basis_degree"], "oracles.lsmc.basis_degree");
                if (l.contains("substeps")) lo.substeps = as_count(l["substeps"], "oracles.lsmc.substeps");
                if (l.contains("antithetic")) lo.antithetic = l["antithetic"].get<bool>();
            }
        }
        if (doc.contains("ladder")) {
            const json& l = doc["ladder"];
            if (!l.is_array()) bad("ladder", "expected an array of rungs");
            for (std::size_t i = 0; i < l.size(); ++i) {
                const std::string w = "ladder[" + std::to_string(i) + "]";
                check_keys(l[i], {"sizes", "steps", "epsilon"}, w);
                LadderRung r;
                r.sizes = l[i].contains("sizes") ? as_counts(l[i]["sizes"], w + ".sizes") : c.sizes;
                r.steps = l[i].contains("steps") ? as_count(l[i]["steps"], w + ".steps") : c.solver.steps;
                r.epsilon = l[i].contains("epsilon") ? as_number(l[i]["epsilon"], w + ".epsilon") : c.solver.epsilon;
                c.ladder.push_back(r);
            }
        }
        if (doc.contains("seed")) c.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("jobs")) c.jobs = std::max<std::size_t>(1, as_count(doc["jobs"], "jobs"));
        c.oracles.lsmc_options.seed = c.seed;
        c.oracles.lsmc_options.jobs = c.jobs;
        return c;
    });
}

RunConfig load_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ConfigParse, "cannot open config file " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigParse, path.string() + ": " + e.what());
    }
    return parse_config(doc);
}

void apply_overrides(RunConfig& cfg, const Overrides& o) {
    if (o.out_dir) {
        cfg.out_dir = *o.out_dir;
        cfg.source["output"]["dir"] = *o.out_dir;
    }
    if (o.seed) {
        cfg.seed = *o.seed;
        cfg.oracles.lsmc_options.seed = *o.seed;
        cfg.source["seed"] = *o.seed;
    }
    if (o.jobs) {
        cfg.jobs = std::max<std::size_t>(1, *o.jobs);
        cfg.oracles.lsmc_options.jobs = cfg.jobs;
    }
}

namespace {

void require_pricing_sections(const RunConfig& cfg) {
    if (!cfg.source.contains("obstacle")) throw Error(ErrorCode::ConfigParse, "config: missing section 'obstacle'");
    if (!cfg.source.contains("grid")) throw Error(ErrorCode::ConfigParse, "config: missing section 'grid'");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

PricingRun run_pricing(const RunConfig& cfg, const std::optional<LadderRung>& rung) {
    require_pricing_sections(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    ModelSpec model = make_model(cfg.model, cfg.model_params);
    ObstacleSpec obstacle = make_obstacle(cfg.obstacle, cfg.obstacle_params, model);
    if (cfg.box.dim() != model.dim) throw Error(ErrorCode::BadBox, "grid dimension differs from the model dimension");

    Grid grid = make_grid(cfg.box, rung ? rung->sizes : cfg.sizes, cfg.grading);
    const auto faces = cfg.faces ? *cfg.faces : default_faces(model);
    for (std::size_t d = 0; d < grid.dim(); ++d)
        for (int s = 0; s < 2; ++s) grid.set_face(d, s, faces[d][static_cast<std::size_t>(s)]);

    const Box trunc = cfg.truncation ? *cfg.truncation
                                     : (model.name == ModelName::Custom ? grid.box()
                                                                        : hull(default_truncation(model), grid.box()));
    ExcessiveDensity density = make_excessive_density(model, trunc);
    {
        std::vector<std::size_t> sizes = default_certificate_sizes(model);
        const Grid cert_grid = make_grid(trunc, sizes);
        density = certify_excessive(model, density, cert_grid, cfg.certify);
        const ExcessiveDensity on_grid = certify_excessive(model, density, grid, cfg.certify);
        if (*on_grid.omega_certified > *density.omega_certified) density = on_grid;
    }
    DiscreteOperator op = assemble(model, grid, density, cfg.assemble);

    SolverConfig sc = cfg.solver;
    if (rung) {
        sc.steps = rung->steps;
        sc.epsilon = rung->epsilon;
        sc.epsilon_schedule.clear();
    }
    if (!cfg.tol_contact_given) sc.tol_contact = 1e-6 * obstacle.strike;
    const double h = cfg.horizon / static_cast<double>(sc.steps);
    if (sc.penalty == PenaltyKind::Bounded) {
        const Eigen::VectorXd g0 = obstacle_vector(obstacle, grid, 0.0);
        if (cfg.g1_mode == "auto")
            sc.g1 = bounded_penalty_weight(op, g0, h);
        else if (cfg.g1_mode == "constant")
            sc.g1 = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(grid.size()), cfg.g1_value);
    }

    PricingRun run{std::move(model), std::move(obstacle), std::move(density), std::move(op), {}, {}, 0.0, 0.0, 0.0};
    run.solution = backward_solve(run.op, sc, run.obstacle, cfg.horizon);
    if (!cfg.probe.empty()) {
        if (cfg.probe.size() != run.model.dim) throw Error(ErrorCode::ConfigParse, "probe dimension differs from the model");
        if (!run.op.grid.box().contains(cfg.probe, 1e-12)) throw Error(ErrorCode::BadBox, "probe lies outside the grid");
        run.probe_value = interpolate(run.op.grid, run.solution.values[0], cfg.probe);
    }
    for (std::size_t k = 0; k < run.solution.size(); ++k) {
        run.max_residual = std::max(run.max_residual, run.solution.residuals[k]);
        run.min_gap = std::min(run.min_gap, run.solution.min_gap[k]);
    }
    run.seconds = seconds_since(t0);
    return run;
}

std::optional<double> reference_value(const RunConfig& cfg) {
    if (cfg.model != ModelName::GBM1D || cfg.probe.size() != 1) return std::nullopt;
    if (cfg.obstacle != ObstacleKind::Put && cfg.obstacle != ObstacleKind::Call) return std::nullopt;
    const OptionKind kind = cfg.obstacle == ObstacleKind::Put ? OptionKind::Put : OptionKind::Call;
    const double k = cfg.obstacle_params.get("strike");
    const double r = cfg.model_params.get("r");
    const double vol = cfg.model_params.get("sigma");
    if (cfg.oracles.binomial)
        return binomial_american(cfg.probe[0], k, r, vol, cfg.horizon, cfg.oracles.binomial_steps, kind).value;
    if (cfg.oracles.bs_european) return bs_european(cfg.probe[0], k, r, vol, cfg.horizon, kind).value;
    return std::nullopt;
}

std::string format_double(double v) {
    std::array<char, 64> buf{};
    const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
    return std::string(buf.data(), res.ptr);
}

std::string sha256_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::SolveFailure, "cannot read " + path.string() + " for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md.data(), &len);
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    return os.str();
}

namespace {

std::string iso_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

json file_entry(const fs::path& dir, const std::string& name) {
    return json{{"path", name}, {"sha256", sha256_file(dir / name)}};
}

void write_slice(const fs::path& file, const PricingRun& run, std::size_t k, double tol_contact) {
    const Grid& grid = run.op.grid;
    const SolutionField& sol = run.solution;
    std::ofstream out(file);
    for (std::size_t d = 0; d < grid.dim(); ++d) out << "coord_" << d << ',';
    out << "u,g,eta,contact\n";
    std::vector<double> x(grid.dim());
    const bool has_eta = sol.eta[k].size() > 0;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        grid.coords(i, x);
        for (double xd : x) out << format_double(xd) << ',';
        const double u = sol.values[k][ii], g = sol.obstacle[k][ii];
        out << format_double(u) << ',' << format_double(g) << ',' << format_double(has_eta ? sol.eta[k][ii] : 0.0) << ','
            << (u - g <= tol_contact ? 1 : 0) << '\n';
    }
}

/// 1D: exercise boundary per time. 2D: contact nodes adjacent to the continuation region per slice.
bool write_free_boundary(const fs::path& file, const PricingRun& run, const std::vector<std::size_t>& slices,
                         double tol_contact) {
    const Grid& grid = run.op.grid;
    const SolutionField& sol = run.solution;
    if (grid.dim() > 2) return false;
    std::ofstream out(file);
    if (grid.dim() == 1) {
        out << "t,boundary\n";
        for (std::size_t k = 0; k < sol.size(); ++k) {
            const FreeBoundary fb = free_boundary(sol, grid, k, tol_contact);
            out << format_double(sol.times[k]) << ',' << (fb.boundary ? format_double(*fb.boundary) : std::string()) << '\n';
        }
        return true;
    }
    out << "t,coord_0,coord_1\n";
    std::vector<std::size_t> idx(2);
    for (std::size_t k : slices) {
        const FreeBoundary fb = free_boundary(sol, grid, k, tol_contact);
        for (std::size_t i = 0; i < grid.size(); ++i) {
            if (!fb.contact[i]) continue;
            grid.unflatten(i, idx);
            bool edge = false;
            for (std::size_t d = 0; d < 2 && !edge; ++d) {
                const std::size_t s = grid.stride(d);
                if (idx[d] > 0 && !fb.contact[i - s]) edge = true;
                if (idx[d] + 1 < grid.axis_size(d) && !fb.contact[i + s]) edge = true;
            }
            if (edge) {
                const auto x = grid.coords(i);
                out << format_double(sol.times[k]) << ',' << format_double(x[0]) << ',' << format_double(x[1]) << '\n';
            }
        }
    }
    return true;
}

json oracle_json(const OracleResult& r) {
    json j{{"value", r.value}, {"meta", r.meta}};
    j["stderr"] = r.stderr_ ? json(*r.stderr_) : json(nullptr);
    return j;
}

json run_oracles(const RunConfig& cfg, const PricingRun& run) {
    json out = json::object();
    if (cfg.probe.empty()) return out;
    const bool vanilla = cfg.model == ModelName::GBM1D &&
                         (cfg.obstacle == ObstacleKind::Put || cfg.obstacle == ObstacleKind::Call);
    if (vanilla && (cfg.oracles.binomial || cfg.oracles.bs_european)) {
        const OptionKind kind = cfg.obstacle == ObstacleKind::Put ? OptionKind::Put : OptionKind::Call;
        const double k = cfg.obstacle_params.get("strike"), r = cfg.model_params.get("r"),
                     vol = cfg.model_params.get("sigma");
        if (cfg.oracles.binomial)
            out["binomial"] = oracle_json(binomial_american(cfg.probe[0], k, r, vol, cfg.horizon, cfg.oracles.binomial_steps, kind));
        if (cfg.oracles.bs_european) out["bs_european"] = oracle_json(bs_european(cfg.probe[0], k, r, vol, cfg.horizon, kind));
    }
    if (cfg.oracles.lsmc) out["lsmc"] = oracle_json(lsmc_american(run.model, run.obstacle, cfg.horizon, cfg.probe, cfg.oracles.lsmc_options));
    return out;
}

void write_json(const fs::path& file, const json& j) {
    std::ofstream out(file);
    out << j.dump(2) << '\n';
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

int cmd_price(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    PricingRun run = run_pricing(cfg);
    const double solve_seconds = seconds_since(t0);
    const double tol_contact = cfg.tol_contact_given ? cfg.solver.tol_contact : 1e-6 * run.obstacle.strike;

    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    json files = json::array();
    for (std::size_t k : cfg.slices) {
        if (k >= run.solution.size()) throw Error(ErrorCode::ConfigParse, "output.slices index out of range");
        const std::string name = "slice_" + std::to_string(k) + ".csv";
        write_slice(dir / name, run, k, tol_contact);
        files.push_back(file_entry(dir, name));
    }
    if (write_free_boundary(dir / "free_boundary.csv", run, cfg.slices, tol_contact))
        files.push_back(file_entry(dir, "free_boundary.csv"));
    if (cfg.dump_matrix) {
        std::ofstream m(dir / "matrix_N.coo");
        dump_coo(run.op, m);
        m.close();
        files.push_back(file_entry(dir, "matrix_N.coo"));
    }

    const auto t1 = std::chrono::steady_clock::now();
    const json oracles = run_oracles(cfg, run);
    const double oracle_seconds = seconds_since(t1);

    std::size_t newton = 0;
    for (auto n : run.solution.newton_iterations) newton += n;
    json results{{"value_at_probe", optional_number(run.probe_value)},
                 {"probe", cfg.probe},
                 {"omega", run.op.omega},
                 {"omega_certified", run.op.omega_certified},
                 {"omega_discrete", optional_number(run.op.omega_discrete)},
                 {"omega_location", run.density.omega_location},
                 {"steps", run.solution.size() - 1},
                 {"grid_nodes", run.op.size()},
                 {"max_residual", run.max_residual},
                 {"min_gap", run.min_gap},
                 {"nonmonotone_rows", run.op.nonmonotone_rows.size()},
                 {"newton_iterations", newton},
                 {"residual_history", run.solution.residuals},
                 {"min_gap_history", run.solution.min_gap}};
    json manifest{{"schema_version", 1},
                  {"command", "price"},
                  {"config", cfg.source},
                  {"seed", cfg.seed},
                  {"results", results},
                  {"oracles", oracles},
                  {"files", files},
                  {"timings", {{"solve_seconds", solve_seconds}, {"oracle_seconds", oracle_seconds}}},
                  {"created", iso_now()}};
    write_json(dir / "manifest.json", manifest);

    std::cout << "value_at_probe=" << (run.probe_value ? format_double(*run.probe_value) : "n/a")
              << " omega=" << format_double(run.op.omega) << " max_residual=" << format_double(run.max_residual)
              << " min_gap=" << format_double(run.min_gap) << '\n';
    for (const auto& [name, r] : oracles.items()) std::cout << "oracle " << name << '=' << r["value"].dump() << '\n';
    return kOk;
}

std::vector<ConvergeRow> run_ladder(const RunConfig& cfg) {
    if (cfg.ladder.empty()) throw Error(ErrorCode::ConfigParse, "config: 'ladder' must list at least one rung");
    std::vector<ConvergeRow> rows(cfg.ladder.size());
    auto run_rung = [&](std::size_t i) {
        const PricingRun run = run_pricing(cfg, cfg.ladder[i]);
        ConvergeRow row;
        row.rung = cfg.ladder[i];
        row.value = run.probe_value.value_or(std::nan(""));
        row.residual = run.max_residual;
        for (std::size_t k = 0; k < run.solution.size(); ++k)
            row.violation = std::max(row.violation,
                                     weighted_norm(run.op, (run.solution.obstacle[k] - run.solution.values[k]).cwiseMax(0.0)));
        row.seconds = run.seconds;
        return row;
    };
    if (cfg.jobs <= 1) {
        for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = run_rung(i);
    } else {
        for (std::size_t start = 0; start < rows.size(); start += cfg.jobs) {
            std::vector<std::future<ConvergeRow>> fut;
            for (std::size_t i = start; i < std::min(rows.size(), start + cfg.jobs); ++i)
                fut.push_back(std::async(std::launch::async, run_rung, i));
            for (std::size_t i = 0; i < fut.size(); ++i) rows[start + i] = fut[i].get();
        }
    }

    auto ratio = [&](std::size_t i) {
        const auto& a = rows[i - 1].rung;
        const auto& b = rows[i].rung;
        if (a.steps != b.steps) return static_cast<double>(b.steps) / static_cast<double>(a.steps);
        double r = 1.0;
        for (std::size_t d = 0; d < a.sizes.size(); ++d)
            r = std::max(r, static_cast<double>(b.sizes[d] - 1) / static_cast<double>(a.sizes[d] - 1));
        if (r != 1.0) return r;
        return a.epsilon / b.epsilon;
    };
    const std::optional<double> ref = reference_value(cfg);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const double q = ratio(i);
        if (!(q > 0.0) || q == 1.0) continue;
        double num = 0.0, den = 0.0;
        if (ref) {
            num = std::abs(rows[i - 1].value - *ref);
            den = std::abs(rows[i].value - *ref);
        } else if (i >= 2) {
            num = std::abs(rows[i - 1].value - rows[i - 2].value);
            den = std::abs(rows[i].value - rows[i - 1].value);
        } else {
            continue;
        }
        if (num > 0.0 && den > 0.0) rows[i].order = std::log(num / den) / std::log(q);
    }
    return rows;
}

int cmd_converge(const RunConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<ConvergeRow> rows = run_ladder(cfg);
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    {
        std::ofstream out(dir / "converge.csv");
        out << "rung,sizes,steps,epsilon,value,residual,violation,runtime,order\n";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i];
            std::string sizes;
            for (std::size_t d = 0; d < r.rung.sizes.size(); ++d) sizes += (d ? "x" : "") + std::to_string(r.rung.sizes[d]);
            out << i << ',' << sizes << ',' << r.rung.steps << ',' << format_double(r.rung.epsilon) << ','
                << format_double(r.value) << ',' << format_double(r.residual) << ',' << format_double(r.violation) << ','
                << format_double(r.seconds) << ',' << (r.order ? format_double(*r.order) : std::string()) << '\n';
        }
    }
    json table = json::array();
    for (const auto& r : rows)
        table.push_back({{"sizes", r.rung.sizes},
                         {"steps", r.rung.steps},
                         {"epsilon", r.rung.epsilon},
                         {"value", r.value},
                         {"residual", r.residual},
                         {"violation", r.violation},
                         {"order", optional_number(r.order)}});
    const std::optional<double> ref = reference_value(cfg);
    json manifest{{"schema_version", 1},
                  {"command", "converge"},
                  {"config", cfg.source},
                  {"seed", cfg.seed},
                  {"results", {{"rows", table}, {"reference_value", optional_number(ref)}}},
                  {"oracles", json::object()},
                  {"files", json::array({file_entry(dir, "converge.csv")})},
                  {"timings", {{"total_seconds", seconds_since(t0)}}},
                  {"created", iso_now()}};
    write_json(dir / "manifest.json", manifest);
    for (std::size_t i = 0; i < rows.size(); ++i)
        std::cout << "rung " << i << " value=" << format_double(rows[i].value)
                  << " order=" << (rows[i].order ? format_double(*rows[i].order) : "n/a") << '\n';
    return kOk;
}

MeasureReport verify_measure(const RunConfig& cfg) {
    const ModelSpec model = make_model(cfg.model, cfg.model_params);
    const Box trunc = cfg.truncation ? *cfg.truncation : default_truncation(model);
    std::vector<std::size_t> sizes = default_certificate_sizes(model);
    const ExcessiveDensity density = make_excessive_density(model, trunc);
    const ExcessiveDensity coarse = certify_excessive(model, density, make_grid(trunc, sizes), cfg.certify);
    for (auto& s : sizes) s = 2 * s - 1;
    const ExcessiveDensity fine = certify_excessive(model, density, make_grid(trunc, sizes), cfg.certify);
    MeasureReport rep;
    rep.model = model.name;
    rep.omega = *coarse.omega_certified;
    rep.omega_refined = *fine.omega_certified;
    rep.location = coarse.omega_location;
    const double scale = std::max(std::abs(rep.omega), std::abs(rep.omega_refined));
    rep.change_percent = scale == 0.0 ? 0.0 : 100.0 * std::abs(rep.omega_refined - rep.omega) / scale;
    rep.normalizer = density.normalizer;
    rep.normalized_on_box = density.normalized_on_box;
    return rep;
}

int cmd_verify_measure(const RunConfig& cfg) {
    const MeasureReport rep = verify_measure(cfg);
    std::cout << "model=" << to_string(rep.model) << " omega=" << format_double(rep.omega) << " location=(";
    for (std::size_t d = 0; d < rep.location.size(); ++d) std::cout << (d ? "," : "") << format_double(rep.location[d]);
    std::cout << ") omega_refined=" << format_double(rep.omega_refined)
              << " refinement_change_percent=" << format_double(rep.change_percent)
              << " normalizer=" << format_double(rep.normalizer) << '\n';

    if (cfg.source.contains("output") && cfg.source["output"].contains("dir")) {
        const fs::path dir(cfg.out_dir);
        fs::create_directories(dir);
        json manifest{{"schema_version", 1},
                      {"command", "verify-measure"},
                      {"config", cfg.source},
                      {"seed", cfg.seed},
                      {"results",
                       {{"omega", rep.omega},
                        {"omega_location", rep.location},
                        {"omega_refined", rep.omega_refined},
                        {"refinement_change_percent", rep.change_percent},
                        {"normalizer", rep.normalizer},
                        {"normalized_on_box", rep.normalized_on_box}}},
                      {"oracles", json::object()},
                      {"files", json::array()},
                      {"timings", json::object()},
                      {"created", iso_now()}};
        write_json(dir / "manifest.json", manifest);
    }
    return kOk;
}

namespace {

void report_error(const RunConfig* cfg, const std::string& code, const std::string& message,
                  std::optional<std::size_t> time_index, int status) {
    json rec{{"error", {{"code", code}, {"message", message}, {"exit_code", status}}}};
    rec["error"]["time_index"] = time_index ? json(*time_index) : json(nullptr);
    std::cerr << rec.dump() << '\n';
    if (cfg) {
        std::error_code ec;
        fs::create_directories(cfg->out_dir, ec);
        if (!ec) write_json(fs::path(cfg->out_dir) / "error.json", rec);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Obstacle-problem solver for American-style options in weighted L2 spaces"};
    app.require_subcommand(1);
    std::string config_path;
    Overrides overrides;
    std::string out_dir;
    std::uint64_t seed = 0;
    std::size_t jobs = 1;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "JSON run configuration")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out_dir, "Output directory (overrides output.dir)");
        sub->add_option("--seed", seed, "Random seed (overrides seed)");
        sub->add_option("--jobs", jobs, "Concurrent ladder rungs / Monte Carlo threads (overrides jobs)");
    };
    CLI::App* price = app.add_subcommand("price", "Solve the obstacle problem and write slices and a manifest");
    CLI::App* converge = app.add_subcommand("converge", "Run a refinement ladder and write a convergence table");
    CLI::App* verify = app.add_subcommand("verify-measure", "Certify the excessive density of the configured model");
    for (CLI::App* s : {price, converge, verify}) add_common(s);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kConfigError;
    }
    CLI::App* active = app.get_subcommands().front();
    if (active->count("--out")) overrides.out_dir = out_dir;
    if (active->count("--seed")) overrides.seed = seed;
    if (active->count("--jobs")) overrides.jobs = jobs;

    std::optional<RunConfig> cfg;
    try {
        cfg = load_config(config_path);
        apply_overrides(*cfg, overrides);
        if (active == price) return cmd_price(*cfg);
        if (active == converge) return cmd_converge(*cfg);
        return cmd_verify_measure(*cfg);
    } catch (const Error& e) {
        const int status = exit_code_for(e.code());
        report_error(cfg ? &*cfg : nullptr, std::string(to_string(e.code())), e.what(), e.time_index(), status);
        return status;
    } catch (const std::exception& e) {
        report_error(cfg ? &*cfg : nullptr, "Internal", e.what(), std::nullopt, kSolverError);
        return kSolverError;
    }
}

}  // namespace vipde::cli
