#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vipde/discretization.hpp"
#include "vipde/error.hpp"
#include "vipde/grid.hpp"
#include "vipde/models.hpp"
#include "vipde/oracles.hpp"
#include "vipde/vi_solver.hpp"

namespace vipde::cli {

/// Process exit statuses.
enum ExitCode : int { kOk = 0, kConfigError = 2, kSolverError = 3, kCertificationError = 4 };

int exit_code_for(ErrorCode code) noexcept;

struct OracleToggles {
    bool binomial = false;
    std::size_t binomial_steps = 8000;
    bool bs_european = false;
    bool lsmc = false;
    LsmcOptions lsmc_options;
};

struct LadderRung {
    std::vector<std::size_t> sizes;
    std::size_t steps = 0;
    double epsilon = 0.0;
};

/// Fully resolved run description. `source` is the JSON document after flag overrides, which is
/// what the manifest echoes.
struct RunConfig {
    ModelName model = ModelName::GBM1D;
    Params model_params;
    ObstacleKind obstacle = ObstacleKind::Put;
    Params obstacle_params;

    Box box;
    std::vector<std::size_t> sizes;
    std::vector<AxisGrading> grading;
    std::optional<std::vector<std::array<BoundaryKind, 2>>> faces;

    std::optional<Box> truncation;
    CertifyOptions certify;
    AssembleOptions assemble;

    SolverConfig solver;
    double horizon = 1.0;
    /// "ones" (g1 = 1), "auto" (bounded_penalty_weight) or a constant given by g1_value.
    std::string g1_mode = "ones";
    double g1_value = 1.0;
    bool tol_contact_given = false;

    std::vector<double> probe;
    std::vector<std::size_t> slices{0};
    bool dump_matrix = false;

    OracleToggles oracles;
    std::vector<LadderRung> ladder;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    std::size_t jobs = 1;

    nlohmann::json source;
};

/// Parses a config document. Throws Error(ConfigParse) on malformed input.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Flag overrides; each takes precedence over the file value.
struct Overrides {
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
};

void apply_overrides(RunConfig& cfg, const Overrides& o);

/// Everything produced by one certify -> assemble -> backward_solve pass.
struct PricingRun {
    ModelSpec model;
    ObstacleSpec obstacle;
    ExcessiveDensity density;
    DiscreteOperator op;
    SolutionField solution;
    std::optional<double> probe_value;
    double max_residual = 0.0;
    double min_gap = 0.0;
    double seconds = 0.0;
};

/// Runs the pricing pipeline, optionally with a rung's sizes/steps/epsilon substituted.
PricingRun run_pricing(const RunConfig& cfg, const std::optional<LadderRung>& rung = std::nullopt);

/// Reference value for the probe point when an enabled closed-form or tree oracle applies.
std::optional<double> reference_value(const RunConfig& cfg);

struct ConvergeRow {
    LadderRung rung;
    double value = 0.0;
    double residual = 0.0;
    double violation = 0.0;
    double seconds = 0.0;
    std::optional<double> order;
};

/// Runs the ladder (rungs concurrently when cfg.jobs > 1) and fills the order column: against the
/// reference value from row 2 when one exists, otherwise from consecutive differences from row 3.
std::vector<ConvergeRow> run_ladder(const RunConfig& cfg);

std::string sha256_file(const std::filesystem::path& path);

/// Shortest round-trip decimal form of a double.
std::string format_double(double v);

/// Certificate on the default (or configured) truncation box and on the 2x refined grid.
struct MeasureReport {
    ModelName model = ModelName::GBM1D;
    double omega = 0.0;
    std::vector<double> location;
    double omega_refined = 0.0;
    double change_percent = 0.0;
    double normalizer = 1.0;
    bool normalized_on_box = false;
};

MeasureReport verify_measure(const RunConfig& cfg);

int cmd_price(const RunConfig& cfg);
int cmd_converge(const RunConfig& cfg);
int cmd_verify_measure(const RunConfig& cfg);

/// Parses argv, dispatches the subcommand and maps errors onto exit codes.
int main(int argc, char** argv);

}  // namespace vipde::cli
