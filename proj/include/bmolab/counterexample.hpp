#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bmolab/paths.hpp"

namespace bmo {

/**
 * Explicit solution channels of the quadratic equation
 * dY = Z dW + (1/2) Z^2 dt driven by the time-changed integral
 * X_t = int_0^t dW_s / sqrt(1-s), stopped when |X| leaves the unit band:
 * Y = -log(X_stop + 2), Z = -1 / ((X+2) sqrt(1-t)) while running, zero
 * after the stop. The grid ends strictly before the singular time; paths
 * that never stop are kept at the horizon and flagged, not extrapolated.
 * Only per-path summaries are stored.
 */
struct CounterexampleScenario {
    int k = 0;  // grid [0, 1 - 2^-k] in 2^k steps
    TimeGrid grid;
    long n_paths = 0;
    std::uint64_t seed = 0;

    double y0 = 0.0;  // -log(X_0 + 2) = -log 2
    long fired = 0;
    double fired_fraction = 0.0;

    std::vector<int> hit;           // stop index per path, -1 when truncated
    std::vector<double> clock;      // <X> at the stop, read at the hit-step midpoint
    std::vector<double> bracket;    // <X> through the full hit step: zint is in [bracket/9, bracket]
    std::vector<double> overshoot;  // |X_hit| - 1 at overshooting hits, else 0
    std::vector<double> xi;         // -log(X_stop + 2), hit values projected to the barrier
    std::vector<double> zint;       // int Z^2 dt along the path
    std::vector<double> residual_total;  // per-path sum of step residuals (equation gap)
    std::vector<double> residual_max;    // per-path worst |step residual|

    double after_stop_max = 0.0;  // worst |residual| on steps at or after the stop
    double invariant_gap = 0.0;   // worst | |Z| sqrt(1-t) (X+2) - 1 | on running steps
    double bracket_gap = 0.0;     // worst | int Z^2 dt - bracket-route integral | per path
    double mean_hit_step = 0.0;   // mean clock increment of the hit step
    double mean_clock = 0.0;
    double clock_se = 0.0;
    double mean_zint = 0.0;
    double zint_se = 0.0;

    double first_step_mean = 0.0;  // mean one-step residual at t = 0
    double first_step_se = 0.0;

    // certified lower bound on the remaining bracket of Z.W: paths still
    // running at t = 1/2 are binned by X there and the largest bin mean of
    // the remaining int Z^2 dt is kept (bins below the count floor skipped)
    double bmo_lower = 0.0;
    int bmo_argmax = -1;
    std::vector<double> bmo_bin_mean;
    std::vector<double> bmo_bin_se;
    std::vector<long> bmo_bin_count;
};

CounterexampleScenario build_scenario(int k, long n_paths, std::uint64_t seed);

/**
 * Residual audit with self-refinement: the same seed and path count are
 * rerun at k+2 and k+4, and the rms of the per-path equation gap must
 * shrink with a fitted order of at least tol_order in the level.
 */
struct SolutionReport {
    double rms_residual = 0.0;  // at the scenario's own resolution
    std::vector<int> k_values;
    std::vector<double> rms_by_k;
    double order = 0.0;  // least-squares slope of -log2 rms against k
    bool order_ok = false;
    double after_stop_max = 0.0;
    double invariant_gap = 0.0;
    double first_step_mean = 0.0;
    double first_step_se = 0.0;
    bool first_step_ok = false;  // |mean| <= 3 SE
};

SolutionReport verify_solution(const CounterexampleScenario& sc, double tol_order);

/** One row of the exponential-moment scan of int Z^2 dt. */
struct BlowupRow {
    double lambda = 0.0;
    double estimate = 0.0;  // mean of exp(lambda int Z^2 dt)
    double se = 0.0;
    bool overflow = false;  // non-finite terms hit the mean: divergence evidence
    std::string regime;     // "finite" | "undetermined" | "divergent"
    bool divergent_call = false;
    double oracle_lo = 0.0;  // sec(sqrt(2 lambda)/3) in the finite regime
    double oracle_hi = 0.0;  // sec(sqrt(2 lambda))
    bool bracket_ok = true;  // estimate inside [lo, hi] +- 3 SE, finite regime only
};

struct BlowupReport {
    std::vector<BlowupRow> rows;
};

// the finite regime ends at pi^2/8, the provably divergent one starts at
// 9 pi^2 / 8; rates in between are reported without a verdict
BlowupReport moment_blowup_scan(const CounterexampleScenario& sc,
                                const std::vector<double>& lambdas);

}  // namespace bmo
