#ifndef BMOLAB_EXPONENTS_HPP
#define BMOLAB_EXPONENTS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "bmolab/paths.hpp"
#include "bmolab/tree.hpp"

namespace bmo {

/**
 * Sample-size doubling diagnostic on a nonnegative sample. The estimator is
 * a median of group means (median over 16 strided groups), evaluated on the
 * n/4, n/2 and n prefixes; "divergent" means it grew by at least `factor`
 * at both doublings, or overflowed.
 */
struct DoublingDiagnostic {
    std::vector<double> estimates;
    std::vector<double> growth;
    bool divergent = false;
    double factor = 1.5;
    int groups = 16;
};

DoublingDiagnostic doubling_diagnostic(const std::vector<double>& values, double factor = 1.5,
                                       int groups = 16);

/**
 * Censored-exponential fit of the excess tail: threshold at the top
 * `top_fraction` quantile, nu = (uncensored excess count) / (total excess
 * mass). shape_ratio compares the rate refit on the upper and lower halves
 * of the excesses; it sits near 1 when the tail really is exponential.
 */
struct TailRate {
    double nu = 0.0;
    double se = 0.0;
    long events = 0;
    double threshold = 0.0;
    double shape_ratio = 1.0;
    bool usable = false;  // enough events and shape_ratio inside [0.6, 1.5]
};

TailRate tail_rate(const std::vector<double>& value, const std::vector<std::uint8_t>& censored,
                   double top_fraction = 0.15, long min_events = 200);

/** One finite/divergent call on E[exp(s*x)] with the method that made it. */
struct MomentCall {
    double estimate = 0.0;
    bool divergent = false;
    std::string method;  // "tail-rate" | "doubling"
    DoublingDiagnostic doubling;
    TailRate tail;
};

// tail-rate verdict (s >= nu) when the exponential fit is usable, otherwise
// the doubling diagnostic; horizon-censored samples need the tail route
// because truncation caps what doubling can ever see
MomentCall classify_exp_moment(const std::vector<double>& x,
                               const std::vector<std::uint8_t>& censored, double s);
// doubling-only variant; the blow-up scan's contract
MomentCall classify_exp_moment_doubling(const std::vector<double>& x, double s);

/**
 * Critical-exponent bisection record. [lo, hi] brackets the largest s with a
 * finite conditional exponential moment; `infinite` marks the moment still
 * finite at the cap (exponent reported as +inf beyond it).
 */
struct ExponentReport {
    std::string name;
    double lo = 0.0;
    double hi = 0.0;
    bool infinite = false;
    double cap = 6.0;
    std::string family;
    std::string rationale;
    double moment_at_lo = 0.0;  // family-sup moment at the certified-finite end
};

// b: E[exp(b^2/2 * (<M>_end - <M>_tau)) | F_tau] over the probe family
ExponentReport estimate_b(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed, double cap = 6.0, double tol = 0.05);
// a: E[exp(a |M_end - M_tau|) | F_tau]
ExponentReport estimate_a(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed, double cap = 6.0, double tol = 0.05);
// tree brackets are bounded, so every moment is finite: immediate +inf verdict
ExponentReport estimate_b(const TreeMartingale& m);
ExponentReport estimate_a(const TreeMartingale& m);

/** MC norm estimate; sup-style norms are certified lower bounds only. */
struct McNorm {
    std::string name;
    double p = 0.0;
    double value = 0.0;
    double se = 0.0;
    std::string family;
};

McNorm mc_norm_rp(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed,
                  double p, const std::string& channel = "M");
// sup over the default stopping family (every grid time, plus hitting times
// of |M| at 8 pilot quantile levels) of the binned conditional remaining
// bracket; square-rooted
McNorm mc_bmo_lower(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed);
// same family, conditional E[(L_end/L_tau)^p | F_tau] for the E channel
McNorm mc_reverse_holder(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                         std::uint64_t seed, double p);

}  // namespace bmo

#endif
