#ifndef BMOLAB_RUNNER_HPP
#define BMOLAB_RUNNER_HPP

#include <string>
#include <vector>

#include "bmolab/reports.hpp"
#include "bmolab/tree.hpp"

namespace bmo {

/** Config mistake the caller should fix; maps to exit code 2. */
struct UsageError : Error {
    using Error::Error;
};

/**
 * Flat knob set shared by every subcommand; fields a subcommand does not
 * read keep their defaults and are still echoed into the manifest, so the
 * manifest alone pins an exact rerun. Every randomized run requires an
 * explicit nonnegative seed.
 */
struct RunConfig {
    std::string subcommand;
    std::string scenario;  // inequality / coefficient scenario / martingale recipe
    std::string recipe = "invsqrt-stopped";  // path-law recipe for MC operations
    std::string corpus = "seeded:{n:100,depth:4,branching:2}";
    std::string op;            // operation within linear / spectral / exponent / corpus
    std::string kind = "se";   // solve family: se | bsde | bsde-bmo
    std::string backend = "auto";  // auto | tree | mc; resolved per subcommand
    long long seed = -1;
    double p = 2.0;
    std::vector<double> p_list;
    double tol = 1e-10;       // pass/fail threshold for asserted checks
    double iter_tol = 1e-12;  // iteration target inside the solvers
    int max_iter = 60;
    double eps1 = 0.5;
    double eps2 = 0.2;
    double eps3 = 0.3;
    int depth = 4;
    int branching = 2;
    int dim = 2;               // matrix dimension for the linear equations
    int k = 8;                 // dyadic grid resolution for MC runs
    long long paths = 20000;
    double cap = 6.0;          // exponent search cap
    std::vector<double> lambda = {0.25, 0.0};  // resolvent rate, re [, im]
    std::vector<double> lambdas;               // blow-up scan rates
    std::string out_dir = ".";
    std::string name;  // bundle directory name; defaults to the subcommand
    bool emit_json = true;
    bool emit_csv = true;
};

nlohmann::json config_json(const RunConfig& c);

// validates the config, dispatches to the owning module, stamps the
// manifest, and writes the bundle under out_dir/name. Throws UsageError on
// unknown names, missing seeds, or out-of-range knobs, always listing the
// accepted values.
ReportBundle run(const RunConfig& c);

std::vector<std::string> subcommand_names();

}  // namespace bmo

#endif
