#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <vector>

#include "bmolab/exponents.hpp"
#include "bmolab/paths.hpp"
#include "bmolab/tree.hpp"

namespace bmo {

/**
 * The integration operator X -> X.M on zero-initial martingales, assembled
 * as a dense matrix in an orthonormal basis of the inner product
 * E[sum dX dY]. The basis carries one element per independent
 * child-increment direction per internal node (Gram-Schmidt inside each
 * node, nodes ordered by id), so elements at deeper nodes come later.
 * Integration reads the integrand at the parent, which pushes the support
 * one level down: the matrix is strictly lower block-triangular by level
 * and therefore nilpotent with index at most the tree depth.
 */
struct OperatorMatrix {
    const Tree* tree = nullptr;
    const TreeMartingale* m = nullptr;
    Eigen::MatrixXd phi;                         // d x d in the basis below
    std::vector<NodeId> basis_node;              // carrying node per element
    std::vector<std::vector<double>> basis_inc;  // child-edge weights, size B
    std::vector<std::vector<double>> basis_val;  // value process per element
    double triangular_defect = 0.0;  // worst entry at or above the block diagonal
    int nilpotency_index = 0;        // smallest n with phi^n = 0

    int dimension() const { return static_cast<int>(phi.rows()); }
};

OperatorMatrix operator_matrix(const TreeMartingale& m);

// basis coordinates of a martingale (increments only, the initial value is
// ignored) and the reconstruction; the basis spans every zero-initial
// martingale on the tree
Eigen::VectorXd martingale_coords(const OperatorMatrix& opm, const TreeMartingale& x);
TreeMartingale coords_martingale(const OperatorMatrix& opm, const Eigen::VectorXd& c);

// worst coordinate gap, over random martingales, between the matrix action
// and the stochastic integral, plus the coordinate round trip
double operator_audit(const OperatorMatrix& opm, std::uint64_t seed, int trials);

/**
 * Norm of phi^n as an operator between path-space norms with exponent p.
 * p = 2 is the largest singular value in the orthonormal basis, exact.
 * Other p run projected gradient ascent of the norm ratio over the unit
 * sphere with multi-starts: a certified lower bound, restart count recorded.
 */
struct NormEstimate {
    int n = 0;
    double value = 0.0;
    bool exact = false;
    int restarts = 0;
};

NormEstimate operator_norm(const OperatorMatrix& opm, int n, double p,
                           std::uint64_t seed = 1, int restarts = 8);

/**
 * Spectral radius on the tree. The basis makes phi strictly lower
 * triangular, so its eigenvalues are the zero diagonal: the radius at p = 2
 * is exactly zero once the structural check passes. Other p report the
 * norm-power sequence, which collapses to zero at the nilpotency index.
 */
struct TreeRadius {
    double value = 0.0;
    std::vector<NormEstimate> norms;  // n = 1 .. nilpotency index
};

TreeRadius spectral_radius_tree(const OperatorMatrix& opm, double p,
                                std::uint64_t seed = 1);

/**
 * Both exponentials of lambda M on the tree: the product of (1 + lambda dM)
 * is an exact discrete martingale; the continuous form
 * exp(lambda M - lambda^2/2 <M>) is not, and its worst one-step
 * conditional-mean gap is reported alongside for comparison.
 */
struct ComplexExponential {
    std::complex<double> lambda;
    TreeProcess<std::complex<double>> discrete;
    TreeProcess<std::complex<double>> continuous;
    double discrete_defect = 0.0;
    double continuous_defect = 0.0;
};

ComplexExponential complex_exponential(const TreeMartingale& m,
                                       std::complex<double> lambda);

/**
 * Resolvent identity probe: the recursion X(child) = X(parent)
 * + lambda (X(parent) + g(parent)) dM with g = chi_A after tau integrates to
 * chi_A (D(t)/D(tau) - 1) for the discrete exponential D, exactly, node by
 * node. rp_constant is the worst conditional moment E[|D(sigma)/D(tau)|^p]
 * over the atoms of tau and level stops sigma; nodes where D vanishes are
 * excluded and counted.
 */
struct ResolventProbe {
    double identity_gap = 0.0;
    double rp_constant = 0.0;
    long excluded = 0;
};

ResolventProbe resolvent_probe(const TreeMartingale& m, std::complex<double> lambda,
                               const StoppingTime& tau,
                               const std::vector<NodeId>& a_atoms, double p);

/**
 * Monte Carlo spectral-radius estimate from iterated integrals: per probe
 * integrand, iterate Y -> Y.M up to n_max levels along each path and
 * estimate |phi^n| >= |Y_n| / |Y_0| in the path norm with exponent p. Probes
 * are the constant integrand plus seeded adapted functions of the state.
 * r_hat = max over n of the per-level root; lower/upper is the bound window
 * [sqrt(p)/b, sqrt(2p(2p-1))/b] from the estimated critical bracket
 * exponent, zero width when b is infinite.
 */
struct McRadius {
    double r_hat = 0.0;
    std::vector<double> norm_lower;  // per n: estimated |phi^n| lower bound
    std::vector<double> per_level;   // norm_lower[n]^(1/n)
    double lower = 0.0;
    double upper = 0.0;
    ExponentReport b;
    bool truncated = false;  // norms lost stability before n_max
};

McRadius spectral_radius_mc(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                            std::uint64_t seed, double p, int n_max, int probes);

/**
 * Grid version of the resolvent probe with tau a fixed grid time, A the
 * event that M is then positive, sigma the horizon, against the
 * continuous-form exponential; the gap decays like sqrt(dt) under grid
 * refinement. Non-finite paths are excluded and counted.
 */
struct McResolvent {
    double identity_rms = 0.0;
    double rp_estimate = 0.0;
    long excluded = 0;
};

McResolvent resolvent_probe_mc(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                               std::uint64_t seed, std::complex<double> lambda,
                               double p);

/**
 * Bound window check per exponent: r_hat against
 * [sqrt(p)/b, sqrt(2p(2p-1))/b]. The upper comparison is asserted
 * (upper_ok); the lower one is only recorded, since r_hat is itself biased
 * low.
 */
struct BoundRow {
    double p = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    double r_hat = 0.0;
    bool upper_ok = false;
    bool lower_reached = false;
};

struct BoundBattery {
    ExponentReport b;
    std::vector<BoundRow> rows;
    double tol = 0.10;
};

BoundBattery bound_battery(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                           std::uint64_t seed, const std::vector<double>& p_list,
                           int n_max = 8, int probes = 3, double tol = 0.10);

/**
 * Two-sided consistency battery. The tree side carries a bounded bracket:
 * nilpotency, zero radius and an infinite critical exponent must hold
 * together. The grid side carries a finite exponent: b finite, r_hat away
 * from zero, and the modulus of the discrete exponential along an imaginary
 * ray (|prod(1 + i mu dM)|^2, equal to exp of mu^2 times the realized
 * bracket up to O(dt)) classified finite at the small mu and divergent at
 * the large one by the doubling diagnostic.
 */
struct EquivalenceReport {
    double tree_power_norm = 0.0;         // |phi^(depth+1)|, exactly zero
    double tree_triangular_defect = 0.0;
    double tree_r2 = 0.0;
    int tree_nilpotency_index = 0;
    int tree_depth = 0;
    bool tree_b_infinite = false;

    ExponentReport mc_b;
    double mc_r_hat = 0.0;
    double ray_mu_small = 0.5;
    double ray_mu_large = 3.0;
    double ray_small_estimate = 0.0;
    bool ray_small_finite = false;
    bool ray_large_divergent = false;
    double exp_identity_gap = 0.0;  // mean | log-modulus - mu^2 bracket | at small mu

    bool consistent = false;
};

EquivalenceReport equivalence_battery(const TreeMartingale& tree_m, const SimSpec& mc_spec,
                                      const TimeGrid& grid, long n_paths,
                                      std::uint64_t seed);

}  // namespace bmo
