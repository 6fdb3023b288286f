#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "bmolab/norms.hpp"
#include "bmolab/tree.hpp"

namespace bmo {

/**
 * Forward equation X_t = J_t + sum f(u, X_u) d<N1,N2>_u + sum g(u, X_u) dM_u
 * over the edges before t, coefficients read at the left endpoint. A null
 * coefficient function means identically zero. The envelopes alpha and beta
 * dominate the increments of f and g in the state argument.
 */
struct SESpec {
    int n = 1;
    std::function<Eigen::VectorXd(NodeId, const Eigen::VectorXd&)> f;
    std::function<Eigen::VectorXd(NodeId, const Eigen::VectorXd&)> g;
    TreeProcess<double> alpha;
    TreeProcess<double> beta;
    const TreeMartingale* n1 = nullptr;
    const TreeMartingale* n2 = nullptr;
    const TreeMartingale* m = nullptr;
    TreeProcess<Eigen::VectorXd> j;
    double p = 2.0;
};

/**
 * Backward equation Y_t = xi + J_T - J_t + sum f(u, Y_u) d<N1,N2>_u
 * + sum g(u, Y_u, Z_u) d<M>_u - sum Z dM - sum dM_perp with <M, M_perp> = 0.
 * xi is node-indexed with only leaf entries read. gamma dominates g in z.
 */
struct BSDESpec {
    int n = 1;
    std::vector<Eigen::VectorXd> xi;
    TreeProcess<Eigen::VectorXd> j;
    std::function<Eigen::VectorXd(NodeId, const Eigen::VectorXd&)> f;
    std::function<Eigen::VectorXd(NodeId, const Eigen::VectorXd&, const Eigen::VectorXd&)> g;
    TreeProcess<double> alpha;
    TreeProcess<double> beta;
    TreeProcess<double> gamma;
    const TreeMartingale* n1 = nullptr;
    const TreeMartingale* n2 = nullptr;
    const TreeMartingale* m = nullptr;
    double p = 2.0;
};

// terminal-only variant: f = 0, J = 0, g depends on z alone; solved as a
// fixed point in the BMO norm of z.M
struct BmoBsdeSpec {
    int n = 1;
    std::vector<Eigen::VectorXd> xi;
    std::function<Eigen::VectorXd(NodeId, const Eigen::VectorXd&)> g;
    TreeProcess<double> gamma;
    const TreeMartingale* m = nullptr;
};

/**
 * Contraction predictions. rho1 = 2 p eps1 |alpha.N1|_bmo + sqrt(2) eps2 C_p
 * governs the forward map; rho2 = Cbar_p max{sqrt(2) p eps3,
 * 2 p |alpha.N1|_bmo eps1 + 2 p eps2^2} with Cbar_p = q (1 + C_p) + C_p
 * governs the backward one. Feasibility is advisory: the solvers run either
 * way and report measured ratios.
 */
struct ContractionBudget {
    double eps1 = 0.0;
    double eps2 = 0.0;
    double eps3 = 0.0;
    double c_p = 0.0;
    double c_bar_p = 0.0;
    double alpha_n1_bmo = 0.0;
    double p = 2.0;
    double rho1 = 0.0;
    double rho2 = 0.0;
    bool feasible = false;
};

ContractionBudget budget_se(const SESpec& spec, double eps1, double eps2, double c_p);
ContractionBudget budget_bsde(const BSDESpec& spec, double eps1, double eps2, double eps3,
                              double c_p);

struct SolveReport {
    // successive-iterate distances and their ratios, one row per slice
    std::vector<std::vector<double>> distances;
    std::vector<std::vector<double>> ratios;
    double worst_ratio = 0.0;
    double residual = 0.0;
    double apriori = 0.0;   // solution norm over data norm, 0 when data is 0
    SliceCertificate slices;
    bool converged = true;
    std::string divergence;
};

enum class InitialGuess { Zero, Forcing };

std::pair<TreeProcess<Eigen::VectorXd>, SolveReport> solve_se(
    const SESpec& spec, const ContractionBudget& budget, double tol = 1e-12,
    int max_iter = 60, InitialGuess guess = InitialGuess::Zero);

struct BsdeSolution {
    TreeProcess<Eigen::VectorXd> y;
    TreeProcess<Eigen::VectorXd> z;          // predictable, read at parents
    std::vector<TreeMartingale> m_perp;      // one orthogonal part per component
};

std::pair<BsdeSolution, SolveReport> solve_bsde(const BSDESpec& spec,
                                                const ContractionBudget& budget,
                                                double tol = 1e-12, int max_iter = 60,
                                                InitialGuess guess = InitialGuess::Zero);

std::pair<BsdeSolution, SolveReport> solve_bsde_bmo(const BmoBsdeSpec& spec, double eps,
                                                    double tol = 1e-12, int max_iter = 60);

// worst node-wise defect of the defining equation for the returned solution
double se_residual(const SESpec& spec, const TreeProcess<Eigen::VectorXd>& x);
double bsde_residual(const BSDESpec& spec, const BsdeSolution& sol);
// worst |E[dM_perp dM | u]| over nodes and components
double bsde_orthogonality(const BSDESpec& spec, const BsdeSolution& sol);

// random-pair spot check of the Lipschitz envelopes; worst_excess is the
// largest observed |f(x1)-f(x2)| - alpha |x1-x2| (negative when the
// envelopes hold with slack)
struct EnvelopeAudit {
    bool ok = true;
    double worst_excess = 0.0;
};
EnvelopeAudit envelope_audit(const SESpec& spec, std::uint64_t seed, int trials);
EnvelopeAudit envelope_audit(const BSDESpec& spec, std::uint64_t seed, int trials);

/**
 * Bounded-data diagnostics: sup-norm of Y, BMO norm of the martingale part
 * Z.M + M_perp (worst component), and its conditional exponential moments
 * against the closed-form bound 1/(1 - lambda bmo^2), which applies while
 * lambda bmo^2 < 1. The headline row evaluates lambda = 8 eps as in the
 * bounded-data argument.
 */
struct BoundedDataDiagnostics {
    double y_rinf = 0.0;
    double mart_bmo = 0.0;
    double eps = 0.0;
    double headline_bound = 0.0;    // 1/(1 - 8 eps bmo^2) when it applies
    double headline_moment = 0.0;   // bracket moment at lambda = 8 eps
    bool headline_applies = false;
    struct LambdaRow {
        double lambda = 0.0;
        double abs_moment = 0.0;      // sup_v E[exp(lambda |N_T - N_v|) | v]
        double bracket_moment = 0.0;  // sup_v E[exp(lambda (<N>_T - <N>_v)) | v]
        double bound = 0.0;           // 1/(1 - lambda bmo^2) when applicable
        bool applies = false;
    };
    std::vector<LambdaRow> rows;
};

BoundedDataDiagnostics bounded_data_diagnostics(const BSDESpec& spec, const BsdeSolution& sol,
                                                double eps,
                                                const std::vector<double>& lambdas);

}  // namespace bmo
