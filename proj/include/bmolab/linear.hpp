#pragma once

#include <Eigen/Dense>
#include <memory>
#include <vector>

#include "bmolab/tree.hpp"

namespace bmo {

/**
 * Coefficients of the matrix equation dS = [A d<N1,N2> + B d<M> + D dM] S.
 * Coefficient processes may be left empty (identically zero); n1 and n2 are
 * only needed when A is present.
 */
struct LinearDriver {
    int n = 1;
    TreeProcess<Eigen::MatrixXd> a;
    TreeProcess<Eigen::MatrixXd> b;
    TreeProcess<Eigen::MatrixXd> d;
    const TreeMartingale* n1 = nullptr;
    const TreeMartingale* n2 = nullptr;
    const TreeMartingale* m = nullptr;
};

/**
 * Fundamental solution: S(root) = I and S(child) = F S(parent) with the
 * one-step factor F = I + A d<N1,N2> + B d<M> + D dM read at the parent.
 * The inverse is the direct per-node matrix inverse of the accumulated
 * product; the inverse-equation recursion only matches it to second order
 * in the step size and is not used.
 */
struct FundamentalSolution {
    LinearDriver driver;                  // owns copies of the coefficients
    TreeProcess<Eigen::MatrixXd> s;
    TreeProcess<Eigen::MatrixXd> s_inv;
};

// throws when a one-step factor or an accumulated product is singular,
// naming the node
FundamentalSolution fundamental(const LinearDriver& drv);

// measured reverse-Holder quantity sup_v E[max_{t >= v} |S(v)^{-1} S(t)|^p | v]
// in the operator 2-norm, by exact dynamic programming
struct RpReport {
    double p = 0.0;
    double value = 0.0;   // the measured K_p^p
    NodeId argmax = 0;
};
RpReport check_fundamental_rp(const FundamentalSolution& fs, double p);

// reverse-Holder constants over a grid of exponents; on a finite tree every
// entry is finite and value^{1/p} is nondecreasing in p
std::vector<RpReport> continuation_scan(const FundamentalSolution& fs,
                                        const std::vector<double>& p_grid);

/**
 * Explicit solution of the linear backward equation
 * Y_u = E[Y | u] + A^T(u) Z(u) d<M>_u + f(u) dt, Y_T = xi, via the
 * S^T-deflated conditional expectation; exact on the tree. The dt integral
 * uses the tree's deterministic step dt(), so a forcing f needs dt > 0 to
 * contribute. Z reads the martingale increments of Y against dM and the
 * remainder is orthogonal by construction.
 */
struct LinearBsdeSolution {
    TreeProcess<Eigen::VectorXd> y;
    TreeProcess<Eigen::VectorXd> z;
    std::vector<TreeMartingale> m_perp;
    double residual = 0.0;   // worst edge-wise defect of the defining equation
};
LinearBsdeSolution solve_linear_bsde_explicit(const TreeProcess<Eigen::MatrixXd>& a,
                                              const TreeMartingale& m,
                                              const std::vector<Eigen::VectorXd>& xi,
                                              const TreeProcess<Eigen::VectorXd>& f);

/**
 * Measure change by the stochastic exponential of a.M: tilted one-step
 * probabilities q = p (1 + a dM), the density as a P-martingale, and the
 * requested processes with their <a.M, .> compensators removed, rebuilt as
 * martingales on the tilted tree.
 */
struct GirsanovRecord {
    TreeMartingale density;
    std::shared_ptr<const Tree> q_tree;
    TreeMartingale m_q;
    std::vector<TreeMartingale> targets_q;
    double audit = 0.0;   // worst tilted-mean defect over nodes and targets
};
GirsanovRecord girsanov(const TreeProcess<double>& a, const TreeMartingale& m,
                        const std::vector<const TreeMartingale*>& targets = {});

// X with dX = [A d<N1,N2> + B d<M> + D dM] X + dV and X(root) = 0, by the
// exact product formula X(v) = sum over path edges of S(v) S(r)^{-1} dV_r
// with r the right endpoint of each edge; V may be matrix-valued
TreeProcess<Eigen::MatrixXd> solve_linear_sde(const FundamentalSolution& fs,
                                              const TreeProcess<Eigen::MatrixXd>& v);

// worst edge-wise defect of the recursion X(child) = F X(parent) + dV
double linear_sde_residual(const FundamentalSolution& fs,
                           const TreeProcess<Eigen::MatrixXd>& v,
                           const TreeProcess<Eigen::MatrixXd>& x);

/**
 * Reverse-Holder probe: integrate dV = chi_B 1_{[sigma,T]} D dM through the
 * linear equation and compare X against the closed form
 * chi_B (S(t) S(sigma)^{-1} - I), which an exact solver must reproduce.
 * b_nodes lists the frontier atoms of sigma making up the event B.
 */
struct RhiProbe {
    double identity_gap = 0.0;   // worst node-wise defect of the closed form
    double lhs = 0.0;            // || |X_T| ||_{L^p}, operator norm inside
    double rhs = 0.0;            // H^p norm of V from its Frobenius bracket
    double ratio = 0.0;
};
RhiProbe rhi_probe(const FundamentalSolution& fs, const StoppingTime& sigma,
                   const std::vector<NodeId>& b_nodes, double p);

}  // namespace bmo
