#ifndef BMOLAB_NORMS_HPP
#define BMOLAB_NORMS_HPP

#include <utility>
#include <vector>

#include <Eigen/Core>

#include "bmolab/tree.hpp"

namespace bmo {

// remaining conditional bracket g(v) = E[<M>_T | v] - <M>_v; its maximum over
// nodes, square-rooted, is the BMO norm (every node is the atom of some
// stopping time, so the node sup realizes the sup over stopping times)
TreeProcess<double> remaining_bracket(const TreeMartingale& m);
double bmo_norm(const TreeMartingale& m);

// ||X||_{R^p} = || max_t |X_t| ||_{L^p}, exact over paths
double norm_rp(const TreeProcess<double>& x, double p);
double norm_rp(const TreeProcess<Eigen::VectorXd>& x, double p);
// sup over all nodes of |X|
double norm_rinf(const TreeProcess<double>& x);
double norm_rinf(const TreeProcess<Eigen::VectorXd>& x);

// ||M||_{H^p} = || <M>_T^{1/2} ||_{L^p}
double norm_hp(const TreeMartingale& m, double p);

// L^p norm of a terminal variable (leaf entries of x)
double lp_terminal(const TreeProcess<double>& x, double p);

struct ReverseHolder {
    double constant;  // sup over nodes of E[(L_T/L_v)^p | v]
    NodeId argmax;
};

// L must be strictly positive at every node
ReverseHolder reverse_holder_constant(const TreeProcess<double>& L, double p);

// sup over nodes of E[exp(lambda * (<M>_T - <M>_v)) | v]
double bracket_exp_moment(const TreeMartingale& m, double lambda);
// sup over nodes of E[exp(lambda * |M_T - M_v|) | v]
double abs_exp_moment(const TreeMartingale& m, double lambda);
// 1/(1 - 8 eps ||M||^2), requires 8 eps ||M||^2 < 1
double john_nirenberg_bound(double eps, double bmo);

/**
 * Slicing of one horizon by stopping times 0 = T_0 <= ... <= T_k = T such
 * that every martingale in the request has per-slice BMO norm below its
 * epsilon. region[v] = i means the steps out of v belong to slice i (1-based).
 */
struct SliceCertificate {
    std::vector<double> eps;
    int slice_count = 0;
    std::vector<int> region;
    std::vector<StoppingTime> boundaries;          // T_1 .. T_k (T_k = horizon)
    std::vector<std::vector<double>> slice_bmo;    // [martingale][slice]

    // recomputes every per-slice norm and checks it against eps + tol
    bool validate(const std::vector<const TreeMartingale*>& ms, double tol = 1e-12) const;
};

SliceCertificate epsilon_slice(const std::vector<std::pair<const TreeMartingale*, double>>& req);
SliceCertificate epsilon_slice(const TreeMartingale& m, double eps);

// per-slice BMO norms for an assignment of steps to slices
std::vector<double> slice_bmo_norms(const TreeMartingale& m, const std::vector<int>& region,
                                    int slice_count);

// smallest eps any slicing of m can achieve (largest one-step bracket)
double min_feasible_eps(const TreeMartingale& m);

struct BdgBand {
    double c_hat;  // min of ||M||_{R^p} / ||M||_{H^p} over the corpus
    double C_hat;  // max of the same ratio
};

struct DualityProbe {
    double best;      // max over probes of E[<X,Y>_T] / ||Y||_BMO
    double fraction;  // best / ||X||_{H^1}
};

DualityProbe duality_lower_bound(const TreeMartingale& x,
                                 const std::vector<const TreeMartingale*>& probes);

}  // namespace bmo

#endif
