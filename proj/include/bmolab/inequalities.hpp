#pragma once

#include <string>
#include <vector>

#include "bmolab/corpus.hpp"
#include "bmolab/norms.hpp"
#include "bmolab/tree.hpp"

namespace bmo {

/**
 * Outcome of checking one martingale inequality on one input. lhs and rhs
 * are the two sides after all norms are evaluated exactly on the tree;
 * ratio is lhs/rhs (zero when both sides vanish) and pass means
 * lhs <= rhs * (1 + tol).
 */
struct InequalityReport {
    std::string name;
    double lhs = 0.0;
    double rhs = 0.0;
    double ratio = 0.0;
    bool pass = false;
    double tol = 0.0;
    std::string corpus_id;
    std::string backend = "tree";
};

// E[sum |H||K| |dX dY|] <= ||(sum H^2 d[X])^{1/2}||_p ||(sum K^2 d[Y])^{1/2}||_q
// with 1/p + 1/q = 1. At p = 2 the bound holds path by path and the report
// carries the worst path's two sides; for other p only the expectation form
// is true, so that is what gets checked. H and K act through their left
// values.
InequalityReport verify_kunita_watanabe(const TreeMartingale& x, const TreeMartingale& y,
                                        const TreeProcess<double>& h,
                                        const TreeProcess<double>& k, double p,
                                        double tol = 1e-10);

// E[sum_t |E[dX dY | F_t]|] <= sqrt(2) ||X||_{H^1} ||Y||_bmo
InequalityReport verify_fefferman(const TreeMartingale& x, const TreeMartingale& y,
                                  double tol = 1e-10);

// ||X . M||_{H^p} <= sqrt(2) ||X||_{R^p} ||M||_bmo for p > 1, constant 1 at
// p = 1. X is adapted and integrates through its left value.
InequalityReport verify_emery(const TreeProcess<double>& x, const TreeMartingale& m, double p,
                              double tol = 1e-10);

// || <X,M>_T ||_{L^p} <= sqrt(2) p ||X||_{H^p} ||M||_bmo for p in [1, inf)
InequalityReport verify_lp_bracket(const TreeMartingale& x, const TreeMartingale& m, double p,
                                   double tol = 1e-10);

// the martingale t -> E[<X,M>_T | F_t] has bmo norm at most
// sqrt(2) ||X||_bmo ||M||_bmo
InequalityReport verify_linfty_bracket(const TreeMartingale& x, const TreeMartingale& m,
                                       double tol = 1e-10);

// ||X . M||_bmo <= ||X||_{R^inf} ||M||_bmo
InequalityReport verify_rinf_bmo(const TreeProcess<double>& x, const TreeMartingale& m,
                                 double tol = 1e-10);

// best probe pairing sup_Y E[<X,Y>_T] / ||Y||_bmo against its Fefferman cap
// sqrt(2) ||X||_{H^1}; each probe certifies the lower bound lhs / sqrt(2)
// for the H^1 norm
InequalityReport verify_duality(const TreeMartingale& x,
                                const std::vector<const TreeMartingale*>& probes,
                                double tol = 1e-10);

// min and max of ||M||_{R^p} / ||M||_{H^p} over the corpus, skipping members
// with vanishing H^p norm; errors when nothing usable remains
BdgBand estimate_bdg_constants(double p, const std::vector<CorpusItem>& corpus);

// names accepted by run_inequality_corpus, in a stable order
std::vector<std::string> inequality_names();

// run one named verifier (or "all") across a corpus. Auxiliary inputs (a
// second martingale, integrands, duality probes) derive deterministically
// from each member's index, so a rerun reproduces the same reports.
std::vector<InequalityReport> run_inequality_corpus(const std::string& name,
                                                    const std::vector<CorpusItem>& corpus,
                                                    double p, double tol = 1e-10);

}  // namespace bmo
