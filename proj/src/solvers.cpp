#include "bmolab/solvers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "bmolab/rng.hpp"

namespace bmo {

namespace {

using Eigen::VectorXd;

using Fn1 = std::function<VectorXd(NodeId, const VectorXd&)>;
using Fn2 = std::function<VectorXd(NodeId, const VectorXd&, const VectorXd&)>;

VectorXd eval1(const Fn1& f, NodeId u, const VectorXd& x, int n, const char* what) {
    VectorXd r = f(u, x);
    if (r.size() != n) throw Error(std::string(what) + ": coefficient returned wrong dimension");
    return r;
}

VectorXd eval2(const Fn2& g, NodeId u, const VectorXd& y, const VectorXd& z, int n,
               const char* what) {
    VectorXd r = g(u, y, z);
    if (r.size() != n) throw Error(std::string(what) + ": coefficient returned wrong dimension");
    return r;
}

// missing scalar envelopes and weights default to identically zero
TreeProcess<double> scalar_or_zero(const TreeProcess<double>& src, const Tree& t,
                                   const char* what) {
    if (!src.tree) return TreeProcess<double>(t, Kind::Predictable);
    if (src.tree != &t) throw Error(std::string(what) + ": attached to a different tree");
    return src;
}

TreeProcess<VectorXd> vec_or_zero(const TreeProcess<VectorXd>& src, const Tree& t, int n,
                                  const char* what) {
    TreeProcess<VectorXd> out(t);
    if (src.tree && src.tree != &t) throw Error(std::string(what) + ": attached to a different tree");
    for (NodeId v = 0; v < t.node_count(); ++v) {
        if (!src.tree || src.values[static_cast<std::size_t>(v)].size() == 0)
            out[v] = VectorXd::Zero(n);
        else if (src[v].size() == n)
            out[v] = src[v];
        else
            throw Error(std::string(what) + ": wrong dimension at node " + std::to_string(v));
    }
    return out;
}

// terminal data indexed by node; only leaf slots are read, empties mean zero
std::vector<VectorXd> terminal_or_zero(const std::vector<VectorXd>& xi, const Tree& t, int n) {
    if (!xi.empty() && xi.size() != static_cast<std::size_t>(t.node_count()))
        throw Error("terminal value must be empty or node-indexed");
    std::vector<VectorXd> out(static_cast<std::size_t>(t.node_count()));
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        if (xi.empty() || xi[i].size() == 0)
            out[i] = VectorXd::Zero(n);
        else if (xi[i].size() == n)
            out[i] = xi[i];
        else
            throw Error("terminal value has wrong dimension at node " + std::to_string(v));
    }
    return out;
}

double bmo_of_driver(const TreeProcess<double>& h, const TreeMartingale* drv) {
    if (!drv || !h.tree) return 0.0;
    bool all_zero = true;
    for (double v : h.values)
        if (v != 0.0) { all_zero = false; break; }
    if (all_zero) return 0.0;
    return bmo_norm(stochastic_integral(h, *drv));
}

// H^p norm of the vector integral z.M from the predictable bracket
// sum_u |z(u)|^2 E[(dM)^2 | u] accumulated along each path
double hp_vec(const TreeProcess<VectorXd>& z, const TreeMartingale& m, double p) {
    const Tree& t = *z.tree;
    std::vector<double> acc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = 1; v < t.node_count(); ++v) {
        const NodeId u = t.parent(v);
        acc[static_cast<std::size_t>(v)] =
            acc[static_cast<std::size_t>(u)] + z[u].squaredNorm() * m.pred_step(u);
    }
    double e = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        e += t.node_prob(v) * std::pow(acc[static_cast<std::size_t>(v)], p / 2.0);
    return std::pow(e, 1.0 / p);
}

// BMO norm of z.M: sup_v E[remaining bracket | v]^{1/2}, the node's own step
// included
double bmo_vec(const TreeProcess<VectorXd>& z, const TreeMartingale& m) {
    const Tree& t = *z.tree;
    std::vector<double> rem(static_cast<std::size_t>(t.node_count()), 0.0);
    double worst = 0.0;
    for (NodeId v = t.node_count() - 1; v >= 0; --v) {
        if (!t.is_leaf(v)) {
            double r = z[v].squaredNorm() * m.pred_step(v);
            for (int c = 0; c < t.branching(); ++c) {
                const NodeId w = t.child(v, c);
                r += t.edge_prob(w) * rem[static_cast<std::size_t>(w)];
            }
            rem[static_cast<std::size_t>(v)] = r;
            worst = std::max(worst, r);
        }
    }
    return std::sqrt(worst);
}

void append_ratios(const std::vector<double>& dist, std::vector<double>& out) {
    for (std::size_t k = 1; k < dist.size(); ++k)
        if (dist[k - 1] > 1e-300) out.push_back(dist[k] / dist[k - 1]);
}

void finish_report(SolveReport& rep) {
    rep.worst_ratio = 0.0;
    for (const auto& row : rep.ratios)
        for (double r : row) rep.worst_ratio = std::max(rep.worst_ratio, r);
}

// shared backward machinery: solve Y_u + J_u = E[Y + J | u] + f(u, y) d<N1,N2>_u
// + g(u, y, z) d<M>_u slice by slice, Picard-iterating on the frozen pair
// (y, z) and reading z, M_perp off the swept martingale increments
struct BackwardProblem {
    const Tree* t = nullptr;
    int n = 1;
    const std::vector<VectorXd>* xi = nullptr;
    const TreeProcess<VectorXd>* j = nullptr;
    Fn1 f;                                   // may be empty
    Fn2 g;                                   // may be empty
    const TreeProcess<double>* dnn = nullptr;  // required when f is set
    const TreeMartingale* m = nullptr;
    double p = 2.0;
    bool bmo_metric = false;  // distance = |dz . M|_bmo instead of R^p + H^p
};

std::pair<BsdeSolution, SolveReport> run_backward(const BackwardProblem& pb,
                                                  const SliceCertificate& cert, double tol,
                                                  int max_iter, InitialGuess guess) {
    if (max_iter < 1) throw Error("solver: max_iter must be positive");
    const Tree& t = *pb.t;
    const int n = pb.n;
    const TreeMartingale& m = *pb.m;

    TreeProcess<VectorXd> y(t);
    TreeProcess<VectorXd> z(t, Kind::Predictable);
    TreeProcess<VectorXd> pinc(t);  // orthogonal increments, indexed by edge
    for (NodeId v = 0; v < t.node_count(); ++v) {
        y[v] = t.is_leaf(v) ? (*pb.xi)[static_cast<std::size_t>(v)] : VectorXd::Zero(n);
        z[v] = VectorXd::Zero(n);
        pinc[v] = VectorXd::Zero(n);
    }

    SolveReport rep;
    rep.slices = cert;

    std::vector<VectorXd> y_it(static_cast<std::size_t>(t.node_count()));
    std::vector<VectorXd> z_it(static_cast<std::size_t>(t.node_count()));

    for (int s = cert.slice_count; s >= 1; --s) {
        std::vector<NodeId> nodes;  // internal nodes of the slice, descending
        for (NodeId u = t.internal_count() - 1; u >= 0; --u)
            if (cert.region[static_cast<std::size_t>(u)] == s) nodes.push_back(u);

        std::vector<double> dist;
        if (!nodes.empty()) {
            for (NodeId u : nodes) {
                y_it[static_cast<std::size_t>(u)] =
                    guess == InitialGuess::Forcing ? (*pb.j)[u] : VectorXd::Zero(n);
                z_it[static_cast<std::size_t>(u)] = VectorXd::Zero(n);
            }

            bool settled = false;
            for (int it = 0; it < max_iter && !settled; ++it) {
                // linear sweep with the coefficient arguments frozen at the
                // current iterate; children carry either terminal data, a
                // later slice's final value, or this sweep's own result
                for (NodeId u : nodes) {
                    const std::size_t ui = static_cast<std::size_t>(u);
                    VectorXd ew = VectorXd::Zero(n);
                    for (int c = 0; c < t.branching(); ++c) {
                        const NodeId w = t.child(u, c);
                        ew += t.edge_prob(w) * (y[w] + (*pb.j)[w]);
                    }
                    VectorXd wu = ew;
                    if (pb.f) wu += eval1(pb.f, u, y_it[ui], n, "f") * (*pb.dnn)[u];
                    if (pb.g) wu += eval2(pb.g, u, y_it[ui], z_it[ui], n, "g") * m.pred_step(u);
                    y[u] = wu - (*pb.j)[u];

                    const double dm2 = m.pred_step(u);
                    VectorXd znew = VectorXd::Zero(n);
                    if (dm2 > 0.0) {
                        for (int c = 0; c < t.branching(); ++c) {
                            const NodeId w = t.child(u, c);
                            znew += t.edge_prob(w) * m.increment(w) * (y[w] + (*pb.j)[w] - ew);
                        }
                        znew /= dm2;
                    }
                    z[u] = znew;
                    for (int c = 0; c < t.branching(); ++c) {
                        const NodeId w = t.child(u, c);
                        pinc[w] = (y[w] + (*pb.j)[w] - ew) - znew * m.increment(w);
                    }
                }

                TreeProcess<VectorXd> dy(t);
                TreeProcess<VectorXd> dz(t, Kind::Predictable);
                for (NodeId v = 0; v < t.node_count(); ++v) {
                    dy[v] = VectorXd::Zero(n);
                    dz[v] = VectorXd::Zero(n);
                }
                for (NodeId u : nodes) {
                    const std::size_t ui = static_cast<std::size_t>(u);
                    dy[u] = y[u] - y_it[ui];
                    dz[u] = z[u] - z_it[ui];
                    y_it[ui] = y[u];
                    z_it[ui] = z[u];
                }
                const double d = pb.bmo_metric
                                     ? bmo_vec(dz, m)
                                     : norm_rp(dy, pb.p) + hp_vec(dz, m, pb.p);
                dist.push_back(d);
                settled = d <= tol;
            }
            if (!settled) {
                rep.converged = false;
                std::ostringstream os;
                os << "slice " << s << " still moved by " << dist.back() << " after "
                   << max_iter << " iterations";
                if (!rep.divergence.empty()) rep.divergence += "; ";
                rep.divergence += os.str();
            }
        }
        rep.ratios.emplace_back();
        append_ratios(dist, rep.ratios.back());
        rep.distances.push_back(std::move(dist));
    }
    std::reverse(rep.distances.begin(), rep.distances.end());
    std::reverse(rep.ratios.begin(), rep.ratios.end());
    finish_report(rep);

    BsdeSolution sol;
    sol.y = std::move(y);
    sol.z = std::move(z);
    for (int i = 0; i < n; ++i) {
        std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
        for (NodeId v = 1; v < t.node_count(); ++v)
            inc[static_cast<std::size_t>(v)] = pinc[v](i);
        sol.m_perp.emplace_back(t, inc, 0.0, 1e-9);
    }
    return {std::move(sol), std::move(rep)};
}

double lp_terminal_vec(const std::vector<VectorXd>& xi, const Tree& t, double p) {
    double e = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        e += t.node_prob(v) * std::pow(xi[static_cast<std::size_t>(v)].norm(), p);
    return std::pow(e, 1.0 / p);
}

}  // namespace

ContractionBudget budget_se(const SESpec& spec, double eps1, double eps2, double c_p) {
    if (!spec.m) throw Error("budget_se: spec has no driving martingale");
    if (!(spec.p >= 1.0)) throw Error("budget_se: p must be at least 1");
    ContractionBudget b;
    b.eps1 = eps1;
    b.eps2 = eps2;
    b.c_p = c_p;
    b.p = spec.p;
    b.alpha_n1_bmo = spec.n1 ? bmo_of_driver(spec.alpha, spec.n1) : 0.0;
    b.rho1 = 2.0 * spec.p * eps1 * b.alpha_n1_bmo + std::sqrt(2.0) * eps2 * c_p;
    b.feasible = b.rho1 < 1.0;
    return b;
}

ContractionBudget budget_bsde(const BSDESpec& spec, double eps1, double eps2, double eps3,
                              double c_p) {
    if (!spec.m) throw Error("budget_bsde: spec has no driving martingale");
    if (!(spec.p > 1.0)) throw Error("budget_bsde: p must exceed 1");
    ContractionBudget b;
    b.eps1 = eps1;
    b.eps2 = eps2;
    b.eps3 = eps3;
    b.c_p = c_p;
    b.p = spec.p;
    const double q = spec.p / (spec.p - 1.0);
    b.c_bar_p = q * (1.0 + c_p) + c_p;
    b.alpha_n1_bmo = spec.n1 ? bmo_of_driver(spec.alpha, spec.n1) : 0.0;
    b.rho2 = b.c_bar_p * std::max(std::sqrt(2.0) * spec.p * eps3,
                                  2.0 * spec.p * b.alpha_n1_bmo * eps1 +
                                      2.0 * spec.p * eps2 * eps2);
    b.feasible = b.rho2 < 1.0;
    return b;
}

std::pair<TreeProcess<Eigen::VectorXd>, SolveReport> solve_se(const SESpec& spec,
                                                              const ContractionBudget& budget,
                                                              double tol, int max_iter,
                                                              InitialGuess guess) {
    if (!spec.m) throw Error("solve_se: spec has no driving martingale");
    if (spec.f && (!spec.n1 || !spec.n2))
        throw Error("solve_se: f needs both covariation drivers");
    if (spec.n < 1) throw Error("solve_se: dimension must be positive");
    if (max_iter < 1) throw Error("solve_se: max_iter must be positive");
    const Tree& t = spec.m->tree();
    if ((spec.n1 && &spec.n1->tree() != &t) || (spec.n2 && &spec.n2->tree() != &t))
        throw Error("solve_se: drivers live on different trees");

    const TreeProcess<VectorXd> j = vec_or_zero(spec.j, t, spec.n, "forcing");
    const TreeProcess<double> beta = scalar_or_zero(spec.beta, t, "beta");

    TreeProcess<double> dnn = spec.f ? covariation(*spec.n1, *spec.n2).step
                              : TreeProcess<double>(t, Kind::Predictable);

    const TreeMartingale beta_m = stochastic_integral(beta, *spec.m);
    std::vector<std::pair<const TreeMartingale*, double>> req;
    if (spec.n2) req.push_back({spec.n2, budget.eps1});
    req.push_back({&beta_m, budget.eps2});
    const SliceCertificate cert = epsilon_slice(req);

    TreeProcess<VectorXd> x(t);
    for (NodeId v = 0; v < t.node_count(); ++v) x[v] = VectorXd::Zero(spec.n);
    x[0] = j[0];

    SolveReport rep;
    rep.slices = cert;

    std::vector<VectorXd> xn(static_cast<std::size_t>(t.node_count()));
    for (int s = 1; s <= cert.slice_count; ++s) {
        std::vector<NodeId> nodes;  // slice's internal nodes, ascending
        for (NodeId u = 0; u < t.internal_count(); ++u)
            if (cert.region[static_cast<std::size_t>(u)] == s) nodes.push_back(u);

        std::vector<double> dist;
        if (!nodes.empty()) {
            // the iterate lives on the children of slice nodes; values at the
            // slice's entry nodes are already final
            for (NodeId u : nodes)
                for (int c = 0; c < t.branching(); ++c) {
                    const NodeId w = t.child(u, c);
                    x[w] = guess == InitialGuess::Forcing ? j[w] : VectorXd::Zero(spec.n);
                }

            bool settled = false;
            for (int it = 0; it < max_iter && !settled; ++it) {
                for (NodeId v = 0; v < t.node_count(); ++v) xn[static_cast<std::size_t>(v)] = x[v];
                for (NodeId u : nodes) {
                    const VectorXd fu = spec.f ? eval1(spec.f, u, x[u], spec.n, "f")
                                               : VectorXd::Zero(spec.n);
                    const VectorXd gu = spec.g ? eval1(spec.g, u, x[u], spec.n, "g")
                                               : VectorXd::Zero(spec.n);
                    for (int c = 0; c < t.branching(); ++c) {
                        const NodeId w = t.child(u, c);
                        xn[static_cast<std::size_t>(w)] = xn[static_cast<std::size_t>(u)] +
                                                          (j[w] - j[u]) + fu * dnn[u] +
                                                          gu * spec.m->increment(w);
                    }
                }
                TreeProcess<VectorXd> diff(t);
                for (NodeId v = 0; v < t.node_count(); ++v) diff[v] = VectorXd::Zero(spec.n);
                for (NodeId u : nodes)
                    for (int c = 0; c < t.branching(); ++c) {
                        const NodeId w = t.child(u, c);
                        diff[w] = xn[static_cast<std::size_t>(w)] - x[w];
                        x[w] = xn[static_cast<std::size_t>(w)];
                    }
                const double d = norm_rp(diff, spec.p);
                dist.push_back(d);
                settled = d <= tol;
            }
            if (!settled) {
                rep.converged = false;
                std::ostringstream os;
                os << "slice " << s << " still moved by " << dist.back() << " after "
                   << max_iter << " iterations";
                if (!rep.divergence.empty()) rep.divergence += "; ";
                rep.divergence += os.str();
            }
        }
        rep.ratios.emplace_back();
        append_ratios(dist, rep.ratios.back());
        rep.distances.push_back(std::move(dist));
    }
    finish_report(rep);

    SESpec full = spec;
    full.j = j;
    rep.residual = se_residual(full, x);
    const double data = norm_rp(j, spec.p);
    rep.apriori = data > 0.0 ? norm_rp(x, spec.p) / data : 0.0;
    return {std::move(x), std::move(rep)};
}

std::pair<BsdeSolution, SolveReport> solve_bsde(const BSDESpec& spec,
                                                const ContractionBudget& budget, double tol,
                                                int max_iter, InitialGuess guess) {
    if (!spec.m) throw Error("solve_bsde: spec has no driving martingale");
    if (spec.f && (!spec.n1 || !spec.n2))
        throw Error("solve_bsde: f needs both covariation drivers");
    if (spec.n < 1) throw Error("solve_bsde: dimension must be positive");
    const Tree& t = spec.m->tree();
    if ((spec.n1 && &spec.n1->tree() != &t) || (spec.n2 && &spec.n2->tree() != &t))
        throw Error("solve_bsde: drivers live on different trees");

    const TreeProcess<VectorXd> j = vec_or_zero(spec.j, t, spec.n, "forcing");
    const std::vector<VectorXd> xi = terminal_or_zero(spec.xi, t, spec.n);
    const TreeProcess<double> beta = scalar_or_zero(spec.beta, t, "beta");
    const TreeProcess<double> gamma = scalar_or_zero(spec.gamma, t, "gamma");

    TreeProcess<double> sqrt_beta(t, Kind::Predictable);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        if (beta[v] < 0.0) throw Error("solve_bsde: beta must be nonnegative");
        sqrt_beta[v] = std::sqrt(beta[v]);
    }

    TreeProcess<double> dnn = spec.f ? covariation(*spec.n1, *spec.n2).step
                              : TreeProcess<double>(t, Kind::Predictable);

    const TreeMartingale sqrt_beta_m = stochastic_integral(sqrt_beta, *spec.m);
    const TreeMartingale gamma_m = stochastic_integral(gamma, *spec.m);
    std::vector<std::pair<const TreeMartingale*, double>> req;
    if (spec.n2) req.push_back({spec.n2, budget.eps1});
    req.push_back({&sqrt_beta_m, budget.eps2});
    req.push_back({&gamma_m, budget.eps3});
    const SliceCertificate cert = epsilon_slice(req);

    BackwardProblem pb;
    pb.t = &t;
    pb.n = spec.n;
    pb.xi = &xi;
    pb.j = &j;
    pb.f = spec.f;
    pb.g = spec.g;
    pb.dnn = &dnn;
    pb.m = spec.m;
    pb.p = spec.p;

    auto [sol, rep] = run_backward(pb, cert, tol, max_iter, guess);

    BSDESpec full = spec;
    full.j = j;
    full.xi = xi;
    rep.residual = bsde_residual(full, sol);
    const double data = lp_terminal_vec(xi, t, spec.p) + norm_rp(j, spec.p);
    rep.apriori = data > 0.0
                      ? (norm_rp(sol.y, spec.p) + hp_vec(sol.z, *spec.m, spec.p)) / data
                      : 0.0;
    return {std::move(sol), std::move(rep)};
}

std::pair<BsdeSolution, SolveReport> solve_bsde_bmo(const BmoBsdeSpec& spec, double eps,
                                                    double tol, int max_iter) {
    if (!spec.m) throw Error("solve_bsde_bmo: spec has no driving martingale");
    if (spec.n < 1) throw Error("solve_bsde_bmo: dimension must be positive");
    const Tree& t = spec.m->tree();

    const std::vector<VectorXd> xi = terminal_or_zero(spec.xi, t, spec.n);
    const TreeProcess<double> gamma = scalar_or_zero(spec.gamma, t, "gamma");
    const TreeProcess<VectorXd> j = vec_or_zero(TreeProcess<VectorXd>(), t, spec.n, "forcing");

    const TreeMartingale gamma_m = stochastic_integral(gamma, *spec.m);
    const SliceCertificate cert = epsilon_slice(gamma_m, eps);

    BackwardProblem pb;
    pb.t = &t;
    pb.n = spec.n;
    pb.xi = &xi;
    pb.j = &j;
    if (spec.g) {
        const Fn1 g1 = spec.g;
        const int n = spec.n;
        pb.g = [g1, n](NodeId u, const VectorXd&, const VectorXd& z) {
            return eval1(g1, u, z, n, "g");
        };
    }
    pb.m = spec.m;
    pb.bmo_metric = true;

    auto [sol, rep] = run_backward(pb, cert, tol, max_iter, InitialGuess::Zero);

    BSDESpec eq;
    eq.n = spec.n;
    eq.xi = xi;
    eq.gamma = gamma;
    eq.m = spec.m;
    if (spec.g) {
        const Fn1 g1 = spec.g;
        const int n = spec.n;
        eq.g = [g1, n](NodeId u, const VectorXd&, const VectorXd& z) {
            return eval1(g1, u, z, n, "g");
        };
    }
    rep.residual = bsde_residual(eq, sol);
    return {std::move(sol), std::move(rep)};
}

double se_residual(const SESpec& spec, const TreeProcess<Eigen::VectorXd>& x) {
    if (!spec.m) throw Error("se_residual: spec has no driving martingale");
    const Tree& t = spec.m->tree();
    const TreeProcess<VectorXd> j = vec_or_zero(spec.j, t, spec.n, "forcing");
    TreeProcess<double> dnn = spec.f ? covariation(*spec.n1, *spec.n2).step
                              : TreeProcess<double>(t, Kind::Predictable);

    double worst = (x[0] - j[0]).norm();
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        const VectorXd fu =
            spec.f ? eval1(spec.f, u, x[u], spec.n, "f") : VectorXd::Zero(spec.n);
        const VectorXd gu =
            spec.g ? eval1(spec.g, u, x[u], spec.n, "g") : VectorXd::Zero(spec.n);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            const VectorXd rhs =
                x[u] + (j[w] - j[u]) + fu * dnn[u] + gu * spec.m->increment(w);
            worst = std::max(worst, (x[w] - rhs).norm());
        }
    }
    return worst;
}

double bsde_residual(const BSDESpec& spec, const BsdeSolution& sol) {
    if (!spec.m) throw Error("bsde_residual: spec has no driving martingale");
    const Tree& t = spec.m->tree();
    const TreeProcess<VectorXd> j = vec_or_zero(spec.j, t, spec.n, "forcing");
    const std::vector<VectorXd> xi = terminal_or_zero(spec.xi, t, spec.n);
    TreeProcess<double> dnn = spec.f ? covariation(*spec.n1, *spec.n2).step
                              : TreeProcess<double>(t, Kind::Predictable);

    double worst = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        worst = std::max(worst, (sol.y[v] - xi[static_cast<std::size_t>(v)]).norm());

    // edge-wise defect of the full decomposition
    // Y_u = Y_w + dJ + f dnn + g d<M> - Z dM - dM_perp
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        const VectorXd fu =
            spec.f ? eval1(spec.f, u, sol.y[u], spec.n, "f") : VectorXd::Zero(spec.n);
        const VectorXd gu = spec.g ? eval2(spec.g, u, sol.y[u], sol.z[u], spec.n, "g")
                                   : VectorXd::Zero(spec.n);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            VectorXd perp(spec.n);
            for (int i = 0; i < spec.n; ++i) perp(i) = sol.m_perp[static_cast<std::size_t>(i)].increment(w);
            const VectorXd rhs = sol.y[w] + (j[w] - j[u]) + fu * dnn[u] +
                                 gu * spec.m->pred_step(u) - sol.z[u] * spec.m->increment(w) -
                                 perp;
            worst = std::max(worst, (sol.y[u] - rhs).norm());
        }
    }
    return worst;
}

double bsde_orthogonality(const BSDESpec& spec, const BsdeSolution& sol) {
    if (!spec.m) throw Error("bsde_orthogonality: spec has no driving martingale");
    const Tree& t = spec.m->tree();
    double worst = 0.0;
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        for (int i = 0; i < spec.n; ++i) {
            double e = 0.0;
            for (int c = 0; c < t.branching(); ++c) {
                const NodeId w = t.child(u, c);
                e += t.edge_prob(w) * sol.m_perp[static_cast<std::size_t>(i)].increment(w) *
                     spec.m->increment(w);
            }
            worst = std::max(worst, std::abs(e));
        }
    }
    return worst;
}

namespace {

EnvelopeAudit audit_impl(const Tree& t, int n, const Fn1& f, const TreeProcess<double>* alpha,
                         const Fn2& g, const TreeProcess<double>* beta,
                         const TreeProcess<double>* gamma, std::uint64_t seed, int trials) {
    EnvelopeAudit audit;
    if ((!f && !g) || trials <= 0) return audit;
    auto rng = stream_rng(seed, 51);
    std::normal_distribution<double> gauss(0.0, 2.0);
    std::uniform_int_distribution<NodeId> pick(0, t.internal_count() - 1);
    auto draw = [&] {
        VectorXd v(n);
        for (int i = 0; i < n; ++i) v(i) = gauss(rng);
        return v;
    };
    double worst = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < trials; ++k) {
        const NodeId u = pick(rng);
        const VectorXd y1 = draw(), y2 = draw();
        if (f) {
            const double excess = (eval1(f, u, y1, n, "f") - eval1(f, u, y2, n, "f")).norm() -
                                  (*alpha)[u] * (y1 - y2).norm();
            worst = std::max(worst, excess);
        }
        if (g) {
            const VectorXd z1 = draw(), z2 = draw();
            const double excess =
                (eval2(g, u, y1, z1, n, "g") - eval2(g, u, y2, z2, n, "g")).norm() -
                (*beta)[u] * (y1 - y2).norm() - (*gamma)[u] * (z1 - z2).norm();
            worst = std::max(worst, excess);
        }
    }
    audit.worst_excess = worst;
    audit.ok = worst <= 1e-10;
    return audit;
}

}  // namespace

EnvelopeAudit envelope_audit(const SESpec& spec, std::uint64_t seed, int trials) {
    if (!spec.m) throw Error("envelope_audit: spec has no driving martingale");
    const Tree& t = spec.m->tree();
    const TreeProcess<double> alpha = scalar_or_zero(spec.alpha, t, "alpha");
    const TreeProcess<double> beta = scalar_or_zero(spec.beta, t, "beta");
    const TreeProcess<double> zero(t, Kind::Predictable);
    Fn2 g2;
    if (spec.g) {
        const Fn1 g1 = spec.g;
        const int n = spec.n;
        g2 = [g1, n](NodeId u, const VectorXd& y, const VectorXd&) {
            return eval1(g1, u, y, n, "g");
        };
    }
    // the forward g depends on the state alone, so its envelope rides on the
    // y slot and the z slot gets a zero weight
    return audit_impl(t, spec.n, spec.f, &alpha, g2, &beta, &zero, seed, trials);
}

EnvelopeAudit envelope_audit(const BSDESpec& spec, std::uint64_t seed, int trials) {
    if (!spec.m) throw Error("envelope_audit: spec has no driving martingale");
    const Tree& t = spec.m->tree();
    const TreeProcess<double> alpha = scalar_or_zero(spec.alpha, t, "alpha");
    const TreeProcess<double> beta = scalar_or_zero(spec.beta, t, "beta");
    const TreeProcess<double> gamma = scalar_or_zero(spec.gamma, t, "gamma");
    return audit_impl(t, spec.n, spec.f, &alpha, spec.g, &beta, &gamma, seed, trials);
}

BoundedDataDiagnostics bounded_data_diagnostics(const BSDESpec& spec, const BsdeSolution& sol,
                                                double eps,
                                                const std::vector<double>& lambdas) {
    if (!spec.m) throw Error("bounded_data_diagnostics: spec has no driving martingale");
    const Tree& t = spec.m->tree();

    BoundedDataDiagnostics diag;
    diag.eps = eps;
    diag.y_rinf = norm_rinf(sol.y);

    // martingale part Z.M + M_perp, one scalar martingale per component
    std::vector<TreeMartingale> parts;
    for (int i = 0; i < spec.n; ++i) {
        std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
        for (NodeId w = 1; w < t.node_count(); ++w)
            inc[static_cast<std::size_t>(w)] =
                sol.z[t.parent(w)](i) * spec.m->increment(w) +
                sol.m_perp[static_cast<std::size_t>(i)].increment(w);
        parts.emplace_back(t, inc, 0.0, 1e-9);
        diag.mart_bmo = std::max(diag.mart_bmo, bmo_norm(parts.back()));
    }

    const double headline_lambda = 8.0 * eps;
    diag.headline_applies = headline_lambda * diag.mart_bmo * diag.mart_bmo < 1.0;
    if (diag.headline_applies)
        diag.headline_bound = john_nirenberg_bound(eps, diag.mart_bmo);
    diag.headline_moment = 1.0;
    for (const auto& part : parts)
        diag.headline_moment = std::max(diag.headline_moment,
                                        bracket_exp_moment(part, headline_lambda));

    for (double lambda : lambdas) {
        BoundedDataDiagnostics::LambdaRow row;
        row.lambda = lambda;
        row.abs_moment = 1.0;
        row.bracket_moment = 1.0;
        for (const auto& part : parts) {
            row.abs_moment = std::max(row.abs_moment, abs_exp_moment(part, lambda));
            row.bracket_moment = std::max(row.bracket_moment, bracket_exp_moment(part, lambda));
        }
        row.applies = lambda * diag.mart_bmo * diag.mart_bmo < 1.0;
        if (row.applies) row.bound = 1.0 / (1.0 - lambda * diag.mart_bmo * diag.mart_bmo);
        diag.rows.push_back(row);
    }
    return diag;
}

}  // namespace bmo
