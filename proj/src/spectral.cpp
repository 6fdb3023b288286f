#include "bmolab/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <string>

#include "bmolab/corpus.hpp"
#include "bmolab/rng.hpp"

namespace bmo {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Complex = std::complex<double>;

MatrixXd matrix_power(const MatrixXd& a, int n) {
    MatrixXd out = MatrixXd::Identity(a.rows(), a.cols());
    for (int i = 0; i < n; ++i) out = a * out;
    return out;
}

// H^p norm of the martingale with the given edge increments, with the
// gradient of its p-th power when grad is non-null. The bracket accumulates
// the predictable one-step variances along each path.
double hp_power(const OperatorMatrix& opm, const VectorXd& c, double p, VectorXd* grad) {
    const Tree& t = *opm.tree;
    const int d = opm.dimension();
    const std::size_t nodes = static_cast<std::size_t>(t.node_count());

    // increments and per-node bracket steps from the coordinates
    std::vector<double> inc(nodes, 0.0);
    for (int j = 0; j < d; ++j) {
        const NodeId u = opm.basis_node[static_cast<std::size_t>(j)];
        const double cj = c(j);
        if (cj == 0.0) continue;
        for (int ch = 0; ch < t.branching(); ++ch)
            inc[static_cast<std::size_t>(t.child(u, ch))] +=
                cj * opm.basis_inc[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
    }
    std::vector<double> step(static_cast<std::size_t>(t.internal_count()), 0.0);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        double s = 0.0;
        for (int ch = 0; ch < t.branching(); ++ch) {
            const NodeId w = t.child(u, ch);
            s += t.edge_prob(w) * inc[static_cast<std::size_t>(w)] *
                 inc[static_cast<std::size_t>(w)];
        }
        step[static_cast<std::size_t>(u)] = s;
    }
    std::vector<double> acc(nodes, 0.0);
    for (NodeId w = 1; w < t.node_count(); ++w)
        acc[static_cast<std::size_t>(w)] = acc[static_cast<std::size_t>(t.parent(w))] +
                                           step[static_cast<std::size_t>(t.parent(w))];
    double value = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        value += t.node_prob(v) * std::pow(acc[static_cast<std::size_t>(v)], 0.5 * p);

    if (grad) {
        // weight[u] = sum over leaves below u of P(l) acc(l)^(p/2 - 1); the
        // bracket step at u enters every such leaf's accumulation
        std::vector<double> weight(nodes, 0.0);
        for (NodeId v = t.node_count() - 1; v > 0; --v) {
            if (t.is_leaf(v)) {
                const double a = std::max(acc[static_cast<std::size_t>(v)], 1e-300);
                weight[static_cast<std::size_t>(v)] =
                    t.node_prob(v) * std::pow(a, 0.5 * p - 1.0);
            }
            weight[static_cast<std::size_t>(t.parent(v))] +=
                weight[static_cast<std::size_t>(v)];
        }

        grad->setZero(d);
        for (int j = 0; j < d; ++j) {
            const NodeId u = opm.basis_node[static_cast<std::size_t>(j)];
            double dstep = 0.0;
            for (int ch = 0; ch < t.branching(); ++ch) {
                const NodeId w = t.child(u, ch);
                dstep += 2.0 * t.edge_prob(w) * inc[static_cast<std::size_t>(w)] *
                         opm.basis_inc[static_cast<std::size_t>(j)]
                                      [static_cast<std::size_t>(ch)];
            }
            (*grad)(j) = 0.5 * p * weight[static_cast<std::size_t>(u)] * dstep;
        }
    }
    return value;
}

// lower bound on |phi^n| in the H^p operator norm by gradient ascent of the
// log ratio over the unit sphere
double ascent_norm(const OperatorMatrix& opm, const MatrixXd& a, double p,
                   std::uint64_t seed, int restarts) {
    const int d = opm.dimension();
    if (a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0) return 0.0;

    // warm start from the largest singular direction, then random sphere draws
    Eigen::JacobiSVD<MatrixXd> svd(a, Eigen::ComputeThinV);
    auto rng = stream_rng(seed, 0x73706563ULL);
    std::normal_distribution<double> gauss(0.0, 1.0);

    double best = 0.0;
    for (int r = 0; r < restarts; ++r) {
        VectorXd c(d);
        if (r == 0) {
            c = svd.matrixV().col(0);
        } else {
            for (int j = 0; j < d; ++j) c(j) = gauss(rng);
        }
        if (c.norm() == 0.0) continue;
        c /= c.norm();

        double step = 0.5;
        VectorXd gtop(d), gbot(d);
        double ftop = hp_power(opm, VectorXd(a * c), p, &gtop);
        double fbot = hp_power(opm, c, p, &gbot);
        if (fbot <= 0.0) continue;
        double obj = std::log(std::max(ftop, 1e-300)) - std::log(fbot);
        for (int it = 0; it < 120 && step > 1e-10; ++it) {
            // gradient of log F(Ac) - log F(c) over c, F the p-th norm power
            VectorXd g = VectorXd::Zero(d);
            if (ftop > 0.0) g += (a.transpose() * gtop) / ftop;
            g -= gbot / fbot;
            VectorXd cand = c + step * g;
            if (cand.norm() == 0.0) break;
            cand /= cand.norm();
            VectorXd ngtop(d), ngbot(d);
            const double nftop = hp_power(opm, VectorXd(a * cand), p, &ngtop);
            const double nfbot = hp_power(opm, cand, p, &ngbot);
            if (nfbot <= 0.0) {
                step *= 0.5;
                continue;
            }
            const double nobj = std::log(std::max(nftop, 1e-300)) - std::log(nfbot);
            if (nobj > obj) {
                c = cand;
                obj = nobj;
                ftop = nftop;
                fbot = nfbot;
                gtop = ngtop;
                gbot = ngbot;
                step *= 1.3;
            } else {
                step *= 0.5;
            }
        }
        if (ftop > 0.0 && fbot > 0.0)
            best = std::max(best, std::pow(ftop, 1.0 / p) / std::pow(fbot, 1.0 / p));
    }
    return best;
}

// shared MC core: per-level H^p norm lower bounds for phi^n from iterated
// integrals along paths
struct NormSequence {
    std::vector<double> norm_lower;  // n = 1..n_max
    std::vector<double> per_level;
    double r_hat = 0.0;
    bool truncated = false;
};

NormSequence mc_norm_sequence(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                              std::uint64_t seed, double p, int n_max, int probes) {
    if (n_max < 1) throw Error("spectral_radius_mc: n_max must be positive");
    if (probes < 1) throw Error("spectral_radius_mc: need at least one probe");
    const int K = grid.steps;

    // probe coefficients; probe 0 is the constant integrand
    auto prng = stream_rng(seed, 0x70726f6265ULL);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<std::array<double, 4>> coef(static_cast<std::size_t>(probes));
    for (int j = 0; j < probes; ++j)
        coef[static_cast<std::size_t>(j)] = {0.5 + 1.5 * unif(prng), 2.0 * unif(prng) - 1.0,
                                             unif(prng), 3.14159 * unif(prng)};

    NormSequence out;
    out.norm_lower.assign(static_cast<std::size_t>(n_max), 0.0);
    out.per_level.assign(static_cast<std::size_t>(n_max), 0.0);

    std::vector<double> cur(static_cast<std::size_t>(K) + 1);
    std::vector<double> nxt(static_cast<std::size_t>(K) + 1);
    for (int j = 0; j < probes; ++j) {
        std::vector<double> sums(static_cast<std::size_t>(n_max) + 1, 0.0);
        const auto& cf = coef[static_cast<std::size_t>(j)];
        for_each_path(spec, grid, n_paths, seed, [&](long, const PathBuffer& buf) {
            // level 0: the probe integral g.M and the bracket of g itself
            double br = 0.0;
            cur[0] = 0.0;
            for (int k = 0; k < K; ++k) {
                const double g =
                    j == 0 ? 1.0
                           : std::tanh(cf[0] * buf.m[static_cast<std::size_t>(k)] + cf[1]) +
                                 cf[2] * std::cos(buf.m[static_cast<std::size_t>(k)] + cf[3]);
                const double dm = buf.m[static_cast<std::size_t>(k) + 1] -
                                  buf.m[static_cast<std::size_t>(k)];
                const double dqv = buf.qv[static_cast<std::size_t>(k) + 1] -
                                   buf.qv[static_cast<std::size_t>(k)];
                cur[static_cast<std::size_t>(k) + 1] =
                    cur[static_cast<std::size_t>(k)] + g * dm;
                br += g * g * dqv;
            }
            sums[0] += std::pow(br, 0.5 * p);
            for (int n = 1; n <= n_max; ++n) {
                br = 0.0;
                nxt[0] = 0.0;
                for (int k = 0; k < K; ++k) {
                    const double dm = buf.m[static_cast<std::size_t>(k) + 1] -
                                      buf.m[static_cast<std::size_t>(k)];
                    const double dqv = buf.qv[static_cast<std::size_t>(k) + 1] -
                                       buf.qv[static_cast<std::size_t>(k)];
                    nxt[static_cast<std::size_t>(k) + 1] =
                        nxt[static_cast<std::size_t>(k)] +
                        cur[static_cast<std::size_t>(k)] * dm;
                    br += cur[static_cast<std::size_t>(k)] *
                          cur[static_cast<std::size_t>(k)] * dqv;
                }
                sums[static_cast<std::size_t>(n)] += std::pow(br, 0.5 * p);
                cur.swap(nxt);
            }
        });

        const double base = std::pow(sums[0] / static_cast<double>(n_paths), 1.0 / p);
        if (!(base > 0.0) || !std::isfinite(base)) {
            out.truncated = true;
            continue;
        }
        for (int n = 1; n <= n_max; ++n) {
            const double val = std::pow(
                sums[static_cast<std::size_t>(n)] / static_cast<double>(n_paths), 1.0 / p);
            if (!std::isfinite(val) || val <= 0.0) {
                out.truncated = true;
                break;
            }
            std::size_t i = static_cast<std::size_t>(n - 1);
            out.norm_lower[i] = std::max(out.norm_lower[i], val / base);
        }
    }

    for (int n = 1; n <= n_max; ++n) {
        const std::size_t i = static_cast<std::size_t>(n - 1);
        if (out.norm_lower[i] > 0.0)
            out.per_level[i] = std::pow(out.norm_lower[i], 1.0 / n);
        out.r_hat = std::max(out.r_hat, out.per_level[i]);
    }
    return out;
}

void window_from_b(const ExponentReport& b, double p, double* lower, double* upper) {
    if (b.infinite) {
        *lower = 0.0;
        *upper = 0.0;
        return;
    }
    const double bhat = 0.5 * (b.lo + b.hi);
    *lower = std::sqrt(p) / bhat;
    *upper = std::sqrt(2.0 * p * (2.0 * p - 1.0)) / bhat;
}

}  // namespace

OperatorMatrix operator_matrix(const TreeMartingale& m) {
    const Tree& t = m.tree();
    const int B = t.branching();

    OperatorMatrix opm;
    opm.tree = &t;
    opm.m = &m;

    // per internal node: Gram-Schmidt the centered child indicators in the
    // inner product P(u) sum_c p_c x_c y_c
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        const double pu = t.node_prob(u);
        std::vector<std::vector<double>> kept;
        for (int c = 0; c + 1 < B; ++c) {
            std::vector<double> x(static_cast<std::size_t>(B), 0.0);
            const double pc = t.edge_prob(t.child(u, c));
            for (int cc = 0; cc < B; ++cc) x[static_cast<std::size_t>(cc)] = -pc;
            x[static_cast<std::size_t>(c)] += 1.0;
            auto dot = [&](const std::vector<double>& a, const std::vector<double>& b) {
                double s = 0.0;
                for (int cc = 0; cc < B; ++cc)
                    s += t.edge_prob(t.child(u, cc)) * a[static_cast<std::size_t>(cc)] *
                         b[static_cast<std::size_t>(cc)];
                return pu * s;
            };
            for (const auto& e : kept) {
                const double proj = dot(x, e);
                for (int cc = 0; cc < B; ++cc)
                    x[static_cast<std::size_t>(cc)] -= proj * e[static_cast<std::size_t>(cc)];
            }
            const double nrm = std::sqrt(dot(x, x));
            if (nrm <= 1e-13) continue;  // degenerate direction, skip
            for (double& xv : x) xv /= nrm;
            kept.push_back(x);
            opm.basis_node.push_back(u);
            opm.basis_inc.push_back(std::move(x));
        }
    }

    const int d = static_cast<int>(opm.basis_node.size());
    opm.basis_val.assign(static_cast<std::size_t>(d),
                         std::vector<double>(static_cast<std::size_t>(t.node_count()), 0.0));
    for (int j = 0; j < d; ++j) {
        const NodeId u = opm.basis_node[static_cast<std::size_t>(j)];
        auto& val = opm.basis_val[static_cast<std::size_t>(j)];
        for (int c = 0; c < B; ++c)
            val[static_cast<std::size_t>(t.child(u, c))] =
                opm.basis_inc[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        // constant below each child: push values down the subtree
        for (NodeId v = u + 1; v < t.node_count(); ++v)
            if (val[static_cast<std::size_t>(v)] == 0.0 && t.parent(v) > u)
                val[static_cast<std::size_t>(v)] =
                    val[static_cast<std::size_t>(t.parent(v))];
    }

    // phi(e_j) has increment e_j(u') dM on each edge out of u'; its k-th
    // coordinate is e_j(node_k) times the basis coordinate of M's own
    // increment block at node_k
    VectorXd mq(d);
    for (int k = 0; k < d; ++k) {
        const NodeId u = opm.basis_node[static_cast<std::size_t>(k)];
        double s = 0.0;
        for (int c = 0; c < B; ++c) {
            const NodeId w = t.child(u, c);
            s += t.node_prob(w) * m.increment(w) *
                 opm.basis_inc[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
        }
        mq(k) = s;
    }
    opm.phi = MatrixXd::Zero(d, d);
    for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
            opm.phi(k, j) =
                opm.basis_val[static_cast<std::size_t>(j)]
                             [static_cast<std::size_t>(opm.basis_node[static_cast<std::size_t>(k)])] *
                mq(k);

    for (int j = 0; j < d; ++j)
        for (int k = 0; k < d; ++k)
            if (t.level_of(opm.basis_node[static_cast<std::size_t>(k)]) <=
                t.level_of(opm.basis_node[static_cast<std::size_t>(j)]))
                opm.triangular_defect =
                    std::max(opm.triangular_defect, std::abs(opm.phi(k, j)));

    MatrixXd power = MatrixXd::Identity(d, d);
    opm.nilpotency_index = d == 0 ? 1 : t.depth() + 1;
    for (int n = 1; d > 0 && n <= t.depth() + 1; ++n) {
        power = opm.phi * power;
        if (power.cwiseAbs().maxCoeff() == 0.0) {
            opm.nilpotency_index = n;
            break;
        }
    }
    return opm;
}

Eigen::VectorXd martingale_coords(const OperatorMatrix& opm, const TreeMartingale& x) {
    const Tree& t = *opm.tree;
    if (&x.tree() != &t) throw Error("martingale_coords: martingale on another tree");
    const int d = opm.dimension();
    VectorXd c(d);
    for (int k = 0; k < d; ++k) {
        const NodeId u = opm.basis_node[static_cast<std::size_t>(k)];
        double s = 0.0;
        for (int ch = 0; ch < t.branching(); ++ch) {
            const NodeId w = t.child(u, ch);
            s += t.node_prob(w) * x.increment(w) *
                 opm.basis_inc[static_cast<std::size_t>(k)][static_cast<std::size_t>(ch)];
        }
        c(k) = s;
    }
    return c;
}

TreeMartingale coords_martingale(const OperatorMatrix& opm, const Eigen::VectorXd& c) {
    const Tree& t = *opm.tree;
    if (c.size() != opm.dimension())
        throw Error("coords_martingale: coordinate dimension mismatch");
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (int j = 0; j < opm.dimension(); ++j) {
        const NodeId u = opm.basis_node[static_cast<std::size_t>(j)];
        for (int ch = 0; ch < t.branching(); ++ch)
            inc[static_cast<std::size_t>(t.child(u, ch))] +=
                c(j) * opm.basis_inc[static_cast<std::size_t>(j)][static_cast<std::size_t>(ch)];
    }
    return TreeMartingale(t, inc, 0.0, 1e-9);
}

double operator_audit(const OperatorMatrix& opm, std::uint64_t seed, int trials) {
    const Tree& t = *opm.tree;
    double worst = 0.0;
    for (int i = 0; i < trials; ++i) {
        const TreeMartingale x = random_martingale(t, seed + static_cast<std::uint64_t>(i));
        const TreeMartingale ix = stochastic_integral(x.value(), *opm.m);
        const VectorXd lhs = martingale_coords(opm, ix);
        const VectorXd rhs = opm.phi * martingale_coords(opm, x);
        worst = std::max(worst, (lhs - rhs).cwiseAbs().maxCoeff());

        // the coordinate round trip reproduces the increments
        const TreeMartingale back = coords_martingale(opm, martingale_coords(opm, x));
        for (NodeId w = 1; w < t.node_count(); ++w)
            worst = std::max(worst, std::abs(back.increment(w) - x.increment(w)));
    }
    return worst;
}

NormEstimate operator_norm(const OperatorMatrix& opm, int n, double p, std::uint64_t seed,
                           int restarts) {
    if (n < 0) throw Error("operator_norm: negative power");
    if (!(p >= 1.0)) throw Error("operator_norm: p must be at least 1");
    NormEstimate est;
    est.n = n;
    const MatrixXd a = matrix_power(opm.phi, n);
    if (p == 2.0) {
        est.exact = true;
        est.value = a.size() == 0 || a.cwiseAbs().maxCoeff() == 0.0
                        ? 0.0
                        : Eigen::JacobiSVD<MatrixXd>(a).singularValues()(0);
        return est;
    }
    est.restarts = restarts;
    est.value = ascent_norm(opm, a, p, seed, restarts);
    return est;
}

TreeRadius spectral_radius_tree(const OperatorMatrix& opm, double p, std::uint64_t seed) {
    if (!(p >= 1.0)) throw Error("spectral_radius_tree: p must be at least 1");
    if (opm.triangular_defect != 0.0)
        throw Error("spectral_radius_tree: operator matrix is not level-raising");
    TreeRadius rad;
    for (int n = 1; n <= opm.nilpotency_index; ++n)
        rad.norms.push_back(operator_norm(opm, n, p, seed));
    // the final norm vanishes with the matrix power, so the limit is zero
    rad.value = rad.norms.empty() ? 0.0
                                  : std::pow(rad.norms.back().value,
                                             1.0 / opm.nilpotency_index);
    return rad;
}

ComplexExponential complex_exponential(const TreeMartingale& m, Complex lambda) {
    const Tree& t = m.tree();
    ComplexExponential ce;
    ce.lambda = lambda;
    ce.discrete = TreeProcess<Complex>(t);
    ce.continuous = TreeProcess<Complex>(t);
    ce.discrete[0] = Complex(1.0, 0.0);
    ce.continuous[0] = Complex(1.0, 0.0);
    for (NodeId w = 1; w < t.node_count(); ++w) {
        const NodeId u = t.parent(w);
        ce.discrete[w] = ce.discrete[u] * (Complex(1.0, 0.0) + lambda * m.increment(w));
        ce.continuous[w] = std::exp(lambda * (m.value(w) - m.value(0)) -
                                    0.5 * lambda * lambda * m.pred_bracket(w));
    }
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        Complex dmean(0.0, 0.0), cmean(0.0, 0.0);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            dmean += t.edge_prob(w) * ce.discrete[w];
            cmean += t.edge_prob(w) * ce.continuous[w];
        }
        ce.discrete_defect = std::max(ce.discrete_defect, std::abs(dmean - ce.discrete[u]));
        ce.continuous_defect =
            std::max(ce.continuous_defect, std::abs(cmean - ce.continuous[u]));
    }
    return ce;
}

ResolventProbe resolvent_probe(const TreeMartingale& m, Complex lambda,
                               const StoppingTime& tau, const std::vector<NodeId>& a_atoms,
                               double p) {
    if (!(p >= 1.0)) throw Error("resolvent_probe: p must be at least 1");
    const Tree& t = m.tree();
    if (&tau.tree() != &t) throw Error("resolvent_probe: stopping time on another tree");

    std::vector<std::uint8_t> in_a(static_cast<std::size_t>(t.node_count()), 0);
    for (NodeId a : a_atoms) {
        bool frontier = false;
        for (NodeId f : tau.frontier()) frontier = frontier || f == a;
        if (!frontier)
            throw Error("resolvent_probe: node " + std::to_string(a) +
                        " is not an atom of the stopping time");
        in_a[static_cast<std::size_t>(a)] = 1;
    }

    const ComplexExponential ce = complex_exponential(m, lambda);

    // stop node on each path, then whether the path belongs to the event
    std::vector<NodeId> stop_at(static_cast<std::size_t>(t.node_count()), -1);
    std::vector<std::uint8_t> active(static_cast<std::size_t>(t.node_count()), 0);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        const NodeId prior = v == 0 ? NodeId(-1) : stop_at[static_cast<std::size_t>(t.parent(v))];
        stop_at[i] = prior >= 0 ? prior : (tau.flagged(v) ? v : NodeId(-1));
        active[i] = stop_at[i] >= 0 && in_a[static_cast<std::size_t>(stop_at[i])];
    }

    // the recursion X(w) = X(u) + lambda (X(u) + g(u)) dM with g = chi_A
    // on and after the stop node
    TreeProcess<Complex> x(t);
    x[0] = Complex(0.0, 0.0);
    for (NodeId w = 1; w < t.node_count(); ++w) {
        const NodeId u = t.parent(w);
        const double g = active[static_cast<std::size_t>(u)] ? 1.0 : 0.0;
        x[w] = x[u] + lambda * (x[u] + g) * m.increment(w);
    }

    ResolventProbe probe;
    for (NodeId v = 0; v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        Complex ref(0.0, 0.0);
        if (active[i]) {
            const Complex ds = ce.discrete[stop_at[i]];
            if (std::abs(ds) == 0.0) {
                ++probe.excluded;
                continue;
            }
            ref = ce.discrete[v] / ds - Complex(1.0, 0.0);
        }
        probe.identity_gap = std::max(probe.identity_gap, std::abs(x[v] - ref));
    }

    // worst conditional moment of |D(sigma)/D(atom)|^p over atoms and level
    // stops sigma, sigma capped at the leaves
    for (NodeId a : a_atoms) {
        if (std::abs(ce.discrete[a]) == 0.0) {
            ++probe.excluded;
            continue;
        }
        // collect the subtree of a level by level
        std::vector<NodeId> frontier_nodes = {a};
        while (!frontier_nodes.empty()) {
            double moment = 0.0;
            for (NodeId v : frontier_nodes)
                moment += t.node_prob(v) / t.node_prob(a) *
                          std::pow(std::abs(ce.discrete[v] / ce.discrete[a]), p);
            probe.rp_constant = std::max(probe.rp_constant, moment);
            std::vector<NodeId> next;
            for (NodeId v : frontier_nodes)
                if (!t.is_leaf(v))
                    for (int c = 0; c < t.branching(); ++c) next.push_back(t.child(v, c));
            frontier_nodes.swap(next);
        }
    }
    return probe;
}

McRadius spectral_radius_mc(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                            std::uint64_t seed, double p, int n_max, int probes) {
    const NormSequence seq = mc_norm_sequence(spec, grid, n_paths, seed, p, n_max, probes);
    McRadius rad;
    rad.norm_lower = seq.norm_lower;
    rad.per_level = seq.per_level;
    rad.r_hat = seq.r_hat;
    rad.truncated = seq.truncated;
    rad.b = estimate_b(spec, grid, n_paths, seed + 1);
    window_from_b(rad.b, p, &rad.lower, &rad.upper);
    return rad;
}

McResolvent resolvent_probe_mc(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                               std::uint64_t seed, Complex lambda, double p) {
    const int K = grid.steps;
    const int tau_idx = K / 3;
    McResolvent res;
    double sq_sum = 0.0, rp_sum = 0.0;
    long used = 0;
    for_each_path(spec, grid, n_paths, seed, [&](long, const PathBuffer& buf) {
        const bool in_a = buf.m[static_cast<std::size_t>(tau_idx)] > 0.0;
        Complex x(0.0, 0.0);
        for (int k = 0; k < K; ++k) {
            const double g = in_a && k >= tau_idx ? 1.0 : 0.0;
            const double dm =
                buf.m[static_cast<std::size_t>(k) + 1] - buf.m[static_cast<std::size_t>(k)];
            x += lambda * (x + g) * dm;
        }
        const double dm_tail = buf.m[static_cast<std::size_t>(K)] -
                               buf.m[static_cast<std::size_t>(tau_idx)];
        const double dqv_tail = buf.qv[static_cast<std::size_t>(K)] -
                                buf.qv[static_cast<std::size_t>(tau_idx)];
        const Complex ratio =
            std::exp(lambda * dm_tail - 0.5 * lambda * lambda * dqv_tail);
        const Complex ref = in_a ? ratio - Complex(1.0, 0.0) : Complex(0.0, 0.0);
        const double gap = std::abs(x - ref);
        const double rp = std::pow(std::abs(ratio), p);
        if (!std::isfinite(gap) || !std::isfinite(rp)) {
            ++res.excluded;
            return;
        }
        sq_sum += gap * gap;
        rp_sum += rp;
        ++used;
    });
    if (used > 0) {
        res.identity_rms = std::sqrt(sq_sum / static_cast<double>(used));
        res.rp_estimate = rp_sum / static_cast<double>(used);
    }
    return res;
}

BoundBattery bound_battery(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                           std::uint64_t seed, const std::vector<double>& p_list, int n_max,
                           int probes, double tol) {
    BoundBattery bat;
    bat.tol = tol;
    bat.b = estimate_b(spec, grid, n_paths, seed + 1);
    for (double p : p_list) {
        const NormSequence seq =
            mc_norm_sequence(spec, grid, n_paths, seed, p, n_max, probes);
        BoundRow row;
        row.p = p;
        row.r_hat = seq.r_hat;
        window_from_b(bat.b, p, &row.lower, &row.upper);
        row.upper_ok = bat.b.infinite ? true : seq.r_hat <= row.upper * (1.0 + tol);
        row.lower_reached = seq.r_hat >= row.lower * (1.0 - tol);
        bat.rows.push_back(row);
    }
    return bat;
}

EquivalenceReport equivalence_battery(const TreeMartingale& tree_m, const SimSpec& mc_spec,
                                      const TimeGrid& grid, long n_paths,
                                      std::uint64_t seed) {
    EquivalenceReport rep;

    const OperatorMatrix opm = operator_matrix(tree_m);
    rep.tree_depth = opm.tree->depth();
    rep.tree_nilpotency_index = opm.nilpotency_index;
    rep.tree_triangular_defect = opm.triangular_defect;
    const MatrixXd high_power = matrix_power(opm.phi, rep.tree_depth + 1);
    rep.tree_power_norm = high_power.size() == 0 ? 0.0 : high_power.cwiseAbs().maxCoeff();
    rep.tree_r2 = spectral_radius_tree(opm, 2.0).value;
    rep.tree_b_infinite = estimate_b(tree_m).infinite;

    rep.mc_b = estimate_b(mc_spec, grid, n_paths, seed + 1);
    rep.mc_r_hat =
        mc_norm_sequence(mc_spec, grid, n_paths, seed, 2.0, 8, 3).r_hat;

    // imaginary-ray modulus of the discrete exponential: per path,
    // log |prod(1 + i mu dM)|^2 = sum log(1 + mu^2 dM^2), compared with mu^2
    // times the realized bracket, then classified by the doubling diagnostic
    const int K = grid.steps;
    const double mu_s = rep.ray_mu_small, mu_l = rep.ray_mu_large;
    std::vector<double> small_log(static_cast<std::size_t>(n_paths));
    std::vector<double> large_log(static_cast<std::size_t>(n_paths));
    double gap_sum = 0.0;
    for_each_path(mc_spec, grid, n_paths, seed + 2, [&](long i, const PathBuffer& buf) {
        double ls = 0.0, ll = 0.0, opt = 0.0;
        for (int k = 0; k < K; ++k) {
            const double dm =
                buf.m[static_cast<std::size_t>(k) + 1] - buf.m[static_cast<std::size_t>(k)];
            ls += std::log1p(mu_s * mu_s * dm * dm);
            ll += std::log1p(mu_l * mu_l * dm * dm);
            opt += dm * dm;
        }
        small_log[static_cast<std::size_t>(i)] = ls / (mu_s * mu_s);
        large_log[static_cast<std::size_t>(i)] = ll / (mu_l * mu_l);
        gap_sum += std::abs(ls - mu_s * mu_s * opt);
    });
    rep.exp_identity_gap = gap_sum / static_cast<double>(n_paths);
    const MomentCall small_call = classify_exp_moment_doubling(small_log, mu_s * mu_s);
    const MomentCall large_call = classify_exp_moment_doubling(large_log, mu_l * mu_l);
    rep.ray_small_estimate = small_call.estimate;
    rep.ray_small_finite = !small_call.divergent;
    rep.ray_large_divergent = large_call.divergent;

    rep.consistent = rep.tree_power_norm == 0.0 && rep.tree_triangular_defect == 0.0 &&
                     rep.tree_r2 == 0.0 && rep.tree_b_infinite && !rep.mc_b.infinite &&
                     rep.mc_r_hat >= 0.3 && rep.ray_small_finite && rep.ray_large_divergent;
    return rep;
}

}  // namespace bmo
