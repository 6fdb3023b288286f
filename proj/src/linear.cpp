#include "bmolab/linear.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace bmo {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

double op2norm(const MatrixXd& a) {
    if (a.rows() == 1 && a.cols() == 1) return std::abs(a(0, 0));
    return Eigen::JacobiSVD<MatrixXd>(a).singularValues()(0);
}

TreeProcess<MatrixXd> mat_or_zero(const TreeProcess<MatrixXd>& src, const Tree& t, int n,
                                  const char* what) {
    TreeProcess<MatrixXd> out(t);
    if (src.tree && src.tree != &t)
        throw Error(std::string(what) + ": attached to a different tree");
    for (NodeId v = 0; v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        if (!src.tree || src.values[i].size() == 0)
            out[v] = MatrixXd::Zero(n, n);
        else if (src.values[i].rows() == n && src.values[i].cols() == n)
            out[v] = src.values[i];
        else
            throw Error(std::string(what) + ": wrong dimension at node " + std::to_string(v));
    }
    return out;
}

bool is_zero(const TreeProcess<MatrixXd>& p) {
    for (const auto& v : p.values)
        if (v.size() != 0 && v.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
}

}  // namespace

FundamentalSolution fundamental(const LinearDriver& drv) {
    if (!drv.m) throw Error("fundamental: driver has no martingale");
    if (drv.n < 1) throw Error("fundamental: dimension must be positive");
    const Tree& t = drv.m->tree();

    FundamentalSolution fs;
    fs.driver.n = drv.n;
    fs.driver.a = mat_or_zero(drv.a, t, drv.n, "A");
    fs.driver.b = mat_or_zero(drv.b, t, drv.n, "B");
    fs.driver.d = mat_or_zero(drv.d, t, drv.n, "D");
    fs.driver.n1 = drv.n1;
    fs.driver.n2 = drv.n2;
    fs.driver.m = drv.m;

    const bool has_a = !is_zero(fs.driver.a);
    if (has_a && (!drv.n1 || !drv.n2))
        throw Error("fundamental: A needs both covariation drivers");
    TreeProcess<double> dnn = has_a ? covariation(*drv.n1, *drv.n2).step
                                    : TreeProcess<double>(t, Kind::Predictable);

    fs.s = TreeProcess<MatrixXd>(t);
    fs.s_inv = TreeProcess<MatrixXd>(t);
    fs.s[0] = MatrixXd::Identity(drv.n, drv.n);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        const MatrixXd base = fs.driver.a[u] * dnn[u] + fs.driver.b[u] * drv.m->pred_step(u);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            const MatrixXd factor = MatrixXd::Identity(drv.n, drv.n) + base +
                                    fs.driver.d[u] * drv.m->increment(w);
            Eigen::FullPivLU<MatrixXd> lu(factor);
            if (!lu.isInvertible())
                throw Error("fundamental: singular one-step factor at node " +
                            std::to_string(w));
            fs.s[w] = factor * fs.s[u];
        }
    }
    for (NodeId v = 0; v < t.node_count(); ++v) {
        Eigen::FullPivLU<MatrixXd> lu(fs.s[v]);
        if (!lu.isInvertible())
            throw Error("fundamental: accumulated product singular at node " +
                        std::to_string(v));
        fs.s_inv[v] = lu.inverse();
    }
    return fs;
}

RpReport check_fundamental_rp(const FundamentalSolution& fs, double p) {
    if (!(p >= 1.0)) throw Error("check_fundamental_rp: p must be at least 1");
    const Tree& t = *fs.s.tree;
    RpReport rep;
    rep.p = p;

    // for each anchor v, push the running max of |S(v)^{-1} S(t)|^p down the
    // subtree and average the leaf values conditionally on v
    std::vector<double> running(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        running[static_cast<std::size_t>(v)] = 1.0;  // |I|^p at the anchor
        double acc = 0.0;
        for (NodeId w = v; w < t.node_count(); ++w) {
            // subtree membership: climb from w until at or above v's level
            NodeId anc = w;
            while (anc > v) anc = t.parent(anc);
            if (anc != v) continue;
            if (w != v) {
                const double g = std::pow(op2norm(fs.s_inv[v] * fs.s[w]), p);
                running[static_cast<std::size_t>(w)] =
                    std::max(running[static_cast<std::size_t>(t.parent(w))], g);
            }
            if (t.is_leaf(w))
                acc += t.node_prob(w) / t.node_prob(v) *
                       running[static_cast<std::size_t>(w)];
        }
        const double value = t.is_leaf(v) ? 1.0 : acc;
        if (value > rep.value) {
            rep.value = value;
            rep.argmax = v;
        }
    }
    return rep;
}

std::vector<RpReport> continuation_scan(const FundamentalSolution& fs,
                                        const std::vector<double>& p_grid) {
    std::vector<RpReport> out;
    out.reserve(p_grid.size());
    for (double p : p_grid) out.push_back(check_fundamental_rp(fs, p));
    return out;
}

LinearBsdeSolution solve_linear_bsde_explicit(const TreeProcess<MatrixXd>& a,
                                              const TreeMartingale& m,
                                              const std::vector<VectorXd>& xi,
                                              const TreeProcess<VectorXd>& f) {
    const Tree& t = m.tree();
    if (xi.size() != static_cast<std::size_t>(t.node_count()))
        throw Error("solve_linear_bsde_explicit: terminal value must be node-indexed");
    int n = 0;
    for (NodeId v = t.leaf_begin(); v < t.node_count() && n == 0; ++v)
        n = static_cast<int>(xi[static_cast<std::size_t>(v)].size());
    if (n == 0) throw Error("solve_linear_bsde_explicit: terminal value is empty");

    LinearDriver drv;
    drv.n = n;
    drv.d = a;
    drv.m = &m;
    const FundamentalSolution fs = fundamental(drv);

    TreeProcess<VectorXd> forcing(t);
    if (f.tree && f.tree != &t)
        throw Error("solve_linear_bsde_explicit: f attached to a different tree");
    for (NodeId v = 0; v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        if (!f.tree || f.values[i].size() == 0)
            forcing[v] = VectorXd::Zero(n);
        else if (f.values[i].size() == n)
            forcing[v] = f.values[i];
        else
            throw Error("solve_linear_bsde_explicit: f has wrong dimension at node " +
                        std::to_string(v));
    }

    const double dt = t.dt();

    // accumulated S^T-weighted forcing strictly before each node, and the
    // terminal data S^T(T) xi plus the full path sum
    std::vector<VectorXd> before(static_cast<std::size_t>(t.node_count()));
    before[0] = VectorXd::Zero(n);
    for (NodeId v = 1; v < t.node_count(); ++v) {
        const NodeId u = t.parent(v);
        before[static_cast<std::size_t>(v)] =
            before[static_cast<std::size_t>(u)] +
            fs.s[u].transpose() * forcing[u] * dt;
    }
    std::vector<VectorXd> data(static_cast<std::size_t>(t.node_count()));
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        if (xi[i].size() != n)
            throw Error("solve_linear_bsde_explicit: terminal value has wrong dimension at node " +
                        std::to_string(v));
        data[i] = fs.s[v].transpose() * xi[i] + before[i];
    }
    const TreeProcess<VectorXd> closed = condexp(t, data);

    LinearBsdeSolution sol;
    sol.y = TreeProcess<VectorXd>(t);
    sol.z = TreeProcess<VectorXd>(t, Kind::Predictable);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        sol.y[v] = fs.s_inv[v].transpose() *
                   (closed[v] - before[static_cast<std::size_t>(v)]);
        sol.z[v] = VectorXd::Zero(n);
    }

    TreeProcess<VectorXd> pinc(t);
    for (NodeId v = 0; v < t.node_count(); ++v) pinc[v] = VectorXd::Zero(n);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        VectorXd ybar = VectorXd::Zero(n);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            ybar += t.edge_prob(w) * sol.y[w];
        }
        const double dm2 = m.pred_step(u);
        VectorXd z = VectorXd::Zero(n);
        if (dm2 > 0.0) {
            for (int c = 0; c < t.branching(); ++c) {
                const NodeId w = t.child(u, c);
                z += t.edge_prob(w) * m.increment(w) * (sol.y[w] - ybar);
            }
            z /= dm2;
        }
        sol.z[u] = z;
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            pinc[w] = (sol.y[w] - ybar) - z * m.increment(w);
        }

        // defining equation: Y_u = ybar + A^T Z d<M> + f dt
        const VectorXd rhs =
            ybar + fs.driver.d[u].transpose() * z * dm2 + forcing[u] * dt;
        sol.residual = std::max(sol.residual, (sol.y[u] - rhs).norm());
    }
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        sol.residual = std::max(
            sol.residual, (sol.y[v] - xi[static_cast<std::size_t>(v)]).norm());

    for (int i = 0; i < n; ++i) {
        std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
        for (NodeId v = 1; v < t.node_count(); ++v)
            inc[static_cast<std::size_t>(v)] = pinc[v](i);
        sol.m_perp.emplace_back(t, inc, 0.0, 1e-9);
    }
    return sol;
}

GirsanovRecord girsanov(const TreeProcess<double>& a, const TreeMartingale& m,
                        const std::vector<const TreeMartingale*>& targets) {
    const Tree& t = m.tree();
    if (!a.tree || a.tree != &t) throw Error("girsanov: integrand missing or on another tree");

    // density increments and tilted edge probabilities in one pass
    std::vector<double> dens_inc(static_cast<std::size_t>(t.node_count()), 0.0);
    std::vector<double> dens(static_cast<std::size_t>(t.node_count()), 1.0);
    std::vector<double> q_prob(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            const double factor = 1.0 + a[u] * m.increment(w);
            if (factor <= 0.0)
                throw Error("girsanov: nonpositive density factor at node " +
                            std::to_string(w));
            const std::size_t wi = static_cast<std::size_t>(w);
            dens[wi] = dens[static_cast<std::size_t>(u)] * factor;
            dens_inc[wi] = dens[static_cast<std::size_t>(u)] * (factor - 1.0);
            q_prob[wi] = t.edge_prob(w) * factor;
        }
    }

    GirsanovRecord rec;
    rec.density = TreeMartingale(t, dens_inc, 1.0, 1e-9);
    rec.q_tree = std::make_shared<const Tree>(t.depth(), t.branching(), q_prob, t.dt());

    auto transform = [&](const TreeMartingale& v) {
        const Covariation cov = covariation(m, v);
        std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
        for (NodeId w = 1; w < t.node_count(); ++w) {
            const NodeId u = t.parent(w);
            inc[static_cast<std::size_t>(w)] = v.increment(w) - a[u] * cov.step[u];
        }
        // tilted-mean defect before handing the increments to the martingale
        for (NodeId u = 0; u < t.internal_count(); ++u) {
            double e = 0.0;
            for (int c = 0; c < t.branching(); ++c) {
                const NodeId w = t.child(u, c);
                e += rec.q_tree->edge_prob(w) * inc[static_cast<std::size_t>(w)];
            }
            rec.audit = std::max(rec.audit, std::abs(e));
        }
        return TreeMartingale(*rec.q_tree, inc, v.value(0), 1e-9);
    };

    rec.m_q = transform(m);
    for (const TreeMartingale* v : targets) {
        if (!v || &v->tree() != &t)
            throw Error("girsanov: target missing or on another tree");
        rec.targets_q.push_back(transform(*v));
    }
    return rec;
}

TreeProcess<MatrixXd> solve_linear_sde(const FundamentalSolution& fs,
                                       const TreeProcess<MatrixXd>& v) {
    const Tree& t = *fs.s.tree;
    if (!v.tree || v.tree != &t)
        throw Error("solve_linear_sde: V missing or on another tree");
    const Eigen::Index rows = fs.s[0].rows();
    Eigen::Index cols = -1;
    for (const auto& entry : v.values)
        if (entry.size() != 0) {
            if (cols != -1 && (entry.rows() != rows || entry.cols() != cols))
                throw Error("solve_linear_sde: inconsistent V dimensions");
            if (cols == -1) {
                if (entry.rows() != rows)
                    throw Error("solve_linear_sde: V row count does not match S");
                cols = entry.cols();
            }
        }
    if (cols == -1) cols = rows;

    auto val = [&](NodeId nid) -> MatrixXd {
        const auto& e = v.values[static_cast<std::size_t>(nid)];
        return e.size() == 0 ? MatrixXd::Zero(rows, cols) : e;
    };

    // running integral I(v) = sum of S(r)^{-1} dV_r over the path, so that
    // X(v) = S(v) I(v); the right endpoint makes the recursion exact
    TreeProcess<MatrixXd> x(t);
    std::vector<MatrixXd> integral(static_cast<std::size_t>(t.node_count()));
    integral[0] = MatrixXd::Zero(rows, cols);
    x[0] = MatrixXd::Zero(rows, cols);
    for (NodeId w = 1; w < t.node_count(); ++w) {
        const NodeId u = t.parent(w);
        integral[static_cast<std::size_t>(w)] =
            integral[static_cast<std::size_t>(u)] + fs.s_inv[w] * (val(w) - val(u));
        x[w] = fs.s[w] * integral[static_cast<std::size_t>(w)];
    }
    return x;
}

double linear_sde_residual(const FundamentalSolution& fs, const TreeProcess<MatrixXd>& v,
                           const TreeProcess<MatrixXd>& x) {
    const Tree& t = *fs.s.tree;
    const bool has_a = !fs.driver.a.values.empty() &&
                       fs.driver.n1 != nullptr && fs.driver.n2 != nullptr;
    TreeProcess<double> dnn = has_a ? covariation(*fs.driver.n1, *fs.driver.n2).step
                                    : TreeProcess<double>(t, Kind::Predictable);
    const Eigen::Index rows = x[0].rows(), cols = x[0].cols();
    auto val = [&](NodeId nid) -> MatrixXd {
        const auto& e = v.values[static_cast<std::size_t>(nid)];
        return e.size() == 0 ? MatrixXd::Zero(rows, cols) : e;
    };
    double worst = op2norm(x[0]);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        const MatrixXd base =
            fs.driver.a[u] * dnn[u] + fs.driver.b[u] * fs.driver.m->pred_step(u);
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            const MatrixXd factor = MatrixXd::Identity(rows, rows) + base +
                                    fs.driver.d[u] * fs.driver.m->increment(w);
            const MatrixXd rhs = factor * x[u] + (val(w) - val(u));
            worst = std::max(worst, op2norm(x[w] - rhs));
        }
    }
    return worst;
}

RhiProbe rhi_probe(const FundamentalSolution& fs, const StoppingTime& sigma,
                   const std::vector<NodeId>& b_nodes, double p) {
    if (!(p >= 1.0)) throw Error("rhi_probe: p must be at least 1");
    const Tree& t = *fs.s.tree;
    if (&sigma.tree() != &t) throw Error("rhi_probe: stopping time on another tree");

    std::vector<std::uint8_t> in_b(static_cast<std::size_t>(t.node_count()), 0);
    for (NodeId b : b_nodes) {
        bool frontier = false;
        for (NodeId fnode : sigma.frontier()) frontier = frontier || fnode == b;
        if (!frontier)
            throw Error("rhi_probe: node " + std::to_string(b) +
                        " is not an atom of the stopping time");
        in_b[static_cast<std::size_t>(b)] = 1;
    }
    // push membership down: a node is in the event when its path's stop node is
    std::vector<std::uint8_t> active(static_cast<std::size_t>(t.node_count()), 0);
    std::vector<NodeId> stop_at(static_cast<std::size_t>(t.node_count()), -1);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        const std::size_t i = static_cast<std::size_t>(v);
        if (v == 0) {
            stop_at[i] = sigma.flagged(v) ? v : -1;
        } else {
            const NodeId prior = stop_at[static_cast<std::size_t>(t.parent(v))];
            stop_at[i] = prior >= 0 ? prior : (sigma.flagged(v) ? v : NodeId(-1));
        }
        active[i] = stop_at[i] >= 0 && in_b[static_cast<std::size_t>(stop_at[i])];
    }

    // V accumulates chi dV = chi D dM along active edges
    const int n = fs.driver.n;
    TreeProcess<MatrixXd> v(t);
    v[0] = MatrixXd::Zero(n, n);
    for (NodeId w = 1; w < t.node_count(); ++w) {
        const NodeId u = t.parent(w);
        MatrixXd dv = MatrixXd::Zero(n, n);
        if (active[static_cast<std::size_t>(u)])
            dv = fs.driver.d[u] * fs.driver.m->increment(w);
        v[w] = v[u] + dv;
    }

    const TreeProcess<MatrixXd> x = solve_linear_sde(fs, v);

    RhiProbe probe;
    for (NodeId w = 0; w < t.node_count(); ++w) {
        const std::size_t i = static_cast<std::size_t>(w);
        MatrixXd expect = MatrixXd::Zero(n, n);
        if (active[i])
            expect = fs.s[w] * fs.s_inv[stop_at[i]] - MatrixXd::Identity(n, n);
        probe.identity_gap = std::max(probe.identity_gap, op2norm(x[w] - expect));
    }

    double lp = 0.0;
    for (NodeId w = t.leaf_begin(); w < t.node_count(); ++w)
        lp += t.node_prob(w) * std::pow(op2norm(x[w]), p);
    probe.lhs = std::pow(lp, 1.0 / p);

    // H^p of V from the predictable Frobenius bracket along each path
    std::vector<double> acc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        double step = 0.0;
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            step += t.edge_prob(w) * (v[w] - v[u]).squaredNorm();
        }
        for (int c = 0; c < t.branching(); ++c) {
            const NodeId w = t.child(u, c);
            acc[static_cast<std::size_t>(w)] = acc[static_cast<std::size_t>(u)] + step;
        }
    }
    double hp = 0.0;
    for (NodeId w = t.leaf_begin(); w < t.node_count(); ++w)
        hp += t.node_prob(w) * std::pow(acc[static_cast<std::size_t>(w)], p / 2.0);
    probe.rhs = std::pow(hp, 1.0 / p);
    probe.ratio = probe.rhs > 0.0 ? probe.lhs / probe.rhs : 0.0;
    return probe;
}

}  // namespace bmo
