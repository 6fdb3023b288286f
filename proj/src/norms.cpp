#include "bmolab/norms.hpp"

#include <algorithm>
#include <cmath>

namespace bmo {

TreeProcess<double> remaining_bracket(const TreeMartingale& m) {
    const Tree& t = m.tree();
    std::vector<double> terminal(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        terminal[static_cast<std::size_t>(v)] = m.pred_bracket(v);
    auto closure = condexp(t, terminal);
    TreeProcess<double> g(t);
    for (NodeId v = 0; v < t.node_count(); ++v) g[v] = closure[v] - m.pred_bracket(v);
    return g;
}

double bmo_norm(const TreeMartingale& m) {
    auto g = remaining_bracket(m);
    double worst = 0.0;
    for (double v : g.values) worst = std::max(worst, v);
    return std::sqrt(worst);
}

namespace {

template <class T, class Abs>
double rp_impl(const TreeProcess<T>& x, double p, Abs abs_of) {
    const Tree& t = *x.tree;
    std::vector<double> running(static_cast<std::size_t>(t.node_count()), 0.0);
    running[0] = abs_of(x[0]);
    for (NodeId v = 1; v < t.node_count(); ++v)
        running[static_cast<std::size_t>(v)] =
            std::max(running[static_cast<std::size_t>(t.parent(v))], abs_of(x[v]));
    double acc = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        acc += t.node_prob(v) * std::pow(running[static_cast<std::size_t>(v)], p);
    return std::pow(acc, 1.0 / p);
}

}  // namespace

double norm_rp(const TreeProcess<double>& x, double p) {
    return rp_impl(x, p, [](double v) { return std::abs(v); });
}

double norm_rp(const TreeProcess<Eigen::VectorXd>& x, double p) {
    return rp_impl(x, p, [](const Eigen::VectorXd& v) { return v.norm(); });
}

double norm_rinf(const TreeProcess<double>& x) {
    double worst = 0.0;
    for (double v : x.values) worst = std::max(worst, std::abs(v));
    return worst;
}

double norm_rinf(const TreeProcess<Eigen::VectorXd>& x) {
    double worst = 0.0;
    for (const auto& v : x.values) worst = std::max(worst, v.norm());
    return worst;
}

double norm_hp(const TreeMartingale& m, double p) {
    const Tree& t = m.tree();
    double acc = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        acc += t.node_prob(v) * std::pow(m.pred_bracket(v), p / 2.0);
    return std::pow(acc, 1.0 / p);
}

double lp_terminal(const TreeProcess<double>& x, double p) {
    const Tree& t = *x.tree;
    double acc = 0.0;
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        acc += t.node_prob(v) * std::pow(std::abs(x[v]), p);
    return std::pow(acc, 1.0 / p);
}

ReverseHolder reverse_holder_constant(const TreeProcess<double>& L, double p) {
    const Tree& t = *L.tree;
    std::vector<double> lp(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v) {
        if (!(L[v] > 0.0)) throw Error("reverse_holder_constant: L must be positive");
        lp[static_cast<std::size_t>(v)] = std::pow(L[v], p);
    }
    auto closure = condexp(t, lp);
    ReverseHolder out{0.0, 0};
    for (NodeId v = 0; v < t.node_count(); ++v) {
        if (!(L[v] > 0.0)) throw Error("reverse_holder_constant: L must be positive");
        double c = closure[v] / std::pow(L[v], p);
        if (c > out.constant) out = {c, v};
    }
    return out;
}

double bracket_exp_moment(const TreeMartingale& m, double lambda) {
    const Tree& t = m.tree();
    std::vector<double> e(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        e[static_cast<std::size_t>(v)] = std::exp(lambda * m.pred_bracket(v));
    auto closure = condexp(t, e);
    double worst = 0.0;
    for (NodeId v = 0; v < t.node_count(); ++v)
        worst = std::max(worst, closure[v] * std::exp(-lambda * m.pred_bracket(v)));
    return worst;
}

double abs_exp_moment(const TreeMartingale& m, double lambda) {
    const Tree& t = m.tree();
    // conditional base point moves with v, so this is quadratic in tree size
    double worst = 0.0;
    std::vector<std::vector<NodeId>> leaves_below(static_cast<std::size_t>(t.node_count()));
    for (NodeId leaf = t.leaf_begin(); leaf < t.node_count(); ++leaf) {
        NodeId v = leaf;
        while (true) {
            leaves_below[static_cast<std::size_t>(v)].push_back(leaf);
            if (v == 0) break;
            v = t.parent(v);
        }
    }
    for (NodeId v = 0; v < t.node_count(); ++v) {
        double num = 0.0;
        for (NodeId leaf : leaves_below[static_cast<std::size_t>(v)])
            num += t.node_prob(leaf) * std::exp(lambda * std::abs(m.value(leaf) - m.value(v)));
        worst = std::max(worst, num / t.node_prob(v));
    }
    return worst;
}

double john_nirenberg_bound(double eps, double bmo) {
    double q = 8.0 * eps * bmo * bmo;
    if (q >= 1.0) throw Error("john_nirenberg_bound: 8*eps*||M||^2 must be < 1");
    return 1.0 / (1.0 - q);
}

double min_feasible_eps(const TreeMartingale& m) {
    const Tree& t = m.tree();
    double worst = 0.0;
    for (NodeId u = 0; u < t.internal_count(); ++u) worst = std::max(worst, m.pred_step(u));
    return std::sqrt(worst);
}

std::vector<double> slice_bmo_norms(const TreeMartingale& m, const std::vector<int>& region,
                                    int slice_count) {
    const Tree& t = m.tree();
    std::vector<double> out(static_cast<std::size_t>(slice_count), 0.0);
    std::vector<double> done(static_cast<std::size_t>(t.node_count()), 0.0);
    for (int s = 1; s <= slice_count; ++s) {
        // done(v): slice-s bracket accumulated strictly above v
        done.assign(done.size(), 0.0);
        for (NodeId w = 1; w < t.node_count(); ++w) {
            NodeId u = t.parent(w);
            done[static_cast<std::size_t>(w)] =
                done[static_cast<std::size_t>(u)] +
                (region[static_cast<std::size_t>(u)] == s ? m.pred_step(u) : 0.0);
        }
        auto closure = condexp(t, done);
        double worst = 0.0;
        for (NodeId v = 0; v < t.node_count(); ++v)
            worst = std::max(worst, closure[v] - done[static_cast<std::size_t>(v)]);
        out[static_cast<std::size_t>(s - 1)] = std::sqrt(std::max(0.0, worst));
    }
    return out;
}

SliceCertificate epsilon_slice(const std::vector<std::pair<const TreeMartingale*, double>>& req) {
    if (req.empty()) throw Error("epsilon_slice: empty request");
    const Tree& t = req[0].first->tree();
    const std::size_t k = req.size();
    for (const auto& [m, eps] : req) {
        if (&m->tree() != &t) throw Error("epsilon_slice: martingales on different trees");
        double feasible = min_feasible_eps(*m);
        if (eps < feasible)
            throw Error("epsilon_slice: eps " + std::to_string(eps) +
                        " below the one-step minimum " + std::to_string(feasible));
    }

    SliceCertificate cert;
    for (const auto& [m, eps] : req) cert.eps.push_back(eps);
    cert.region.assign(static_cast<std::size_t>(t.node_count()), 1);

    // within-slice path budgets per martingale, accumulated top-down
    std::vector<std::vector<double>> spent(k,
        std::vector<double>(static_cast<std::size_t>(t.node_count()), 0.0));
    int max_region = 1;
    std::vector<std::vector<std::uint8_t>> cut_flags;  // per boundary index

    for (NodeId v = 0; v < t.node_count(); ++v) {
        int reg;
        if (v == 0) {
            reg = 1;
        } else {
            NodeId u = t.parent(v);
            reg = cert.region[static_cast<std::size_t>(u)];
            for (std::size_t j = 0; j < k; ++j)
                spent[j][static_cast<std::size_t>(v)] =
                    spent[j][static_cast<std::size_t>(u)] + req[j].first->pred_step(u);
        }
        if (!t.is_leaf(v)) {
            bool cut = false;
            for (std::size_t j = 0; j < k; ++j) {
                double next = spent[j][static_cast<std::size_t>(v)] + req[j].first->pred_step(v);
                if (next > req[j].second * req[j].second * (1.0 + 1e-12)) { cut = true; break; }
            }
            if (cut) {
                // v starts a fresh slice; record it on the boundary T_reg
                while (static_cast<int>(cut_flags.size()) < reg)
                    cut_flags.emplace_back(static_cast<std::size_t>(t.node_count()), 0);
                cut_flags[static_cast<std::size_t>(reg - 1)][static_cast<std::size_t>(v)] = 1;
                reg += 1;
                for (std::size_t j = 0; j < k; ++j) spent[j][static_cast<std::size_t>(v)] = 0.0;
            }
        }
        cert.region[static_cast<std::size_t>(v)] = reg;
        max_region = std::max(max_region, reg);
    }

    cert.slice_count = max_region;
    // boundary T_i: the recorded cuts at depth i plus every leaf whose path
    // has fewer than i cuts (those paths are already at the horizon)
    for (int i = 1; i <= cert.slice_count; ++i) {
        std::vector<std::uint8_t> flags(static_cast<std::size_t>(t.node_count()), 0);
        if (i <= static_cast<int>(cut_flags.size()))
            flags = cut_flags[static_cast<std::size_t>(i - 1)];
        for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
            if (cert.region[static_cast<std::size_t>(v)] <= i) flags[static_cast<std::size_t>(v)] = 1;
        cert.boundaries.emplace_back(t, std::move(flags));
    }

    for (const auto& [m, eps] : req)
        cert.slice_bmo.push_back(slice_bmo_norms(*m, cert.region, cert.slice_count));
    return cert;
}

SliceCertificate epsilon_slice(const TreeMartingale& m, double eps) {
    return epsilon_slice({{&m, eps}});
}

bool SliceCertificate::validate(const std::vector<const TreeMartingale*>& ms, double tol) const {
    if (ms.size() != eps.size()) return false;
    for (std::size_t j = 0; j < ms.size(); ++j) {
        auto norms = slice_bmo_norms(*ms[j], region, slice_count);
        for (double n : norms)
            if (n > eps[j] + tol) return false;
    }
    return true;
}

DualityProbe duality_lower_bound(const TreeMartingale& x,
                                 const std::vector<const TreeMartingale*>& probes) {
    DualityProbe out{0.0, 0.0};
    for (const auto* y : probes) {
        double b = bmo_norm(*y);
        if (b <= 0.0) continue;
        auto cov = covariation(x, *y);
        const Tree& t = x.tree();
        double pairing = 0.0;
        for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
            pairing += t.node_prob(v) * cov.cumulative[v];
        out.best = std::max(out.best, std::abs(pairing) / b);
    }
    double h1 = norm_hp(x, 1.0);
    out.fraction = h1 > 0.0 ? out.best / h1 : 0.0;
    return out;
}

}  // namespace bmo
