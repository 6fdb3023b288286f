#include "bmolab/tree.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <nlohmann/json.hpp>

#include <Eigen/Core>

namespace bmo {

Tree::Tree(int depth, int branching, std::vector<double> edge_prob, double dt)
    : depth_(depth), branching_(branching), dt_(dt), edge_prob_(std::move(edge_prob)) {
    if (depth < 1) throw Error("Tree: depth must be >= 1");
    if (branching < 2) throw Error("Tree: branching must be >= 2");

    offsets_.resize(static_cast<std::size_t>(depth) + 2);
    offsets_[0] = 0;
    NodeId width = 1;
    for (int k = 0; k <= depth; ++k) {
        offsets_[static_cast<std::size_t>(k) + 1] = offsets_[static_cast<std::size_t>(k)] + width;
        width *= branching;
    }
    if (dt_ == 0.0) dt_ = 1.0 / depth;

    const NodeId n = offsets_.back();
    if (edge_prob_.size() != static_cast<std::size_t>(n))
        throw Error("Tree: edge probability count does not match node count");

    node_prob_.assign(static_cast<std::size_t>(n), 0.0);
    node_prob_[0] = 1.0;
    edge_prob_[0] = 1.0;
    for (NodeId u = 0; u < internal_count(); ++u) {
        double sum = 0.0;
        for (int c = 0; c < branching_; ++c) {
            NodeId w = child(u, c);
            double p = edge_prob_[static_cast<std::size_t>(w)];
            if (!(p > 0.0)) throw Error("Tree: edge probabilities must be strictly positive");
            node_prob_[static_cast<std::size_t>(w)] = node_prob_[static_cast<std::size_t>(u)] * p;
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-14)
            throw Error("Tree: child probabilities at node " + std::to_string(u) +
                        " sum to " + std::to_string(sum));
    }
}

int Tree::level_of(NodeId v) const {
    int lo = 0, hi = depth_;
    while (lo < hi) {
        int mid = (lo + hi + 1) / 2;
        if (v >= offsets_[static_cast<std::size_t>(mid)]) lo = mid;
        else hi = mid - 1;
    }
    return lo;
}

TreeMartingale::TreeMartingale(const Tree& t, const std::vector<double>& increments, double m0,
                               double martingale_tol)
    : tree_(&t), value_(t) {
    const NodeId n = t.node_count();
    if (increments.size() != static_cast<std::size_t>(n))
        throw Error("TreeMartingale: increment count does not match node count");

    pred_step_.assign(static_cast<std::size_t>(n), 0.0);
    pred_cum_.assign(static_cast<std::size_t>(n), 0.0);
    opt_cum_.assign(static_cast<std::size_t>(n), 0.0);

    value_[0] = m0;
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        double drift = 0.0, var = 0.0;
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            double inc = increments[static_cast<std::size_t>(w)];
            drift += t.edge_prob(w) * inc;
            var += t.edge_prob(w) * inc * inc;
        }
        if (std::abs(drift) > martingale_tol)
            throw Error("TreeMartingale: increments at node " + std::to_string(u) +
                        " have conditional mean " + std::to_string(drift));
        pred_step_[static_cast<std::size_t>(u)] = var;
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            double inc = increments[static_cast<std::size_t>(w)];
            value_[w] = value_[u] + inc;
            pred_cum_[static_cast<std::size_t>(w)] = pred_cum_[static_cast<std::size_t>(u)] + var;
            opt_cum_[static_cast<std::size_t>(w)] =
                opt_cum_[static_cast<std::size_t>(u)] + inc * inc;
        }
    }
}

StoppingTime::StoppingTime(const Tree& t, std::vector<std::uint8_t> flags)
    : tree_(&t), flags_(std::move(flags)) {
    const NodeId n = t.node_count();
    if (flags_.size() != static_cast<std::size_t>(n))
        throw Error("StoppingTime: flag count does not match node count");

    before_.assign(static_cast<std::size_t>(n), 0);
    std::vector<std::uint8_t> covered(static_cast<std::size_t>(n), 0);
    for (NodeId v = 0; v < n; ++v) {
        bool above = v != 0 && covered[static_cast<std::size_t>(tree_->parent(v))] != 0;
        bool here = flags_[static_cast<std::size_t>(v)] != 0;
        covered[static_cast<std::size_t>(v)] = (above || here) ? 1 : 0;
        before_[static_cast<std::size_t>(v)] = (above || here) ? 0 : 1;
        if (!above && here) frontier_.push_back(v);
    }
    for (NodeId v = t.leaf_begin(); v < n; ++v)
        if (!covered[static_cast<std::size_t>(v)])
            throw Error("StoppingTime: path through leaf " + std::to_string(v) + " never stops");
}

StoppingTime StoppingTime::at_level(const Tree& t, int level) {
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(t.node_count()), 0);
    for (NodeId v = t.level_offset(level); v < t.level_offset(level + 1); ++v)
        flags[static_cast<std::size_t>(v)] = 1;
    return StoppingTime(t, std::move(flags));
}

NodeId StoppingTime::stop_node_on_path(NodeId leaf) const {
    // walk up collecting the path, then scan it from the root
    std::vector<NodeId> path;
    for (NodeId v = leaf;; v = tree_->parent(v)) {
        path.push_back(v);
        if (v == 0) break;
    }
    for (auto it = path.rbegin(); it != path.rend(); ++it)
        if (flagged(*it)) return *it;
    return -1;
}

template <class T>
TreeProcess<T> condexp(const Tree& t, const std::vector<T>& x_leaf) {
    if (x_leaf.size() != static_cast<std::size_t>(t.node_count()))
        throw Error("condexp: value count does not match tree");
    TreeProcess<T> out(t);
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
        out[v] = x_leaf[static_cast<std::size_t>(v)];
    for (NodeId u = t.internal_count() - 1; u >= 0; --u) {
        NodeId c0 = t.child(u, 0);
        T acc = out[c0];
        acc = acc * t.edge_prob(c0);
        for (int c = 1; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            acc = acc + out[w] * t.edge_prob(w);
        }
        out[u] = acc;
    }
    return out;
}

template TreeProcess<double> condexp(const Tree&, const std::vector<double>&);
template TreeProcess<std::complex<double>> condexp(const Tree&,
                                                   const std::vector<std::complex<double>>&);
template TreeProcess<Eigen::VectorXd> condexp(const Tree&, const std::vector<Eigen::VectorXd>&);
template TreeProcess<Eigen::MatrixXd> condexp(const Tree&, const std::vector<Eigen::MatrixXd>&);

TreeMartingale stochastic_integral(const TreeProcess<double>& h, const TreeMartingale& m) {
    const Tree& t = m.tree();
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId w = 1; w < t.node_count(); ++w)
        inc[static_cast<std::size_t>(w)] = h[t.parent(w)] * m.increment(w);
    return TreeMartingale(t, inc, 0.0, 1e-9);
}

template <class T>
TreeProcess<T> stochastic_integral_values(const TreeProcess<T>& h, const TreeMartingale& m) {
    const Tree& t = m.tree();
    TreeProcess<T> out(t);
    out[0] = h[0] * 0.0;  // zero of the value type
    for (NodeId w = 1; w < t.node_count(); ++w) {
        NodeId u = t.parent(w);
        out[w] = out[u] + h[u] * m.increment(w);
    }
    return out;
}

template TreeProcess<std::complex<double>> stochastic_integral_values(
    const TreeProcess<std::complex<double>>&, const TreeMartingale&);
template TreeProcess<Eigen::VectorXd> stochastic_integral_values(const TreeProcess<Eigen::VectorXd>&,
                                                                 const TreeMartingale&);

Covariation covariation(const TreeMartingale& x, const TreeMartingale& y) {
    const Tree& t = x.tree();
    Covariation out{TreeProcess<double>(t, Kind::Predictable), TreeProcess<double>(t)};
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        double s = 0.0;
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            s += t.edge_prob(w) * x.increment(w) * y.increment(w);
        }
        out.step[u] = s;
        for (int c = 0; c < t.branching(); ++c)
            out.cumulative[t.child(u, c)] = out.cumulative[u] + s;
    }
    return out;
}

Covariation optional_covariation(const TreeMartingale& x, const TreeMartingale& y) {
    const Tree& t = x.tree();
    Covariation out{TreeProcess<double>(t), TreeProcess<double>(t)};
    for (NodeId w = 1; w < t.node_count(); ++w) {
        double s = x.increment(w) * y.increment(w);
        out.step[w] = s;
        out.cumulative[w] = out.cumulative[t.parent(w)] + s;
    }
    return out;
}

KwDecomposition kw_decompose(const TreeMartingale& n, const TreeMartingale& m) {
    const Tree& t = n.tree();
    KwDecomposition out;
    out.z = TreeProcess<double>(t, Kind::Predictable);
    std::vector<double> perp(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        double cov = 0.0;
        double var = m.pred_step(u);
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            cov += t.edge_prob(w) * n.increment(w) * m.increment(w);
        }
        double z = 0.0;
        if (var > 0.0) {
            z = cov / var;
        } else {
            out.degenerate.push_back(u);
        }
        out.z[u] = z;
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(u, c);
            perp[static_cast<std::size_t>(w)] = n.increment(w) - z * m.increment(w);
        }
    }
    out.n_perp = TreeMartingale(t, perp, 0.0, 1e-9);
    return out;
}

SupResult sup_over_stopping_times(const TreeProcess<double>& g) {
    const Tree& t = *g.tree;
    SupResult r{g[0], 0};
    for (NodeId v = 1; v < t.node_count(); ++v)
        if (g[v] > r.value) r = {g[v], v};
    return r;
}

std::string to_json(const TreeBundle& b) {
    nlohmann::json j;
    j["schema"] = 1;
    j["depth"] = b.depth;
    j["branching"] = b.branching;
    j["dt"] = b.dt;
    j["probabilities"] = b.edge_prob;
    nlohmann::json mj = nlohmann::json::object();
    for (const auto& [name, inc] : b.martingale_increments) mj[name] = inc;
    j["martingales"] = mj;
    return j.dump(2);
}

TreeBundle tree_bundle_from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    TreeBundle b;
    b.depth = j.at("depth").get<int>();
    b.branching = j.at("branching").get<int>();
    b.dt = j.value("dt", 0.0);
    b.edge_prob = j.at("probabilities").get<std::vector<double>>();
    if (j.contains("martingales"))
        for (auto& [name, inc] : j.at("martingales").items())
            b.martingale_increments[name] = inc.get<std::vector<double>>();
    return b;
}

}  // namespace bmo
