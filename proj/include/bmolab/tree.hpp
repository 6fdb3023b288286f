#ifndef BMOLAB_TREE_HPP
#define BMOLAB_TREE_HPP

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmo {

struct Error : std::runtime_error {
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

using NodeId = std::int32_t;

/**
 * Finite filtration with uniform branching.
 *
 * Nodes are numbered level by level: level k occupies
 * [offset(k), offset(k+1)) with offset(k) = (B^k - 1)/(B - 1).
 * Every non-terminal node has exactly `branching` children with strictly
 * positive one-step probabilities summing to 1. Each non-root node is also
 * the identifier of its incoming edge.
 */
class Tree {
  public:
    Tree(int depth, int branching, std::vector<double> edge_prob, double dt = 0.0);

    int depth() const { return depth_; }
    int branching() const { return branching_; }
    double dt() const { return dt_; }

    NodeId node_count() const { return static_cast<NodeId>(node_prob_.size()); }
    NodeId level_offset(int level) const { return offsets_[level]; }
    NodeId level_count(int level) const { return offsets_[level + 1] - offsets_[level]; }
    NodeId internal_count() const { return level_offset(depth_); }
    NodeId leaf_begin() const { return level_offset(depth_); }

    int level_of(NodeId v) const;
    bool is_leaf(NodeId v) const { return v >= leaf_begin(); }
    NodeId parent(NodeId v) const { return (v - 1) / branching_; }
    NodeId child(NodeId v, int c) const { return branching_ * v + 1 + c; }

    // probability of the edge into node v (v != root)
    double edge_prob(NodeId v) const { return edge_prob_[v]; }
    // unconditional probability of passing through v
    double node_prob(NodeId v) const { return node_prob_[v]; }
    double time_of(NodeId v) const { return dt_ * level_of(v); }

  private:
    int depth_;
    int branching_;
    double dt_;
    std::vector<NodeId> offsets_;
    std::vector<double> edge_prob_;
    std::vector<double> node_prob_;
};

enum class Kind { Adapted, Predictable };

template <class T>
struct TreeProcess {
    const Tree* tree = nullptr;
    std::vector<T> values;
    Kind kind = Kind::Adapted;

    TreeProcess() = default;
    TreeProcess(const Tree& t, Kind k = Kind::Adapted)
        : tree(&t), values(static_cast<std::size_t>(t.node_count())), kind(k) {}
    TreeProcess(const Tree& t, std::vector<T> v, Kind k = Kind::Adapted)
        : tree(&t), values(std::move(v)), kind(k) {
        if (values.size() != static_cast<std::size_t>(t.node_count()))
            throw Error("TreeProcess: value count does not match tree");
    }

    T& operator[](NodeId v) { return values[static_cast<std::size_t>(v)]; }
    const T& operator[](NodeId v) const { return values[static_cast<std::size_t>(v)]; }
};

/**
 * Adapted martingale on a Tree together with both brackets.
 *
 * pred_step(u) = E[(dM)^2 | u] is attached to the parent node of a step and
 * is the same for all of its children; cumulative brackets are per node,
 * zero at the root.
 */
class TreeMartingale {
  public:
    TreeMartingale() = default;
    // increments indexed by edge (= child node id); increments[0] ignored
    TreeMartingale(const Tree& t, const std::vector<double>& increments, double m0 = 0.0,
                   double martingale_tol = 1e-12);

    const Tree& tree() const { return *tree_; }
    const TreeProcess<double>& value() const { return value_; }
    double value(NodeId v) const { return value_[v]; }
    double increment(NodeId child) const { return value_[child] - value_[tree_->parent(child)]; }

    double pred_step(NodeId u) const { return pred_step_[static_cast<std::size_t>(u)]; }
    double pred_bracket(NodeId v) const { return pred_cum_[static_cast<std::size_t>(v)]; }
    double opt_bracket(NodeId v) const { return opt_cum_[static_cast<std::size_t>(v)]; }

  private:
    const Tree* tree_ = nullptr;
    TreeProcess<double> value_;
    std::vector<double> pred_step_;
    std::vector<double> pred_cum_;
    std::vector<double> opt_cum_;
};

/**
 * Stopping time as a flag set: the stop node of a path is the first flagged
 * node on it. Valid only if every root-to-leaf path carries a flag.
 */
class StoppingTime {
  public:
    StoppingTime() = default;
    StoppingTime(const Tree& t, std::vector<std::uint8_t> flags);

    static StoppingTime at_level(const Tree& t, int level);
    static StoppingTime at_horizon(const Tree& t) { return at_level(t, t.depth()); }

    const Tree& tree() const { return *tree_; }
    bool flagged(NodeId v) const { return flags_[static_cast<std::size_t>(v)] != 0; }
    // first flagged node on the path through v, or -1 if none up to v
    NodeId stop_node_on_path(NodeId leaf) const;
    // stop nodes, i.e. flagged nodes with no flagged strict ancestor
    const std::vector<NodeId>& frontier() const { return frontier_; }
    // true if v lies strictly before the stop node of its path
    bool before_stop(NodeId v) const { return before_[static_cast<std::size_t>(v)] != 0; }

  private:
    const Tree* tree_ = nullptr;
    std::vector<std::uint8_t> flags_;
    std::vector<std::uint8_t> before_;  // strictly before the stop node
    std::vector<NodeId> frontier_;
};

// Closure of a terminal variable: value at v is the probability-weighted
// average of x over the leaves below v. Only leaf entries of x are read.
template <class T>
TreeProcess<T> condexp(const Tree& t, const std::vector<T>& x_leaf);

// Martingale closure E[x_T | .] of the terminal slice of an adapted process.
template <class T>
TreeProcess<T> condexp(const TreeProcess<T>& x) {
    return condexp(*x.tree, x.values);
}

// (h . M)(v) = sum over path edges of h(parent) * dM, with both brackets.
TreeMartingale stochastic_integral(const TreeProcess<double>& h, const TreeMartingale& m);

// Same integral for values that are not scalar (vectors, matrices, complex);
// no bracket bookkeeping.
template <class T>
TreeProcess<T> stochastic_integral_values(const TreeProcess<T>& h, const TreeMartingale& m);

struct Covariation {
    // predictable: step[u] = E[dX dY | u] at the parent; optional: step[w] =
    // dX dW at the edge into w. cumulative is the path sum, zero at the root.
    TreeProcess<double> step;
    TreeProcess<double> cumulative;
};

// predictable covariation <X,Y>
Covariation covariation(const TreeMartingale& x, const TreeMartingale& y);
// optional covariation [X,Y]: pathwise products of increments
Covariation optional_covariation(const TreeMartingale& x, const TreeMartingale& y);

struct KwDecomposition {
    TreeProcess<double> z;    // predictable integrand against m
    TreeMartingale n_perp;    // orthogonal remainder, starts at 0
    std::vector<NodeId> degenerate;  // nodes where E[dM^2|u] = 0 (z set to 0)
};

// n = n_0 + z.M + n_perp with <M, n_perp> = 0 step by step
KwDecomposition kw_decompose(const TreeMartingale& n, const TreeMartingale& m);

struct SupResult {
    double value;
    NodeId argmax;
};

// sup over stopping times of the essential sup of g at the stop; on a tree
// this is the maximum of g over nodes.
SupResult sup_over_stopping_times(const TreeProcess<double>& g);

// ---- serialization -------------------------------------------------------

struct TreeBundle {
    int depth = 0;
    int branching = 0;
    double dt = 0.0;
    std::vector<double> edge_prob;
    std::map<std::string, std::vector<double>> martingale_increments;

    Tree build_tree() const { return Tree(depth, branching, edge_prob, dt); }
};

std::string to_json(const TreeBundle& bundle);
TreeBundle tree_bundle_from_json(const std::string& text);

}  // namespace bmo

#endif
