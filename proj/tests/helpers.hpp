#ifndef BMOLAB_TEST_HELPERS_HPP
#define BMOLAB_TEST_HELPERS_HPP

#include <vector>

#include "bmolab/tree.hpp"

namespace bmotest {

// All stopping times of a tree, each given by its frontier (stop nodes).
// Grows doubly exponentially; keep depth <= 4 binary / <= 3 ternary.
inline void enumerate_frontiers(const bmo::Tree& t, bmo::NodeId v,
                                std::vector<std::vector<bmo::NodeId>>& out) {
    out.push_back({v});  // stop at v itself
    if (t.is_leaf(v)) return;
    std::vector<std::vector<std::vector<bmo::NodeId>>> per_child;
    for (int c = 0; c < t.branching(); ++c) {
        std::vector<std::vector<bmo::NodeId>> sub;
        enumerate_frontiers(t, t.child(v, c), sub);
        per_child.push_back(std::move(sub));
    }
    // cartesian product of the children's frontier lists
    std::vector<std::vector<bmo::NodeId>> acc = {{}};
    for (const auto& sub : per_child) {
        std::vector<std::vector<bmo::NodeId>> next;
        for (const auto& partial : acc)
            for (const auto& choice : sub) {
                auto merged = partial;
                merged.insert(merged.end(), choice.begin(), choice.end());
                next.push_back(std::move(merged));
            }
        acc = std::move(next);
    }
    for (auto& f : acc) out.push_back(std::move(f));
}

inline std::vector<std::vector<bmo::NodeId>> all_stopping_times(const bmo::Tree& t) {
    std::vector<std::vector<bmo::NodeId>> out;
    enumerate_frontiers(t, 0, out);
    return out;
}

inline bmo::StoppingTime frontier_to_stopping_time(const bmo::Tree& t,
                                                   const std::vector<bmo::NodeId>& frontier) {
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(t.node_count()), 0);
    for (auto v : frontier) flags[static_cast<std::size_t>(v)] = 1;
    return bmo::StoppingTime(t, std::move(flags));
}

}  // namespace bmotest

#endif
