#ifndef BMOLAB_CORPUS_HPP
#define BMOLAB_CORPUS_HPP

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bmolab/tree.hpp"

namespace bmo {

// Deterministic seeded generators. The same (seed, shape) always yields the
// same object, independent of call order.

Tree random_tree(std::uint64_t seed, int depth, int branching, double dt = 0.0);

// centered increments, scaled so one-step conditional variances are O(scale^2)
TreeMartingale random_martingale(const Tree& t, std::uint64_t seed, double scale = 1.0);

// single-step |dM| = 1 fair coin on a depth-1 binary tree
Tree coin_tree();
TreeMartingale coin_martingale(const Tree& t);

// named tree-martingale recipes for the CLI and spec files
// ("random", "coin", "random-small"); throws on unknown names, listing them
TreeMartingale tree_martingale_by_name(const std::string& name, const Tree& t,
                                       std::uint64_t seed);
std::vector<std::string> tree_martingale_names();

struct CorpusSpec {
    int count = 0;
    int depth = 4;
    int branching = 2;
    std::uint64_t seed = 1;
};

// "seeded:{n:100,depth:4,branching:2}" or a JSON file path
CorpusSpec parse_corpus_spec(const std::string& text);

// the tree sits behind shared ownership so the martingale's internal pointer
// stays valid when items are copied or a vector reallocates
struct CorpusItem {
    std::shared_ptr<const Tree> tree;
    TreeMartingale m;
};

std::vector<CorpusItem> build_corpus(const CorpusSpec& spec);

// reference corpus feeding empirical constant estimates: mixed random trees
// plus single-step coins so degenerate ratio cases are represented
std::vector<CorpusItem> reference_corpus(std::uint64_t seed, int count = 64);

}  // namespace bmo

#endif
