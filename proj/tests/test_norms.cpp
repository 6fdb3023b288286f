#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "bmolab/corpus.hpp"
#include "bmolab/norms.hpp"
#include "bmolab/tree.hpp"
#include "helpers.hpp"

using namespace bmo;

namespace {

// E[<M>_T - <M>_v | v] by direct leaf enumeration, no shared code with the DP
double remaining_oracle(const Tree& t, const TreeMartingale& m, NodeId v) {
    double num = 0.0;
    for (NodeId leaf = t.leaf_begin(); leaf < t.node_count(); ++leaf) {
        NodeId a = leaf;
        while (a > v) a = t.parent(a);
        if (a == v) num += t.node_prob(leaf) * m.pred_bracket(leaf);
    }
    return num / t.node_prob(v) - m.pred_bracket(v);
}

Tree uniform_tree(int depth) {
    NodeId total = (1 << (depth + 1)) - 1;
    std::vector<double> prob(static_cast<std::size_t>(total), 0.5);
    prob[0] = 1.0;
    return Tree(depth, 2, std::move(prob), 1.0);
}

TreeMartingale unit_walk(const Tree& t) {
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId u = 0; u < t.internal_count(); ++u) {
        inc[static_cast<std::size_t>(t.child(u, 0))] = 1.0;
        inc[static_cast<std::size_t>(t.child(u, 1))] = -1.0;
    }
    return TreeMartingale(t, inc);
}

}  // namespace

TEST_CASE("bmo norm equals exhaustive sup over stopping times") {
    // every frontier of the enumeration is a stopping time; the sup over all
    // of them of the worst conditional remaining bracket is the BMO norm
    for (std::uint64_t seed : {11ULL, 12ULL, 13ULL, 14ULL, 15ULL, 16ULL, 17ULL}) {
        Tree t = random_tree(seed, 4, 2);
        TreeMartingale m = random_martingale(t, seed);
        double best = 0.0;
        for (const auto& frontier : bmotest::all_stopping_times(t)) {
            double worst = 0.0;
            for (NodeId v : frontier) worst = std::max(worst, remaining_oracle(t, m, v));
            best = std::max(best, worst);
        }
        CHECK(bmo_norm(m) == doctest::Approx(std::sqrt(best)).epsilon(1e-12));
    }
    for (std::uint64_t seed : {21ULL, 22ULL, 23ULL}) {
        Tree t = random_tree(seed, 3, 3);
        TreeMartingale m = random_martingale(t, seed, 0.7);
        double best = 0.0;
        for (const auto& frontier : bmotest::all_stopping_times(t)) {
            double worst = 0.0;
            for (NodeId v : frontier) worst = std::max(worst, remaining_oracle(t, m, v));
            best = std::max(best, worst);
        }
        CHECK(bmo_norm(m) == doctest::Approx(std::sqrt(best)).epsilon(1e-12));
    }
}

TEST_CASE("remaining bracket agrees with the node sup helper") {
    Tree t = random_tree(5, 4, 2);
    TreeMartingale m = random_martingale(t, 5);
    auto g = remaining_bracket(m);
    auto sup = sup_over_stopping_times(g);
    CHECK(bmo_norm(m) == doctest::Approx(std::sqrt(sup.value)));
    CHECK(g[0] == doctest::Approx(norm_hp(m, 2.0) * norm_hp(m, 2.0)).epsilon(1e-12));
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v) CHECK(g[v] == 0.0);
}

TEST_CASE("path-maximum and terminal norms are ordered") {
    Tree t = random_tree(31, 4, 2);
    TreeMartingale m = random_martingale(t, 31);
    const auto& x = m.value();
    CHECK(norm_rinf(x) >= norm_rp(x, 4.0) - 1e-13);
    CHECK(norm_rp(x, 4.0) >= norm_rp(x, 2.0) - 1e-13);
    CHECK(norm_rp(x, 2.0) >= lp_terminal(x, 2.0) - 1e-13);
    // vector-valued norms reduce to scalar ones on one-component processes
    TreeProcess<Eigen::VectorXd> vx(t);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        vx[v] = Eigen::VectorXd(1);
        vx[v][0] = x[v];
    }
    CHECK(norm_rp(vx, 3.0) == doctest::Approx(norm_rp(x, 3.0)));
    CHECK(norm_rinf(vx) == doctest::Approx(norm_rinf(x)));
}

TEST_CASE("squared H2 norm is the second moment of the terminal value") {
    for (std::uint64_t seed : {41ULL, 42ULL, 43ULL}) {
        Tree t = random_tree(seed, 4, 3);
        TreeMartingale m = random_martingale(t, seed);
        double second = 0.0;
        for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v)
            second += t.node_prob(v) * m.value(v) * m.value(v);
        double h2 = norm_hp(m, 2.0);
        CHECK(h2 * h2 == doctest::Approx(second).epsilon(1e-12));
    }
}

TEST_CASE("exponential bracket moment: coin value and general bound") {
    Tree t = coin_tree();
    TreeMartingale m = coin_martingale(t);
    CHECK(bmo_norm(m) == doctest::Approx(1.0));
    CHECK(john_nirenberg_bound(0.05, 1.0) == doctest::Approx(5.0 / 3.0).epsilon(1e-14));
    CHECK(bracket_exp_moment(m, 0.4) == doctest::Approx(std::exp(0.4)).epsilon(1e-14));
    CHECK(bracket_exp_moment(m, 0.4) <= john_nirenberg_bound(0.05, 1.0));
    CHECK_THROWS_AS(john_nirenberg_bound(0.2, 1.0), Error);

    // the geometric-series bound holds at every lambda below 1/||M||^2
    for (std::uint64_t seed : {51ULL, 52ULL, 53ULL, 54ULL}) {
        Tree rt = random_tree(seed, 4, 2);
        TreeMartingale rm = random_martingale(rt, seed, 0.8);
        double b2 = bmo_norm(rm) * bmo_norm(rm);
        for (double frac : {0.3, 0.7, 0.95}) {
            double lambda = frac / b2;
            CHECK(bracket_exp_moment(rm, lambda) <= 1.0 / (1.0 - frac) + 1e-10);
        }
    }
}

TEST_CASE("exponential moments match direct leaf enumeration") {
    Tree t = random_tree(61, 3, 3);
    TreeMartingale m = random_martingale(t, 61);
    double lam = 0.37;
    double worst_bracket = 0.0, worst_abs = 0.0;
    for (NodeId v = 0; v < t.node_count(); ++v) {
        double nb = 0.0, na = 0.0;
        for (NodeId leaf = t.leaf_begin(); leaf < t.node_count(); ++leaf) {
            NodeId a = leaf;
            while (a > v) a = t.parent(a);
            if (a != v) continue;
            nb += t.node_prob(leaf) * std::exp(lam * (m.pred_bracket(leaf) - m.pred_bracket(v)));
            na += t.node_prob(leaf) * std::exp(lam * std::abs(m.value(leaf) - m.value(v)));
        }
        worst_bracket = std::max(worst_bracket, nb / t.node_prob(v));
        worst_abs = std::max(worst_abs, na / t.node_prob(v));
    }
    CHECK(bracket_exp_moment(m, lam) == doctest::Approx(worst_bracket).epsilon(1e-12));
    CHECK(abs_exp_moment(m, lam) == doctest::Approx(worst_abs).epsilon(1e-12));

    Tree ct = coin_tree();
    CHECK(abs_exp_moment(coin_martingale(ct), 0.3) == doctest::Approx(std::exp(0.3)));
}

TEST_CASE("slicing a constant-step walk lands on the ceiling pattern") {
    Tree t = uniform_tree(4);
    TreeMartingale m = unit_walk(t);
    CHECK(min_feasible_eps(m) == doctest::Approx(1.0));
    CHECK_THROWS_AS(epsilon_slice(m, 0.999), Error);

    auto whole = epsilon_slice(m, 3.0);  // budget 9 >= total bracket 4
    CHECK(whole.slice_count == 1);
    CHECK(whole.validate({&m}));

    auto two = epsilon_slice(m, std::sqrt(2.0));
    CHECK(two.slice_count == 2);
    CHECK(two.validate({&m}));
    for (double n : two.slice_bmo[0]) CHECK(n == doctest::Approx(std::sqrt(2.0)));

    auto four = epsilon_slice(m, 1.0);
    CHECK(four.slice_count == 4);
    CHECK(four.validate({&m}));
    // each slice is one level of the walk; boundary i stops at level i
    for (int i = 0; i < 4; ++i) {
        for (NodeId v : four.boundaries[static_cast<std::size_t>(i)].frontier())
            CHECK(t.level_of(v) == i + 1);
    }

    // cramming all four unit steps into slice 1 blows its budget
    auto broken = four;
    for (auto& r : broken.region) r = 1;
    CHECK_FALSE(broken.validate({&m}));
}

TEST_CASE("slice certificates on random trees") {
    for (std::uint64_t seed : {71ULL, 72ULL, 73ULL, 74ULL, 75ULL}) {
        Tree t = random_tree(seed, 5, 2);
        TreeMartingale m = random_martingale(t, seed);
        double lo = min_feasible_eps(m);
        int prev = 0;
        for (double eps : {2.0 * lo, 1.4 * lo, 1.05 * lo}) {
            auto cert = epsilon_slice(m, eps);
            CHECK(cert.validate({&m}));
            CHECK(static_cast<int>(cert.boundaries.size()) == cert.slice_count);
            for (double n : cert.slice_bmo[0]) CHECK(n <= eps * (1.0 + 1e-9));
            // regions only move forward, one boundary at a time
            for (NodeId v = 1; v < t.node_count(); ++v) {
                int dr = cert.region[static_cast<std::size_t>(v)] -
                         cert.region[static_cast<std::size_t>(t.parent(v))];
                CHECK(dr >= 0);
                CHECK(dr <= 1);
            }
            // shrinking the budget can only refine the split
            CHECK(cert.slice_count >= prev);
            prev = cert.slice_count;
        }
    }
}

TEST_CASE("joint slicing honors every martingale's budget") {
    Tree t = random_tree(81, 4, 2);
    TreeMartingale a = random_martingale(t, 81, 1.0);
    TreeMartingale b = random_martingale(t, 82, 0.4);
    double ea = 1.3 * min_feasible_eps(a);
    double eb = 1.7 * min_feasible_eps(b);
    auto cert = epsilon_slice({{&a, ea}, {&b, eb}});
    CHECK(cert.validate({&a, &b}));
    for (double n : cert.slice_bmo[0]) CHECK(n <= ea * (1.0 + 1e-9));
    for (double n : cert.slice_bmo[1]) CHECK(n <= eb * (1.0 + 1e-9));
    // the joint split refines each solo split
    CHECK(cert.slice_count >= epsilon_slice(a, ea).slice_count);
    CHECK(cert.slice_count >= epsilon_slice(b, eb).slice_count);
    CHECK_THROWS_AS(epsilon_slice({}), Error);
}

TEST_CASE("slice boundaries are nested stopping times") {
    Tree t = random_tree(91, 4, 3);
    TreeMartingale m = random_martingale(t, 91);
    auto cert = epsilon_slice(m, 1.2 * min_feasible_eps(m));
    REQUIRE(cert.slice_count >= 2);
    const auto& last = cert.boundaries.back();
    for (NodeId v : last.frontier()) CHECK(t.is_leaf(v));
    for (int i = 0; i + 1 < cert.slice_count; ++i) {
        const auto& early = cert.boundaries[static_cast<std::size_t>(i)];
        const auto& late = cert.boundaries[static_cast<std::size_t>(i + 1)];
        // whatever is strictly before T_i is strictly before T_{i+1}
        for (NodeId v = 0; v < t.node_count(); ++v)
            if (early.before_stop(v)) CHECK(late.before_stop(v));
    }
}

TEST_CASE("reverse Holder constant from explicit positive processes") {
    Tree t = coin_tree();
    TreeProcess<double> L(t);
    L[0] = 1.0; L[1] = 2.0; L[2] = 0.5;
    auto rh = reverse_holder_constant(L, 2.0);
    CHECK(rh.constant == doctest::Approx(2.125).epsilon(1e-14));
    CHECK(rh.argmax == 0);

    L[2] = 0.0;
    CHECK_THROWS_AS(reverse_holder_constant(L, 2.0), Error);

    Tree rt = random_tree(101, 3, 2);
    TreeMartingale rm = random_martingale(rt, 101, 0.5);
    TreeProcess<double> E(rt);
    for (NodeId v = 0; v < rt.node_count(); ++v) E[v] = std::exp(rm.value(v));
    auto got = reverse_holder_constant(E, 1.5);
    double worst = 0.0;
    for (NodeId v = 0; v < rt.node_count(); ++v) {
        double num = 0.0;
        for (NodeId leaf = rt.leaf_begin(); leaf < rt.node_count(); ++leaf) {
            NodeId a = leaf;
            while (a > v) a = rt.parent(a);
            if (a == v) num += rt.node_prob(leaf) * std::pow(E[leaf] / E[v], 1.5);
        }
        worst = std::max(worst, num / rt.node_prob(v));
    }
    CHECK(got.constant == doctest::Approx(worst).epsilon(1e-12));
}

TEST_CASE("duality probe recovers the coin pairing in full") {
    Tree t = coin_tree();
    TreeMartingale x = coin_martingale(t);
    auto probe = duality_lower_bound(x, {&x});
    CHECK(probe.best == doctest::Approx(1.0));
    CHECK(probe.fraction == doctest::Approx(1.0));

    Tree rt = random_tree(111, 4, 2);
    TreeMartingale rx = random_martingale(rt, 111);
    TreeMartingale ry = random_martingale(rt, 112);
    auto p2 = duality_lower_bound(rx, {&rx, &ry});
    CHECK(p2.best > 0.0);
    // Fefferman caps the pairing by sqrt(2) times H1 x BMO
    CHECK(p2.fraction <= std::sqrt(2.0) + 1e-12);
}
