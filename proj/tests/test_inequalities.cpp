#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "bmolab/corpus.hpp"
#include "bmolab/inequalities.hpp"
#include "bmolab/norms.hpp"
#include "bmolab/tree.hpp"

using namespace bmo;

namespace {

TreeProcess<double> constant_process(const Tree& t, double c) {
    TreeProcess<double> p(t, Kind::Adapted);
    for (double& v : p.values) v = c;
    return p;
}

TreeProcess<double> running_abs_max(const TreeMartingale& m) {
    const Tree& t = m.tree();
    TreeProcess<double> r(t, Kind::Adapted);
    r.values[0] = std::abs(m.value(0));
    for (NodeId v = 1; v < t.node_count(); ++v)
        r.values[static_cast<std::size_t>(v)] =
            std::max(r.values[static_cast<std::size_t>(t.parent(v))], std::abs(m.value(v)));
    return r;
}

TreeProcess<double> abs_process(const TreeMartingale& m) {
    TreeProcess<double> r(m.tree(), Kind::Adapted);
    for (std::size_t i = 0; i < r.values.size(); ++i)
        r.values[i] = std::abs(m.value().values[i]);
    return r;
}

TreeMartingale zero_martingale(const Tree& t) {
    return TreeMartingale(t, std::vector<double>(static_cast<std::size_t>(t.node_count()), 0.0),
                          0.0);
}

TreeMartingale scaled(const TreeMartingale& m, double c) {
    const Tree& t = m.tree();
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = 1; v < t.node_count(); ++v)
        inc[static_cast<std::size_t>(v)] = c * m.increment(v);
    return TreeMartingale(t, std::move(inc), c * m.value(0));
}

}  // namespace

TEST_CASE("kunita-watanabe is an equality for identical arguments at p = 2") {
    Tree coin = coin_tree();
    TreeMartingale cm = coin_martingale(coin);
    TreeProcess<double> one = constant_process(coin, 1.0);
    InequalityReport r = verify_kunita_watanabe(cm, cm, one, one, 2.0);
    CHECK(r.pass);
    CHECK(r.lhs == doctest::Approx(r.rhs).epsilon(1e-12));
    CHECK(r.ratio == doctest::Approx(1.0).epsilon(1e-12));

    Tree t = random_tree(5, 4, 2);
    TreeMartingale x = random_martingale(t, 6);
    TreeProcess<double> ones = constant_process(t, 1.0);
    InequalityReport r2 = verify_kunita_watanabe(x, x, ones, ones, 2.0);
    CHECK(r2.pass);
    CHECK(r2.ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r2.backend == "tree");
}

TEST_CASE("kunita-watanabe covers degenerate inputs and all exponents") {
    Tree t = random_tree(17, 4, 2);
    TreeMartingale x = random_martingale(t, 18);
    TreeMartingale y = random_martingale(t, 19);
    TreeProcess<double> zero = constant_process(t, 0.0);
    TreeProcess<double> h = abs_process(x);

    InequalityReport r = verify_kunita_watanabe(x, y, h, zero, 2.0);
    CHECK(r.pass);
    CHECK(r.lhs == 0.0);
    CHECK(r.ratio == 0.0);

    for (double p : {1.0, 1.5, 3.0}) {
        InequalityReport e = verify_kunita_watanabe(x, y, h, abs_process(y), p);
        CHECK(e.pass);
        CHECK(e.lhs <= e.rhs * (1.0 + 1e-10));
    }

    CHECK_THROWS_AS(verify_kunita_watanabe(x, y, h, h, 0.5), Error);
    CHECK_THROWS_AS(
        verify_kunita_watanabe(x, y, h, h, std::numeric_limits<double>::infinity()), Error);
}

TEST_CASE("kunita-watanabe passes across two hundred random trees") {
    for (int i = 0; i < 200; ++i) {
        std::uint64_t s = 1000 + 17ULL * static_cast<std::uint64_t>(i);
        Tree t = random_tree(s, 4, 2);
        TreeMartingale x = random_martingale(t, s + 1);
        TreeMartingale y = random_martingale(t, s + 2);
        TreeProcess<double> h = abs_process(x);
        TreeProcess<double> k = abs_process(y);
        for (double p : {1.5, 2.0, 3.0}) {
            InequalityReport r = verify_kunita_watanabe(x, y, h, k, p);
            CHECK(r.pass);
        }
    }
}

TEST_CASE("fefferman matches the coin oracle and holds on random corpora") {
    Tree coin = coin_tree();
    TreeMartingale cm = coin_martingale(coin);
    InequalityReport r = verify_fefferman(cm, cm);
    CHECK(r.lhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.rhs == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.pass);

    InequalityReport z = verify_fefferman(cm, zero_martingale(coin));
    CHECK(z.pass);
    CHECK(z.ratio == 0.0);

    double worst = 0.0;
    for (int i = 0; i < 500; ++i) {
        std::uint64_t s = 40000 + 23ULL * static_cast<std::uint64_t>(i);
        Tree t = random_tree(s, 4, 2);
        TreeMartingale x = random_martingale(t, s + 1);
        TreeMartingale y = random_martingale(t, s + 2);
        InequalityReport e = verify_fefferman(x, y);
        CHECK(e.pass);
        worst = std::max(worst, e.ratio);
    }
    MESSAGE("largest fefferman ratio over 500 trees: ", worst);
    CHECK(worst < 1.0);
    CHECK(worst > 0.1);
}

TEST_CASE("emery is sharp for the unit integrand at p = 1") {
    Tree coin = coin_tree();
    TreeMartingale cm = coin_martingale(coin);
    TreeProcess<double> one = constant_process(coin, 1.0);

    InequalityReport p1 = verify_emery(one, cm, 1.0);
    CHECK(p1.lhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p1.rhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(p1.pass);

    InequalityReport p2 = verify_emery(one, cm, 2.0);
    CHECK(p2.ratio == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-12));
    CHECK(p2.pass);

    InequalityReport z = verify_emery(constant_process(coin, 0.0), cm, 2.0);
    CHECK(z.pass);
    CHECK(z.ratio == 0.0);

    CHECK_THROWS_AS(verify_emery(one, cm, 0.25), Error);
}

TEST_CASE("emery holds with the running maximum as integrand") {
    CorpusSpec spec;
    spec.count = 20;
    spec.seed = 3;
    for (const CorpusItem& item : build_corpus(spec)) {
        TreeProcess<double> star = running_abs_max(item.m);
        for (double p : {1.0, 2.0}) {
            InequalityReport r = verify_emery(star, item.m, p);
            CHECK(r.pass);
        }
    }
}

TEST_CASE("lp bracket bound matches the coin oracle") {
    Tree coin = coin_tree();
    TreeMartingale cm = coin_martingale(coin);
    InequalityReport r = verify_lp_bracket(cm, cm, 2.0);
    CHECK(r.lhs == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.rhs == doctest::Approx(2.0 * std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.pass);

    InequalityReport z = verify_lp_bracket(cm, zero_martingale(coin), 2.0);
    CHECK(z.pass);
    CHECK(z.ratio == 0.0);

    for (const CorpusItem& item : reference_corpus(5, 30)) {
        TreeMartingale y = random_martingale(*item.tree, 999);
        for (double p : {1.0, 1.5, 2.0, 4.0}) {
            InequalityReport e = verify_lp_bracket(item.m, y, p);
            CHECK(e.pass);
        }
    }
    CHECK_THROWS_AS(verify_lp_bracket(cm, cm, 0.0), Error);
}

TEST_CASE("linfty bracket controls the projected bracket martingale") {
    Tree coin = coin_tree();
    TreeMartingale cm = coin_martingale(coin);

    // the coin bracket is deterministic, so its projection never moves
    InequalityReport r = verify_linfty_bracket(cm, cm);
    CHECK(r.lhs == doctest::Approx(0.0));
    CHECK(r.rhs == doctest::Approx(std::sqrt(2.0)).epsilon(1e-12));
    CHECK(r.pass);

    InequalityReport z = verify_linfty_bracket(zero_martingale(coin), cm);
    CHECK(z.pass);
    CHECK(z.ratio == 0.0);

    for (const CorpusItem& item : reference_corpus(7, 30)) {
        TreeMartingale y = random_martingale(*item.tree, 1234);
        InequalityReport e = verify_linfty_bracket(item.m, y);
        CHECK(e.pass);
    }
}

TEST_CASE("rinf bound is an equality for the unit integrand") {
    Tree t = random_tree(31, 4, 2);
    TreeMartingale m = random_martingale(t, 32);
    TreeProcess<double> one = constant_process(t, 1.0);
    InequalityReport r = verify_rinf_bmo(one, m);
    CHECK(r.ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.pass);

    InequalityReport z = verify_rinf_bmo(constant_process(t, 0.0), m);
    CHECK(z.pass);
    CHECK(z.ratio == 0.0);

    for (const CorpusItem& item : reference_corpus(9, 30)) {
        TreeProcess<double> k = abs_process(random_martingale(*item.tree, 55));
        InequalityReport e = verify_rinf_bmo(k, item.m);
        CHECK(e.pass);
    }
}

TEST_CASE("bdg band brackets the coin ratio and respects doob") {
    std::vector<CorpusItem> coin_only;
    auto coin = std::make_shared<const Tree>(coin_tree());
    coin_only.push_back({coin, coin_martingale(*coin)});
    BdgBand exact = estimate_bdg_constants(2.0, coin_only);
    CHECK(exact.c_hat == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(exact.C_hat == doctest::Approx(1.0).epsilon(1e-12));

    std::vector<CorpusItem> corpus = reference_corpus(42, 100);
    BdgBand band = estimate_bdg_constants(2.0, corpus);
    CHECK(band.c_hat <= 1.0 + 1e-12);
    CHECK(band.C_hat >= 1.0 - 1e-12);
    CHECK(band.c_hat >= 0.1);
    CHECK(band.C_hat <= 10.0);

    for (const CorpusItem& item : corpus) {
        double star = norm_rp(item.m.value(), 2.0);
        double terminal = lp_terminal(item.m.value(), 2.0);
        CHECK(star <= 2.0 * terminal * (1.0 + 1e-12));
    }

    CHECK_THROWS_AS(estimate_bdg_constants(2.0, {}), Error);
    CHECK_THROWS_AS(estimate_bdg_constants(0.5, corpus), Error);

    std::vector<CorpusItem> degenerate;
    degenerate.push_back({coin, zero_martingale(*coin)});
    CHECK_THROWS_AS(estimate_bdg_constants(2.0, degenerate), Error);
}

TEST_CASE("duality report stays below the fefferman cap") {
    Tree t = random_tree(77, 4, 2);
    TreeMartingale x = random_martingale(t, 78);
    TreeMartingale y = random_martingale(t, 79);
    TreeMartingale w = random_martingale(t, 80);
    std::vector<const TreeMartingale*> probes = {&x, &y, &w};
    InequalityReport r = verify_duality(x, probes);
    CHECK(r.pass);
    CHECK(r.lhs > 0.0);
    CHECK(r.ratio <= 1.0 + 1e-10);
    CHECK(r.ratio > 0.0);
    // the self probe alone certifies a positive fraction of the norm
    std::vector<const TreeMartingale*> self = {&x};
    CHECK(verify_duality(x, self).lhs > 0.0);

    // across many trees the best probe may pair above the H^1 norm itself;
    // only the sqrt(2) cap is guaranteed
    double worst = 0.0;
    for (int i = 0; i < 100; ++i) {
        std::uint64_t s = 7000 + 31ULL * static_cast<std::uint64_t>(i);
        Tree rt = random_tree(s, 4, 2);
        TreeMartingale rx = random_martingale(rt, s + 1);
        TreeMartingale ry = random_martingale(rt, s + 2);
        std::vector<const TreeMartingale*> pr = {&rx, &ry};
        InequalityReport e = verify_duality(rx, pr);
        CHECK(e.pass);
        worst = std::max(worst, e.lhs / (e.rhs / std::sqrt(2.0)));
    }
    MESSAGE("largest probe pairing relative to the h1 norm: ", worst);
    CHECK(worst <= std::sqrt(2.0) + 1e-12);
}

TEST_CASE("corpus runner covers every verifier deterministically") {
    CorpusSpec spec;
    spec.count = 10;
    spec.seed = 21;
    std::vector<CorpusItem> corpus = build_corpus(spec);

    std::vector<InequalityReport> all = run_inequality_corpus("all", corpus, 2.0);
    CHECK(all.size() == 10 * 7);
    for (const InequalityReport& r : all) {
        CAPTURE(r.name);
        CAPTURE(r.corpus_id);
        CAPTURE(r.ratio);
        CHECK(r.pass);
        CHECK(!r.corpus_id.empty());
    }

    std::vector<InequalityReport> again = run_inequality_corpus("all", corpus, 2.0);
    REQUIRE(again.size() == all.size());
    for (std::size_t i = 0; i < all.size(); ++i) {
        CHECK(all[i].lhs == again[i].lhs);
        CHECK(all[i].rhs == again[i].rhs);
    }

    std::vector<InequalityReport> single = run_inequality_corpus("fefferman", corpus, 2.0);
    CHECK(single.size() == 10);
    for (const InequalityReport& r : single) CHECK(r.name == "fefferman");

    CHECK(inequality_names().size() == 8);
    CHECK_THROWS_WITH_AS(run_inequality_corpus("bogus", corpus, 2.0),
                         doctest::Contains("known:"), Error);
}

TEST_CASE("report ratios are invariant under scaling the inputs") {
    Tree t = random_tree(91, 4, 2);
    TreeMartingale x = random_martingale(t, 92);
    TreeMartingale y = random_martingale(t, 93);
    TreeMartingale x3 = scaled(x, 3.0);
    TreeProcess<double> h = abs_process(x);
    TreeProcess<double> h3 = abs_process(x3);
    TreeProcess<double> k = abs_process(y);

    auto same = [](const InequalityReport& a, const InequalityReport& b) {
        CHECK(a.ratio == doctest::Approx(b.ratio).epsilon(1e-12));
    };
    same(verify_kunita_watanabe(x, y, h, k, 2.0), verify_kunita_watanabe(x3, y, h3, k, 2.0));
    same(verify_kunita_watanabe(x, y, h, k, 3.0), verify_kunita_watanabe(x3, y, h3, k, 3.0));
    same(verify_fefferman(x, y), verify_fefferman(x3, y));
    same(verify_emery(h, x, 2.0), verify_emery(h3, x3, 2.0));
    same(verify_lp_bracket(x, y, 2.0), verify_lp_bracket(x3, y, 2.0));
    same(verify_linfty_bracket(x, y), verify_linfty_bracket(x3, y));
    same(verify_rinf_bmo(k, x), verify_rinf_bmo(k, x3));

    std::vector<const TreeMartingale*> probes = {&y};
    std::vector<const TreeMartingale*> probes3 = {&y};
    same(verify_duality(x, probes), verify_duality(x3, probes3));
}
