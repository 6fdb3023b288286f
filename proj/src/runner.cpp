#include "bmolab/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <ctime>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "bmolab/corpus.hpp"
#include "bmolab/counterexample.hpp"
#include "bmolab/exponents.hpp"
#include "bmolab/inequalities.hpp"
#include "bmolab/linear.hpp"
#include "bmolab/norms.hpp"
#include "bmolab/paths.hpp"
#include "bmolab/solvers.hpp"
#include "bmolab/spectral.hpp"

namespace bmo {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

std::string joined(const std::vector<std::string>& names) {
    std::string out;
    for (const auto& n : names) {
        if (!out.empty()) out += ", ";
        out += n;
    }
    return out;
}

void need_seed(const RunConfig& c) {
    if (c.seed < 0)
        throw UsageError(c.subcommand + ": --seed is required (this run draws randomness)");
}

std::uint64_t seed_of(const RunConfig& c) { return static_cast<std::uint64_t>(c.seed); }

void accept_backend(const RunConfig& c, const std::string& actual) {
    if (c.backend != "auto" && c.backend != actual)
        throw UsageError(c.subcommand + ": backend '" + c.backend +
                         "' is not available here; this run uses '" + actual + "'");
}

void check_shape(const RunConfig& c) {
    if (c.depth < 1 || c.depth > 12)
        throw UsageError(c.subcommand + ": --depth must be in [1, 12]");
    if (c.branching < 2 || c.branching > 6)
        throw UsageError(c.subcommand + ": --branching must be in [2, 6]");
}

void check_grid(const RunConfig& c) {
    if (c.k < 2 || c.k > 22) throw UsageError(c.subcommand + ": --k must be in [2, 22]");
    if (c.paths < 4) throw UsageError(c.subcommand + ": --paths must be at least 4");
}

Report row(std::string name, std::string kind, nlohmann::json payload, bool asserted,
           bool pass) {
    return Report{std::move(name), std::move(kind), std::move(payload), asserted, pass};
}

CorpusSpec corpus_spec_of(const RunConfig& c) {
    try {
        return parse_corpus_spec(c.corpus);
    } catch (const Error& e) {
        throw UsageError(c.subcommand + ": " + e.what());
    }
}

// ---------------------------------------------------------------- verify --

ReportBundle run_verify(const RunConfig& c) {
    need_seed(c);
    accept_backend(c, "tree");
    if (c.p < 1.0) throw UsageError("verify: --p must be at least 1");

    const auto known = inequality_names();
    const std::string want = c.scenario.empty() ? "all" : c.scenario;
    std::vector<std::string> chosen;
    if (want == "all")
        chosen = known;
    else if (std::find(known.begin(), known.end(), want) != known.end())
        chosen = {want};
    else
        throw UsageError("verify: unknown inequality '" + want + "'; known: all, " +
                         joined(known));

    CorpusSpec spec = corpus_spec_of(c);
    spec.seed = seed_of(c);  // the command-line seed pins the corpus
    auto corpus = build_corpus(spec);

    ReportBundle b;
    CsvTable tab{"inequalities", {"report", "inequality", "p", "lhs", "rhs", "ratio", "pass"}, {}};
    for (const auto& name : chosen) {
        auto rows = run_inequality_corpus(name, corpus, c.p, c.tol);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const InequalityReport& r = rows[i];
            std::string label = name + "[" + std::to_string(i) + "]";
            nlohmann::json pl = {{"inequality", r.name}, {"p", c.p},           {"lhs", r.lhs},
                                 {"rhs", r.rhs},         {"ratio", r.ratio},   {"tol", r.tol},
                                 {"corpus_id", r.corpus_id}, {"backend", r.backend}};
            b.reports.push_back(row(label, "inequality", std::move(pl), true, r.pass));
            tab.rows.push_back({label, r.name, csv_cell(c.p), csv_cell(r.lhs), csv_cell(r.rhs),
                                csv_cell(r.ratio), r.pass ? "true" : "false"});
        }
    }
    b.tables.push_back(std::move(tab));
    return b;
}

// ----------------------------------------------------------------- solve --

TreeProcess<double> const_pred(const Tree& t, double v) {
    TreeProcess<double> p(t, Kind::Predictable);
    for (double& x : p.values) x = v;
    return p;
}

TreeProcess<VectorXd> scalar_forcing(const Tree& t, const TreeMartingale& m, double slope) {
    TreeProcess<VectorXd> j(t);
    for (NodeId v = 0; v < t.node_count(); ++v) {
        VectorXd x(1);
        x << m.value(v) + slope * t.level_of(v);
        j[v] = x;
    }
    return j;
}

std::vector<VectorXd> tanh_terminal(const Tree& t, const TreeMartingale& m) {
    std::vector<VectorXd> xi(static_cast<std::size_t>(t.node_count()));
    for (NodeId v = t.leaf_begin(); v < t.node_count(); ++v) {
        VectorXd x(1);
        x << std::tanh(m.value(v));
        xi[static_cast<std::size_t>(v)] = x;
    }
    return xi;
}

// slicing epsilons must sit above the largest one-step bracket to be feasible
double floored(double eps, const TreeMartingale& sliced) {
    return std::max(eps, 1.1 * min_feasible_eps(sliced));
}

nlohmann::json budget_json(const ContractionBudget& b) {
    return {{"eps1", b.eps1},   {"eps2", b.eps2},     {"eps3", b.eps3},
            {"c_p", b.c_p},     {"c_bar_p", b.c_bar_p}, {"alpha_n1_bmo", b.alpha_n1_bmo},
            {"p", b.p},         {"rho1", b.rho1},     {"rho2", b.rho2},
            {"feasible", b.feasible}};
}

void push_iteration(const SolveReport& rep, ReportBundle& b) {
    nlohmann::json pl = {{"worst_ratio", rep.worst_ratio},
                         {"slices", rep.slices.slice_count},
                         {"converged", rep.converged},
                         {"apriori", rep.apriori}};
    if (!rep.divergence.empty()) pl["divergence"] = rep.divergence;
    b.reports.push_back(row("iteration", "iteration", std::move(pl), true, rep.converged));

    CsvTable tab{"iteration", {"slice", "sweep", "distance", "ratio"}, {}};
    for (std::size_t s = 0; s < rep.distances.size(); ++s)
        for (std::size_t i = 0; i < rep.distances[s].size(); ++i) {
            double ratio = (s < rep.ratios.size() && i < rep.ratios[s].size())
                               ? rep.ratios[s][i]
                               : 0.0;
            tab.rows.push_back({std::to_string(s), std::to_string(i),
                                csv_cell(rep.distances[s][i]), csv_cell(ratio)});
        }
    b.tables.push_back(std::move(tab));
}

void push_residual(const char* name, double value, double threshold, ReportBundle& b) {
    b.reports.push_back(row(name, "residual",
                            {{"value", value}, {"threshold", threshold}}, true,
                            value <= threshold));
}

ReportBundle run_solve(const RunConfig& c) {
    need_seed(c);
    accept_backend(c, "tree");
    check_shape(c);
    if (c.max_iter < 1) throw UsageError("solve: --max-iter must be positive");

    const std::uint64_t seed = seed_of(c);
    auto t = std::make_shared<const Tree>(random_tree(seed, c.depth, c.branching));
    auto m = random_martingale(*t, seed + 1, 0.4);
    auto forcing_m = random_martingale(*t, seed + 2, 0.5);
    auto drift_m = random_martingale(*t, seed + 3, 0.4);

    const std::string scen = c.scenario.empty() ? "tanh" : c.scenario;
    auto check_scenario = [&](const std::vector<std::string>& known) {
        if (std::find(known.begin(), known.end(), scen) == known.end())
            throw UsageError("solve: unknown " + c.kind + " scenario '" + scen +
                             "'; known: " + joined(known));
    };

    ReportBundle b;
    if (c.kind == "se") {
        check_scenario({"zero", "tanh", "drift"});
        SESpec se;
        se.m = &m;
        se.j = scalar_forcing(*t, forcing_m, 0.2);
        double eps1 = c.eps1;
        double eps2 = c.eps2;
        if (scen != "zero") {
            se.g = [](NodeId, const VectorXd& x) {
                VectorXd r(1);
                r << 0.15 * std::tanh(x(0));
                return r;
            };
            se.beta = const_pred(*t, 0.15);
            eps2 = floored(c.eps2, stochastic_integral(se.beta, m));
        }
        if (scen == "drift") {
            se.f = [](NodeId, const VectorXd& x) {
                VectorXd r(1);
                r << 0.2 * std::tanh(x(0));
                return r;
            };
            se.alpha = const_pred(*t, 0.2);
            se.n1 = &m;
            se.n2 = &drift_m;
            eps1 = floored(c.eps1, drift_m);
        }
        auto budget = budget_se(se, eps1, eps2, 2.0);
        auto [x, rep] = solve_se(se, budget, c.iter_tol, c.max_iter);
        const double res = se_residual(se, x);

        b.reports.push_back(row("budget", "budget", budget_json(budget), false, true));
        push_iteration(rep, b);
        push_residual("residual", res, c.tol, b);
        if (scen == "zero") {
            // with no coefficients the equation says X = J node by node
            double gap = 0.0;
            for (NodeId v = 0; v < t->node_count(); ++v)
                gap = std::max(gap, (x[v] - se.j[v]).norm());
            push_residual("forcing-identity", gap, c.tol, b);
        }
        b.reports.push_back(row("solution", "summary",
                                {{"x0", x[0](0)}, {"x_rinf", norm_rinf(x)}}, false, true));
    } else if (c.kind == "bsde") {
        check_scenario({"terminal", "tanh", "coupled"});
        BSDESpec bs;
        bs.m = &m;
        bs.xi = tanh_terminal(*t, forcing_m);
        double eps1 = c.eps1;
        double eps3 = c.eps3;
        if (scen != "terminal") {
            bs.g = [](NodeId, const VectorXd& y, const VectorXd& z) {
                VectorXd r(1);
                r << 0.1 * std::tanh(y(0)) + 0.1 * std::tanh(z(0));
                return r;
            };
            bs.beta = const_pred(*t, 0.1);
            bs.gamma = const_pred(*t, 0.1);
            eps3 = floored(c.eps3, stochastic_integral(bs.gamma, m));
        }
        if (scen == "coupled") {
            bs.f = [](NodeId, const VectorXd& y) {
                VectorXd r(1);
                r << 0.1 * std::tanh(y(0));
                return r;
            };
            bs.alpha = const_pred(*t, 0.1);
            bs.n1 = &m;
            bs.n2 = &drift_m;
            eps1 = floored(c.eps1, drift_m);
        }
        auto budget = budget_bsde(bs, eps1, c.eps2, eps3, 2.0);
        auto [sol, rep] = solve_bsde(bs, budget, c.iter_tol, c.max_iter);

        b.reports.push_back(row("budget", "budget", budget_json(budget), false, true));
        push_iteration(rep, b);
        push_residual("residual", bsde_residual(bs, sol), c.tol, b);
        push_residual("orthogonality", bsde_orthogonality(bs, sol), c.tol, b);
        b.reports.push_back(row("solution", "summary",
                                {{"y0", sol.y[0](0)},
                                 {"y_rinf", norm_rinf(sol.y)},
                                 {"m_perp_bmo", bmo_norm(sol.m_perp[0])}},
                                false, true));
    } else if (c.kind == "bsde-bmo") {
        check_scenario({"tanh"});
        BmoBsdeSpec spec;
        spec.m = &m;
        spec.xi = tanh_terminal(*t, forcing_m);
        spec.g = [](NodeId, const VectorXd& z) {
            VectorXd r(1);
            r << 0.2 * std::tanh(z(0));
            return r;
        };
        spec.gamma = const_pred(*t, 0.2);
        const double eps = floored(c.eps3, stochastic_integral(spec.gamma, m));
        auto [sol, rep] = solve_bsde_bmo(spec, eps, c.iter_tol, c.max_iter);

        // independent defect through the general backward form of the same data
        BSDESpec twin;
        twin.m = &m;
        twin.xi = spec.xi;
        twin.g = [](NodeId, const VectorXd&, const VectorXd& z) {
            VectorXd r(1);
            r << 0.2 * std::tanh(z(0));
            return r;
        };
        twin.gamma = spec.gamma;

        b.reports.push_back(row("budget", "budget",
                                {{"eps", eps}, {"ratio_bound", std::sqrt(2.0) * eps}}, false,
                                true));
        push_iteration(rep, b);
        push_residual("residual", bsde_residual(twin, sol), c.tol, b);
        push_residual("orthogonality", bsde_orthogonality(twin, sol), c.tol, b);
        b.reports.push_back(row("solution", "summary",
                                {{"y0", sol.y[0](0)}, {"y_rinf", norm_rinf(sol.y)}}, false,
                                true));
    } else {
        throw UsageError("solve: unknown kind '" + c.kind + "'; known: se, bsde, bsde-bmo");
    }
    return b;
}

// ---------------------------------------------------------------- linear --

MatrixXd swirl_cell(NodeId u, int dim, double scale) {
    MatrixXd a(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j)
            a(i, j) = scale * std::sin(static_cast<double>(u) + 1.0 + 2.0 * i - j) *
                      std::cos(0.7 * static_cast<double>(u) + 0.3 * j + i);
    return a;
}

TreeProcess<MatrixXd> swirl_process(const Tree& t, int dim, double scale) {
    TreeProcess<MatrixXd> p(t, Kind::Predictable);
    for (NodeId u = 0; u < t.internal_count(); ++u) p[u] = swirl_cell(u, dim, scale);
    return p;
}

ReportBundle run_linear(const RunConfig& c) {
    need_seed(c);
    accept_backend(c, "tree");
    check_shape(c);
    if (c.dim < 1 || c.dim > 8) throw UsageError("linear: --dim must be in [1, 8]");
    if (c.p < 1.0) throw UsageError("linear: --p must be at least 1");

    static const std::vector<std::string> known = {"fundamental", "bsde", "sde", "rhi",
                                                   "scan"};
    const std::string op = c.op.empty() ? "fundamental" : c.op;
    if (std::find(known.begin(), known.end(), op) == known.end())
        throw UsageError("linear: unknown op '" + op + "'; known: " + joined(known));

    const std::uint64_t seed = seed_of(c);
    auto t = std::make_shared<const Tree>(random_tree(seed, c.depth, c.branching));
    auto m = random_martingale(*t, seed + 1, 0.35);
    auto n1 = random_martingale(*t, seed + 2, 0.3);
    auto n2 = random_martingale(*t, seed + 3, 0.3);

    auto make_fs = [&]() {
        LinearDriver drv;
        drv.n = c.dim;
        drv.a = swirl_process(*t, c.dim, 0.15);
        drv.b = swirl_process(*t, c.dim, 0.1);
        drv.d = swirl_process(*t, c.dim, 0.2);
        drv.n1 = &n1;
        drv.n2 = &n2;
        drv.m = &m;
        return fundamental(drv);
    };

    ReportBundle b;
    if (op == "fundamental") {
        auto fs = make_fs();
        const MatrixXd eye = MatrixXd::Identity(c.dim, c.dim);
        double inv_gap = 0.0;
        for (NodeId v = 0; v < t->node_count(); ++v)
            inv_gap = std::max(inv_gap, (fs.s[v] * fs.s_inv[v] - eye).cwiseAbs().maxCoeff());
        const double root_gap = (fs.s[0] - eye).cwiseAbs().maxCoeff();
        b.reports.push_back(row("fundamental", "summary",
                                {{"dim", c.dim}, {"nodes", t->node_count()}}, false, true));
        push_residual("root-identity", root_gap, 0.0, b);
        push_residual("inverse-identity", inv_gap, c.tol, b);
    } else if (op == "bsde") {
        auto a = swirl_process(*t, c.dim, 0.15);
        std::vector<VectorXd> xi(static_cast<std::size_t>(t->node_count()));
        for (NodeId v = t->leaf_begin(); v < t->node_count(); ++v) {
            VectorXd x(c.dim);
            for (int i = 0; i < c.dim; ++i) x(i) = std::tanh((i + 1.0) * m.value(v));
            xi[static_cast<std::size_t>(v)] = x;
        }
        TreeProcess<VectorXd> f(*t);
        for (NodeId v = 0; v < t->node_count(); ++v) f[v] = VectorXd::Zero(c.dim);
        auto sol = solve_linear_bsde_explicit(a, m, xi, f);
        push_residual("residual", sol.residual, c.tol, b);
        b.reports.push_back(row("solution", "summary",
                                {{"y0_norm", sol.y[0].norm()},
                                 {"m_perp_bmo", bmo_norm(sol.m_perp[0])}},
                                false, true));
    } else if (op == "sde") {
        auto fs = make_fs();
        TreeProcess<MatrixXd> v(*t);
        for (NodeId w = 0; w < t->node_count(); ++w) {
            MatrixXd cell(c.dim, 1);
            for (int i = 0; i < c.dim; ++i)
                cell(i, 0) = std::tanh((i + 1.0) * m.value(w)) + 0.1 * t->level_of(w);
            v[w] = cell;
        }
        auto x = solve_linear_sde(fs, v);
        push_residual("residual", linear_sde_residual(fs, v, x), c.tol, b);
        double x_sup = 0.0;
        for (NodeId w = 0; w < t->node_count(); ++w)
            x_sup = std::max(x_sup, x[w].cwiseAbs().maxCoeff());
        b.reports.push_back(row("solution", "summary", {{"x_sup", x_sup}}, false, true));
    } else if (op == "rhi") {
        auto fs = make_fs();
        auto sigma = StoppingTime::at_level(*t, std::min(2, t->depth()));
        std::vector<NodeId> b_nodes = {sigma.frontier().front()};
        auto probe = rhi_probe(fs, sigma, b_nodes, c.p);
        push_residual("identity", probe.identity_gap, c.tol, b);
        b.reports.push_back(row("rhi", "summary",
                                {{"p", c.p},
                                 {"lhs", probe.lhs},
                                 {"rhs", probe.rhs},
                                 {"ratio", probe.ratio}},
                                false, true));
    } else {  // scan
        auto fs = make_fs();
        std::vector<double> grid =
            c.p_list.empty() ? std::vector<double>{1.0, 1.5, 2.0, 3.0, 4.0} : c.p_list;
        for (double p : grid)
            if (p < 1.0) throw UsageError("linear: every scan exponent must be at least 1");
        auto rows = continuation_scan(fs, grid);
        CsvTable tab{"scan", {"p", "value", "root", "argmax"}, {}};
        bool monotone = true;
        double prev = 0.0;
        for (const RpReport& r : rows) {
            const double root = std::pow(r.value, 1.0 / r.p);
            monotone = monotone && root >= prev - 1e-12;
            prev = root;
            b.reports.push_back(row("scan[p=" + csv_cell(r.p) + "]", "reverse-holder",
                                    {{"p", r.p}, {"value", r.value}, {"root", root},
                                     {"argmax", r.argmax}},
                                    false, true));
            tab.rows.push_back({csv_cell(r.p), csv_cell(r.value), csv_cell(root),
                                std::to_string(r.argmax)});
        }
        b.tables.push_back(std::move(tab));
        b.reports.push_back(row("scan-monotone", "invariant",
                                {{"description", "value^(1/p) nondecreasing in p"}}, true,
                                monotone));
    }
    return b;
}

// -------------------------------------------------------------- spectral --

std::complex<double> rate_of(const RunConfig& c) {
    if (c.lambda.empty() || c.lambda.size() > 2)
        throw UsageError(c.subcommand + ": --lambda takes one or two values (re [, im])");
    return {c.lambda[0], c.lambda.size() == 2 ? c.lambda[1] : 0.0};
}

ReportBundle run_spectral(const RunConfig& c) {
    need_seed(c);
    static const std::vector<std::string> known = {"matrix", "radius", "resolvent", "bounds",
                                                   "equivalence"};
    const std::string op = c.op.empty() ? "matrix" : c.op;
    if (std::find(known.begin(), known.end(), op) == known.end())
        throw UsageError("spectral: unknown op '" + op + "'; known: " + joined(known));
    const bool mc_side = op == "bounds" || op == "equivalence";
    const bool tree_side = op != "bounds";
    accept_backend(c, op == "bounds" ? "mc" : (op == "equivalence" ? "tree+mc" : "tree"));
    if (c.p < 1.0) throw UsageError("spectral: --p must be at least 1");

    const std::uint64_t seed = seed_of(c);
    std::shared_ptr<const Tree> t;
    std::unique_ptr<TreeMartingale> m;
    if (tree_side) {
        const std::string scen = c.scenario.empty() ? "random" : c.scenario;
        const auto recipes = tree_martingale_names();
        if (std::find(recipes.begin(), recipes.end(), scen) == recipes.end())
            throw UsageError("spectral: unknown martingale '" + scen +
                             "'; known: " + joined(recipes));
        check_shape(c);
        t = std::make_shared<const Tree>(scen == "coin"
                                             ? coin_tree()
                                             : random_tree(seed, c.depth, c.branching));
        m = std::make_unique<TreeMartingale>(tree_martingale_by_name(scen, *t, seed + 1));
    }
    SimSpec mc_spec;
    TimeGrid grid{0.0, 0.0, 0};
    if (mc_side) {
        const auto laws = sim_spec_names();
        if (std::find(laws.begin(), laws.end(), c.recipe) == laws.end())
            throw UsageError("spectral: unknown recipe '" + c.recipe +
                             "'; known: " + joined(laws));
        check_grid(c);
        mc_spec = sim_spec_by_name(c.recipe);
        grid = truncated_unit_grid(c.k);
    }

    ReportBundle b;
    if (op == "matrix") {
        auto opm = operator_matrix(*m);
        const double audit = operator_audit(opm, seed + 7, 6);
        b.reports.push_back(row("matrix", "summary",
                                {{"dimension", opm.dimension()},
                                 {"nilpotency_index", opm.nilpotency_index},
                                 {"depth", t->depth()}},
                                false, true));
        push_residual("triangular", opm.triangular_defect, 0.0, b);
        push_residual("audit", audit, c.tol, b);
    } else if (op == "radius") {
        auto opm = operator_matrix(*m);
        std::vector<double> plist =
            c.p_list.empty() ? std::vector<double>{2.0, 3.0} : c.p_list;
        CsvTable tab{"radius", {"p", "n", "norm"}, {}};
        for (double p : plist) {
            if (p < 1.0) throw UsageError("spectral: every radius exponent must be at least 1");
            auto r = spectral_radius_tree(opm, p, seed);
            b.reports.push_back(row("radius[p=" + csv_cell(p) + "]", "radius",
                                    {{"p", p},
                                     {"value", r.value},
                                     {"levels", r.norms.size()}},
                                    true, r.value == 0.0));
            for (std::size_t n = 0; n < r.norms.size(); ++n)
                tab.rows.push_back({csv_cell(p), std::to_string(n + 1),
                                    csv_cell(r.norms[n].value)});
        }
        b.tables.push_back(std::move(tab));
    } else if (op == "resolvent") {
        const std::complex<double> lambda = rate_of(c);
        auto tau = StoppingTime::at_level(*t, std::min(2, t->depth()));
        std::vector<NodeId> atoms = {tau.frontier().front()};
        auto probe = resolvent_probe(*m, lambda, tau, atoms, c.p);
        push_residual("identity", probe.identity_gap, c.tol, b);
        b.reports.push_back(row("resolvent", "summary",
                                {{"lambda_re", lambda.real()},
                                 {"lambda_im", lambda.imag()},
                                 {"p", c.p},
                                 {"rp_constant", probe.rp_constant},
                                 {"excluded", probe.excluded}},
                                false, true));
    } else if (op == "bounds") {
        std::vector<double> plist =
            c.p_list.empty() ? std::vector<double>{1.0, 2.0} : c.p_list;
        for (double p : plist)
            if (p < 1.0) throw UsageError("spectral: every bound exponent must be at least 1");
        auto battery = bound_battery(mc_spec, grid, c.paths, seed, plist);
        b.reports.push_back(row("exponent", "exponent",
                                {{"lo", battery.b.lo},
                                 {"hi", battery.b.hi},
                                 {"infinite", battery.b.infinite},
                                 {"family", battery.b.family}},
                                false, true));
        CsvTable tab{"bounds", {"p", "lower", "r_hat", "upper", "upper_ok", "lower_reached"}, {}};
        for (const BoundRow& r : battery.rows) {
            b.reports.push_back(row("bound[p=" + csv_cell(r.p) + "]", "bound",
                                    {{"p", r.p},
                                     {"lower", r.lower},
                                     {"upper", r.upper},
                                     {"r_hat", r.r_hat},
                                     {"lower_reached", r.lower_reached},
                                     {"tol", battery.tol}},
                                    true, r.upper_ok));
            tab.rows.push_back({csv_cell(r.p), csv_cell(r.lower), csv_cell(r.r_hat),
                                csv_cell(r.upper), r.upper_ok ? "true" : "false",
                                r.lower_reached ? "true" : "false"});
        }
        b.tables.push_back(std::move(tab));
    } else {  // equivalence
        auto eq = equivalence_battery(*m, mc_spec, grid, c.paths, seed);
        b.reports.push_back(row("equivalence", "summary",
                                {{"tree_power_norm", eq.tree_power_norm},
                                 {"tree_triangular_defect", eq.tree_triangular_defect},
                                 {"tree_r2", eq.tree_r2},
                                 {"tree_nilpotency_index", eq.tree_nilpotency_index},
                                 {"tree_depth", eq.tree_depth},
                                 {"tree_b_infinite", eq.tree_b_infinite},
                                 {"mc_b_lo", eq.mc_b.lo},
                                 {"mc_b_hi", eq.mc_b.hi},
                                 {"mc_b_infinite", eq.mc_b.infinite},
                                 {"mc_r_hat", eq.mc_r_hat},
                                 {"ray_mu_small", eq.ray_mu_small},
                                 {"ray_mu_large", eq.ray_mu_large},
                                 {"ray_small_estimate", eq.ray_small_estimate},
                                 {"ray_small_finite", eq.ray_small_finite},
                                 {"ray_large_divergent", eq.ray_large_divergent},
                                 {"exp_identity_gap", eq.exp_identity_gap}},
                                false, true));
        b.reports.push_back(row("consistent", "invariant",
                                {{"description",
                                  "bounded bracket: nilpotent, zero radius, infinite "
                                  "exponent; unbounded bracket: finite exponent, positive "
                                  "radius, correct ray verdicts"}},
                                true, eq.consistent));
    }
    return b;
}

// -------------------------------------------------------- counterexample --

ReportBundle run_counterexample(const RunConfig& c) {
    need_seed(c);
    accept_backend(c, "mc");
    if (c.k < 6 || c.k > 22) throw UsageError("counterexample: --k must be in [6, 22]");
    if (c.paths < 4) throw UsageError("counterexample: --paths must be at least 4");
    std::vector<double> lambdas =
        c.lambdas.empty() ? std::vector<double>{0.0, 0.5, 1.0, 12.0} : c.lambdas;
    for (double l : lambdas)
        if (!(l >= 0.0) || !std::isfinite(l))
            throw UsageError("counterexample: every rate in --lambdas must be finite and "
                             "nonnegative");

    auto sc = build_scenario(c.k, c.paths, seed_of(c));
    ReportBundle b;
    b.reports.push_back(row("scenario", "summary",
                            {{"k", sc.k},
                             {"paths", sc.n_paths},
                             {"y0", sc.y0},
                             {"fired_fraction", sc.fired_fraction},
                             {"mean_clock", sc.mean_clock},
                             {"clock_se", sc.clock_se},
                             {"mean_hit_step", sc.mean_hit_step},
                             {"mean_zint", sc.mean_zint},
                             {"zint_se", sc.zint_se},
                             {"first_step_mean", sc.first_step_mean},
                             {"first_step_se", sc.first_step_se},
                             {"bmo_lower", sc.bmo_lower}},
                            false, true));
    const bool structural = sc.after_stop_max == 0.0 && sc.invariant_gap <= 1e-9 &&
                            sc.bracket_gap <= 1e-9;
    b.reports.push_back(row("structure", "residual",
                            {{"after_stop_max", sc.after_stop_max},
                             {"invariant_gap", sc.invariant_gap},
                             {"bracket_gap", sc.bracket_gap},
                             {"threshold", 1e-9}},
                            true, structural));

    auto scan = moment_blowup_scan(sc, lambdas);
    CsvTable tab{"blowup", {"lambda", "estimate", "se", "verdict"}, {}};
    for (const BlowupRow& r : scan.rows) {
        bool asserted = r.regime != "undetermined";
        bool pass = true;
        if (r.regime == "finite") pass = r.bracket_ok && !r.divergent_call;
        if (r.regime == "divergent") pass = r.divergent_call;
        b.reports.push_back(row("blowup[" + csv_cell(r.lambda) + "]", "blowup",
                                {{"lambda", r.lambda},
                                 {"estimate", r.estimate},
                                 {"se", r.se},
                                 {"overflow", r.overflow},
                                 {"regime", r.regime},
                                 {"divergent_call", r.divergent_call},
                                 {"oracle_lo", r.oracle_lo},
                                 {"oracle_hi", r.oracle_hi},
                                 {"bracket_ok", r.bracket_ok}},
                                asserted, pass));
        tab.rows.push_back({csv_cell(r.lambda), csv_cell(r.estimate), csv_cell(r.se),
                            r.divergent_call ? "divergent" : "finite"});
    }
    b.tables.push_back(std::move(tab));
    return b;
}

// -------------------------------------------------------------- exponent --

ReportBundle run_exponent(const RunConfig& c) {
    need_seed(c);
    accept_backend(c, "mc");
    check_grid(c);
    if (c.cap <= 0.0) throw UsageError("exponent: --cap must be positive");
    const auto laws = sim_spec_names();
    if (std::find(laws.begin(), laws.end(), c.recipe) == laws.end())
        throw UsageError("exponent: unknown recipe '" + c.recipe + "'; known: " + joined(laws));
    static const std::vector<std::string> known = {"b", "a", "rp", "bmo", "rh"};
    const std::string op = c.op.empty() ? "b" : c.op;
    if (std::find(known.begin(), known.end(), op) == known.end())
        throw UsageError("exponent: unknown op '" + op + "'; known: " + joined(known));
    if ((op == "rp" || op == "rh") && c.p < 1.0)
        throw UsageError("exponent: --p must be at least 1");

    auto spec = sim_spec_by_name(c.recipe);
    auto grid = truncated_unit_grid(c.k);
    const std::uint64_t seed = seed_of(c);

    ReportBundle b;
    if (op == "b" || op == "a") {
        auto rep = op == "b" ? estimate_b(spec, grid, c.paths, seed, c.cap)
                             : estimate_a(spec, grid, c.paths, seed, c.cap);
        b.reports.push_back(row(op, "exponent",
                                {{"recipe", c.recipe},
                                 {"lo", rep.lo},
                                 {"hi", rep.hi},
                                 {"infinite", rep.infinite},
                                 {"cap", rep.cap},
                                 {"family", rep.family},
                                 {"rationale", rep.rationale},
                                 {"moment_at_lo", rep.moment_at_lo}},
                                true, rep.lo <= rep.hi));
        CsvTable tab{"exponent", {"quantity", "lo", "hi", "infinite"}, {}};
        tab.rows.push_back({op, csv_cell(rep.lo), csv_cell(rep.hi),
                            rep.infinite ? "true" : "false"});
        b.tables.push_back(std::move(tab));
    } else {
        McNorm n;
        if (op == "rp") n = mc_norm_rp(spec, grid, c.paths, seed, c.p);
        if (op == "bmo") n = mc_bmo_lower(spec, grid, c.paths, seed);
        if (op == "rh") n = mc_reverse_holder(spec, grid, c.paths, seed, c.p);
        b.reports.push_back(row(op, "mc-norm",
                                {{"recipe", c.recipe},
                                 {"name", n.name},
                                 {"p", n.p},
                                 {"value", n.value},
                                 {"se", n.se},
                                 {"family", n.family}},
                                true, std::isfinite(n.value) && n.value >= 0.0));
        CsvTable tab{"exponent", {"quantity", "p", "value", "se"}, {}};
        tab.rows.push_back({n.name, csv_cell(n.p), csv_cell(n.value), csv_cell(n.se)});
        b.tables.push_back(std::move(tab));
    }
    return b;
}

// ---------------------------------------------------------------- corpus --

ReportBundle run_corpus(const RunConfig& c) {
    accept_backend(c, "tree");
    const std::string op = c.op.empty() ? "describe" : c.op;
    if (op != "generate" && op != "describe")
        throw UsageError("corpus: unknown action '" + op + "'; known: generate, describe");

    CorpusSpec spec = corpus_spec_of(c);
    if (c.seed >= 0) spec.seed = seed_of(c);  // the flag wins over the spec text
    if (spec.count < 1) throw UsageError("corpus: the spec must request at least one item");
    if (spec.depth < 1 || spec.depth > 12)
        throw UsageError("corpus: depth must be in [1, 12]");
    if (spec.branching < 2 || spec.branching > 6)
        throw UsageError("corpus: branching must be in [2, 6]");

    NodeId leaves = 1, total = 1;
    for (int l = 1; l <= spec.depth; ++l) {
        leaves *= static_cast<NodeId>(spec.branching);
        total += leaves;
    }

    ReportBundle b;
    if (op == "describe") {
        b.reports.push_back(row("spec", "corpus-spec",
                                {{"count", spec.count},
                                 {"depth", spec.depth},
                                 {"branching", spec.branching},
                                 {"seed", spec.seed},
                                 {"nodes_per_tree", total},
                                 {"leaves_per_tree", leaves},
                                 {"internal_per_tree", total - leaves},
                                 {"total_nodes", static_cast<long long>(total) * spec.count}},
                                false, true));
        return b;
    }

    need_seed(c);
    auto items = build_corpus(spec);
    CsvTable tab{"corpus", {"item", "nodes", "bmo", "min_eps", "h2"}, {}};
    for (std::size_t i = 0; i < items.size(); ++i) {
        const double bmo = bmo_norm(items[i].m);
        const double min_eps = min_feasible_eps(items[i].m);
        const double h2 = norm_hp(items[i].m, 2.0);
        b.reports.push_back(row("item[" + std::to_string(i) + "]", "corpus-item",
                                {{"index", i},
                                 {"nodes", items[i].tree->node_count()},
                                 {"bmo", bmo},
                                 {"min_eps", min_eps},
                                 {"h2", h2}},
                                true, std::isfinite(bmo) && bmo > 0.0));
        tab.rows.push_back({std::to_string(i), std::to_string(items[i].tree->node_count()),
                            csv_cell(bmo), csv_cell(min_eps), csv_cell(h2)});
    }
    b.tables.push_back(std::move(tab));
    return b;
}

// ------------------------------------------------------------------ run --

ReportBundle dispatch(const RunConfig& c) {
    if (c.subcommand == "verify") return run_verify(c);
    if (c.subcommand == "solve") return run_solve(c);
    if (c.subcommand == "linear") return run_linear(c);
    if (c.subcommand == "spectral") return run_spectral(c);
    if (c.subcommand == "counterexample") return run_counterexample(c);
    if (c.subcommand == "exponent") return run_exponent(c);
    if (c.subcommand == "corpus") return run_corpus(c);
    throw UsageError("unknown subcommand '" + c.subcommand +
                     "'; known: " + joined(subcommand_names()));
}

std::string iso_now() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

nlohmann::json config_json(const RunConfig& c) {
    return nlohmann::json{{"subcommand", c.subcommand},
                          {"scenario", c.scenario},
                          {"recipe", c.recipe},
                          {"corpus", c.corpus},
                          {"op", c.op},
                          {"kind", c.kind},
                          {"backend", c.backend},
                          {"seed", c.seed},
                          {"p", c.p},
                          {"p_list", c.p_list},
                          {"tol", c.tol},
                          {"iter_tol", c.iter_tol},
                          {"max_iter", c.max_iter},
                          {"eps1", c.eps1},
                          {"eps2", c.eps2},
                          {"eps3", c.eps3},
                          {"depth", c.depth},
                          {"branching", c.branching},
                          {"dim", c.dim},
                          {"k", c.k},
                          {"paths", c.paths},
                          {"cap", c.cap},
                          {"lambda", c.lambda},
                          {"lambdas", c.lambdas},
                          {"out_dir", c.out_dir},
                          {"name", c.name},
                          {"emit_json", c.emit_json},
                          {"emit_csv", c.emit_csv}};
}

std::vector<std::string> subcommand_names() {
    return {"verify", "solve", "linear", "spectral", "counterexample", "exponent", "corpus"};
}

ReportBundle run(const RunConfig& c) {
    const auto wall0 = std::chrono::steady_clock::now();
    ReportBundle b = dispatch(c);
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall0)
            .count();

    // timestamps and timings live here only, never in the payload files
    nlohmann::json manifest;
    manifest["tool"] = "bmolab";
    manifest["version"] = kToolVersion;
    manifest["schema"] = kReportSchema;
    manifest["config"] = config_json(c);
    manifest["report_count"] = b.reports.size();
    manifest["wall_clock_ms"] = ms;
    manifest["written_at"] = iso_now();
    b.manifest = std::move(manifest);

    write_bundle(b, c.out_dir, c.name.empty() ? c.subcommand : c.name, c.emit_json,
                 c.emit_csv);
    return b;
}

}  // namespace bmo
