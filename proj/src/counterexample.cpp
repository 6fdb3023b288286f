#include "bmolab/counterexample.hpp"

#include <algorithm>
#include <cmath>

#include "bmolab/exponents.hpp"

namespace bmo {

namespace {

constexpr double kFiniteEdge = 1.2337005501361697;     // pi^2 / 8
constexpr double kDivergentEdge = 11.103304951225527;  // 9 pi^2 / 8
constexpr int kBmoBins = 8;
constexpr long kBmoBinFloor = 30;

double rms(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

CounterexampleScenario build_scenario(int k, long n_paths, std::uint64_t seed) {
    if (k < 6) throw Error("build_scenario: resolution k must be at least 6");
    if (n_paths < 1) throw Error("build_scenario: need at least one path");

    CounterexampleScenario sc;
    sc.k = k;
    sc.grid = truncated_unit_grid(k);
    sc.n_paths = n_paths;
    sc.seed = seed;
    sc.y0 = -std::log(2.0);

    const int K = sc.grid.steps;
    const double dt = sc.grid.dt();
    const int probe = K / 2;

    sc.hit.reserve(n_paths);
    sc.clock.reserve(n_paths);
    sc.bracket.reserve(n_paths);
    sc.overshoot.reserve(n_paths);
    sc.xi.reserve(n_paths);
    sc.zint.reserve(n_paths);
    sc.residual_total.reserve(n_paths);
    sc.residual_max.reserve(n_paths);

    double clock_sum = 0.0, clock_sq = 0.0;
    double zint_sum = 0.0, zint_sq = 0.0;
    double first_sum = 0.0, first_sq = 0.0;
    double hitstep_sum = 0.0;
    std::vector<double> bin_sum(kBmoBins, 0.0), bin_sq(kBmoBins, 0.0);
    std::vector<long> bin_cnt(kBmoBins, 0);

    const SimSpec spec = sim_spec_by_name("invsqrt-stopped");
    for_each_path(spec, sc.grid, n_paths, seed, [&](long, const PathBuffer& buf) {
        const int h = buf.hit;
        const int stop = h >= 0 ? h : K;

        // hit values are projected to the barrier for the solution channels;
        // in-step hits carry an interior endpoint, so the side is taken from
        // the step midpoint
        double x_stop;
        if (h >= 0) {
            if (std::abs(buf.x[h]) >= 1.0)
                x_stop = buf.x[h] > 0.0 ? 1.0 : -1.0;
            else
                x_stop = buf.x[h - 1] + buf.x[h] >= 0.0 ? 1.0 : -1.0;
        } else {
            x_stop = buf.x[K];
        }
        const double path_xi = -std::log(x_stop + 2.0);

        double ztot = 0.0, ztot_bracket = 0.0, zpart = 0.0;
        double res_tot = 0.0, res_max = 0.0;
        double y_prev = sc.y0;
        for (int j = 0; j < K; ++j) {
            const bool running = j < stop;
            const double t = sc.grid.time(j);
            const double z =
                running ? -1.0 / ((buf.x[j] + 2.0) * std::sqrt(1.0 - t)) : 0.0;
            const double y_next =
                j + 1 < stop ? -std::log(buf.x[j + 1] + 2.0) : path_xi;
            const double dw = buf.w[j + 1] - buf.w[j];
            const double r = (y_next - y_prev) - z * dw - 0.5 * z * z * dt;
            res_tot += r;
            res_max = std::max(res_max, std::abs(r));
            if (!running) sc.after_stop_max = std::max(sc.after_stop_max, std::abs(r));
            if (running) {
                ztot += z * z * dt;
                ztot_bracket += (buf.qv[j + 1] - buf.qv[j]) /
                                ((buf.x[j] + 2.0) * (buf.x[j] + 2.0));
                sc.invariant_gap = std::max(
                    sc.invariant_gap,
                    std::abs(-z * std::sqrt(1.0 - t) * (buf.x[j] + 2.0) - 1.0));
            }
            if (j == 0) {
                first_sum += r;
                first_sq += r * r;
            }
            if (j + 1 == probe) zpart = ztot;
            y_prev = y_next;
        }
        sc.bracket_gap = std::max(sc.bracket_gap, std::abs(ztot - ztot_bracket));

        const double path_clock =
            h >= 0 ? 0.5 * (buf.qv[h - 1] + buf.qv[h]) : buf.qv[K];
        if (h >= 0) {
            ++sc.fired;
            hitstep_sum += buf.qv[h] - buf.qv[h - 1];
        }
        if (h < 0 || h > probe) {
            const double xp = buf.x[probe];
            int bin = static_cast<int>((xp + 1.0) * 0.5 * kBmoBins);
            bin = std::clamp(bin, 0, kBmoBins - 1);
            const double rem = ztot - zpart;
            bin_sum[bin] += rem;
            bin_sq[bin] += rem * rem;
            ++bin_cnt[bin];
        }

        sc.hit.push_back(h);
        sc.clock.push_back(path_clock);
        sc.bracket.push_back(buf.qv[K]);
        sc.overshoot.push_back(buf.overshoot);
        sc.xi.push_back(path_xi);
        sc.zint.push_back(ztot);
        sc.residual_total.push_back(res_tot);
        sc.residual_max.push_back(res_max);

        clock_sum += path_clock;
        clock_sq += path_clock * path_clock;
        zint_sum += ztot;
        zint_sq += ztot * ztot;
    });

    const double n = static_cast<double>(n_paths);
    sc.fired_fraction = static_cast<double>(sc.fired) / n;
    sc.mean_clock = clock_sum / n;
    sc.clock_se = std::sqrt(std::max(clock_sq / n - sc.mean_clock * sc.mean_clock, 0.0) / n);
    sc.mean_zint = zint_sum / n;
    sc.zint_se = std::sqrt(std::max(zint_sq / n - sc.mean_zint * sc.mean_zint, 0.0) / n);
    sc.first_step_mean = first_sum / n;
    sc.first_step_se =
        std::sqrt(std::max(first_sq / n - sc.first_step_mean * sc.first_step_mean, 0.0) / n);
    sc.mean_hit_step = sc.fired > 0 ? hitstep_sum / static_cast<double>(sc.fired) : 0.0;

    sc.bmo_bin_mean.assign(kBmoBins, 0.0);
    sc.bmo_bin_se.assign(kBmoBins, 0.0);
    sc.bmo_bin_count.assign(bin_cnt.begin(), bin_cnt.end());
    for (int b = 0; b < kBmoBins; ++b) {
        if (bin_cnt[b] == 0) continue;
        const double nb = static_cast<double>(bin_cnt[b]);
        const double mean = bin_sum[b] / nb;
        sc.bmo_bin_mean[b] = mean;
        sc.bmo_bin_se[b] = std::sqrt(std::max(bin_sq[b] / nb - mean * mean, 0.0) / nb);
        if (bin_cnt[b] >= kBmoBinFloor && mean > sc.bmo_lower) {
            sc.bmo_lower = mean;
            sc.bmo_argmax = b;
        }
    }
    return sc;
}

SolutionReport verify_solution(const CounterexampleScenario& sc, double tol_order) {
    SolutionReport rep;
    rep.after_stop_max = sc.after_stop_max;
    rep.invariant_gap = sc.invariant_gap;
    rep.first_step_mean = sc.first_step_mean;
    rep.first_step_se = sc.first_step_se;
    rep.first_step_ok = std::abs(sc.first_step_mean) <= 3.0 * sc.first_step_se;

    for (int level = 0; level < 3; ++level) {
        const int kk = sc.k + 2 * level;
        rep.k_values.push_back(kk);
        if (level == 0) {
            rep.rms_by_k.push_back(rms(sc.residual_total));
        } else {
            const CounterexampleScenario fine = build_scenario(kk, sc.n_paths, sc.seed);
            rep.rms_by_k.push_back(rms(fine.residual_total));
        }
    }
    rep.rms_residual = rep.rms_by_k.front();

    // least-squares slope of log2 rms against k over the three levels
    double sk = 0.0, sy = 0.0, skk = 0.0, sky = 0.0;
    for (std::size_t i = 0; i < rep.k_values.size(); ++i) {
        const double x = rep.k_values[i];
        const double y = std::log2(rep.rms_by_k[i]);
        sk += x;
        sy += y;
        skk += x * x;
        sky += x * y;
    }
    const double m = static_cast<double>(rep.k_values.size());
    rep.order = -(m * sky - sk * sy) / (m * skk - sk * sk);
    rep.order_ok = rep.order >= tol_order;
    return rep;
}

BlowupReport moment_blowup_scan(const CounterexampleScenario& sc,
                                const std::vector<double>& lambdas) {
    BlowupReport rep;
    const double n = static_cast<double>(sc.n_paths);
    for (double lambda : lambdas) {
        if (lambda < 0.0) throw Error("moment_blowup_scan: rates must be nonnegative");
        BlowupRow row;
        row.lambda = lambda;
        row.regime = lambda < kFiniteEdge
                         ? "finite"
                         : (lambda < kDivergentEdge ? "undetermined" : "divergent");
        if (lambda == 0.0) {
            row.estimate = 1.0;
            row.oracle_lo = 1.0;
            row.oracle_hi = 1.0;
            rep.rows.push_back(row);
            continue;
        }
        double sum = 0.0, sq = 0.0;
        for (double z : sc.zint) {
            const double e = std::exp(lambda * z);
            sum += e;
            sq += e * e;
        }
        row.estimate = sum / n;
        row.se = std::sqrt(std::max(sq / n - row.estimate * row.estimate, 0.0) / n);
        row.overflow = !std::isfinite(row.estimate);
        const MomentCall call = classify_exp_moment_doubling(sc.zint, lambda);
        row.divergent_call = call.divergent || row.overflow;
        if (lambda < kFiniteEdge) {
            const double root = std::sqrt(2.0 * lambda);
            row.oracle_lo = 1.0 / std::cos(root / 3.0);
            row.oracle_hi = 1.0 / std::cos(root);
            row.bracket_ok = row.estimate >= row.oracle_lo - 3.0 * row.se &&
                             row.estimate <= row.oracle_hi + 3.0 * row.se;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

}  // namespace bmo
