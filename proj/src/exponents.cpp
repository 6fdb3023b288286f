#include "bmolab/exponents.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace bmo {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

double median_inplace(std::vector<double>& v) {
    const std::size_t n = v.size();
    auto mid = v.begin() + n / 2;
    std::nth_element(v.begin(), mid, v.end());
    if (n % 2 == 1) return *mid;
    double hi = *mid;
    double lo = *std::max_element(v.begin(), mid);
    return 0.5 * (lo + hi);
}

double median_of_means(const std::vector<double>& values, std::size_t prefix, int groups) {
    std::vector<double> sums(groups, 0.0);
    std::vector<long> counts(groups, 0);
    for (std::size_t i = 0; i < prefix; ++i) {
        sums[i % groups] += values[i];
        ++counts[i % groups];
    }
    std::vector<double> means(groups);
    for (int g = 0; g < groups; ++g) means[g] = sums[g] / counts[g];
    return median_inplace(means);
}

}  // namespace

DoublingDiagnostic doubling_diagnostic(const std::vector<double>& values, double factor,
                                       int groups) {
    if (groups < 2) throw Error("doubling diagnostic needs at least 2 groups");
    if (factor <= 1.0) throw Error("doubling diagnostic needs a growth factor above 1");
    const std::size_t n = values.size();
    if (n < 4 * static_cast<std::size_t>(groups))
        throw Error("doubling diagnostic needs at least " + std::to_string(4 * groups) +
                    " samples, got " + std::to_string(n));
    DoublingDiagnostic d;
    d.factor = factor;
    d.groups = groups;
    for (std::size_t prefix : {n / 4, n / 2, n})
        d.estimates.push_back(median_of_means(values, prefix, groups));
    bool all_grow = true;
    for (std::size_t j = 0; j + 1 < d.estimates.size(); ++j) {
        double prev = d.estimates[j], next = d.estimates[j + 1];
        double g = prev > 0.0 ? next / prev : (next > prev ? std::numeric_limits<double>::infinity() : 1.0);
        d.growth.push_back(g);
        all_grow = all_grow && g >= factor;
    }
    d.divergent = all_grow;
    for (double e : d.estimates)
        if (!std::isfinite(e)) d.divergent = true;  // overflow counts as divergence evidence
    return d;
}

TailRate tail_rate(const std::vector<double>& value, const std::vector<std::uint8_t>& censored,
                   double top_fraction, long min_events) {
    if (value.empty()) throw Error("tail rate needs a nonempty sample");
    if (!censored.empty() && censored.size() != value.size())
        throw Error("tail rate: censor flags do not match the sample");
    if (top_fraction <= 0.0 || top_fraction > 0.5)
        throw Error("tail rate: top_fraction must lie in (0, 0.5]");
    if (min_events < 10) throw Error("tail rate needs min_events >= 10");

    std::vector<double> sorted(value);
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    double u = sorted[static_cast<std::size_t>((n - 1) * (1.0 - top_fraction))];

    std::vector<double> exc;
    std::vector<std::uint8_t> exc_cens;
    for (std::size_t i = 0; i < n; ++i) {
        if (value[i] > u) {
            exc.push_back(value[i] - u);
            exc_cens.push_back(censored.empty() ? 0 : censored[i]);
        }
    }
    TailRate tr;
    tr.threshold = u;
    double mass = 0.0;
    for (std::size_t j = 0; j < exc.size(); ++j) {
        mass += exc[j];
        if (!exc_cens[j]) ++tr.events;
    }
    if (tr.events > 0 && mass > 0.0) {
        tr.nu = static_cast<double>(tr.events) / mass;
        tr.se = tr.nu / std::sqrt(static_cast<double>(tr.events));
    }
    if (tr.events >= min_events) {
        // refit the rate on the two halves of the excess range; an exponential
        // tail gives matching rates, an increasing hazard pushes the ratio up
        std::vector<double> tmp(exc);
        double m = median_inplace(tmp);
        long ev_lo = 0, ev_hi = 0;
        double mass_lo = 0.0, mass_hi = 0.0;
        for (std::size_t j = 0; j < exc.size(); ++j) {
            mass_lo += std::min(exc[j], m);
            if (exc[j] <= m && !exc_cens[j]) ++ev_lo;
            if (exc[j] > m) {
                mass_hi += exc[j] - m;
                if (!exc_cens[j]) ++ev_hi;
            }
        }
        if (ev_lo > 0 && mass_lo > 0.0) {
            double r_lo = ev_lo / mass_lo;
            double r_hi = (mass_hi > 0.0 && ev_hi > 0) ? ev_hi / mass_hi
                                                       : std::numeric_limits<double>::infinity();
            tr.shape_ratio = r_hi / r_lo;
        } else {
            tr.shape_ratio = std::numeric_limits<double>::infinity();
        }
        tr.usable = tr.shape_ratio >= 0.7 && tr.shape_ratio <= 1.4;
    }
    return tr;
}

namespace {

std::vector<double> exp_sample(const std::vector<double>& x, double s) {
    std::vector<double> ex(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) ex[i] = std::exp(s * x[i]);
    return ex;
}

// events present but the hazard rises above the threshold: lighter than any
// exponential, so no tested moment can diverge
bool light_tail(const TailRate& tr) { return !tr.usable && tr.events >= 200 && tr.shape_ratio > 1.4; }

}  // namespace

MomentCall classify_exp_moment(const std::vector<double>& x,
                               const std::vector<std::uint8_t>& censored, double s) {
    if (s < 0.0) throw Error("exponential moment classification needs s >= 0");
    MomentCall call;
    call.tail = tail_rate(x, censored);
    call.doubling = doubling_diagnostic(exp_sample(x, s));
    call.estimate = call.doubling.estimates.back();
    if (call.tail.usable) {
        call.method = "tail-rate";
        call.divergent = s >= call.tail.nu;
    } else if (light_tail(call.tail)) {
        call.method = "tail-shape";
        call.divergent = false;
    } else {
        call.method = "doubling";
        call.divergent = call.doubling.divergent;
    }
    return call;
}

MomentCall classify_exp_moment_doubling(const std::vector<double>& x, double s) {
    if (s < 0.0) throw Error("exponential moment classification needs s >= 0");
    MomentCall call;
    call.doubling = doubling_diagnostic(exp_sample(x, s));
    call.estimate = call.doubling.estimates.back();
    call.method = "doubling";
    call.divergent = call.doubling.divergent;
    return call;
}

namespace {

struct MomentSample {
    std::vector<double> x;
    std::vector<std::uint8_t> cens;
};

// per-path statistic feeding the exponent bisection; bracket_stat picks the
// stopped clock (for b), otherwise the terminal displacement (for a)
MomentSample collect_stat(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed, bool bracket_stat) {
    MomentSample s;
    s.x.reserve(n_paths);
    s.cens.reserve(n_paths);
    const int K = grid.steps;
    for_each_path(spec, grid, n_paths, seed, [&](long, const PathBuffer& buf) {
        double val;
        std::uint8_t c = 0;
        if (bracket_stat) {
            if (spec.stopped && buf.hit >= 1) {
                // the crossing sits somewhere inside the hit step, so the
                // stopped clock is read at the step midpoint
                val = 0.5 * (buf.qv[buf.hit - 1] + buf.qv[buf.hit]);
            } else {
                val = buf.qv[K];
                if (spec.stopped) c = 1;
            }
        } else {
            val = std::abs(buf.m[K]);
            if (spec.stopped && buf.hit < 0) c = 1;
        }
        s.x.push_back(val);
        s.cens.push_back(c);
    });
    return s;
}

template <class ToS>
ExponentReport bisect_report(const std::string& name, const MomentSample& sample, double cap,
                             double tol, ToS&& to_s) {
    if (cap <= 0.0 || tol <= 0.0) throw Error("exponent bisection needs a positive cap and tolerance");
    TailRate tr = tail_rate(sample.x, sample.cens);
    const bool light = light_tail(tr);
    auto finite_at = [&](double candidate) {
        double s = to_s(candidate);
        if (tr.usable) return s < tr.nu;
        if (light) return true;
        return !doubling_diagnostic(exp_sample(sample.x, s)).divergent;
    };
    ExponentReport rep;
    rep.name = name;
    rep.cap = cap;
    if (finite_at(cap)) {
        rep.infinite = true;
        rep.lo = rep.hi = cap;
    } else {
        double lo = 0.0, hi = cap;
        while (hi - lo > tol) {
            double mid = 0.5 * (lo + hi);
            (finite_at(mid) ? lo : hi) = mid;
        }
        rep.lo = lo;
        rep.hi = hi;
    }
    if (tr.usable) {
        rep.rationale = "censored-exponential tail rate nu=" + fmt(tr.nu) + " (se " + fmt(tr.se) +
                        ", " + std::to_string(tr.events) +
                        " events); the moment diverges once its exponent reaches nu";
    } else if (light) {
        rep.rationale = "excess hazard rises above the threshold (shape ratio " +
                        fmt(tr.shape_ratio) + "), lighter than exponential, so every tested moment is finite";
    } else {
        rep.rationale = "doubling diagnostic on the exponential moment at each bisection candidate";
    }
    return rep;
}

struct CellAcc {
    double sum = 0.0, sumsq = 0.0;
    long count = 0;

    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++count;
    }
    double mean() const { return sum / count; }
    double se() const {
        if (count < 2) return 0.0;
        double var = (sumsq - sum * sum / count) / (count - 1);
        return std::sqrt(std::max(var, 0.0) / count);
    }
};

struct FamilyLayout {
    int steps = 0;
    int bins = 16;
    std::vector<double> state_lo, state_hi;  // pilot range of M per grid index
    std::vector<double> levels;              // ascending |M| hitting levels
};

FamilyLayout pilot_layout(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed) {
    FamilyLayout lay;
    lay.steps = grid.steps;
    const double inf = std::numeric_limits<double>::infinity();
    lay.state_lo.assign(grid.steps + 1, inf);
    lay.state_hi.assign(grid.steps + 1, -inf);
    const long pilot = std::min<long>(n_paths, 4096);
    std::vector<double> peaks;
    peaks.reserve(pilot);
    for_each_path(spec, grid, pilot, seed, [&](long, const PathBuffer& buf) {
        double peak = 0.0;
        for (int k = 0; k <= lay.steps; ++k) {
            double v = buf.m[k];
            lay.state_lo[k] = std::min(lay.state_lo[k], v);
            lay.state_hi[k] = std::max(lay.state_hi[k], v);
            peak = std::max(peak, std::abs(v));
        }
        peaks.push_back(peak);
    });
    std::sort(peaks.begin(), peaks.end());
    for (int j = 1; j <= 8; ++j) {
        double q = peaks[static_cast<std::size_t>((peaks.size() - 1) * (j / 9.0))];
        if (q > 0.0 && (lay.levels.empty() || q > lay.levels.back())) lay.levels.push_back(q);
    }
    return lay;
}

struct FamilyBest {
    double score = 0.0;  // confidence-penalized mean of the winning cell
    double mean = 0.0, se = 0.0;
    long count = 0;
    std::string member;
};

// Sup of a conditional mean over the default stopping family: every grid
// time (binned on the state) plus hitting times of |M| at the pilot quantile
// levels (binned on time). Cross-fitted: the winning cell is chosen on the
// first half of the paths by a confidence-penalized score, and the reported
// value is the second half's mean of that cell, so selection noise never
// enters the estimate.
template <class Target>
FamilyBest family_sup(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed,
                      const FamilyLayout& lay, Target&& target) {
    const int K = lay.steps, B = lay.bins;
    const long min_count = std::max<long>(50, n_paths / 32);
    const long n_sel = n_paths / 2;
    const std::size_t n_grid = static_cast<std::size_t>(K + 1) * B;
    std::vector<CellAcc> sel(n_grid + lay.levels.size() * B);
    std::vector<CellAcc> est(sel.size());
    for_each_path(spec, grid, n_paths, seed, [&](long i, const PathBuffer& buf) {
        std::vector<CellAcc>& cells = i < n_sel ? sel : est;
        std::size_t lvl = 0;
        double peak = 0.0;
        for (int k = 0; k <= K; ++k) {
            double v = buf.m[k];
            double width = lay.state_hi[k] - lay.state_lo[k];
            int b = 0;
            if (width > 0.0) {
                b = static_cast<int>((v - lay.state_lo[k]) / width * B);
                b = std::clamp(b, 0, B - 1);
            }
            double tval = target(buf, k);
            cells[static_cast<std::size_t>(k) * B + b].add(tval);
            peak = std::max(peak, std::abs(v));
            while (lvl < lay.levels.size() && peak >= lay.levels[lvl]) {
                int tb = std::min(B - 1, static_cast<int>(static_cast<long long>(k) * B / (K + 1)));
                cells[n_grid + lvl * B + tb].add(tval);
                ++lvl;
            }
        }
    });
    long best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < sel.size(); ++i) {
        if (sel[i].count < min_count || est[i].count < min_count) continue;
        double score = sel[i].mean() - 2.0 * sel[i].se();
        if (score > best_score) {
            best_score = score;
            best = static_cast<long>(i);
        }
    }
    if (best < 0)
        throw Error("stopping-family estimate: no cell reached the minimum count of " +
                    std::to_string(min_count) + " per half; increase the path budget");
    const CellAcc& win = est[best];
    FamilyBest out;
    out.score = best_score;
    out.mean = win.mean();
    out.se = win.se();
    out.count = win.count;
    std::ostringstream os;
    if (static_cast<std::size_t>(best) < n_grid) {
        os << "grid time t=" << fmt(grid.time(static_cast<int>(best / B))) << ", state bin "
           << best % B;
    } else {
        std::size_t h = best - n_grid;
        os << "hitting level " << fmt(lay.levels[h / B]) << ", time bin " << h % B;
    }
    out.member = os.str();
    return out;
}

std::string family_description(const FamilyLayout& lay) {
    return "every grid time (" + std::to_string(lay.bins) + " state bins) plus |M| hitting times at " +
           std::to_string(lay.levels.size()) + " pilot quantile levels";
}

void check_mc_budget(long n_paths) {
    if (n_paths < 256) throw Error("exponent estimation needs at least 256 paths");
}

}  // namespace

ExponentReport estimate_b(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed, double cap, double tol) {
    check_mc_budget(n_paths);
    MomentSample sample = collect_stat(spec, grid, n_paths, seed, true);
    ExponentReport rep =
        bisect_report("b", sample, cap, tol, [](double b) { return 0.5 * b * b; });
    FamilyLayout lay = pilot_layout(spec, grid, n_paths, seed);
    rep.family = "verdict from the start-time member; family: " + family_description(lay);
    const double s_lo = 0.5 * rep.lo * rep.lo;
    const int K = grid.steps;
    FamilyBest best = family_sup(spec, grid, n_paths, seed, lay,
                                 [&](const PathBuffer& buf, int k) {
                                     return std::exp(s_lo * (buf.qv[K] - buf.qv[k]));
                                 });
    rep.moment_at_lo = best.mean;
    return rep;
}

ExponentReport estimate_a(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                          std::uint64_t seed, double cap, double tol) {
    check_mc_budget(n_paths);
    MomentSample sample = collect_stat(spec, grid, n_paths, seed, false);
    ExponentReport rep = bisect_report("a", sample, cap, tol, [](double a) { return a; });
    FamilyLayout lay = pilot_layout(spec, grid, n_paths, seed);
    rep.family = "verdict from the start-time member; family: " + family_description(lay);
    const double s_lo = rep.lo;
    const int K = grid.steps;
    FamilyBest best = family_sup(spec, grid, n_paths, seed, lay,
                                 [&](const PathBuffer& buf, int k) {
                                     return std::exp(s_lo * std::abs(buf.m[K] - buf.m[k]));
                                 });
    rep.moment_at_lo = best.mean;
    return rep;
}

ExponentReport estimate_b(const TreeMartingale& m) {
    const Tree& t = m.tree();
    double bound = 0.0;
    for (NodeId v = 0; v < t.node_count(); ++v) bound = std::max(bound, m.pred_bracket(v));
    ExponentReport rep;
    rep.name = "b";
    rep.infinite = true;
    rep.cap = rep.lo = rep.hi = std::numeric_limits<double>::infinity();
    rep.family = "every stopping time on the finite tree";
    rep.rationale = "the predictable bracket is bounded by " + fmt(bound) +
                    ", so the exponential bracket moment is finite at every exponent";
    return rep;
}

ExponentReport estimate_a(const TreeMartingale& m) {
    const Tree& t = m.tree();
    double bound = 0.0;
    for (NodeId v = 0; v < t.node_count(); ++v) bound = std::max(bound, std::abs(m.value(v)));
    ExponentReport rep;
    rep.name = "a";
    rep.infinite = true;
    rep.cap = rep.lo = rep.hi = std::numeric_limits<double>::infinity();
    rep.family = "every stopping time on the finite tree";
    rep.rationale = "|M| is bounded by " + fmt(bound) +
                    ", so displacements never exceed " + fmt(2.0 * bound) +
                    " and the exponential moment is finite at every exponent";
    return rep;
}

namespace {

const std::vector<double>& channel_of(const PathBuffer& buf, const SimSpec& spec,
                                      const std::string& name) {
    if (name == "W") return buf.w;
    if (name == "X") return buf.x;
    if (name == "M") return buf.m;
    if (name == "QV") return buf.qv;
    if (name == "E") {
        if (!spec.exp_channel)
            throw Error("recipe '" + spec.name + "' does not carry the exponential channel");
        return buf.e;
    }
    throw Error("unknown channel '" + name + "'; channels are W, X, M, QV, E");
}

}  // namespace

McNorm mc_norm_rp(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed,
                  double p, const std::string& channel) {
    if (p < 1.0) throw Error("running-maximum norm needs p >= 1");
    if (n_paths < 2) throw Error("running-maximum norm needs at least 2 paths");
    const int K = grid.steps;
    double sum = 0.0, sumsq = 0.0;
    for_each_path(spec, grid, n_paths, seed, [&](long, const PathBuffer& buf) {
        const std::vector<double>& ch = channel_of(buf, spec, channel);
        double peak = 0.0;
        for (int k = 0; k <= K; ++k) peak = std::max(peak, std::abs(ch[k]));
        double v = std::pow(peak, p);
        sum += v;
        sumsq += v * v;
    });
    double mean = sum / n_paths;
    double var = std::max(0.0, (sumsq - sum * sum / n_paths) / (n_paths - 1));
    McNorm out;
    out.name = "running-maximum norm";
    out.p = p;
    out.value = std::pow(mean, 1.0 / p);
    out.se = mean > 0.0 ? std::sqrt(var / n_paths) * out.value / (p * mean) : 0.0;
    out.family = "terminal-horizon estimate on channel " + channel;
    return out;
}

McNorm mc_bmo_lower(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed) {
    FamilyLayout lay = pilot_layout(spec, grid, n_paths, seed);
    const int K = grid.steps;
    FamilyBest best = family_sup(spec, grid, n_paths, seed, lay,
                                 [&](const PathBuffer& buf, int k) { return buf.qv[K] - buf.qv[k]; });
    McNorm out;
    out.name = "bmo lower bound";
    out.p = 2.0;
    out.value = std::sqrt(std::max(best.mean, 0.0));
    out.se = out.value > 0.0 ? best.se / (2.0 * out.value) : 0.0;
    out.family = family_description(lay) + "; winner: " + best.member;
    return out;
}

McNorm mc_reverse_holder(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                         std::uint64_t seed, double p) {
    if (p < 1.0) throw Error("reverse Holder probe needs p >= 1");
    if (!spec.exp_channel)
        throw Error("recipe '" + spec.name + "' does not carry the exponential channel");
    FamilyLayout lay = pilot_layout(spec, grid, n_paths, seed);
    const int K = grid.steps;
    FamilyBest best = family_sup(spec, grid, n_paths, seed, lay,
                                 [&](const PathBuffer& buf, int k) {
                                     return std::pow(buf.e[K] / buf.e[k], p);
                                 });
    McNorm out;
    out.name = "reverse-holder lower bound";
    out.p = p;
    out.value = best.mean;
    out.se = best.se;
    out.family = family_description(lay) + "; winner: " + best.member;
    return out;
}

}  // namespace bmo
