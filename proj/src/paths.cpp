#include "bmolab/paths.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bmolab/rng.hpp"

namespace bmo {

TimeGrid make_grid(double t_start, double t_end, int steps) {
    if (steps < 1 || !(t_end > t_start)) throw Error("make_grid: needs t_end > t_start, steps >= 1");
    return TimeGrid{t_start, t_end, steps};
}

TimeGrid truncated_unit_grid(int k) {
    if (k < 1 || k > 30) throw Error("truncated_unit_grid: k out of range");
    int steps = 1 << k;
    return TimeGrid{0.0, 1.0 - 1.0 / steps, steps};
}

SimSpec sim_spec_by_name(const std::string& name) {
    if (name == "zero") return SimSpec{name, [](double) { return 0.0; }};
    if (name == "bm") return SimSpec{name, [](double) { return 1.0; }};
    if (name == "exp-bm") {
        SimSpec s{name, [](double) { return 1.0; }};
        s.exp_channel = true;
        return s;
    }
    if (name == "invsqrt" || name == "invsqrt-stopped" || name == "invsqrt-stopped-grid") {
        SimSpec s{name, [](double t) { return 1.0 / std::sqrt(1.0 - t); }};
        s.t_sup = 1.0;
        s.stopped = (name != "invsqrt");
        s.bridge_hit = (name == "invsqrt-stopped");
        s.barrier = 1.0;
        return s;
    }
    std::string known;
    for (const auto& n : sim_spec_names()) known += (known.empty() ? "" : ", ") + n;
    throw Error("unknown simulation recipe '" + name + "' (known: " + known + ")");
}

std::vector<std::string> sim_spec_names() {
    return {"zero", "bm", "exp-bm", "invsqrt", "invsqrt-stopped", "invsqrt-stopped-grid"};
}

void fill_path(const SimSpec& spec, const TimeGrid& grid, std::uint64_t seed, long path,
               PathBuffer& buf) {
    const int K = grid.steps;
    const double dt = grid.dt();
    const double sdt = std::sqrt(dt);
    auto resize0 = [K](std::vector<double>& v, double v0) {
        v.assign(static_cast<std::size_t>(K) + 1, 0.0);
        v[0] = v0;
    };
    resize0(buf.w, 0.0);
    resize0(buf.x, 0.0);
    resize0(buf.m, 0.0);
    resize0(buf.qv, 0.0);
    if (spec.exp_channel) resize0(buf.e, 1.0);
    else buf.e.clear();
    buf.hit = -1;
    buf.overshoot = 0.0;

    auto rng = stream_rng(seed, static_cast<std::uint64_t>(path));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double b = spec.barrier;
    for (int k = 0; k < K; ++k) {
        double dw = gauss(rng) * sdt;
        // every stopped spec consumes one uniform per step: the draw sequence
        // is then independent of the hit state and of bridge_hit, so truncated
        // grids reproduce prefixes bitwise and the bridged and grid-monitored
        // variants of a recipe walk the same Brownian path
        double u = spec.stopped ? unif(rng) : 1.0;
        double hk = spec.h ? spec.h(grid.time(k)) : 0.0;
        buf.w[k + 1] = buf.w[k] + dw;
        buf.x[k + 1] = buf.x[k] + hk * dw;
        bool running = !spec.stopped || buf.hit < 0;
        buf.m[k + 1] = running ? buf.x[k + 1] : buf.m[k];
        buf.qv[k + 1] = running ? buf.qv[k] + hk * hk * dt : buf.qv[k];
        if (spec.stopped && buf.hit < 0) {
            if (std::abs(buf.x[k + 1]) > b) {
                buf.hit = k + 1;
                buf.overshoot = std::abs(buf.x[k + 1]) - b;
            } else if (spec.bridge_hit) {
                double dc = hk * hk * dt;
                if (dc > 0.0) {
                    double cross = std::exp(-2.0 * (b - buf.x[k]) * (b - buf.x[k + 1]) / dc) +
                                   std::exp(-2.0 * (b + buf.x[k]) * (b + buf.x[k + 1]) / dc);
                    if (u < cross) buf.hit = k + 1;  // crossed inside the step, M stays adapted
                }
            }
        }
        if (spec.exp_channel)
            buf.e[k + 1] = std::exp(buf.w[k + 1] - 0.5 * grid.time(k + 1));
    }
}

PathEnsemble PathEnsemble::simulate(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                                    std::uint64_t seed) {
    if (n_paths < 1) throw Error("simulate: empty ensemble");
    if (grid.steps < 1 || !(grid.dt() > 0.0)) throw Error("simulate: degenerate grid");
    if (spec.t_sup > 0.0 && grid.t_end >= spec.t_sup)
        throw Error("simulate: integrand of '" + spec.name + "' is singular at t = " +
                    std::to_string(spec.t_sup) + ", grid must end before it");

    PathEnsemble e;
    e.grid_ = grid;
    e.n_paths_ = n_paths;
    e.seed_ = seed;
    e.names_ = {"W", "M", "QV"};
    if (spec.stopped) e.names_.push_back("X");
    if (spec.exp_channel) e.names_.push_back("E");
    const std::size_t row = static_cast<std::size_t>(grid.steps) + 1;
    e.data_.assign(e.names_.size(), std::vector<double>(static_cast<std::size_t>(n_paths) * row));
    if (spec.stopped) e.hit_.index.assign(static_cast<std::size_t>(n_paths), GridStoppingTime::kNever);

    for_each_path(spec, grid, n_paths, seed, [&](long i, const PathBuffer& buf) {
        auto put = [&](std::size_t c, const std::vector<double>& src) {
            std::copy(src.begin(), src.end(), e.data_[c].begin() + static_cast<std::size_t>(i) * row);
        };
        put(0, buf.w);
        put(1, buf.m);
        put(2, buf.qv);
        std::size_t c = 3;
        if (spec.stopped) put(c++, buf.x);
        if (spec.exp_channel) put(c++, buf.e);
        if (spec.stopped) e.hit_.index[static_cast<std::size_t>(i)] = buf.hit;
    });
    return e;
}

bool PathEnsemble::has_channel(const std::string& name) const {
    return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const std::vector<double>& PathEnsemble::channel(const std::string& name) const {
    for (std::size_t c = 0; c < names_.size(); ++c)
        if (names_[c] == name) return data_[c];
    throw Error("no channel '" + name + "' in this ensemble");
}

double PathEnsemble::at(const std::string& name, long path, int k) const {
    const std::size_t row = static_cast<std::size_t>(grid_.steps) + 1;
    return channel(name)[static_cast<std::size_t>(path) * row + static_cast<std::size_t>(k)];
}

GridStoppingTime hit_time(const PathEnsemble& e, const std::string& name, Barrier rule,
                          double level) {
    const auto& data = e.channel(name);
    const std::size_t row = static_cast<std::size_t>(e.grid().steps) + 1;
    GridStoppingTime st;
    st.index.assign(static_cast<std::size_t>(e.n_paths()), GridStoppingTime::kNever);
    for (long i = 0; i < e.n_paths(); ++i) {
        const double* p = data.data() + static_cast<std::size_t>(i) * row;
        for (std::size_t k = 0; k < row; ++k) {
            bool fire = rule == Barrier::AbsGreater ? std::abs(p[k]) > level
                      : rule == Barrier::Greater    ? p[k] > level
                                                    : p[k] < level;
            if (fire) {
                st.index[static_cast<std::size_t>(i)] = static_cast<int>(k);
                break;
            }
        }
    }
    return st;
}

std::vector<BinEstimate> binned_means(const std::vector<double>& state,
                                      const std::vector<double>& target, int bins,
                                      long min_count) {
    if (state.empty() || state.size() != target.size())
        throw Error("binned_means: empty or mismatched samples");
    if (bins < 1) throw Error("binned_means: bins >= 1");
    auto [mn_it, mx_it] = std::minmax_element(state.begin(), state.end());
    double mn = *mn_it, mx = *mx_it;
    double width = (mx - mn) / bins;
    std::vector<BinEstimate> out(static_cast<std::size_t>(bins));
    std::vector<double> sum(static_cast<std::size_t>(bins), 0.0), sq(static_cast<std::size_t>(bins), 0.0);
    for (int b = 0; b < bins; ++b) {
        out[static_cast<std::size_t>(b)].lo = mn + width * b;
        out[static_cast<std::size_t>(b)].hi = (b + 1 == bins) ? mx : mn + width * (b + 1);
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        int b = width > 0.0 ? std::min(bins - 1, static_cast<int>((state[i] - mn) / width)) : 0;
        auto& o = out[static_cast<std::size_t>(b)];
        o.count += 1;
        sum[static_cast<std::size_t>(b)] += target[i];
        sq[static_cast<std::size_t>(b)] += target[i] * target[i];
    }
    for (int b = 0; b < bins; ++b) {
        auto& o = out[static_cast<std::size_t>(b)];
        if (o.count > 0) {
            o.mean = sum[static_cast<std::size_t>(b)] / static_cast<double>(o.count);
            if (o.count > 1) {
                double var = (sq[static_cast<std::size_t>(b)] -
                              static_cast<double>(o.count) * o.mean * o.mean) /
                             static_cast<double>(o.count - 1);
                o.se = std::sqrt(std::max(0.0, var) / static_cast<double>(o.count));
            }
        }
        o.usable = o.count >= min_count;
    }
    return out;
}

std::vector<BinEstimate> conditional_estimate(const PathEnsemble& e,
                                              const std::vector<double>& target,
                                              const std::string& state_channel, int at_index,
                                              int bins, long min_count) {
    if (e.n_paths() == 0) throw Error("conditional_estimate: empty ensemble");
    if (target.size() != static_cast<std::size_t>(e.n_paths()))
        throw Error("conditional_estimate: one target per path required");
    std::vector<double> state(static_cast<std::size_t>(e.n_paths()));
    for (long i = 0; i < e.n_paths(); ++i) state[static_cast<std::size_t>(i)] = e.at(state_channel, i, at_index);
    return binned_means(state, target, bins, min_count);
}

BrownianSanity brownian_sanity(const PathEnsemble& e) {
    const auto& w = e.channel("W");
    const int steps = e.grid().steps;
    const std::size_t row = static_cast<std::size_t>(steps) + 1;
    const double sdt = std::sqrt(e.grid().dt());
    double s1 = 0.0, s2 = 0.0;
    for (long i = 0; i < e.n_paths(); ++i)
        for (int k = 0; k < steps; ++k) {
            double z = (w[static_cast<std::size_t>(i) * row + static_cast<std::size_t>(k) + 1] -
                        w[static_cast<std::size_t>(i) * row + static_cast<std::size_t>(k)]) / sdt;
            s1 += z;
            s2 += z * z;
        }
    double n = static_cast<double>(e.n_paths()) * steps;
    double mean = s1 / n;
    double var = s2 / n - mean * mean;
    return BrownianSanity{mean * std::sqrt(n), (var - 1.0) * std::sqrt(n / 2.0)};
}

std::string summary_csv(const PathEnsemble& e) {
    std::ostringstream os;
    os << "diagnostic,channel,value\n";
    os << "n_paths,," << e.n_paths() << "\n";
    os << "steps,," << e.grid().steps << "\n";
    const std::size_t row = static_cast<std::size_t>(e.grid().steps) + 1;
    os.precision(17);
    for (const auto& name : e.channel_names()) {
        const auto& d = e.channel(name);
        double sum = 0.0, sq = 0.0, mn = d[row - 1], mx = d[row - 1];
        for (long i = 0; i < e.n_paths(); ++i) {
            double v = d[static_cast<std::size_t>(i) * row + row - 1];
            sum += v;
            sq += v * v;
            mn = std::min(mn, v);
            mx = std::max(mx, v);
        }
        double n = static_cast<double>(e.n_paths());
        os << "terminal_mean," << name << "," << sum / n << "\n";
        os << "terminal_var," << name << "," << (sq / n - (sum / n) * (sum / n)) << "\n";
        os << "terminal_min," << name << "," << mn << "\n";
        os << "terminal_max," << name << "," << mx << "\n";
    }
    if (!e.builtin_hit().index.empty()) {
        long fired = 0;
        for (int h : e.builtin_hit().index) fired += h >= 0 ? 1 : 0;
        os << "hit_fraction,X," << static_cast<double>(fired) / static_cast<double>(e.n_paths()) << "\n";
    }
    return os.str();
}

void write_raw(const PathEnsemble& e, const std::string& prefix) {
    nlohmann::json header;
    header["n_paths"] = e.n_paths();
    header["steps"] = e.grid().steps;
    header["t_start"] = e.grid().t_start;
    header["t_end"] = e.grid().t_end;
    header["channels"] = e.channel_names();
    std::ofstream hj(prefix + ".json");
    hj << header.dump(2) << "\n";
    if (!hj) throw Error("write_raw: cannot write " + prefix + ".json");

    std::ofstream bin(prefix + ".bin", std::ios::binary);
    for (const auto& name : e.channel_names()) {
        const auto& d = e.channel(name);
        bin.write(reinterpret_cast<const char*>(d.data()),
                  static_cast<std::streamsize>(d.size() * sizeof(double)));
    }
    if (!bin) throw Error("write_raw: cannot write " + prefix + ".bin");
}

}  // namespace bmo
