#ifndef BMOLAB_PATHS_HPP
#define BMOLAB_PATHS_HPP

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bmolab/tree.hpp"

namespace bmo {

/** Uniform grid t_k = t_start + k*dt for k = 0..steps. */
struct TimeGrid {
    double t_start = 0.0;
    double t_end = 1.0;
    int steps = 1;

    double dt() const { return (t_end - t_start) / steps; }
    double time(int k) const { return t_start + dt() * k; }
};

TimeGrid make_grid(double t_start, double t_end, int steps);

// [0, 1 - 2^-k] in 2^k steps; the horizon stays clear of the singular time 1
TimeGrid truncated_unit_grid(int k);

/**
 * Bundled simulation recipes. M = (h . W) with the left-point rule, QV is
 * its bracket sum of h(t_k)^2 dt. A stopped recipe freezes M and QV at the
 * first grid index where |X| crosses the barrier; X itself keeps running.
 * With bridge_hit the in-step crossing is sampled from the Brownian-bridge
 * crossing probability, removing the sqrt(step) barrier-monitoring bias
 * (the hit is still recorded at the step end, so the clock overshoots by at
 * most one step).
 */
struct SimSpec {
    std::string name;
    std::function<double(double)> h;
    bool stopped = false;
    bool bridge_hit = false;
    double barrier = 1.0;
    bool exp_channel = false;  // E_k = exp(W_k - t_k/2)
    double t_sup = 0.0;        // when > 0, the grid must end strictly before it
};

SimSpec sim_spec_by_name(const std::string& name);
std::vector<std::string> sim_spec_names();

/** One path's channels, reused across paths by the streaming driver. */
struct PathBuffer {
    std::vector<double> w, x, m, qv, e;
    int hit = -1;            // first index with |x| > barrier, -1 if never
    double overshoot = 0.0;  // |x(hit)| - barrier
};

// deterministic fill; the stream for path i is a function of (seed, i) only,
// so results do not depend on how paths are partitioned across workers
void fill_path(const SimSpec& spec, const TimeGrid& grid, std::uint64_t seed, long path,
               PathBuffer& buf);

template <class F>
void for_each_path(const SimSpec& spec, const TimeGrid& grid, long n_paths, std::uint64_t seed,
                   F&& f) {
    PathBuffer buf;
    for (long i = 0; i < n_paths; ++i) {
        fill_path(spec, grid, seed, i, buf);
        f(i, buf);
    }
}

struct GridStoppingTime {
    static constexpr int kNever = -1;
    std::vector<int> index;  // per-path stop index, kNever if the rule never fires
};

enum class Barrier { AbsGreater, Greater, Less };

/**
 * Materialized ensemble for small runs and audits; large runs go through
 * for_each_path and keep per-path summaries only. Channels: W always, M and
 * QV always, X when the recipe stops, E when it carries the exponential.
 */
class PathEnsemble {
  public:
    static PathEnsemble simulate(const SimSpec& spec, const TimeGrid& grid, long n_paths,
                                 std::uint64_t seed);

    const TimeGrid& grid() const { return grid_; }
    long n_paths() const { return n_paths_; }
    std::uint64_t seed() const { return seed_; }

    bool has_channel(const std::string& name) const;
    const std::vector<std::string>& channel_names() const { return names_; }
    // flattened row-major: entry for (path, k) at path*(steps+1) + k
    const std::vector<double>& channel(const std::string& name) const;
    double at(const std::string& name, long path, int k) const;

    // hit record of the recipe's own barrier; empty when the recipe is unstopped
    const GridStoppingTime& builtin_hit() const { return hit_; }

  private:
    TimeGrid grid_;
    long n_paths_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<std::string> names_;
    std::vector<std::vector<double>> data_;
    GridStoppingTime hit_;
};

GridStoppingTime hit_time(const PathEnsemble& e, const std::string& channel, Barrier rule,
                          double level);

struct BinEstimate {
    double lo = 0.0, hi = 0.0;  // bin edges in state space
    double mean = 0.0, se = 0.0;
    long count = 0;
    bool usable = false;  // count >= the requested minimum
};

// equal-width bins over the observed state range
std::vector<BinEstimate> binned_means(const std::vector<double>& state,
                                      const std::vector<double>& target, int bins,
                                      long min_count);

// Markov-state conditional estimate: bin on a channel's value at one index
std::vector<BinEstimate> conditional_estimate(const PathEnsemble& e,
                                              const std::vector<double>& target,
                                              const std::string& state_channel, int at_index,
                                              int bins, long min_count);

// z-scores of the standardized increment mean and variance against N(0, dt)
struct BrownianSanity {
    double mean_z = 0.0;
    double var_z = 0.0;
};
BrownianSanity brownian_sanity(const PathEnsemble& e);

// one diagnostic per row: name, channel, value
std::string summary_csv(const PathEnsemble& e);
// <prefix>.bin holds the channels back to back, row-major doubles, in the
// order listed by the <prefix>.json header {n_paths, steps, channels}
void write_raw(const PathEnsemble& e, const std::string& prefix);

}  // namespace bmo

#endif
