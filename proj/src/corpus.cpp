#include "bmolab/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bmolab/rng.hpp"

namespace bmo {

Tree random_tree(std::uint64_t seed, int depth, int branching, double dt) {
    auto rng = stream_rng(seed, 0x7265657473ULL);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    NodeId total = 0;
    {
        NodeId width = 1;
        for (int k = 0; k <= depth; ++k) { total += width; width *= branching; }
    }
    std::vector<double> prob(static_cast<std::size_t>(total), 0.0);
    NodeId internal = (total - 1) / branching;  // nodes with children
    for (NodeId v = 0; v < internal; ++v) {
        double sum = 0.0;
        std::vector<double> raw(static_cast<std::size_t>(branching));
        for (auto& r : raw) { r = 0.25 + u(rng); sum += r; }  // floor keeps probs away from 0
        for (int c = 0; c < branching; ++c)
            prob[static_cast<std::size_t>(branching * v + 1 + c)] = raw[static_cast<std::size_t>(c)] / sum;
    }
    return Tree(depth, branching, std::move(prob), dt);
}

TreeMartingale random_martingale(const Tree& t, std::uint64_t seed, double scale) {
    auto rng = stream_rng(seed, 0x6d617274ULL);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = 0; v < t.internal_count(); ++v) {
        double mean = 0.0;
        for (int c = 0; c < t.branching(); ++c) {
            NodeId w = t.child(v, c);
            inc[static_cast<std::size_t>(w)] = scale * u(rng);
            mean += t.edge_prob(w) * inc[static_cast<std::size_t>(w)];
        }
        for (int c = 0; c < t.branching(); ++c)
            inc[static_cast<std::size_t>(t.child(v, c))] -= mean;
    }
    return TreeMartingale(t, inc);
}

Tree coin_tree() { return Tree(1, 2, {1.0, 0.5, 0.5}, 1.0); }

TreeMartingale coin_martingale(const Tree& t) {
    std::vector<double> inc(static_cast<std::size_t>(t.node_count()), 0.0);
    for (NodeId v = 0; v < t.internal_count(); ++v) {
        if (t.branching() != 2 || t.edge_prob(t.child(v, 0)) != 0.5)
            throw Error("coin_martingale: needs a fair binary tree");
        inc[static_cast<std::size_t>(t.child(v, 0))] = 1.0;
        inc[static_cast<std::size_t>(t.child(v, 1))] = -1.0;
    }
    return TreeMartingale(t, inc);
}

TreeMartingale tree_martingale_by_name(const std::string& name, const Tree& t,
                                       std::uint64_t seed) {
    if (name == "random") return random_martingale(t, seed, 1.0);
    if (name == "random-small") return random_martingale(t, seed, 0.25);
    if (name == "coin") return coin_martingale(t);
    std::string known;
    for (const auto& n : tree_martingale_names()) known += " " + n;
    throw Error("unknown martingale recipe '" + name + "'; known:" + known);
}

std::vector<std::string> tree_martingale_names() { return {"random", "random-small", "coin"}; }

namespace {

CorpusSpec spec_from_json(const nlohmann::json& j) {
    CorpusSpec s;
    s.count = j.value("n", 100);
    s.depth = j.value("depth", 4);
    s.branching = j.value("branching", 2);
    s.seed = j.value("seed", std::uint64_t{1});
    return s;
}

}  // namespace

CorpusSpec parse_corpus_spec(const std::string& text) {
    const std::string prefix = "seeded:";
    if (text.rfind(prefix, 0) != 0) {
        std::ifstream file(text);
        if (!file)
            throw Error("corpus spec must look like seeded:{n:100,depth:4,branching:2} "
                        "or name a JSON file; cannot open '" + text + "'");
        try {
            return spec_from_json(nlohmann::json::parse(file));
        } catch (const nlohmann::json::exception& e) {
            throw Error("corpus spec file '" + text + "' is not valid JSON: " + e.what());
        }
    }
    std::string body = text.substr(prefix.size());
    // accept relaxed keys without quotes by quoting them
    std::string fixed;
    for (std::size_t i = 0; i < body.size(); ++i) {
        char ch = body[i];
        if (std::isalpha(static_cast<unsigned char>(ch))) {
            std::size_t j = i;
            while (j < body.size() && std::isalnum(static_cast<unsigned char>(body[j]))) ++j;
            fixed += '"' + body.substr(i, j - i) + '"';
            i = j - 1;
        } else {
            fixed += ch;
        }
    }
    return spec_from_json(nlohmann::json::parse(fixed));
}

std::vector<CorpusItem> build_corpus(const CorpusSpec& spec) {
    std::vector<CorpusItem> out;
    out.reserve(static_cast<std::size_t>(spec.count));
    for (int i = 0; i < spec.count; ++i) {
        std::uint64_t s = splitmix64(spec.seed + 0x1000ULL * static_cast<std::uint64_t>(i));
        auto t = std::make_shared<const Tree>(random_tree(s, spec.depth, spec.branching));
        TreeMartingale m = random_martingale(*t, s + 1);
        out.push_back({std::move(t), std::move(m)});
    }
    return out;
}

std::vector<CorpusItem> reference_corpus(std::uint64_t seed, int count) {
    std::vector<CorpusItem> out;
    out.reserve(static_cast<std::size_t>(count));
    auto coin = std::make_shared<const Tree>(coin_tree());
    out.push_back({coin, coin_martingale(*coin)});
    for (int i = 1; i < count; ++i) {
        std::uint64_t s = splitmix64(seed + 0x2000ULL * static_cast<std::uint64_t>(i));
        int depth = 2 + static_cast<int>(s % 4);          // 2..5
        int branching = 2 + static_cast<int>((s >> 8) % 2);  // 2..3
        auto t = std::make_shared<const Tree>(random_tree(s, depth, branching));
        TreeMartingale m = random_martingale(*t, s + 1);
        out.push_back({std::move(t), std::move(m)});
    }
    return out;
}

}  // namespace bmo
