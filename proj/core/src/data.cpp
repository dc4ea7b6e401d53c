#include "peso/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "peso/rng.hpp"

namespace peso {

namespace {

Vector dirichlet_draw(std::size_t dim, double conc, std::mt19937_64& engine) {
    std::gamma_distribution<double> gamma(conc, 1.0);
    Vector draw(dim);
    double sum = 0.0;
    for (double& v : draw) {
        v = gamma(engine);
        sum += v;
    }
    if (sum <= 0.0) {  // pathological underflow at tiny concentrations
        std::fill(draw.begin(), draw.end(), 1.0 / static_cast<double>(dim));
        return draw;
    }
    for (double& v : draw) v /= sum;
    return draw;
}

std::size_t sample_categorical(const Vector& probs, std::mt19937_64& engine) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(engine);
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        acc += probs[i];
        if (u < acc) return i;
    }
    return probs.size() - 1;
}

}  // namespace

DriftResult generate_drift(const DriftSpec& spec) {
    if (spec.n_clusters == 0 || spec.users == 0 || spec.items == 0)
        throw PreconditionError("generate_drift: empty spec");
    if (spec.alpha.size() != spec.n_stages())
        throw PreconditionError("generate_drift: one alpha per stage required");
    for (double a : spec.alpha)
        if (a < 0.0 || a > 1.0) throw PreconditionError("generate_drift: alpha outside [0,1]");
    if (spec.items < spec.n_clusters)
        throw PreconditionError("generate_drift: fewer items than clusters");

    const std::size_t n_stages = spec.n_stages();
    std::mt19937_64 engine(spec.seed);

    // Seeded item partition into clusters of near-equal size.
    std::vector<std::size_t> item_order(spec.items);
    std::iota(item_order.begin(), item_order.end(), std::size_t{0});
    std::shuffle(item_order.begin(), item_order.end(), engine);
    std::vector<std::size_t> item_clusters(spec.items);
    std::vector<std::vector<std::size_t>> cluster_items(spec.n_clusters);
    for (std::size_t pos = 0; pos < spec.items; ++pos) {
        const std::size_t c = pos % spec.n_clusters;
        item_clusters[item_order[pos]] = c;
        cluster_items[c].push_back(item_order[pos]);
    }

    // Mixture recurrence, stored exactly as generated.
    std::vector<std::vector<Vector>> mixtures(spec.users);
    for (std::size_t u = 0; u < spec.users; ++u) {
        mixtures[u].resize(n_stages);
        mixtures[u][0] = dirichlet_draw(spec.n_clusters, spec.dirichlet_conc, engine);
        for (std::size_t t = 1; t < n_stages; ++t) {
            const Vector q = dirichlet_draw(spec.n_clusters, spec.dirichlet_conc, engine);
            const double a = spec.alpha[t];
            Vector pi(spec.n_clusters);
            for (std::size_t c = 0; c < spec.n_clusters; ++c)
                pi[c] = a * mixtures[u][t - 1][c] + (1.0 - a) * q[c];
            mixtures[u][t] = pi;
        }
    }

    DriftResult out;
    out.item_clusters = item_clusters;
    out.mixtures = mixtures;
    out.log.n_users = spec.users;
    out.log.n_items = spec.items;

    // Stage interactions round-robin over users so each stage interleaves
    // everyone; timestamps are a strictly increasing global counter.
    std::int64_t clock = 0;
    for (std::size_t t = 0; t < n_stages; ++t) {
        const std::size_t total = spec.stage_sizes[t];
        std::uniform_int_distribution<std::size_t> pick;
        for (std::size_t slot = 0; slot < total; ++slot) {
            const std::size_t u = slot % spec.users;
            const std::size_t c = sample_categorical(mixtures[u][t], engine);
            const std::vector<std::size_t>& pool = cluster_items[c];
            const std::size_t item =
                pool[pick(engine, decltype(pick)::param_type(0, pool.size() - 1))];
            out.log.records.push_back({u, item, clock++});
        }
    }
    return out;
}

InteractionLog ingest_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw PreconditionError("ingest_csv: cannot open " + path);

    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw PreconditionError("ingest_csv: empty file " + path);
    ++line_no;
    // Tolerate a UTF-8 BOM and trailing CR.
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "user_id,item_id,timestamp")
        throw ParseError("ingest_csv: expected header user_id,item_id,timestamp", line_no);

    InteractionLog log;
    std::unordered_map<std::string, std::size_t> users;
    std::unordered_map<std::string, std::size_t> items;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string user_s, item_s, ts_s;
        if (!std::getline(ss, user_s, ',') || !std::getline(ss, item_s, ',') ||
            !std::getline(ss, ts_s))
            throw ParseError("ingest_csv: expected three comma-separated fields", line_no);
        std::int64_t ts = 0;
        try {
            std::size_t consumed = 0;
            ts = std::stoll(ts_s, &consumed);
            if (consumed != ts_s.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ParseError("ingest_csv: non-numeric timestamp '" + ts_s + "'", line_no);
        }
        const auto uid = users.emplace(user_s, users.size()).first->second;
        const auto iid = items.emplace(item_s, items.size()).first->second;
        log.records.push_back({uid, iid, ts});
    }
    if (log.records.empty()) throw PreconditionError("ingest_csv: no data rows in " + path);

    std::stable_sort(log.records.begin(), log.records.end(),
                     [](const Interaction& a, const Interaction& b) {
                         return a.timestamp < b.timestamp;
                     });
    log.n_users = users.size();
    log.n_items = items.size();
    return log;
}

void write_csv(const InteractionLog& log, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw PreconditionError("write_csv: cannot open " + path);
    out << "user_id,item_id,timestamp\n";
    for (const Interaction& r : log.records)
        out << r.user << ',' << r.item << ',' << r.timestamp << '\n';
    if (!out) throw NumericError("write_csv: write failed for " + path);
}

std::vector<BlockInput> split_chronological(const InteractionLog& log, std::size_t n_stages,
                                            double pretrain_frac) {
    if (n_stages < 2) throw PreconditionError("split_chronological: need at least two stages");
    if (pretrain_frac <= 0.0 || pretrain_frac >= 1.0)
        throw PreconditionError("split_chronological: pretrain fraction must lie in (0,1)");
    const std::size_t n = log.records.size();
    const std::size_t n1 = static_cast<std::size_t>(std::llround(pretrain_frac * n));
    if (n1 == 0 || n1 >= n) throw SplitError("split_chronological: degenerate pretrain block");

    std::vector<Interaction> sorted = log.records;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Interaction& a, const Interaction& b) {
                         return a.timestamp < b.timestamp;
                     });

    std::vector<BlockInput> blocks(n_stages);
    blocks[0].stage_index = 1;
    blocks[0].records.assign(sorted.begin(), sorted.begin() + n1);

    const std::size_t rest = n - n1;
    const std::size_t incr = n_stages - 1;
    const std::size_t base = rest / incr;
    const std::size_t extra = rest % incr;
    if (base == 0) throw SplitError("split_chronological: too few records per incremental stage");
    std::size_t off = n1;
    for (std::size_t b = 0; b < incr; ++b) {
        const std::size_t len = base + (b < extra ? 1 : 0);
        blocks[b + 1].stage_index = b + 2;
        blocks[b + 1].records.assign(sorted.begin() + off, sorted.begin() + off + len);
        off += len;
    }
    return blocks;
}

std::vector<BlockInput> split_user_disjoint(const InteractionLog& log, std::size_t n_stages,
                                            std::uint64_t seed, double pretrain_frac) {
    const std::vector<BlockInput> chrono = split_chronological(log, n_stages, pretrain_frac);
    std::vector<std::size_t> targets(n_stages);
    for (std::size_t b = 0; b < n_stages; ++b) targets[b] = chrono[b].records.size();

    // Per-user record lists in time order.
    std::vector<std::vector<Interaction>> per_user(log.n_users);
    {
        std::vector<Interaction> sorted = log.records;
        std::stable_sort(sorted.begin(), sorted.end(),
                         [](const Interaction& a, const Interaction& b) {
                             return a.timestamp < b.timestamp;
                         });
        for (const Interaction& r : sorted) per_user[r.user].push_back(r);
    }

    std::vector<std::size_t> user_order(log.n_users);
    std::iota(user_order.begin(), user_order.end(), std::size_t{0});
    std::mt19937_64 engine(seed);

    for (int attempt = 0; attempt < 100; ++attempt) {
        std::shuffle(user_order.begin(), user_order.end(), engine);
        std::vector<std::vector<std::size_t>> assignment(n_stages);
        std::vector<std::size_t> counts(n_stages, 0);
        std::size_t b = 0;
        for (std::size_t u : user_order) {
            while (b + 1 < n_stages && counts[b] >= targets[b]) ++b;
            assignment[b].push_back(u);
            counts[b] += per_user[u].size();
        }
        bool ok = true;
        for (std::size_t s = 0; s < n_stages; ++s) {
            const double tol = 0.05 * static_cast<double>(targets[s]);
            if (std::abs(static_cast<double>(counts[s]) - static_cast<double>(targets[s])) > tol)
                ok = false;
        }
        if (!ok) continue;

        std::vector<BlockInput> blocks(n_stages);
        for (std::size_t s = 0; s < n_stages; ++s) {
            blocks[s].stage_index = s + 1;
            std::sort(assignment[s].begin(), assignment[s].end());
            for (std::size_t u : assignment[s])
                blocks[s].records.insert(blocks[s].records.end(), per_user[u].begin(),
                                         per_user[u].end());
            std::stable_sort(blocks[s].records.begin(), blocks[s].records.end(),
                             [](const Interaction& a, const Interaction& b2) {
                                 return a.timestamp < b2.timestamp;
                             });
        }
        return blocks;
    }
    throw SplitError("split_user_disjoint: could not match block sizes within 5% in 100 tries");
}

namespace {

std::vector<std::size_t> truncate_window(const std::vector<std::size_t>& history,
                                         std::size_t window) {
    if (history.size() <= window) return history;
    return std::vector<std::size_t>(history.end() - window, history.end());
}

struct ExampleKey {
    std::vector<std::size_t> history;
    std::size_t target;
    bool operator==(const ExampleKey& o) const {
        return target == o.target && history == o.history;
    }
};

struct ExampleKeyHash {
    std::size_t operator()(const ExampleKey& k) const {
        std::uint64_t h = splitmix64(k.target + 0x1234);
        for (std::size_t v : k.history) h = splitmix64(h ^ v);
        return static_cast<std::size_t>(h);
    }
};

}  // namespace

std::vector<StageBlock> make_stage_blocks(const std::vector<BlockInput>& blocks,
                                          const PairOptions& options) {
    std::vector<std::vector<std::size_t>> past;  // cumulative per-user item sequences
    std::vector<StageBlock> out;
    out.reserve(blocks.size());

    for (const BlockInput& block : blocks) {
        StageBlock sb;
        sb.stage_index = block.stage_index;
        const bool incremental = block.stage_index >= 2;

        // In-block sequences per user, preserving record order.
        std::map<std::size_t, std::vector<std::size_t>> in_block;
        for (const Interaction& r : block.records) {
            if (r.user >= past.size()) past.resize(r.user + 1);
            in_block[r.user].push_back(r.item);
        }

        std::unordered_set<ExampleKey, ExampleKeyHash> test_keys;
        struct UserPairs {
            std::vector<Example> train;
            std::vector<Example> val;
            std::vector<Example> test;
        };
        std::vector<std::pair<std::size_t, UserPairs>> eligible;

        for (const auto& [user, seq] : in_block) {
            if (incremental && seq.size() < options.min_interactions) continue;

            UserPairs up;
            std::vector<std::size_t> hist = past[user];
            const std::size_t n = seq.size();
            for (std::size_t i = 0; i < n; ++i) {
                Example ex;
                ex.user = user;
                ex.target = seq[i];
                ex.history = truncate_window(hist, options.window);
                if (!ex.history.empty()) {
                    if (i + 1 == n)
                        up.test.push_back(ex);
                    else if (i + 2 == n)
                        up.val.push_back(ex);
                    else
                        up.train.push_back(ex);
                }
                hist.push_back(seq[i]);
            }
            if (incremental && up.test.empty()) continue;
            for (const Example& ex : up.test) test_keys.insert({ex.history, ex.target});
            eligible.emplace_back(user, std::move(up));
        }

        if (incremental && eligible.empty())
            throw SplitError("make_stage_blocks: stage " + std::to_string(block.stage_index) +
                             " has no users after the min-interaction filter");

        for (auto& [user, up] : eligible) {
            for (Example& ex : up.train) {
                if (test_keys.count({ex.history, ex.target})) continue;  // leave-one-out integrity
                sb.pairs.push_back(std::move(ex));
            }
            for (Example& ex : up.val) sb.val_pairs.push_back(std::move(ex));
            for (Example& ex : up.test) sb.test_pairs.push_back(std::move(ex));
        }

        // Everyone's in-block items extend their history, filtered or not.
        for (const auto& [user, seq] : in_block)
            past[user].insert(past[user].end(), seq.begin(), seq.end());

        out.push_back(std::move(sb));
    }
    return out;
}

}  // namespace peso
