#include "peso/decode_eval.hpp"

#include <algorithm>
#include <cmath>

namespace peso {

namespace {

struct Beam {
    std::int32_t node = CodeTrie::kNoNode;
    double score = 0.0;
    Vector state;  // s_j entering the next position
};

}  // namespace

RankedList constrained_beam(const ToyRecModel& model, const EffectiveWeights& eff,
                            const CodeBook& book, const std::vector<std::size_t>& history_items,
                            std::size_t beam_width, std::size_t k) {
    if (book.trie.empty()) throw PreconditionError("constrained_beam: empty trie");
    if (beam_width < k) throw PreconditionError("constrained_beam: beam_width < k");
    if (history_items.empty()) throw PreconditionError("constrained_beam: empty history");

    const std::size_t L = model.code_len();
    const std::size_t d = model.hidden;

    // Encode the history once; free-running decode from there.
    const std::size_t start =
        history_items.size() > kHistoryWindow ? history_items.size() - kHistoryWindow : 0;
    Vector h(d, 0.0);
    std::size_t n_tokens = 0;
    for (std::size_t idx = start; idx < history_items.size(); ++idx) {
        const ItemCode& code = book.code_of(history_items[idx]);
        for (std::size_t j = 0; j < L; ++j) {
            const std::size_t row = model.token_offsets[j] + code.tokens[j];
            for (std::size_t c = 0; c < d; ++c) h[c] += model.embed(row, c);
            ++n_tokens;
        }
    }
    for (double& v : h) v /= static_cast<double>(n_tokens);
    Vector s0 = matvec(eff.m_enc, h);
    for (double& v : s0) v = std::tanh(v);

    std::vector<Beam> beams;
    beams.push_back({book.trie.root(), 0.0, std::move(s0)});

    for (std::size_t j = 0; j < L; ++j) {
        struct Candidate {
            const Beam* parent;
            std::uint16_t token;
            std::int32_t node;
            double score;
            std::size_t min_item;
        };
        std::vector<Candidate> candidates;
        for (const Beam& b : beams) {
            const Vector lsm = log_softmax(matvec(model.w_out[j], b.state));
            for (std::uint16_t tok : book.trie.children(b.node)) {
                const std::int32_t child = book.trie.step(b.node, tok);
                candidates.push_back(
                    {&b, tok, child, b.score + lsm[tok], book.trie.min_item(child)});
            }
        }
        std::stable_sort(candidates.begin(), candidates.end(),
                         [](const Candidate& a, const Candidate& b) {
                             if (a.score != b.score) return a.score > b.score;
                             return a.min_item < b.min_item;
                         });
        if (candidates.size() > beam_width) candidates.resize(beam_width);

        std::vector<Beam> next;
        next.reserve(candidates.size());
        for (const Candidate& c : candidates) {
            Beam nb;
            nb.node = c.node;
            nb.score = c.score;
            if (j + 1 < L) {
                const std::size_t row = model.token_offsets[j] + c.token;
                Vector a(d);
                for (std::size_t col = 0; col < d; ++col)
                    a[col] = c.parent->state[col] + model.embed(row, col);
                nb.state.resize(d);
                const Vector pre = matvec(eff.m_dec, a);
                for (std::size_t col = 0; col < d; ++col) nb.state[col] = std::tanh(pre[col]);
            }
            next.push_back(std::move(nb));
        }
        beams = std::move(next);
    }

    std::vector<RankedList::Entry> completed;
    completed.reserve(beams.size());
    for (const Beam& b : beams)
        completed.push_back({book.trie.leaf_item(b.node), b.score});
    std::stable_sort(completed.begin(), completed.end(),
                     [](const RankedList::Entry& a, const RankedList::Entry& b) {
                         if (a.log_score != b.log_score) return a.log_score > b.log_score;
                         return a.item < b.item;
                     });
    if (completed.size() > k) completed.resize(k);

    RankedList out;
    out.entries = std::move(completed);
    return out;
}

int hit_at_k(const RankedList& ranked, std::size_t truth, std::size_t k) {
    const std::size_t limit = std::min(k, ranked.entries.size());
    for (std::size_t i = 0; i < limit; ++i)
        if (ranked.entries[i].item == truth) return 1;
    return 0;
}

double ndcg_at_k(const RankedList& ranked, std::size_t truth, std::size_t k) {
    const std::size_t limit = std::min(k, ranked.entries.size());
    for (std::size_t i = 0; i < limit; ++i)
        if (ranked.entries[i].item == truth)
            return 1.0 / std::log2(static_cast<double>(i + 1) + 1.0);
    return 0.0;
}

std::map<std::string, double> evaluate_pairs(const ToyRecModel& model,
                                             const std::vector<AdapterStack>& stacks,
                                             const CodeBook& book,
                                             const std::vector<Example>& pairs,
                                             const EvalOptions& options) {
    if (pairs.empty()) throw PreconditionError("evaluate_pairs: empty pair list");
    const EffectiveWeights eff = effective_weights(model, stacks);

    std::map<std::string, double> sums;
    for (std::size_t k : options.ks) {
        sums["hit@" + std::to_string(k)] = 0.0;
        sums["ndcg@" + std::to_string(k)] = 0.0;
    }
    for (const Example& ex : pairs) {
        const RankedList ranked = constrained_beam(model, eff, book, ex.history,
                                                   options.beam_width, options.top_k);
        for (std::size_t k : options.ks) {
            sums["hit@" + std::to_string(k)] += hit_at_k(ranked, ex.target, k);
            sums["ndcg@" + std::to_string(k)] += ndcg_at_k(ranked, ex.target, k);
        }
    }
    const double inv = 1.0 / static_cast<double>(pairs.size());
    for (auto& [key, value] : sums) value *= inv;
    return sums;
}

std::map<std::string, double> evaluate_block(const ToyRecModel& model,
                                             const std::vector<AdapterStack>& stacks,
                                             const CodeBook& book, const StageBlock& block,
                                             const EvalOptions& options) {
    if (block.test_pairs.empty())
        throw PreconditionError("evaluate_block: stage " + std::to_string(block.stage_index) +
                                " has no test pairs");
    return evaluate_pairs(model, stacks, book, block.test_pairs, options);
}

}  // namespace peso
