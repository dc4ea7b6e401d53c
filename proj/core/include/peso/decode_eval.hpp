#pragma once

#include <map>
#include <string>
#include <vector>

#include "peso/codes.hpp"
#include "peso/data.hpp"
#include "peso/model.hpp"

namespace peso {

/// Generated items ordered by non-increasing sequence log-score.
struct RankedList {
    struct Entry {
        std::size_t item = 0;
        double log_score = 0.0;
    };
    std::vector<Entry> entries;
};

/// Constrained beam search over the code trie: beams expand only to valid
/// next tokens, scores accumulate token log-softmax, and the top-k distinct
/// completed items return. Ties break toward the smallest item id. Requires
/// beam_width ≥ k and a nonempty trie.
RankedList constrained_beam(const ToyRecModel& model, const EffectiveWeights& eff,
                            const CodeBook& book, const std::vector<std::size_t>& history_items,
                            std::size_t beam_width, std::size_t k = 10);

/// 1 iff the truth item appears in the first k entries.
int hit_at_k(const RankedList& ranked, std::size_t truth, std::size_t k);

/// 1/log₂(rank+1) with 1-based rank if the truth is in the top k, else 0.
double ndcg_at_k(const RankedList& ranked, std::size_t truth, std::size_t k);

struct EvalOptions {
    std::vector<std::size_t> ks = {5, 10};
    std::size_t beam_width = 20;
    std::size_t top_k = 10;
};

/// Per-metric means over all test users of the block, keyed "hit@k"/"ndcg@k".
/// Throws PreconditionError on an empty test set.
std::map<std::string, double> evaluate_block(const ToyRecModel& model,
                                             const std::vector<AdapterStack>& stacks,
                                             const CodeBook& book, const StageBlock& block,
                                             const EvalOptions& options = {});

/// Same metrics over an arbitrary pair list (used for validation metrics).
std::map<std::string, double> evaluate_pairs(const ToyRecModel& model,
                                             const std::vector<AdapterStack>& stacks,
                                             const CodeBook& book,
                                             const std::vector<Example>& pairs,
                                             const EvalOptions& options = {});

}  // namespace peso
