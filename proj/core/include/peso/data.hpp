#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peso/codes.hpp"
#include "peso/errors.hpp"
#include "peso/matrix.hpp"

namespace peso {

struct Interaction {
    std::size_t user = 0;
    std::size_t item = 0;
    std::int64_t timestamp = 0;
};

struct InteractionLog {
    std::vector<Interaction> records;
    std::size_t n_users = 0;
    std::size_t n_items = 0;
};

/// Synthetic evolving-preference generator: per user, a cluster mixture that
/// follows π_t = α_t·π_{t−1} + (1−α_t)·q_t with fresh Dirichlet draws q_t.
struct DriftSpec {
    std::size_t n_clusters = 8;
    std::size_t users = 100;
    std::size_t items = 64;
    std::vector<double> alpha;              // per stage; alpha[0] is unused
    std::vector<std::size_t> stage_sizes;   // interactions per stage
    double dirichlet_conc = 1.0;
    std::uint64_t seed = 1;

    std::size_t n_stages() const { return stage_sizes.size(); }
};

struct DriftResult {
    InteractionLog log;
    std::vector<std::size_t> item_clusters;        // item → cluster
    std::vector<std::vector<Vector>> mixtures;     // [user][stage] → π over clusters
};

DriftResult generate_drift(const DriftSpec& spec);

/// Reads `user_id,item_id,timestamp` CSV, reindexes ids densely in first-seen
/// order, and stable-sorts by timestamp. Throws ParseError with the line
/// number on malformed rows, PreconditionError on an empty file.
InteractionLog ingest_csv(const std::string& path);

void write_csv(const InteractionLog& log, const std::string& path);

/// Contiguous slice of the time-sorted log destined for one stage.
struct BlockInput {
    std::size_t stage_index = 0;  // 1-based
    std::vector<Interaction> records;
};

/// First `pretrain_frac` of time-sorted records is stage 1; the rest splits
/// into n_stages−1 equal contiguous spans.
std::vector<BlockInput> split_chronological(const InteractionLog& log, std::size_t n_stages = 5,
                                            double pretrain_frac = 0.6);

/// Seeded random partition of users into stages with block interaction counts
/// within 5% of the chronological split's. Throws SplitError after 100
/// failed reshuffles.
std::vector<BlockInput> split_user_disjoint(const InteractionLog& log, std::size_t n_stages,
                                            std::uint64_t seed, double pretrain_frac = 0.6);

/// One next-item example: window-truncated history of item ids and the target.
struct Example {
    std::vector<std::size_t> history;
    std::size_t target = 0;
    std::size_t user = 0;
};

struct StageBlock {
    std::size_t stage_index = 0;
    std::vector<Example> pairs;
    std::vector<Example> val_pairs;
    std::vector<Example> test_pairs;
};

struct PairOptions {
    std::size_t window = 20;
    std::size_t min_interactions = 5;  // per-user filter on incremental blocks
};

/// Builds leave-one-out stage blocks from split inputs. Histories accumulate
/// across earlier blocks (window-truncated); per user and block, the last
/// item is the test target and the second-to-last the validation target.
/// Training pairs that exactly match one of the block's test pairs are
/// dropped. Throws SplitError if an incremental block retains no users.
std::vector<StageBlock> make_stage_blocks(const std::vector<BlockInput>& blocks,
                                          const PairOptions& options = {});

}  // namespace peso
