#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "peso/errors.hpp"

namespace peso {

/// Fixed-length multi-token item identifier; tokens[j] ∈ [0, K_j).
struct ItemCode {
    std::vector<std::uint16_t> tokens;

    bool operator==(const ItemCode& o) const { return tokens == o.tokens; }
};

/// Prefix tree over position tokens. Every root-to-leaf path has length
/// exactly L; leaves carry item ids. Nodes remember the smallest item id in
/// their subtree so beam ties can break deterministically toward it.
class CodeTrie {
public:
    CodeTrie() = default;
    CodeTrie(std::size_t code_len, std::vector<std::size_t> codebook_sizes);

    void insert(const ItemCode& code, std::size_t item_id);

    static constexpr std::int32_t kNoNode = -1;
    std::int32_t root() const { return codes_empty_ ? kNoNode : 0; }
    /// Child node for `token` at `node`, or kNoNode.
    std::int32_t step(std::int32_t node, std::uint16_t token) const;
    /// Valid next tokens from `node` (ascending).
    std::vector<std::uint16_t> children(std::int32_t node) const;
    /// Item id at a depth-L node.
    std::size_t leaf_item(std::int32_t node) const;
    /// Smallest item id in the node's subtree.
    std::size_t min_item(std::int32_t node) const;

    std::size_t code_len() const { return code_len_; }
    std::size_t size() const { return n_items_; }
    bool empty() const { return n_items_ == 0; }

private:
    struct Node {
        std::vector<std::int32_t> child;  // length K_depth, kNoNode when absent
        std::size_t min_item = SIZE_MAX;
        std::size_t leaf = SIZE_MAX;
    };
    std::size_t depth_of(std::int32_t node) const { return node_depth_[node]; }

    std::size_t code_len_ = 0;
    std::vector<std::size_t> codebook_sizes_;
    std::vector<Node> nodes_;
    std::vector<std::uint8_t> node_depth_;
    std::size_t n_items_ = 0;
    bool codes_empty_ = true;
};

/// Frozen item tokenizer: injective item → code map plus the trie of valid
/// codes. Built once at setup and shared by every stage.
struct CodeBook {
    std::size_t code_len = 0;                  // L
    std::vector<std::size_t> codebook_sizes;   // K_j per position
    std::vector<ItemCode> item_codes;          // indexed by item id
    CodeTrie trie;

    std::size_t vocab_size() const;
    /// Embedding-row offset of position j's codebook.
    std::size_t token_offset(std::size_t position) const;
    const ItemCode& code_of(std::size_t item) const { return item_codes[item]; }
};

/// Assigns hierarchical codes: token 1 encodes the item's cluster, remaining
/// positions enumerate items within the cluster collision-free. The cluster →
/// token permutation and within-cluster order are seeded. Requires
/// C ≤ K and per-cluster counts ≤ K^(L−1).
CodeBook assign_codes(std::size_t n_items, const std::vector<std::size_t>& item_clusters,
                      std::size_t code_len, std::size_t codebook, std::uint64_t seed);

}  // namespace peso
