#include "peso/codes.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace peso {

CodeTrie::CodeTrie(std::size_t code_len, std::vector<std::size_t> codebook_sizes)
    : code_len_(code_len), codebook_sizes_(std::move(codebook_sizes)) {
    if (codebook_sizes_.size() != code_len_)
        throw PreconditionError("CodeTrie: one codebook size per position required");
    nodes_.push_back(Node{std::vector<std::int32_t>(codebook_sizes_.empty() ? 0 : codebook_sizes_[0], kNoNode),
                          SIZE_MAX, SIZE_MAX});
    node_depth_.push_back(0);
}

void CodeTrie::insert(const ItemCode& code, std::size_t item_id) {
    if (code.tokens.size() != code_len_)
        throw PreconditionError("CodeTrie::insert: code length mismatch");
    std::int32_t node = 0;
    nodes_[0].min_item = std::min(nodes_[0].min_item, item_id);
    for (std::size_t j = 0; j < code_len_; ++j) {
        const std::uint16_t tok = code.tokens[j];
        if (tok >= codebook_sizes_[j])
            throw PreconditionError("CodeTrie::insert: token out of codebook range");
        std::int32_t next = nodes_[node].child[tok];
        if (next == kNoNode) {
            next = static_cast<std::int32_t>(nodes_.size());
            const std::size_t child_depth = j + 1;
            const std::size_t fanout =
                child_depth < code_len_ ? codebook_sizes_[child_depth] : 0;
            nodes_[node].child[tok] = next;
            nodes_.push_back(Node{std::vector<std::int32_t>(fanout, kNoNode), SIZE_MAX, SIZE_MAX});
            node_depth_.push_back(static_cast<std::uint8_t>(child_depth));
        }
        node = next;
        nodes_[node].min_item = std::min(nodes_[node].min_item, item_id);
    }
    if (nodes_[node].leaf != SIZE_MAX && nodes_[node].leaf != item_id)
        throw PreconditionError("CodeTrie::insert: duplicate code for two items");
    nodes_[node].leaf = item_id;
    ++n_items_;
    codes_empty_ = false;
}

std::int32_t CodeTrie::step(std::int32_t node, std::uint16_t token) const {
    const Node& n = nodes_[node];
    if (token >= n.child.size()) return kNoNode;
    return n.child[token];
}

std::vector<std::uint16_t> CodeTrie::children(std::int32_t node) const {
    std::vector<std::uint16_t> out;
    const Node& n = nodes_[node];
    for (std::size_t t = 0; t < n.child.size(); ++t)
        if (n.child[t] != kNoNode) out.push_back(static_cast<std::uint16_t>(t));
    return out;
}

std::size_t CodeTrie::leaf_item(std::int32_t node) const {
    if (nodes_[node].leaf == SIZE_MAX)
        throw PreconditionError("CodeTrie::leaf_item: not a leaf");
    return nodes_[node].leaf;
}

std::size_t CodeTrie::min_item(std::int32_t node) const { return nodes_[node].min_item; }

std::size_t CodeBook::vocab_size() const {
    std::size_t v = 0;
    for (std::size_t k : codebook_sizes) v += k;
    return v;
}

std::size_t CodeBook::token_offset(std::size_t position) const {
    std::size_t off = 0;
    for (std::size_t j = 0; j < position; ++j) off += codebook_sizes[j];
    return off;
}

CodeBook assign_codes(std::size_t n_items, const std::vector<std::size_t>& item_clusters,
                      std::size_t code_len, std::size_t codebook, std::uint64_t seed) {
    if (item_clusters.size() != n_items)
        throw PreconditionError("assign_codes: one cluster per item required");
    std::size_t n_clusters = 0;
    for (std::size_t c : item_clusters) n_clusters = std::max(n_clusters, c + 1);
    if (n_clusters > codebook)
        throw PreconditionError("assign_codes: more clusters than first-position tokens");
    if (code_len < 1) throw PreconditionError("assign_codes: code length must be positive");

    std::size_t tail_capacity = 1;
    for (std::size_t j = 1; j < code_len; ++j) {
        if (tail_capacity > (SIZE_MAX / codebook)) {
            tail_capacity = SIZE_MAX;
            break;
        }
        tail_capacity *= codebook;
    }

    std::mt19937_64 engine(seed);

    // Seeded cluster → first-token permutation.
    std::vector<std::uint16_t> cluster_token(n_clusters);
    {
        std::vector<std::uint16_t> tokens(codebook);
        std::iota(tokens.begin(), tokens.end(), std::uint16_t{0});
        std::shuffle(tokens.begin(), tokens.end(), engine);
        for (std::size_t c = 0; c < n_clusters; ++c) cluster_token[c] = tokens[c];
    }

    // Seeded within-cluster enumeration order.
    std::vector<std::vector<std::size_t>> members(n_clusters);
    for (std::size_t i = 0; i < n_items; ++i) members[item_clusters[i]].push_back(i);
    for (std::vector<std::size_t>& m : members) {
        if (m.size() > tail_capacity)
            throw PreconditionError("assign_codes: cluster exceeds code capacity");
        std::shuffle(m.begin(), m.end(), engine);
    }

    CodeBook book;
    book.code_len = code_len;
    book.codebook_sizes.assign(code_len, codebook);
    book.item_codes.resize(n_items);
    book.trie = CodeTrie(code_len, book.codebook_sizes);

    for (std::size_t c = 0; c < n_clusters; ++c) {
        for (std::size_t rank = 0; rank < members[c].size(); ++rank) {
            const std::size_t item = members[c][rank];
            ItemCode code;
            code.tokens.resize(code_len);
            code.tokens[0] = cluster_token[c];
            std::size_t rem = rank;
            for (std::size_t j = code_len; j-- > 1;) {
                code.tokens[j] = static_cast<std::uint16_t>(rem % codebook);
                rem /= codebook;
            }
            book.item_codes[item] = code;
            book.trie.insert(code, item);
        }
    }
    return book;
}

}  // namespace peso
