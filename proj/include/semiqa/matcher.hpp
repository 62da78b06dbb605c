#pragma once
// Topic-node matching: exact name keywords first, embedding similarity as the
// fallback when no name occurs in the question.

#include "semiqa/embedding.hpp"
#include "semiqa/graph.hpp"

#include <string>
#include <vector>

namespace semiqa {

struct Question {
    std::string id;
    std::string text;
};

enum class MatchMethod { keyword, embedding };

struct MatchResult {
    struct Hit {
        std::string node_id;
        double score;  // 1.0 for keyword hits, clamped cosine otherwise
        bool operator==(const Hit&) const = default;
    };
    std::vector<Hit> nodes;
    MatchMethod method = MatchMethod::keyword;

    bool empty() const { return nodes.empty(); }
    std::vector<std::string> ids() const;
};

class Matcher {
public:
    explicit Matcher(const SemiStructuredGraph& graph);

    // Embedding fallback stays disabled until both are attached.
    void attach_embeddings(const EmbeddingIndex* index, EmbeddingProvider* provider);

    // Nodes whose normalized name occurs in the normalized question at word
    // boundaries. Overlapping candidates lose to strictly longer ones. Nodes
    // with empty names never match. Ordered by first occurrence, then node
    // insertion order.
    MatchResult keyword(const Question& q) const;

    // Top-k nodes by cosine between the question embedding and node-document
    // embeddings; ties broken by node id ascending.
    MatchResult similarity(const Question& q, std::size_t k) const;

    // keyword() when non-empty, otherwise similarity().
    MatchResult hybrid(const Question& q, std::size_t k) const;

    const SemiStructuredGraph& graph() const { return *graph_; }

private:
    const SemiStructuredGraph* graph_;
    // normalized name -> node indices carrying it, in insertion order
    std::vector<std::pair<std::string, std::vector<NodeIndex>>> names_;
    const EmbeddingIndex* index_ = nullptr;
    EmbeddingProvider* provider_ = nullptr;
};

inline constexpr std::size_t kDefaultTopK = 5;

}  // namespace semiqa
