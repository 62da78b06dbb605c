#pragma once
// Embedding backends and the node-document embedding index.
//
// Providers map text to a fixed-dimension vector. The hashed provider is the
// deterministic offline default; the remote provider speaks the
// OpenAI-compatible /v1/embeddings wire format. The index embeds every node
// document once, caches vectors in a JSONL sidecar keyed by content hash, and
// answers exact top-k cosine queries with serial and OpenMP scan kernels.

#include "semiqa/graph.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace semiqa {

using EmbeddingVector = std::vector<float>;

// cosine(x, y); 0 when either vector has zero norm.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

class ProviderError : public std::runtime_error {
public:
    ProviderError(const std::string& msg, int attempts)
        : std::runtime_error(msg), attempts_(attempts) {}
    int attempts() const { return attempts_; }

private:
    int attempts_;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dim() const = 0;
    virtual EmbeddingVector embed(const std::string& text) = 0;
    virtual std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts);
    // true when embed() may be called from several threads at once
    virtual bool thread_safe() const { return false; }
};

// Deterministic seeded-hash provider.
//
// Scheme: tokenize the normalized text; for each token t with
// h = fnv1a64(t) ^ seed, add hash_to_unit(splitmix64(h + i)) to coordinate i;
// L2-normalize the accumulated vector. No tokens (empty text) yields the zero
// vector. Coordinates are non-negative, so cosines land in [0, 1] and
// identical texts embed identically on every platform.
class HashedEmbeddingProvider final : public EmbeddingProvider {
public:
    explicit HashedEmbeddingProvider(std::size_t dim = 64,
                                     std::uint64_t seed = 0x5eedULL)
        : dim_(dim), seed_(seed) {}

    std::size_t dim() const override { return dim_; }
    EmbeddingVector embed(const std::string& text) override;
    bool thread_safe() const override { return true; }

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

// POST {base}/v1/embeddings with {"input": [...], "model": ...}; reads
// data[i].embedding. Retries transient failures with exponential backoff.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
public:
    struct Options {
        std::string base_url;
        std::string api_key;
        std::string model = "text-embedding-3-small";
        std::size_t dim = 1536;
        int attempts = 3;
        double timeout_s = 30.0;
        double backoff_s = 0.5;
        std::size_t batch_size = 64;
    };

    explicit RemoteEmbeddingProvider(Options opts) : opts_(std::move(opts)) {}

    std::size_t dim() const override { return opts_.dim; }
    EmbeddingVector embed(const std::string& text) override;
    std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) override;

private:
    Options opts_;
};

struct ScoredNode {
    NodeIndex node;
    double score;
    bool operator==(const ScoredNode&) const = default;
};

class EmbeddingIndex {
public:
    // Embeds every node document, reusing sidecar entries whose content hash
    // still matches. Passing a cache path persists the refreshed sidecar
    // ({"id","hash","vector"} per line). Thread-safe providers embed in
    // parallel.
    static EmbeddingIndex build(const SemiStructuredGraph& graph,
                                EmbeddingProvider& provider,
                                const std::optional<std::string>& cache_path = {});

    // Exact top-k by cosine against every node document; ties broken by node
    // id ascending. k >= node count ranks everything.
    std::vector<ScoredNode> top_k(std::span<const float> query, std::size_t k) const;
    std::vector<ScoredNode> top_k_serial(std::span<const float> query,
                                         std::size_t k) const;
    std::vector<ScoredNode> top_k_parallel(std::span<const float> query,
                                           std::size_t k) const;

    std::span<const float> vector_of(NodeIndex n) const {
        return {vectors_.data() + static_cast<std::size_t>(n) * dim_, dim_};
    }
    std::size_t dim() const { return dim_; }
    std::size_t size() const { return count_; }
    const SemiStructuredGraph& graph() const { return *graph_; }

private:
    std::vector<ScoredNode> select_top_k(std::vector<double> scores,
                                         std::size_t k) const;

    const SemiStructuredGraph* graph_ = nullptr;
    std::vector<float> vectors_;  // row-major, count_ x dim_
    std::size_t dim_ = 0;
    std::size_t count_ = 0;
};

}  // namespace semiqa
