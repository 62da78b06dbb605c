#include "semiqa/embedding.hpp"

#include "semiqa/text_norm.hpp"

#include "httplib.h"
#include "json.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>
#include <unordered_map>

namespace semiqa {

using nlohmann::json;

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) return 0.0;
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<EmbeddingVector> EmbeddingProvider::embed_batch(
    std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(embed(t));
    return out;
}

EmbeddingVector HashedEmbeddingProvider::embed(const std::string& text) {
    std::vector<double> acc(dim_, 0.0);
    bool any = false;
    for (const auto& tok : tokenize_normalized(text)) {
        any = true;
        std::uint64_t h = fnv1a64(tok) ^ seed_;
        for (std::size_t i = 0; i < dim_; ++i) {
            acc[i] += hash_to_unit(splitmix64(h + i));
        }
    }
    EmbeddingVector v(dim_, 0.0f);
    if (!any) return v;
    double norm = 0.0;
    for (double x : acc) norm += x * x;
    norm = std::sqrt(norm);
    if (norm == 0.0) return v;
    for (std::size_t i = 0; i < dim_; ++i) {
        v[i] = static_cast<float>(acc[i] / norm);
    }
    return v;
}

std::vector<EmbeddingVector> RemoteEmbeddingProvider::embed_batch(
    std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (std::size_t start = 0; start < texts.size(); start += opts_.batch_size) {
        std::size_t end = std::min(texts.size(), start + opts_.batch_size);
        json body;
        body["model"] = opts_.model;
        body["input"] = json::array();
        for (std::size_t i = start; i < end; ++i) body["input"].push_back(texts[i]);

        std::string last_error;
        int attempt = 0;
        for (; attempt < opts_.attempts; ++attempt) {
            if (attempt > 0) {
                auto delay = std::chrono::duration<double>(
                    opts_.backoff_s * static_cast<double>(1 << (attempt - 1)));
                std::this_thread::sleep_for(delay);
            }
            httplib::Client client(opts_.base_url);
            client.set_connection_timeout(std::chrono::duration<double>(opts_.timeout_s));
            client.set_read_timeout(std::chrono::duration<double>(opts_.timeout_s));
            httplib::Headers headers;
            if (!opts_.api_key.empty()) {
                headers.emplace("Authorization", "Bearer " + opts_.api_key);
            }
            auto res = client.Post("/v1/embeddings", headers, body.dump(),
                                   "application/json");
            if (!res) {
                last_error = "connection failed: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status >= 400 && res->status < 500) {
                throw ProviderError("embedding request rejected (HTTP " +
                                        std::to_string(res->status) +
                                        "): " + res->body.substr(0, 200),
                                    attempt + 1);
            }
            if (res->status != 200) {
                last_error = "HTTP " + std::to_string(res->status);
                continue;
            }
            json j = json::parse(res->body, nullptr, false);
            if (j.is_discarded() || !j.contains("data")) {
                last_error = "unparseable embedding response";
                continue;
            }
            std::size_t row = 0;
            for (const auto& item : j["data"]) {
                EmbeddingVector v = item.value("embedding", EmbeddingVector{});
                if (v.size() != opts_.dim) {
                    throw ProviderError("embedding dimension mismatch: got " +
                                            std::to_string(v.size()) + ", expected " +
                                            std::to_string(opts_.dim),
                                        attempt + 1);
                }
                out.push_back(std::move(v));
                ++row;
            }
            if (row != end - start) {
                throw ProviderError("embedding response row count mismatch",
                                    attempt + 1);
            }
            break;
        }
        if (attempt == opts_.attempts) {
            throw ProviderError("embedding request failed after " +
                                    std::to_string(opts_.attempts) +
                                    " attempts: " + last_error,
                                opts_.attempts);
        }
    }
    return out;
}

EmbeddingVector RemoteEmbeddingProvider::embed(const std::string& text) {
    std::array<std::string, 1> one{text};
    return embed_batch(one).front();
}

EmbeddingIndex EmbeddingIndex::build(const SemiStructuredGraph& graph,
                                     EmbeddingProvider& provider,
                                     const std::optional<std::string>& cache_path) {
    EmbeddingIndex idx;
    idx.graph_ = &graph;
    idx.dim_ = provider.dim();
    idx.count_ = graph.node_count();
    idx.vectors_.assign(idx.count_ * idx.dim_, 0.0f);

    struct CacheEntry {
        std::string hash;
        EmbeddingVector vec;
    };
    std::unordered_map<std::string, CacheEntry> cache;
    if (cache_path) {
        std::ifstream in(*cache_path);
        std::string line;
        while (in && std::getline(in, line)) {
            if (line.empty()) continue;
            json j = json::parse(line, nullptr, false);
            if (j.is_discarded() || !j.is_object()) continue;  // stale junk, rebuild
            CacheEntry e;
            e.hash = j.value("hash", std::string{});
            e.vec = j.value("vector", EmbeddingVector{});
            std::string id = j.value("id", std::string{});
            if (!id.empty() && e.vec.size() == idx.dim_) {
                cache.emplace(std::move(id), std::move(e));
            }
        }
    }

    std::vector<std::string> hashes(idx.count_);
    std::vector<std::size_t> missing;
    for (NodeIndex n = 0; n < idx.count_; ++n) {
        const Node& node = graph.node(n);
        hashes[n] = hex64(fnv1a64(node.text));
        auto it = cache.find(node.id);
        if (it != cache.end() && it->second.hash == hashes[n]) {
            std::copy(it->second.vec.begin(), it->second.vec.end(),
                      idx.vectors_.begin() + static_cast<std::size_t>(n) * idx.dim_);
        } else {
            missing.push_back(n);
        }
    }

    if (!missing.empty()) {
        if (provider.thread_safe()) {
            const std::int64_t m = static_cast<std::int64_t>(missing.size());
#pragma omp parallel for schedule(dynamic, 32)
            for (std::int64_t i = 0; i < m; ++i) {
                NodeIndex n = static_cast<NodeIndex>(missing[static_cast<std::size_t>(i)]);
                EmbeddingVector v = provider.embed(graph.node(n).text);
                std::copy(v.begin(), v.end(),
                          idx.vectors_.begin() + static_cast<std::size_t>(n) * idx.dim_);
            }
        } else {
            std::vector<std::string> texts;
            texts.reserve(missing.size());
            for (std::size_t n : missing) {
                texts.push_back(graph.node(static_cast<NodeIndex>(n)).text);
            }
            auto vecs = provider.embed_batch(texts);
            for (std::size_t i = 0; i < missing.size(); ++i) {
                std::copy(vecs[i].begin(), vecs[i].end(),
                          idx.vectors_.begin() + missing[i] * idx.dim_);
            }
        }
    }

    if (cache_path && (!missing.empty() || cache.size() != idx.count_)) {
        std::string tmp = *cache_path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            if (!out) {
                throw std::runtime_error("cannot write embedding cache: " + *cache_path);
            }
            for (NodeIndex n = 0; n < idx.count_; ++n) {
                json j;
                j["id"] = graph.node(n).id;
                j["hash"] = hashes[n];
                auto row = idx.vector_of(n);
                j["vector"] = std::vector<float>(row.begin(), row.end());
                out << j.dump() << "\n";
            }
        }
        std::rename(tmp.c_str(), cache_path->c_str());
    }
    return idx;
}

std::vector<ScoredNode> EmbeddingIndex::select_top_k(std::vector<double> scores,
                                                     std::size_t k) const {
    std::vector<NodeIndex> order(count_);
    for (NodeIndex n = 0; n < count_; ++n) order[n] = n;
    auto better = [&](NodeIndex a, NodeIndex b) {
        if (scores[a] != scores[b]) return scores[a] > scores[b];
        return graph_->node(a).id < graph_->node(b).id;
    };
    k = std::min(k, static_cast<std::size_t>(count_));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k),
                      order.end(), better);
    std::vector<ScoredNode> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({order[i], scores[order[i]]});
    return out;
}

std::vector<ScoredNode> EmbeddingIndex::top_k_serial(std::span<const float> query,
                                                     std::size_t k) const {
    std::vector<double> scores(count_);
    for (NodeIndex n = 0; n < count_; ++n) {
        scores[n] = cosine_similarity(query, vector_of(n));
    }
    return select_top_k(std::move(scores), k);
}

std::vector<ScoredNode> EmbeddingIndex::top_k_parallel(std::span<const float> query,
                                                       std::size_t k) const {
    std::vector<double> scores(count_);
    const std::int64_t n = static_cast<std::int64_t>(count_);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        scores[static_cast<std::size_t>(i)] =
            cosine_similarity(query, vector_of(static_cast<NodeIndex>(i)));
    }
    return select_top_k(std::move(scores), k);
}

std::vector<ScoredNode> EmbeddingIndex::top_k(std::span<const float> query,
                                              std::size_t k) const {
    if (count_ >= 4096) return top_k_parallel(query, k);
    return top_k_serial(query, k);
}

}  // namespace semiqa
